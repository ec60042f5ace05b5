//! Closed-form first-order survival amplitudes and probabilities.
//!
//! Notation used throughout: `δ_k = ω_k - ω_s`, `θ_k = δ_k Δt`,
//! `x_k = e^{iθ_k}`, and `E_k = ∫_0^{Δt} e^{iδ_k t} dt = (x_k - 1)/(iδ_k)`.
//! The per-interval transfer weight `w_k = |V_ks|² |E_k|²` equals
//! `2 Re Σ_k |V_ks|² ∫_0^{Δt} (Δt - t') e^{-iδ_k t'} dt'` mode by mode, which is
//! why the short-time depletion, the stochastic average and the Zeno rate all
//! reduce to the same `γ`.
//!
//! A pulse schedule enters the survival probability only through the signs
//! `λ_l` carried by the bound amplitude on each interval `[lΔt, (l+1)Δt)`:
//!
//! ```text
//! P(NΔt) = 1 - Σ_k w_k |Σ_{l<N} λ_l x_k^l|²        (to O(|V|²))
//! ```
//!
//! The evaluators below expand this in the forms used for each protocol
//! (periodic kicks, random kicks, decoupling signs, projective measurement).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::ContinuumModel;
use crate::pulses::SignSequence;
use crate::special::{distance_to_odd_pi, ramp_integral, segment_integral, segment_weight, sinc};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// How the evaluators treat the `(ω_s - ω_k)Δt ≡ π (mod 2π)` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardBehavior {
    Error,
    /// Use the finite limit where one exists (the `x + 1 → 0` geometric
    /// denominator of the continuum amplitude). The `tan²` factor of the
    /// periodic survival has no such limit and still errors.
    Limit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceGuard {
    pub threshold: f64,
    pub behavior: GuardBehavior,
}

impl Default for ResonanceGuard {
    fn default() -> Self {
        Self {
            threshold: 1e-8,
            behavior: GuardBehavior::Error,
        }
    }
}

impl ResonanceGuard {
    pub fn new(threshold: f64, behavior: GuardBehavior) -> Result<Self> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::invalid(
                "threshold",
                threshold,
                "must be finite and positive",
            ));
        }
        Ok(Self {
            threshold,
            behavior,
        })
    }

    /// First mode whose phase `(ω_s - ω_k)dt` lies within the threshold of an
    /// odd multiple of pi.
    pub fn check(&self, model: &ContinuumModel, dt: f64) -> Result<()> {
        let omega_s = model.omega_s();
        for (i, m) in model.modes().iter().enumerate() {
            let phase = (omega_s - m.omega_k) * dt;
            if distance_to_odd_pi(phase) < self.threshold {
                return Err(Error::Resonance {
                    mode_index: i,
                    omega_k: m.omega_k,
                    omega_s,
                    dt,
                    phase,
                    threshold: self.threshold,
                });
            }
        }
        Ok(())
    }

    fn is_resonant(&self, theta: f64) -> bool {
        distance_to_odd_pi(theta) < self.threshold
    }
}

/// The three pieces of the periodically kicked survival probability
/// `P = 1 - term_a - term_b - term_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KickedTerms {
    /// Short-time depletion `2nΔt · γ_avg`.
    pub term_a: f64,
    /// `2 Re Σ_k F¹_k`, the interference term that survives.
    pub term_b: f64,
    /// `2 Re Σ_k F²_k`, which cancels `term_a`.
    pub term_c: f64,
}

impl KickedTerms {
    pub fn survival(&self) -> f64 {
        1.0 - self.term_a - self.term_b - self.term_c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZenoForm {
    /// `1 - 2nΔt γ_Z`.
    Linearized,
    /// Product of the `2n` per-interval survival factors.
    Product,
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("dt", dt, "must be finite and positive"))
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::invalid("n", n, "must be at least 1"))
    } else {
        Ok(())
    }
}

fn non_negative(
    quantity: &'static str,
    value: f64,
    context: impl FnOnce() -> String,
) -> Result<f64> {
    if value < 0.0 || value.is_nan() {
        Err(Error::breakdown(quantity, value, context()))
    } else {
        Ok(value)
    }
}

/// First-order free decay:
/// `1 - Σ_k |V_ks|² sin²(δ_k t/2) / (δ_k/2)²`.
pub fn spontaneous_survival(model: &ContinuumModel, t: f64) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid("t", t, "must be finite and non-negative"));
    }
    let omega_s = model.omega_s();
    let loss: f64 = model
        .modes()
        .iter()
        .map(|m| m.coupling_sqr() * segment_weight(m.detuning(omega_s), t))
        .sum();
    non_negative("spontaneous_survival", 1.0 - loss, || format!("t={t}"))
}

/// `Σ_{j=1}^{m} r^j`.
///
/// Within `1e-8` of `r = 1` the closed form loses precision, so the sum is
/// expanded in `ε = r - 1` instead: `m + ε C(m+1,2) + ε² C(m+1,3)`.
pub fn geometric_sum(r: Complex64, m: usize) -> Complex64 {
    let eps = r - ONE;
    if eps.norm() < 1e-8 {
        let mf = m as f64;
        let c2 = mf * (mf + 1.0) / 2.0;
        let c3 = c2 * (mf - 1.0) / 3.0;
        return mf + eps * c2 + eps * eps * c3;
    }
    r * (ONE - r.powu(m as u32)) / (ONE - r)
}

/// Short-time average decay rate
/// `γ_avg = Δt Σ_k |V_ks|² sin²(δ_kΔt/2) / (δ_kΔt/2)²`.
pub fn avg_decay_rate(model: &ContinuumModel, dt: f64) -> Result<f64> {
    check_dt(dt)?;
    let omega_s = model.omega_s();
    Ok(dt
        * model
            .modes()
            .iter()
            .map(|m| {
                let s = sinc(0.5 * m.detuning(omega_s) * dt);
                m.coupling_sqr() * s * s
            })
            .sum::<f64>())
}

/// Ensemble-averaged survival under fair random kicks, `1 - γ_avg 2nΔt`.
pub fn averaged_survival(model: &ContinuumModel, dt: f64, n: usize) -> Result<f64> {
    let gamma = avg_decay_rate(model, dt)?;
    let p = 1.0 - gamma * 2.0 * n as f64 * dt;
    non_negative("averaged_survival", p, || {
        format!("dt={dt}, n={n}, gamma_avg={gamma}")
    })
}

/// `Σ_k |V_ks|² ∫_0^{Δt} (Δt - t') e^{i(ω_s-ω_k)t'} dt'`: the complex
/// depletion of one interval with the bound amplitude frozen.
pub fn interval_depletion(model: &ContinuumModel, dt: f64) -> Complex64 {
    let omega_s = model.omega_s();
    model
        .modes()
        .iter()
        .map(|m| m.coupling_sqr() * ramp_integral(m.detuning(omega_s), dt))
        .sum()
}

/// Measurement-induced decay rate `γ_Z`, read off the per-interval survival
/// factor `1 - 2 Re(interval_depletion) = 1 - γ_Z Δt`.
pub fn zeno_rate(model: &ContinuumModel, dt: f64) -> Result<f64> {
    check_dt(dt)?;
    Ok(2.0 * interval_depletion(model, dt).re / dt)
}

/// Survival after `2n` ideal projective measurements spaced by `dt`.
pub fn zeno_survival(model: &ContinuumModel, dt: f64, n: usize, form: ZenoForm) -> Result<f64> {
    let gamma = zeno_rate(model, dt)?;
    let steps = 2 * n;
    match form {
        ZenoForm::Linearized => {
            let p = 1.0 - steps as f64 * dt * gamma;
            non_negative("zeno_survival", p, || {
                format!("dt={dt}, n={n}, gamma_zeno={gamma}")
            })
        }
        ZenoForm::Product => {
            let factor = 1.0 - 2.0 * interval_depletion(model, dt).re;
            let factor = non_negative("zeno_survival per-interval factor", factor, || {
                format!("dt={dt}, n={n}, gamma_zeno={gamma}")
            })?;
            Ok(factor.powi(steps as i32))
        }
    }
}

/// The A/B/C decomposition of the periodically kicked survival probability
/// after `2n` kicks.
pub fn kicked_terms(model: &ContinuumModel, dt: f64, n: usize) -> Result<KickedTerms> {
    kicked_terms_with(model, dt, n, &ResonanceGuard::default())
}

pub fn kicked_terms_with(
    model: &ContinuumModel,
    dt: f64,
    n: usize,
    guard: &ResonanceGuard,
) -> Result<KickedTerms> {
    check_dt(dt)?;
    check_n(n)?;
    guard.check(model, dt)?;
    let two_n = 2.0 * n as f64;
    let term_a = two_n * dt * avg_decay_rate(model, dt)?;
    let term_b = kicked_loss(model, dt, n);
    let term_c: f64 = per_mode_f2(model, dt, n).map(|f| 2.0 * f.re).sum();
    Ok(KickedTerms {
        term_a,
        term_b,
        term_c,
    })
}

/// `2 Re Σ_k F¹_k = Σ_k |V_ks|² tan²(θ_k/2) sin²(nθ_k) / (δ_k/2)²`,
/// with `tan²(θ/2)/(δ/2)²` written as `(Δt sinc(θ/2))² / cos²(θ/2)` so a
/// resonant mode (δ = 0) contributes its limit, zero.
fn kicked_loss(model: &ContinuumModel, dt: f64, n: usize) -> f64 {
    let omega_s = model.omega_s();
    model
        .modes()
        .iter()
        .map(|m| {
            let theta = m.detuning(omega_s) * dt;
            let half = 0.5 * theta;
            let c = half.cos();
            let s = dt * sinc(half);
            let osc = (n as f64 * theta).sin();
            m.coupling_sqr() * s * s * osc * osc / (c * c)
        })
        .sum()
}

/// `F²_k = 2n |V_ks|² e^{-iθ} (x - 1)² / (δ² (x + 1))`, evaluated as
/// `-2n |V_ks|² e^{-iθ} E² / (x + 1)`.
fn per_mode_f2<'a>(
    model: &'a ContinuumModel,
    dt: f64,
    n: usize,
) -> impl Iterator<Item = Complex64> + 'a {
    let omega_s = model.omega_s();
    let two_n = 2.0 * n as f64;
    model.modes().iter().map(move |m| {
        let delta = m.detuning(omega_s);
        let theta = delta * dt;
        let x = Complex64::from_polar(1.0, theta);
        let e = segment_integral(delta, dt);
        -two_n * m.coupling_sqr() * x.conj() * e * e / (x + ONE)
    })
}

/// `F¹_k = |V_ks|² (x - 1)² (x^{-2n} - 1) / (δ² (x + 1)²)`, evaluated as
/// `-|V_ks|² E² (x^{-2n} - 1) / (x + 1)²`.
fn per_mode_f1<'a>(
    model: &'a ContinuumModel,
    dt: f64,
    n: usize,
) -> impl Iterator<Item = Complex64> + 'a {
    let omega_s = model.omega_s();
    model.modes().iter().map(move |m| {
        let delta = m.detuning(omega_s);
        let theta = delta * dt;
        let x = Complex64::from_polar(1.0, theta);
        let e = segment_integral(delta, dt);
        let back = Complex64::from_polar(1.0, -2.0 * n as f64 * theta);
        let denom = (x + ONE) * (x + ONE);
        -m.coupling_sqr() * e * e * (back - ONE) / denom
    })
}

/// Bound amplitude after `2n` periodic kicks (even count, so no net sign):
/// `α_s(2nΔt) = 1 - 2n·interval_depletion - Σ_k F¹_k - Σ_k F²_k`.
pub fn kicked_amplitude(model: &ContinuumModel, dt: f64, n: usize) -> Result<Complex64> {
    check_dt(dt)?;
    check_n(n)?;
    ResonanceGuard::default().check(model, dt)?;
    let depletion = 2.0 * n as f64 * interval_depletion(model, dt);
    let f1: Complex64 = per_mode_f1(model, dt, n).sum();
    let f2: Complex64 = per_mode_f2(model, dt, n).sum();
    Ok(ONE - depletion - f1 - f2)
}

/// Survival after `2n` periodic phase kicks, `1 - 2 Re Σ_k F¹_k`.
pub fn kicked_survival(model: &ContinuumModel, dt: f64, n: usize) -> Result<f64> {
    kicked_survival_with(model, dt, n, &ResonanceGuard::default())
}

pub fn kicked_survival_with(
    model: &ContinuumModel,
    dt: f64,
    n: usize,
    guard: &ResonanceGuard,
) -> Result<f64> {
    check_dt(dt)?;
    check_n(n)?;
    guard.check(model, dt)?;
    let p = 1.0 - kicked_loss(model, dt, n);
    non_negative("kicked_survival", p, || format!("dt={dt}, n={n}"))
}

fn mode_at(model: &ContinuumModel, mode_index: usize) -> Result<crate::model::Mode> {
    model
        .modes()
        .get(mode_index)
        .copied()
        .ok_or_else(|| Error::invalid("mode_index", mode_index, "out of range"))
}

/// Continuum amplitude after `j` periodic intervals (kicks between them),
/// to first order:
/// `β_k(jΔt) = V_ks (x - 1)((-x)^j - 1) / (δ (x + 1))`.
pub fn beta_periodic(
    model: &ContinuumModel,
    mode_index: usize,
    dt: f64,
    j: usize,
) -> Result<Complex64> {
    beta_periodic_with(model, mode_index, dt, j, &ResonanceGuard::default())
}

pub fn beta_periodic_with(
    model: &ContinuumModel,
    mode_index: usize,
    dt: f64,
    j: usize,
    guard: &ResonanceGuard,
) -> Result<Complex64> {
    check_dt(dt)?;
    check_n(j)?;
    let mode = mode_at(model, mode_index)?;
    let delta = mode.detuning(model.omega_s());
    let theta = delta * dt;
    let x = Complex64::from_polar(1.0, theta);
    let e = segment_integral(delta, dt);
    let lead = -I * mode.v_ks * e;
    if guard.is_resonant(theta) {
        return match guard.behavior {
            GuardBehavior::Error => Err(Error::Resonance {
                mode_index,
                omega_k: mode.omega_k,
                omega_s: model.omega_s(),
                dt,
                phase: -theta,
                threshold: guard.threshold,
            }),
            // Σ_{m<j} (-x)^m with -x → 1
            GuardBehavior::Limit => Ok(lead * (ONE + geometric_sum(-x, j - 1))),
        };
    }
    let alt =
        Complex64::from_polar(1.0, j as f64 * theta) * if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(lead * (ONE - alt) / (ONE + x))
}

/// Continuum amplitude at `lΔt` under a random kick schedule. `signs` holds
/// the per-pulse `ξ_1 … ξ_{l-1}` (index `j - 1`); the bound amplitude on
/// interval `m` carries their running product `λ_m = ξ_1 ⋯ ξ_m`:
///
/// `β_k(lΔt) = -i V_ks E_k Σ_{m=0}^{l-1} λ_m x^m`.
pub fn beta_stochastic(
    model: &ContinuumModel,
    mode_index: usize,
    dt: f64,
    l: usize,
    signs: &SignSequence,
) -> Result<Complex64> {
    check_dt(dt)?;
    check_n(l)?;
    if signs.len() < l - 1 {
        return Err(Error::Length {
            expected: l - 1,
            found: signs.len(),
        });
    }
    let mode = mode_at(model, mode_index)?;
    let delta = mode.detuning(model.omega_s());
    let theta = delta * dt;
    let mut lambda = 1.0;
    let mut acc = ONE;
    for m in 1..l {
        lambda *= signs[m - 1] as f64;
        acc += lambda * Complex64::from_polar(1.0, m as f64 * theta);
    }
    Ok(-I * mode.v_ks * segment_integral(delta, dt) * acc)
}

/// Survival after `2n` intervals of a random kick schedule,
/// `|G|² - 2 Re(F*G)` with `|F|²` (fourth order) dropped.
///
/// `|G|² = 1 - 2nΔt γ_avg` is the incoherent depletion; the interference
/// term pairs the amplitude fed into the continuum on interval `m` with its
/// return on a later interval `l`:
///
/// `F*G = Σ_k w_k Σ_{l=1}^{2n-1} λ_l x_k^{-l} Σ_{m<l} λ_m x_k^m`.
///
/// `signs` are the `2n` per-pulse `ξ_j`; the last one only sets the overall
/// sign of the amplitude and drops out.
pub fn stochastic_survival(
    model: &ContinuumModel,
    dt: f64,
    n: usize,
    signs: &SignSequence,
) -> Result<f64> {
    check_dt(dt)?;
    check_n(n)?;
    let steps = 2 * n;
    if signs.len() != steps {
        return Err(Error::Length {
            expected: steps,
            found: signs.len(),
        });
    }
    let lambdas = signs.segment_signs();
    let g_sqr = 1.0 - steps as f64 * 2.0 * interval_depletion(model, dt).re;
    let cross = interference(model, dt, lambdas.as_slice());
    let p = g_sqr - 2.0 * cross.re;
    non_negative("stochastic_survival", p, || format!("dt={dt}, n={n}"))
}

fn interference(model: &ContinuumModel, dt: f64, lambdas: &[i8]) -> Complex64 {
    let omega_s = model.omega_s();
    model
        .modes()
        .iter()
        .map(|m| {
            let delta = m.detuning(omega_s);
            let theta = delta * dt;
            let mut fed = Complex64::new(lambdas[0] as f64, 0.0);
            let mut acc = Complex64::new(0.0, 0.0);
            for (l, &lam) in lambdas.iter().enumerate().skip(1) {
                let phase = Complex64::from_polar(1.0, l as f64 * theta);
                acc += lam as f64 * phase.conj() * fed;
                fed += lam as f64 * phase;
            }
            m.coupling_sqr() * segment_weight(delta, dt) * acc
        })
        .sum()
}

/// Survival under a decoupling sign schedule `λ_0 … λ_{2n-1}` (the sign of
/// the bound amplitude on each interval), `|G|² + 2 Re(F*G)` with
///
/// `2 Re(F*G) = -2 Σ_k Σ_{l=1}^{2n-1} Σ_{m=0}^{l-1} λ_l λ_m w_k cos(θ_k (l - m))`
///
/// summed term by term, so arbitrary (including random) `λ` are accepted.
pub fn dd_survival(
    model: &ContinuumModel,
    dt: f64,
    n: usize,
    lambdas: &SignSequence,
) -> Result<f64> {
    check_dt(dt)?;
    check_n(n)?;
    let steps = 2 * n;
    if lambdas.len() != steps {
        return Err(Error::Length {
            expected: steps,
            found: lambdas.len(),
        });
    }
    let lam = lambdas.as_slice();
    let omega_s = model.omega_s();
    let gamma = avg_decay_rate(model, dt)?;
    let g_sqr = 1.0 - steps as f64 * dt * gamma;
    let mut cos_table = vec![0.0; steps];
    let mut re_fg = 0.0;
    for m in model.modes() {
        let delta = m.detuning(omega_s);
        let theta = delta * dt;
        for (d, c) in cos_table.iter_mut().enumerate() {
            *c = (theta * d as f64).cos();
        }
        let mut triple = 0.0;
        for l in 1..steps {
            for mm in 0..l {
                triple += (lam[l] * lam[mm]) as f64 * cos_table[l - mm];
            }
        }
        re_fg -= 2.0 * m.coupling_sqr() * segment_weight(delta, dt) * triple;
    }
    let p = g_sqr + re_fg;
    non_negative("dd_survival", p, || format!("dt={dt}, n={n}"))
}

/// Precomputed per-mode weights and phases for evaluating many sign
/// schedules on one `(model, dt, steps)` grid.
#[derive(Debug, Clone)]
pub struct SignedDecay {
    weights: Vec<f64>,
    /// `phases[k * steps + l] = x_k^l`
    phases: Vec<Complex64>,
    steps: usize,
}

impl SignedDecay {
    pub fn new(model: &ContinuumModel, dt: f64, steps: usize) -> Result<Self> {
        check_dt(dt)?;
        let omega_s = model.omega_s();
        let mut weights = Vec::with_capacity(model.n_modes());
        let mut phases = Vec::with_capacity(model.n_modes() * steps);
        for m in model.modes() {
            let delta = m.detuning(omega_s);
            weights.push(m.coupling_sqr() * segment_weight(delta, dt));
            phases.extend((0..steps).map(|l| Complex64::from_polar(1.0, delta * dt * l as f64)));
        }
        Ok(Self {
            weights,
            phases,
            steps,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `P(jΔt) = 1 - Σ_k w_k |Σ_{l<j} λ_l x_k^l|²` for `j = 0..=steps`, given
    /// the per-segment signs `λ`.
    pub fn curve(&self, lambdas: &[i8]) -> Result<Vec<f64>> {
        if lambdas.len() != self.steps {
            return Err(Error::Length {
                expected: self.steps,
                found: lambdas.len(),
            });
        }
        let mut loss = vec![0.0; self.steps + 1];
        for (k, &w) in self.weights.iter().enumerate() {
            let row = &self.phases[k * self.steps..(k + 1) * self.steps];
            let mut sum = Complex64::new(0.0, 0.0);
            for (j, (&lam, &x)) in lambdas.iter().zip(row).enumerate() {
                if lam > 0 {
                    sum += x;
                } else {
                    sum -= x;
                }
                loss[j + 1] += w * sum.norm_sqr();
            }
        }
        Ok(loss.into_iter().map(|l| 1.0 - l).collect())
    }
}

/// Expected first-order survival at `jΔt`, `j = 0..=steps`, when each slot
/// kicks independently with probability `p_kick`. The per-segment signs are
/// then correlated as `⟨λ_l λ_m⟩ = (1 - 2p)^{|l-m|}`; at `p = 1/2` only the
/// diagonal survives and the curve is `1 - γ_avg jΔt`.
pub fn mean_signed_curve(
    model: &ContinuumModel,
    dt: f64,
    steps: usize,
    p_kick: f64,
) -> Result<Vec<f64>> {
    check_dt(dt)?;
    if !(0.0..=1.0).contains(&p_kick) {
        return Err(Error::invalid("p_kick", p_kick, "must lie in [0, 1]"));
    }
    let corr = 1.0 - 2.0 * p_kick;
    if corr == 0.0 {
        let gamma = avg_decay_rate(model, dt)?;
        return Ok((0..=steps).map(|j| 1.0 - gamma * j as f64 * dt).collect());
    }
    let omega_s = model.omega_s();
    let mut loss = vec![0.0; steps + 1];
    for m in model.modes() {
        let delta = m.detuning(omega_s);
        let w = m.coupling_sqr() * segment_weight(delta, dt);
        // |S_j|² expectation grows by 1 + 2 Σ_{d=1}^{j-1} corr^d cos(dθ) per step
        let mut lagged = 0.0;
        let mut pow = 1.0;
        let mut acc = 0.0;
        for (j, l) in loss.iter_mut().enumerate().skip(1) {
            if j > 1 {
                pow *= corr;
                lagged += pow * (delta * dt * (j - 1) as f64).cos();
            }
            acc += 1.0 + 2.0 * lagged;
            *l += w * acc;
        }
    }
    Ok(loss.into_iter().map(|l| 1.0 - l).collect())
}
