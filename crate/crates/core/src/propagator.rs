//! Time evolution of a [`QuantumState`].
//!
//! Two routes are provided:
//!
//! * **exact**: diagonalize the full `(N+1)×(N+1)` Hamiltonian once per model
//!   and propagate Schrödinger-picture coefficients with the eigenphases;
//! * **perturbative**: the short-time stepper that freezes `α_s` at the start
//!   of each step and evaluates the kernel and continuum integrals in closed
//!   form. Accurate to second order in the couplings per step.
//!
//! [`run_pulsed`] interleaves either route with the instantaneous pulses of a
//! [`PulseSequence`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{ContinuumModel, QuantumState};
use crate::pulses::{PulseKind, PulseSequence};
use crate::special::{ramp_integral, segment_integral};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagatorKind {
    Exact,
    Perturbative,
}

impl PropagatorKind {
    pub fn name(self) -> &'static str {
        match self {
            PropagatorKind::Exact => "exact",
            PropagatorKind::Perturbative => "perturbative",
        }
    }
}

/// Which propagator to use and the tolerance for its internal checks. For
/// the exact route `tol` bounds the norm drift accepted over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorChoice {
    kind: PropagatorKind,
    tol: f64,
}

impl PropagatorChoice {
    pub const DEFAULT_TOL: f64 = 1e-8;

    pub fn new(kind: PropagatorKind, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol <= 1e-2) {
            return Err(Error::invalid("tol", tol, "must lie in (0, 1e-2]"));
        }
        Ok(Self { kind, tol })
    }

    pub fn exact() -> Self {
        Self {
            kind: PropagatorKind::Exact,
            tol: Self::DEFAULT_TOL,
        }
    }

    pub fn perturbative() -> Self {
        Self {
            kind: PropagatorKind::Perturbative,
            tol: Self::DEFAULT_TOL,
        }
    }

    pub fn kind(&self) -> PropagatorKind {
        self.kind
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }
}

/// Eigendecomposition `H = U diag(E) U†` of the model Hamiltonian. Row 0 of
/// `U` is the bound state.
#[derive(Debug)]
pub struct Spectrum {
    energies: Vec<f64>,
    vectors: DMatrix<Complex64>,
    /// `U[0, j]`: overlap of eigenvector `j` with `|s⟩`.
    bound_row: Vec<Complex64>,
}

impl Spectrum {
    pub(crate) fn diagonalize(model: &ContinuumModel) -> Result<Self> {
        let dim = model.n_modes() + 1;
        let mut h = DMatrix::<Complex64>::zeros(dim, dim);
        h[(0, 0)] = Complex64::new(model.omega_s(), 0.0);
        for (k, mode) in model.modes().iter().enumerate() {
            h[(k + 1, k + 1)] = Complex64::new(mode.omega_k, 0.0);
            h[(k + 1, 0)] = mode.v_ks;
            h[(0, k + 1)] = mode.v_ks.conj();
        }
        let eig = SymmetricEigen::try_new(h, f64::EPSILON, 0).ok_or(Error::Eigen { dim })?;
        let energies = eig.eigenvalues.iter().copied().collect();
        let bound_row = (0..dim).map(|j| eig.eigenvectors[(0, j)]).collect();
        Ok(Self {
            energies,
            vectors: eig.eigenvectors,
            bound_row,
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    fn dim(&self) -> usize {
        self.energies.len()
    }
}

/// A state held as eigenbasis coefficients of the Schrödinger-picture vector.
#[derive(Debug, Clone)]
struct EigenState {
    coeffs: Vec<Complex64>,
    time: f64,
}

impl EigenState {
    fn from_state(model: &ContinuumModel, spec: &Spectrum, state: &QuantumState) -> Self {
        let t = state.time;
        let mut psi = Vec::with_capacity(spec.dim());
        psi.push(state.alpha_s * Complex64::from_polar(1.0, -model.omega_s() * t));
        psi.extend(
            model
                .modes()
                .iter()
                .zip(&state.beta)
                .map(|(m, b)| b * Complex64::from_polar(1.0, -m.omega_k * t)),
        );
        // c = U† ψ
        let coeffs = (0..spec.dim())
            .map(|j| {
                spec.vectors
                    .column(j)
                    .iter()
                    .zip(&psi)
                    .map(|(u, p)| u.conj() * p)
                    .sum()
            })
            .collect();
        Self { coeffs, time: t }
    }

    fn to_state(&self, model: &ContinuumModel, spec: &Spectrum) -> QuantumState {
        let dim = spec.dim();
        let mut psi = vec![Complex64::new(0.0, 0.0); dim];
        for (j, c) in self.coeffs.iter().enumerate() {
            for (p, u) in psi.iter_mut().zip(spec.vectors.column(j).iter()) {
                *p += u * c;
            }
        }
        let t = self.time;
        let alpha_s = psi[0] * Complex64::from_polar(1.0, model.omega_s() * t);
        let beta = model
            .modes()
            .iter()
            .zip(&psi[1..])
            .map(|(m, p)| p * Complex64::from_polar(1.0, m.omega_k * t))
            .collect();
        QuantumState {
            alpha_s,
            beta,
            time: t,
        }
    }

    fn advance(&mut self, spec: &Spectrum, duration: f64) {
        for (c, &e) in self.coeffs.iter_mut().zip(&spec.energies) {
            *c *= Complex64::from_polar(1.0, -e * duration);
        }
        self.time += duration;
    }

    /// `⟨s|ψ⟩` in the Schrödinger picture.
    fn bound_amplitude(&self, spec: &Spectrum) -> Complex64 {
        spec.bound_row
            .iter()
            .zip(&self.coeffs)
            .map(|(u, c)| u * c)
            .sum()
    }

    fn kick(&mut self, spec: &Spectrum) {
        let a = self.bound_amplitude(spec);
        for (c, u) in self.coeffs.iter_mut().zip(&spec.bound_row) {
            *c -= 2.0 * u.conj() * a;
        }
    }

    fn project(&mut self, spec: &Spectrum) {
        let a = self.bound_amplitude(spec);
        for (c, u) in self.coeffs.iter_mut().zip(&spec.bound_row) {
            *c = u.conj() * a;
        }
    }

    fn apply(&mut self, spec: &Spectrum, pulse: PulseKind) {
        match pulse {
            PulseKind::PhaseKick => self.kick(spec),
            PulseKind::Projection => self.project(spec),
            PulseKind::Identity => {}
        }
    }

    fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn check_duration(duration: f64) -> Result<()> {
    if duration.is_finite() && duration >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "duration",
            duration,
            "must be finite and non-negative",
        ))
    }
}

/// Advance `state` by `duration` under the full Hamiltonian.
pub fn evolve_exact(
    model: &ContinuumModel,
    state: &QuantumState,
    duration: f64,
) -> Result<QuantumState> {
    state.check_aligned(model)?;
    check_duration(duration)?;
    if duration == 0.0 {
        return Ok(state.clone());
    }
    let spec = model.spectrum()?;
    let mut eig = EigenState::from_state(model, &spec, state);
    eig.advance(&spec, duration);
    Ok(eig.to_state(model, &spec))
}

/// One short-time step with `α_s` frozen at its value at `state.time`:
///
/// ```text
/// α_s(t_b+h) = α_s(t_b) [1 - Σ_k |V_ks|² ∫_0^h (h-u) e^{-iδ_k u} du]
///              - i Σ_k V_sk β_k(t_b) ∫_{t_b}^{t_b+h} e^{-iδ_k t'} dt'
/// β_k(t_b+h) = β_k(t_b) - i V_ks α_s(t_b) ∫_{t_b}^{t_b+h} e^{iδ_k t'} dt'
/// ```
///
/// with `δ_k = ω_k - ω_s`. The caller keeps `Γ h ≪ 1`.
pub fn step_perturbative(
    model: &ContinuumModel,
    state: &QuantumState,
    duration: f64,
) -> Result<QuantumState> {
    state.check_aligned(model)?;
    check_duration(duration)?;
    if duration == 0.0 {
        return Ok(state.clone());
    }
    let t_b = state.time;
    let alpha_b = state.alpha_s;
    let mut depletion = Complex64::new(0.0, 0.0);
    let mut feedback = Complex64::new(0.0, 0.0);
    let mut beta = Vec::with_capacity(state.beta.len());
    for (mode, &b) in model.modes().iter().zip(&state.beta) {
        let delta = mode.detuning(model.omega_s());
        let seg = segment_integral(delta, duration);
        let phase = Complex64::from_polar(1.0, delta * t_b);
        depletion += mode.coupling_sqr() * ramp_integral(delta, duration);
        // ∫ e^{-iδt'} over the step is the conjugate of ∫ e^{iδt'}
        feedback += mode.v_ks.conj() * b * (phase * seg).conj();
        beta.push(b - I * mode.v_ks * alpha_b * phase * seg);
    }
    Ok(QuantumState {
        alpha_s: alpha_b * (1.0 - depletion) - I * feedback,
        beta,
        time: t_b + duration,
    })
}

/// Provenance attached to a [`SurvivalCurve`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveMeta {
    pub method: String,
    pub dt: f64,
    pub n_events: usize,
    pub seed: Option<u64>,
    pub label: String,
    pub extra: BTreeMap<String, String>,
}

/// Sampled survival probability `P_s(t) = |α_s(t)|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub p_s: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub meta: CurveMeta,
}

impl SurvivalCurve {
    pub fn new(
        times: Vec<f64>,
        p_s: Vec<f64>,
        stderr: Option<Vec<f64>>,
        meta: CurveMeta,
    ) -> Result<Self> {
        if times.len() != p_s.len() {
            return Err(Error::Length {
                expected: times.len(),
                found: p_s.len(),
            });
        }
        if let Some(se) = &stderr {
            if se.len() != times.len() {
                return Err(Error::Length {
                    expected: times.len(),
                    found: se.len(),
                });
            }
        }
        if times
            .windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
        {
            return Err(Error::invalid(
                "times",
                "curve",
                "must be strictly ascending",
            ));
        }
        Ok(Self {
            times,
            p_s,
            stderr,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        Some((*self.times.last()?, *self.p_s.last()?))
    }

    /// `t,p_s[,stderr]` with 17 significant digits, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.stderr {
            Some(se) => {
                out.push_str("t,p_s,stderr\n");
                for ((t, p), s) in self.times.iter().zip(&self.p_s).zip(se) {
                    let _ = writeln!(out, "{},{},{}", fmt_f64(*t), fmt_f64(*p), fmt_f64(*s));
                }
            }
            None => {
                out.push_str("t,p_s\n");
                for (t, p) in self.times.iter().zip(&self.p_s) {
                    let _ = writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(*p));
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Full double precision: 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Evolve for `seq.dt`, apply the pulse, record `P_s`; repeat for every event.
/// The curve starts with the initial state at its own time.
pub fn run_pulsed(
    model: &ContinuumModel,
    initial: &QuantumState,
    seq: &PulseSequence,
    choice: PropagatorChoice,
) -> Result<SurvivalCurve> {
    run_pulsed_with_state(model, initial, seq, choice).map(|(curve, _)| curve)
}

/// As [`run_pulsed`], also returning the final state.
pub fn run_pulsed_with_state(
    model: &ContinuumModel,
    initial: &QuantumState,
    seq: &PulseSequence,
    choice: PropagatorChoice,
) -> Result<(SurvivalCurve, QuantumState)> {
    seq.validate()?;
    initial.check_aligned(model)?;
    let n = seq.events.len();
    let mut times = Vec::with_capacity(n + 1);
    let mut p_s = Vec::with_capacity(n + 1);
    times.push(initial.time);
    p_s.push(initial.survival());

    let final_state = match choice.kind {
        PropagatorKind::Exact => {
            let spec = model.spectrum()?;
            let mut eig = EigenState::from_state(model, &spec, initial);
            let start_norm = eig.norm_sqr();
            let unitary = seq.events.iter().all(|e| *e != PulseKind::Projection);
            for &event in &seq.events {
                eig.advance(&spec, seq.dt);
                eig.apply(&spec, event);
                times.push(eig.time);
                p_s.push(eig.bound_amplitude(&spec).norm_sqr());
            }
            let end_norm = eig.norm_sqr();
            let drift = if unitary {
                (end_norm - start_norm).abs()
            } else {
                (end_norm - start_norm).max(0.0)
            };
            if drift > choice.tol {
                return Err(Error::NormDrift {
                    drift,
                    tol: choice.tol,
                    events: n,
                });
            }
            eig.to_state(model, &spec)
        }
        PropagatorKind::Perturbative => {
            let mut state = initial.clone();
            for &event in &seq.events {
                state = step_perturbative(model, &state, seq.dt)?;
                state = event.apply(&state);
                times.push(state.time);
                p_s.push(state.survival());
            }
            state
        }
    };

    let meta = CurveMeta {
        method: choice.kind.name().to_string(),
        dt: seq.dt,
        n_events: n,
        seed: None,
        label: seq.to_string(),
        extra: BTreeMap::new(),
    };
    Ok((SurvivalCurve::new(times, p_s, None, meta)?, final_state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_custom, build_flat_band};
    use crate::pulses::periodic_sequence;
    use std::f64::consts::PI;

    fn two_level(v: f64) -> ContinuumModel {
        build_custom(0.0, vec![(1.0, Complex64::new(v, 0.0))]).unwrap()
    }

    /// Rabi formula for a bound level at 0 coupled to one mode at detuning 1.
    fn rabi(v: f64, t: f64) -> f64 {
        let omega = (0.25 + v * v).sqrt();
        1.0 - (v * v / (omega * omega)) * (omega * t).sin().powi(2)
    }

    #[test]
    fn zero_duration_is_identity() {
        let m = build_flat_band(7, 3.0, 0.1, 0.2).unwrap();
        let mut s = QuantumState::bound(&m);
        s.beta[3] = Complex64::new(0.1, -0.2);
        s.alpha_s = Complex64::new(0.3, 0.1);
        s.time = 1.7;
        assert_eq!(evolve_exact(&m, &s, 0.0).unwrap(), s);
        assert_eq!(step_perturbative(&m, &s, 0.0).unwrap(), s);
    }

    #[test]
    fn exact_matches_rabi_oracle() {
        let m = two_level(0.1);
        let omega = (0.25f64 + 0.01).sqrt();
        let t_quarter = PI / (2.0 * omega);
        let s = evolve_exact(&m, &QuantumState::bound(&m), t_quarter).unwrap();
        assert!((s.survival() - (1.0 - 0.01 / 0.26)).abs() < 1e-12);
        assert!((s.survival() - 0.961_538_461_538).abs() < 1e-11);
        for &t in &[0.3, 1.0, PI, 12.5] {
            let s = evolve_exact(&m, &QuantumState::bound(&m), t).unwrap();
            assert!((s.survival() - rabi(0.1, t)).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn zero_coupling_keeps_modulus() {
        let m = build_flat_band(5, 2.0, 0.0, 0.0).unwrap();
        let s = evolve_exact(&m, &QuantumState::bound(&m), 3.3).unwrap();
        assert!((s.alpha_s.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exact_is_unitary_and_composes() {
        let m = build_flat_band(31, 6.0, Complex64::new(0.05, 0.02), 0.1).unwrap();
        let s0 = QuantumState::bound(&m);
        let a = evolve_exact(&m, &s0, 0.7).unwrap();
        let ab = evolve_exact(&m, &a, 1.9).unwrap();
        let direct = evolve_exact(&m, &s0, 2.6).unwrap();
        assert!((ab.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((ab.alpha_s - direct.alpha_s).norm() < 1e-12);
        for (x, y) in ab.beta.iter().zip(&direct.beta) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn perturbative_first_step_matches_closed_integral() {
        let m = build_custom(
            0.2,
            vec![
                (-0.7, Complex64::new(0.03, 0.01)),
                (0.2, Complex64::new(0.02, 0.0)),
                (1.4, Complex64::new(0.01, -0.02)),
            ],
        )
        .unwrap();
        let mut s = QuantumState::bound(&m);
        s.time = 0.4;
        s.alpha_s = Complex64::new(0.8, 0.1);
        let h = 0.3;
        let next = step_perturbative(&m, &s, h).unwrap();
        for (mode, b) in m.modes().iter().zip(&next.beta) {
            let d = mode.omega_k - m.omega_s();
            let expected = if d == 0.0 {
                -I * mode.v_ks * s.alpha_s * h
            } else {
                let a = Complex64::from_polar(1.0, d * (s.time + h));
                let b0 = Complex64::from_polar(1.0, d * s.time);
                -I * mode.v_ks * s.alpha_s * (a - b0) / (I * d)
            };
            assert!((b - expected).norm() < 1e-15, "{b} vs {expected}");
        }
        assert_eq!(next.time, s.time + h);
    }

    #[test]
    fn perturbative_tracks_exact_at_weak_coupling() {
        let m = build_flat_band(41, 8.0, 0.01, 0.0).unwrap();
        let seq = periodic_sequence(0.05, 40, PulseKind::Identity).unwrap();
        let s0 = QuantumState::bound(&m);
        let exact = run_pulsed(&m, &s0, &seq, PropagatorChoice::exact()).unwrap();
        let pert = run_pulsed(&m, &s0, &seq, PropagatorChoice::perturbative()).unwrap();
        let gap = exact
            .p_s
            .iter()
            .zip(&pert.p_s)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-5, "gap {gap}");
    }

    #[test]
    fn driver_matches_manual_stepping() {
        let m = build_flat_band(21, 5.0, 0.04, 0.0).unwrap();
        let seq = periodic_sequence(0.3, 12, PulseKind::PhaseKick).unwrap();
        let s0 = QuantumState::bound(&m);
        let (curve, fin) = run_pulsed_with_state(&m, &s0, &seq, PropagatorChoice::exact()).unwrap();
        let mut manual = s0.clone();
        for (j, &e) in seq.events.iter().enumerate() {
            manual = evolve_exact(&m, &manual, seq.dt).unwrap();
            manual = e.apply(&manual);
            assert!((manual.survival() - curve.p_s[j + 1]).abs() < 1e-12);
        }
        assert!((manual.alpha_s - fin.alpha_s).norm() < 1e-12);
        for (x, y) in manual.beta.iter().zip(&fin.beta) {
            assert!((x - y).norm() < 1e-12);
        }
        assert!((manual.time - fin.time).abs() < 1e-12);
    }

    #[test]
    fn projections_never_increase_survival() {
        let m = build_flat_band(25, 6.0, 0.05, 0.0).unwrap();
        let seq = periodic_sequence(0.4, 30, PulseKind::Projection).unwrap();
        for choice in [PropagatorChoice::exact(), PropagatorChoice::perturbative()] {
            let c = run_pulsed(&m, &QuantumState::bound(&m), &seq, choice).unwrap();
            for w in c.p_s.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "{:?}", choice.kind());
            }
        }
    }

    #[test]
    fn curve_grid_and_meta() {
        let m = two_level(0.05);
        let seq = periodic_sequence(0.25, 4, PulseKind::Identity).unwrap();
        let c = run_pulsed(
            &m,
            &QuantumState::bound(&m),
            &seq,
            PropagatorChoice::exact(),
        )
        .unwrap();
        assert_eq!(c.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(c.p_s[0], 1.0);
        assert_eq!(c.meta.method, "exact");
        assert_eq!(c.meta.n_events, 4);
        for (t, p) in c.times.iter().zip(&c.p_s) {
            assert!((p - rabi(0.05, *t)).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_errors() {
        let m = two_level(0.1);
        let bad = QuantumState {
            alpha_s: Complex64::new(1.0, 0.0),
            beta: vec![],
            time: 0.0,
        };
        assert!(matches!(
            evolve_exact(&m, &bad, 1.0),
            Err(Error::Alignment { .. })
        ));
        assert!(matches!(
            step_perturbative(&m, &bad, 1.0),
            Err(Error::Alignment { .. })
        ));
        assert!(evolve_exact(&m, &QuantumState::bound(&m), -1.0).is_err());
    }

    #[test]
    fn choice_tolerance_range() {
        assert!(PropagatorChoice::new(PropagatorKind::Exact, 0.0).is_err());
        assert!(PropagatorChoice::new(PropagatorKind::Exact, 0.1).is_err());
        assert!(PropagatorChoice::new(PropagatorKind::Exact, 1e-2).is_ok());
    }

    #[test]
    fn csv_layout() {
        let c = SurvivalCurve::new(vec![0.0, 0.5], vec![1.0, 0.25], None, CurveMeta::default())
            .unwrap();
        assert_eq!(
            c.to_csv(),
            "t,p_s\n0.0000000000000000e0,1.0000000000000000e0\n5.0000000000000000e-1,2.5000000000000000e-1\n"
        );
        let c = SurvivalCurve::new(vec![0.1], vec![0.9], Some(vec![0.01]), CurveMeta::default())
            .unwrap();
        assert!(c.to_csv().starts_with("t,p_s,stderr\n"));
        assert!(
            SurvivalCurve::new(vec![0.0, 0.0], vec![1.0, 1.0], None, CurveMeta::default()).is_err()
        );
    }
}
