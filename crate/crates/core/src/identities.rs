//! Internal consistency checks between the closed-form evaluators, run on
//! randomly drawn flat-band models. `kickctl validate` prints these.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytic::{
    avg_decay_rate, dd_survival, kicked_survival, kicked_terms, spontaneous_survival,
    stochastic_survival, zeno_rate, ResonanceGuard,
};
use crate::error::Result;
use crate::model::{build_flat_band_centered, ContinuumModel};
use crate::pulses::{dd_sign_sequence, SignSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

/// A random weak-coupling case kept at least `1e-2` away from every
/// resonance, where the literal `F²` sum is well conditioned.
pub struct Case {
    pub model: ContinuumModel,
    pub dt: f64,
    pub n: usize,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let guard = ResonanceGuard {
        threshold: 1e-2,
        ..ResonanceGuard::default()
    };
    loop {
        let n_modes = rng.random_range(1..=41);
        let bandwidth = rng.random_range(0.5..20.0);
        let coupling = Complex64::new(
            rng.random_range(1e-3..0.01),
            rng.random_range(-0.005..0.005),
        );
        let center = rng.random_range(-0.5..0.5) * bandwidth;
        let model = build_flat_band_centered(n_modes, bandwidth, coupling, 0.0, center)
            .expect("drawn parameters are valid");
        let dt = rng.random_range(0.02..1.5);
        let n = rng.random_range(1..=20);
        if guard.check(&model, dt).is_err() {
            continue;
        }
        // stay where every first-order survival is a probability
        if spontaneous_survival(&model, 2.0 * n as f64 * dt).is_err()
            || kicked_survival(&model, dt, n).is_err()
        {
            continue;
        }
        return Case { model, dt, n };
    }
}

fn check<F>(
    name: &'static str,
    cases: usize,
    tolerance: f64,
    rng: &mut ChaCha8Rng,
    mut error: F,
) -> Result<IdentityCheck>
where
    F: FnMut(&Case) -> Result<f64>,
{
    let mut max_error: f64 = 0.0;
    for _ in 0..cases {
        let case = random_case(rng);
        max_error = max_error.max(error(&case)?);
    }
    Ok(IdentityCheck {
        name,
        cases,
        max_error,
        tolerance,
    })
}

pub fn identity_suite(seed: u64) -> Result<Vec<IdentityCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.push(check("cancellation", 200, 1e-12, &mut rng, |c| {
        let t = kicked_terms(&c.model, c.dt, c.n)?;
        Ok((t.term_a + t.term_c).abs() / t.term_a.abs().max(1e-300))
    })?);
    out.push(check("free-decay reduction", 50, 1e-12, &mut rng, |c| {
        let p = stochastic_survival(&c.model, c.dt, c.n, &SignSequence::all_plus(2 * c.n))?;
        Ok((p - spontaneous_survival(&c.model, 2.0 * c.n as f64 * c.dt)?).abs())
    })?);
    out.push(check("kicked reduction", 50, 1e-12, &mut rng, |c| {
        let p = stochastic_survival(&c.model, c.dt, c.n, &SignSequence::all_minus(2 * c.n))?;
        Ok((p - kicked_survival(&c.model, c.dt, c.n)?).abs())
    })?);
    out.push(check("dd equivalence", 50, 1e-12, &mut rng, |c| {
        let p = dd_survival(&c.model, c.dt, c.n, &dd_sign_sequence(2 * c.n))?;
        Ok((p - kicked_survival(&c.model, c.dt, c.n)?).abs())
    })?);
    out.push(check("zeno coincidence", 100, 1e-14, &mut rng, |c| {
        let avg = avg_decay_rate(&c.model, c.dt)?;
        Ok((zeno_rate(&c.model, c.dt)? - avg).abs() / avg)
    })?);
    Ok(out)
}
