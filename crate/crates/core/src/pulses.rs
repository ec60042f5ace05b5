//! Instantaneous pulse operators and the sequence generators that schedule
//! them.
//!
//! A sequence with interval `dt` applies `events[j]` at time `(j + 1) * dt`.
//! Signs come in two flavors that are easy to confuse:
//!
//! * per-pulse signs `ξ_j` (stored at index `j - 1`): `-1` when a phase kick
//!   fires at `j * dt`, `+1` when nothing happens;
//! * per-segment signs `λ_l` (stored at index `l`): the sign of the bound
//!   amplitude during `[l dt, (l + 1) dt)`, i.e. `λ_0 = 1`, `λ_l = ξ_1 ⋯ ξ_l`.
//!
//! [`SignSequence::segment_signs`] and [`SignSequence::pulse_signs`] convert
//! between the two.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::QuantumState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PulseKind {
    /// 2π pulse: `Q = 1 - 2|s⟩⟨s|`, flips the sign of `α_s`.
    #[serde(rename = "K")]
    PhaseKick,
    /// Ideal measurement `P = |s⟩⟨s|` (unnormalized surviving branch).
    #[serde(rename = "P")]
    Projection,
    #[serde(rename = "I")]
    Identity,
}

impl PulseKind {
    pub fn symbol(self) -> char {
        match self {
            PulseKind::PhaseKick => 'K',
            PulseKind::Projection => 'P',
            PulseKind::Identity => 'I',
        }
    }

    pub fn apply(self, state: &QuantumState) -> QuantumState {
        match self {
            PulseKind::PhaseKick => apply_phase_kick(state),
            PulseKind::Projection => apply_projection(state),
            PulseKind::Identity => state.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub dt: f64,
    pub events: Vec<PulseKind>,
    pub label: String,
}

impl PulseSequence {
    pub fn new(dt: f64, events: Vec<PulseKind>, label: impl Into<String>) -> Result<Self> {
        check_dt(dt)?;
        Ok(Self {
            dt,
            events,
            label: label.into(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_dt(self.dt)
    }

    /// `(j + 1) * dt` for each event.
    pub fn event_times(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.events.len()).map(move |j| j as f64 * self.dt)
    }

    pub fn duration(&self) -> f64 {
        self.events.len() as f64 * self.dt
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let seq: Self = serde_json::from_str(text)?;
        seq.validate()?;
        Ok(seq)
    }
}

impl fmt::Display for PulseSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (dt={}, events=", self.label, self.dt)?;
        for e in &self.events {
            write!(f, "{}", e.symbol())?;
        }
        write!(f, ")")
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("dt", dt, "must be finite and positive"))
    }
}

/// A list of ±1 values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignSequence(Vec<i8>);

impl SignSequence {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if let Some(bad) = signs.iter().find(|s| !matches!(s, 1 | -1)) {
            return Err(Error::invalid("sign", bad, "entries must be +1 or -1"));
        }
        Ok(Self(signs))
    }

    pub fn all_plus(len: usize) -> Self {
        Self(vec![1; len])
    }

    pub fn all_minus(len: usize) -> Self {
        Self(vec![-1; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    /// Reads this sequence as per-pulse `ξ` and returns the per-segment signs
    /// `λ_0 = 1, λ_l = ξ_1 ⋯ ξ_l` for `l = 0..len`.
    pub fn segment_signs(&self) -> SignSequence {
        let mut out = Vec::with_capacity(self.0.len());
        let mut current = 1i8;
        out.push(current);
        for &xi in self.0.iter().take(self.0.len().saturating_sub(1)) {
            current *= xi;
            out.push(current);
        }
        if self.0.is_empty() {
            out.clear();
        }
        SignSequence(out)
    }

    /// Reads this sequence as per-segment `λ` and returns the per-pulse signs
    /// that produce it: `ξ_j = λ_{j-1} λ_j` between segments, and a closing
    /// pulse that returns the bound amplitude to the sign of `λ_0`.
    pub fn pulse_signs(&self) -> SignSequence {
        let n = self.0.len();
        if n == 0 {
            return SignSequence(vec![]);
        }
        let mut out: Vec<i8> = self.0.windows(2).map(|w| w[0] * w[1]).collect();
        out.push(self.0[n - 1] * self.0[0]);
        SignSequence(out)
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|&s| s as f64).sum::<f64>() / self.0.len() as f64
    }
}

impl std::ops::Index<usize> for SignSequence {
    type Output = i8;
    fn index(&self, i: usize) -> &i8 {
        &self.0[i]
    }
}

pub fn apply_phase_kick(state: &QuantumState) -> QuantumState {
    QuantumState {
        alpha_s: -state.alpha_s,
        beta: state.beta.clone(),
        time: state.time,
    }
}

pub fn apply_projection(state: &QuantumState) -> QuantumState {
    QuantumState {
        alpha_s: state.alpha_s,
        beta: vec![Default::default(); state.beta.len()],
        time: state.time,
    }
}

pub fn periodic_sequence(dt: f64, count: usize, kind: PulseKind) -> Result<PulseSequence> {
    if count == 0 {
        return Err(Error::invalid("count", count, "must be at least 1"));
    }
    let label = match kind {
        PulseKind::PhaseKick => "periodic-kick",
        PulseKind::Projection => "periodic-projection",
        PulseKind::Identity => "free",
    };
    PulseSequence::new(dt, vec![kind; count], label)
}

/// Uniform draw in `[0, 1)` for pulse slot `index` under `seed`.
///
/// Each slot owns a fixed pair of words in the ChaCha8 keystream, so any slot
/// can be reproduced without generating the ones before it.
pub fn uniform_at(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(2 * index as u128);
    rng.random::<f64>()
}

/// Random phase-kick schedule: slot `j` fires with probability `p_kick`.
///
/// Returns the sequence together with the realized per-pulse signs
/// (`-1` for a kick, `+1` for an idle slot).
pub fn stochastic_sequence(
    dt: f64,
    count: usize,
    p_kick: f64,
    seed: u64,
) -> Result<(PulseSequence, SignSequence)> {
    check_dt(dt)?;
    if count == 0 {
        return Err(Error::invalid("count", count, "must be at least 1"));
    }
    if !(0.0..=1.0).contains(&p_kick) {
        return Err(Error::invalid("p_kick", p_kick, "must lie in [0, 1]"));
    }
    // sequential draws walk the same keystream words as `uniform_at`
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::with_capacity(count);
    let mut signs = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random();
        if u < p_kick {
            events.push(PulseKind::PhaseKick);
            signs.push(-1);
        } else {
            events.push(PulseKind::Identity);
            signs.push(1);
        }
    }
    let label = format!("stochastic(p={p_kick}, seed={seed})");
    Ok((PulseSequence::new(dt, events, label)?, SignSequence(signs)))
}

/// Deterministic decoupling segment signs `λ_j = (-1)^j`, `j = 0..count`.
pub fn dd_sign_sequence(count: usize) -> SignSequence {
    SignSequence(
        (0..count)
            .map(|j| if j % 2 == 0 { 1 } else { -1 })
            .collect(),
    )
}
