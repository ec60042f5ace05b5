//! Monte Carlo averages over random kick schedules.
//!
//! Realization `r` of an ensemble with master seed `s` draws its schedule from
//! [`realization_seed`]`(s, r)` alone, so realizations can be evaluated in any
//! order on any number of threads. Aggregation always sums in realization
//! order, which keeps reports bit-identical across thread counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{mean_signed_curve, SignedDecay};
use crate::error::{Error, Result};
use crate::model::{ContinuumModel, QuantumState};
use crate::propagator::{fmt_f64, run_pulsed, CurveMeta, PropagatorChoice, SurvivalCurve};
use crate::pulses::stochastic_sequence;

/// Used in place of a zero standard error when forming the z-score, so that
/// degenerate ensembles (`p_kick` of 0 or 1) still report a finite value.
pub const STDERR_FLOOR: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluator {
    /// First-order survival of each realized sign schedule.
    Analytic,
    /// Exact propagation of each realized pulse sequence.
    Exact,
}

impl Evaluator {
    pub fn name(self) -> &'static str {
        match self {
            Evaluator::Analytic => "analytic",
            Evaluator::Exact => "exact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub n_realizations: usize,
    pub dt: f64,
    /// Number of pulse slots, `2n`.
    pub n_steps: usize,
    pub p_kick: f64,
    pub seed: u64,
    pub evaluator: Evaluator,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations < 2 {
            return Err(Error::invalid(
                "n_realizations",
                self.n_realizations,
                "need at least 2 realizations for a standard error",
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", self.dt, "must be finite and positive"));
        }
        if self.n_steps == 0 || !self.n_steps.is_multiple_of(2) {
            return Err(Error::invalid(
                "n_steps",
                self.n_steps,
                "must be a positive even number",
            ));
        }
        if !(0.0..=1.0).contains(&self.p_kick) {
            return Err(Error::invalid("p_kick", self.p_kick, "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleReport {
    /// Mean survival at `jΔt`, `j = 0..=n_steps`, with standard errors.
    pub curve: SurvivalCurve,
    /// Expected survival at the final time from the closed-form average.
    pub analytic_mean: f64,
    pub z_score: f64,
    pub n_realizations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnsembleSummary {
    pub analytic_mean: f64,
    pub z_score: f64,
    pub n_realizations: usize,
    pub seed: u64,
}

impl EnsembleReport {
    pub fn summary(&self) -> EnsembleSummary {
        EnsembleSummary {
            analytic_mean: self.analytic_mean,
            z_score: self.z_score,
            n_realizations: self.n_realizations,
            seed: self.seed,
        }
    }

    pub fn final_mean(&self) -> f64 {
        *self
            .curve
            .p_s
            .last()
            .expect("ensemble curve is never empty")
    }

    pub fn final_stderr(&self) -> f64 {
        let se = self
            .curve
            .stderr
            .as_ref()
            .expect("ensemble curve carries stderr");
        *se.last().expect("ensemble curve is never empty")
    }

    /// `t,mean_p_s,stderr`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_p_s,stderr\n");
        let se = self.curve.stderr.as_deref().unwrap_or(&[]);
        for ((t, p), s) in self.curve.times.iter().zip(&self.curve.p_s).zip(se) {
            let _ = writeln!(out, "{},{},{}", fmt_f64(*t), fmt_f64(*p), fmt_f64(*s));
        }
        out
    }

    pub fn sidecar_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())? + "\n")
    }

    /// Writes `<prefix>.csv` and `<prefix>.json`.
    pub fn write(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let prefix = prefix.as_ref().as_os_str();
        let with = |ext: &str| {
            let mut p = prefix.to_owned();
            p.push(ext);
            p
        };
        std::fs::write(with(".csv"), self.to_csv())?;
        std::fs::write(with(".json"), self.sidecar_json()?)?;
        Ok(())
    }
}

/// Seed of realization `index` under `master`: the first word of ChaCha8
/// stream `index` keyed by `master`.
pub fn realization_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Master seed of rung `rung` in a convergence study. Keyed differently from
/// [`realization_seed`] so rung ensembles never reuse the parent's draws.
pub fn rung_seed(master: u64, rung: usize) -> u64 {
    realization_seed(master ^ 0x9e37_79b9_7f4a_7c15, rung as u64)
}

fn realization_curve(
    model: &ContinuumModel,
    spec: &EnsembleSpec,
    decay: Option<&SignedDecay>,
    seed: u64,
) -> Result<Vec<f64>> {
    let (seq, signs) = stochastic_sequence(spec.dt, spec.n_steps, spec.p_kick, seed)?;
    let p = match (spec.evaluator, decay) {
        (Evaluator::Analytic, Some(decay)) => decay.curve(signs.segment_signs().as_slice())?,
        _ => {
            let initial = QuantumState::bound(model);
            run_pulsed(model, &initial, &seq, PropagatorChoice::exact())?.p_s
        }
    };
    if let Some((j, &value)) = p.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::breakdown(
            "realization survival",
            value,
            format!(
                "t={}, dt={}, p_kick={}",
                j as f64 * spec.dt,
                spec.dt,
                spec.p_kick
            ),
        ));
    }
    Ok(p)
}

pub fn run_ensemble(model: &ContinuumModel, spec: &EnsembleSpec) -> Result<EnsembleReport> {
    spec.validate()?;
    let decay = match spec.evaluator {
        Evaluator::Analytic => Some(SignedDecay::new(model, spec.dt, spec.n_steps)?),
        Evaluator::Exact => {
            // diagonalize once up front rather than racing inside the workers
            model.spectrum()?;
            None
        }
    };

    let curves: Vec<Result<Vec<f64>>> = (0..spec.n_realizations)
        .into_par_iter()
        .map(|r| {
            let seed = realization_seed(spec.seed, r as u64);
            realization_curve(model, spec, decay.as_ref(), seed).map_err(|e| Error::Realization {
                index: r,
                seed,
                source: Box::new(e),
            })
        })
        .collect();
    let curves = curves.into_iter().collect::<Result<Vec<_>>>()?;

    let points = spec.n_steps + 1;
    let count = spec.n_realizations as f64;
    // shifted sums about the first realization: identical realizations give
    // a mean equal to that realization and exactly zero spread
    let origin = &curves[0];
    let mut shift = vec![0.0; points];
    let mut shift_sqr = vec![0.0; points];
    for c in &curves {
        for (j, (v, o)) in c.iter().zip(origin).enumerate() {
            let d = v - o;
            shift[j] += d;
            shift_sqr[j] += d * d;
        }
    }
    let mean: Vec<f64> = origin
        .iter()
        .zip(&shift)
        .map(|(o, s)| o + s / count)
        .collect();
    let stderr: Vec<f64> = shift
        .iter()
        .zip(&shift_sqr)
        .map(|(s, sq)| {
            let var = ((sq - s * s / count) / (count - 1.0)).max(0.0);
            (var / count).sqrt()
        })
        .collect();

    let analytic_mean = *mean_signed_curve(model, spec.dt, spec.n_steps, spec.p_kick)?
        .last()
        .expect("mean curve has n_steps + 1 points");
    let final_mean = mean[points - 1];
    let z_score = (final_mean - analytic_mean) / stderr[points - 1].max(STDERR_FLOOR);

    let times = (0..points).map(|j| j as f64 * spec.dt).collect();
    let mut extra = BTreeMap::new();
    extra.insert("p_kick".to_string(), spec.p_kick.to_string());
    extra.insert(
        "n_realizations".to_string(),
        spec.n_realizations.to_string(),
    );
    let meta = CurveMeta {
        method: format!("ensemble-{}", spec.evaluator.name()),
        dt: spec.dt,
        n_events: spec.n_steps,
        seed: Some(spec.seed),
        label: format!("stochastic(p={})", spec.p_kick),
        extra,
    };
    Ok(EnsembleReport {
        curve: SurvivalCurve::new(times, mean, Some(stderr), meta)?,
        analytic_mean,
        z_score,
        n_realizations: spec.n_realizations,
        seed: spec.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub count: usize,
    /// `|mean - analytic_mean|` at the final time.
    pub deviation: f64,
    pub stderr: f64,
}

/// One fresh ensemble per ladder entry, rung `i` seeded by
/// [`rung_seed`]`(spec.seed, i)`.
pub fn convergence_study(
    model: &ContinuumModel,
    spec: &EnsembleSpec,
    ladder: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    if ladder.is_empty() {
        return Err(Error::invalid("ladder", "[]", "must not be empty"));
    }
    if ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "ladder",
            format!("{ladder:?}"),
            "must be strictly ascending",
        ));
    }
    ladder
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            let rung = EnsembleSpec {
                n_realizations: count,
                seed: rung_seed(spec.seed, i),
                ..*spec
            };
            let report = run_ensemble(model, &rung)?;
            Ok(ConvergenceRow {
                count,
                deviation: (report.final_mean() - report.analytic_mean).abs(),
                stderr: report.final_stderr(),
            })
        })
        .collect()
}
