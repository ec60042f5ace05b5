//! `kickctl`: runs one experiment per invocation and writes `<prefix>.csv`
//! plus a `<prefix>.json` sidecar holding the effective configuration.
//!
//! Settings come from `--config <file.json>` (a serialized [`RunConfig`]) and
//! from flags; a flag always wins over the file. Defaults that an experiment
//! fills in are written back into the effective configuration, so the
//! sidecar alone reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    dd_survival, kicked_survival, spontaneous_survival, stochastic_survival, zeno_survival,
    ZenoForm,
};
use crate::ensemble::{run_ensemble, EnsembleSpec, EnsembleSummary, Evaluator};
use crate::error::{Error, Result};
use crate::identities::identity_suite;
use crate::model::{build_flat_band_centered, ContinuumModel, QuantumState};
use crate::propagator::{fmt_f64, run_pulsed, PropagatorChoice};
use crate::pulses::{
    dd_sign_sequence, periodic_sequence, stochastic_sequence, PulseKind, PulseSequence,
    SignSequence,
};

pub const THREADS_ENV: &str = "KICKCTL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Spontaneous,
    Kicked,
    Stochastic,
    Ensemble,
    Zeno,
    Dd,
    Validate,
    Sweep,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Spontaneous => "spontaneous",
            Experiment::Kicked => "kicked",
            Experiment::Stochastic => "stochastic",
            Experiment::Ensemble => "ensemble",
            Experiment::Zeno => "zeno",
            Experiment::Dd => "dd",
            Experiment::Validate => "validate",
            Experiment::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Dt,
    N,
    Coupling,
    #[value(name = "p_kick", alias = "p-kick")]
    PKick,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Dt => "dt",
            SweepAxis::N => "n",
            SweepAxis::Coupling => "coupling",
            SweepAxis::PKick => "p_kick",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorArg {
    Analytic,
    Exact,
}

impl From<EvaluatorArg> for Evaluator {
    fn from(e: EvaluatorArg) -> Self {
        match e {
            EvaluatorArg::Analytic => Evaluator::Analytic,
            EvaluatorArg::Exact => Evaluator::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatBand {
    pub n_modes: usize,
    pub bandwidth: f64,
    pub coupling: f64,
}

/// Everything one run needs. Fields that do not apply to the chosen
/// experiment are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    /// Inline model, same layout as `ContinuumModel::to_json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ContinuumModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat: Option<FlatBand>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_s: Option<f64>,
    /// Flat-band center; defaults to `omega_s`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_center: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Number of pulse pairs: the run covers `2n` intervals of `dt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Total time; sets `n = round(t_total / 2dt)` when `n` is absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_kick: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_realizations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluator: Option<EvaluatorArg>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<SweepAxis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// Experiment evaluated at each sweep point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_experiment: Option<Experiment>,
}

fn missing(name: &'static str, experiment: Experiment) -> Error {
    Error::InvalidParameter {
        name,
        value: "none".into(),
        reason: match experiment {
            Experiment::Sweep => "required by sweep",
            _ => "required by this experiment",
        },
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))
    }

    /// `self` (flags) over `file`. The model is taken whole from whichever
    /// side names one, so `--flat` on the command line replaces an inline
    /// model in the file.
    pub fn over(self, file: RunConfig) -> RunConfig {
        let flags_name_model =
            self.model.is_some() || self.model_file.is_some() || self.flat.is_some();
        let (model, model_file, flat) = if flags_name_model {
            (self.model, self.model_file, self.flat)
        } else {
            (file.model, file.model_file, file.flat)
        };
        RunConfig {
            experiment: self.experiment.or(file.experiment),
            model,
            model_file,
            flat,
            omega_s: self.omega_s.or(file.omega_s),
            band_center: self.band_center.or(file.band_center),
            dt: self.dt.or(file.dt),
            n: self.n.or(file.n),
            t_total: self.t_total.or(file.t_total),
            p_kick: self.p_kick.or(file.p_kick),
            seed: self.seed.or(file.seed),
            n_realizations: self.n_realizations.or(file.n_realizations),
            evaluator: self.evaluator.or(file.evaluator),
            output: self.output.or(file.output),
            axis: self.axis.or(file.axis),
            values: self.values.or(file.values),
            sweep_experiment: self.sweep_experiment.or(file.sweep_experiment),
        }
    }

    fn experiment(&self) -> Result<Experiment> {
        self.experiment.ok_or(Error::InvalidParameter {
            name: "experiment",
            value: "none".into(),
            reason: "no experiment given",
        })
    }

    /// Fill per-experiment defaults so the echoed config is complete.
    pub fn with_defaults(mut self) -> Self {
        let exp = self.experiment;
        let target = if exp == Some(Experiment::Sweep) {
            Some(*self.sweep_experiment.get_or_insert(Experiment::Kicked))
        } else {
            exp
        };
        if matches!(target, Some(Experiment::Stochastic | Experiment::Ensemble)) {
            self.p_kick.get_or_insert(0.5);
            self.seed.get_or_insert(0);
        }
        if target == Some(Experiment::Ensemble) {
            self.n_realizations.get_or_insert(1000);
            self.evaluator.get_or_insert(EvaluatorArg::Analytic);
        }
        if exp == Some(Experiment::Validate) {
            self.seed.get_or_insert(0);
        }
        self
    }

    pub fn build_model(&self) -> Result<ContinuumModel> {
        if self.band_center.is_some() && self.flat.is_none() {
            return Err(Error::invalid(
                "band_center",
                "set",
                "only applies to --flat models",
            ));
        }
        let model = if let Some(m) = &self.model {
            m.clone()
        } else if let Some(path) = &self.model_file {
            let text = std::fs::read_to_string(path)?;
            ContinuumModel::from_json(&text)
                .map_err(|e| Error::Parse(format!("model {}: {e}", path.display())))?
        } else if let Some(f) = &self.flat {
            let omega_s = self.omega_s.unwrap_or(0.0);
            return build_flat_band_centered(
                f.n_modes,
                f.bandwidth,
                f.coupling,
                omega_s,
                self.band_center.unwrap_or(omega_s),
            );
        } else {
            return Err(Error::invalid(
                "model",
                "none",
                "give --model <file.json> or --flat <n_modes> <bandwidth> <coupling>",
            ));
        };
        match self.omega_s {
            Some(w) => model.with_omega_s(w),
            None => Ok(model),
        }
    }

    fn dt(&self) -> Result<f64> {
        let exp = self.experiment()?;
        let dt = self.dt.ok_or_else(|| missing("dt", exp))?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt", dt, "must be finite and positive"));
        }
        Ok(dt)
    }

    fn pairs(&self) -> Result<usize> {
        let exp = self.experiment()?;
        let n = match (self.n, self.t_total) {
            (Some(n), _) => n,
            (None, Some(t)) => (t / (2.0 * self.dt()?)).round() as usize,
            (None, None) => return Err(missing("n", exp)),
        };
        if n == 0 {
            return Err(Error::invalid("n", n, "must be at least 1"));
        }
        Ok(n)
    }

    fn p_kick(&self) -> Result<f64> {
        let p = self
            .p_kick
            .ok_or_else(|| missing("p_kick", Experiment::Stochastic))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid("p_kick", p, "must lie in [0, 1]"));
        }
        Ok(p)
    }

    /// The same run as a single `kickctl` command line.
    pub fn command_line(&self) -> String {
        let mut out = String::from("kickctl");
        if let Some(e) = self.experiment {
            out.push(' ');
            out.push_str(e.name());
        }
        if let Some(path) = &self.model_file {
            let _ = write!(out, " --model {}", shell_quote(&path.display().to_string()));
        }
        if let Some(f) = &self.flat {
            let _ = write!(out, " --flat {} {} {}", f.n_modes, f.bandwidth, f.coupling);
        }
        if self.model.is_some() {
            out.push_str(" --config <config.json>");
        }
        let mut flag = |name: &str, value: Option<String>| {
            if let Some(v) = value {
                let _ = write!(out, " --{name} {v}");
            }
        };
        flag("omega-s", self.omega_s.map(|v| v.to_string()));
        flag("band-center", self.band_center.map(|v| v.to_string()));
        flag("dt", self.dt.map(|v| v.to_string()));
        flag("n", self.n.map(|v| v.to_string()));
        flag("t-total", self.t_total.map(|v| v.to_string()));
        flag("p-kick", self.p_kick.map(|v| v.to_string()));
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("realizations", self.n_realizations.map(|v| v.to_string()));
        flag(
            "evaluator",
            self.evaluator
                .map(|e| Evaluator::from(e).name().to_string()),
        );
        flag("axis", self.axis.map(|a| a.name().to_string()));
        flag(
            "values",
            self.values.as_ref().map(|v| {
                v.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            }),
        );
        flag(
            "experiment",
            self.sweep_experiment.map(|e| e.name().to_string()),
        );
        flag(
            "output",
            self.output
                .as_ref()
                .map(|p| shell_quote(&p.display().to_string())),
        );
        out
    }
}

fn shell_quote(s: &str) -> String {
    if !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_./=:".contains(c))
    {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', "'\\''"))
    }
}

/// Numeric table with a leading `t` column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    fn final_values(&self) -> BTreeMap<&'static str, f64> {
        match self.rows.last() {
            Some(row) => self
                .header
                .iter()
                .copied()
                .zip(row.iter().copied())
                .collect(),
            None => BTreeMap::new(),
        }
    }
}

/// Result of one run, before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub csv: String,
    pub sidecar: String,
    pub summary: String,
    /// Lines printed to stdout whether or not files are written.
    pub report: Vec<String>,
    pub success: bool,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    experiment: &'static str,
    config: &'a RunConfig,
    #[serde(rename = "final")]
    final_values: BTreeMap<&'static str, f64>,
}

#[derive(Serialize)]
struct EnsembleSidecar<'a> {
    #[serde(flatten)]
    summary: EnsembleSummary,
    config: &'a RunConfig,
}

fn sidecar<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn pair_grid(dt: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|m| 2.0 * m as f64 * dt).collect()
}

fn exact_at_pairs(model: &ContinuumModel, seq: &PulseSequence) -> Result<Vec<f64>> {
    let curve = run_pulsed(
        model,
        &QuantumState::bound(model),
        seq,
        PropagatorChoice::exact(),
    )?;
    Ok(curve.p_s.into_iter().step_by(2).collect())
}

fn three_columns(header: Vec<&'static str>, t: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Table {
    let rows = t
        .into_iter()
        .zip(a)
        .zip(b)
        .map(|((t, a), b)| vec![t, a, b])
        .collect();
    Table { header, rows }
}

fn kick_events(pulse_signs: &SignSequence) -> Vec<PulseKind> {
    pulse_signs
        .as_slice()
        .iter()
        .map(|&s| {
            if s < 0 {
                PulseKind::PhaseKick
            } else {
                PulseKind::Identity
            }
        })
        .collect()
}

/// One experiment's table, or for `ensemble` its report.
enum Computed {
    Table(Table),
    Ensemble(crate::ensemble::EnsembleReport),
}

fn compute(config: &RunConfig, exp: Experiment) -> Result<Computed> {
    let model = config.build_model()?;
    let dt = config.dt()?;
    let n = config.pairs()?;
    let t = pair_grid(dt, n);
    let steps = 2 * n;
    let table = match exp {
        Experiment::Spontaneous => {
            let analytic = t
                .iter()
                .map(|&t| spontaneous_survival(&model, t))
                .collect::<Result<Vec<_>>>()?;
            let exact =
                exact_at_pairs(&model, &periodic_sequence(dt, steps, PulseKind::Identity)?)?;
            three_columns(vec!["t", "analytic", "exact"], t, analytic, exact)
        }
        Experiment::Kicked => {
            let mut analytic = vec![1.0];
            for m in 1..=n {
                analytic.push(kicked_survival(&model, dt, m)?);
            }
            let exact =
                exact_at_pairs(&model, &periodic_sequence(dt, steps, PulseKind::PhaseKick)?)?;
            three_columns(vec!["t", "analytic", "exact"], t, analytic, exact)
        }
        Experiment::Stochastic => {
            let seed = config.seed.unwrap_or(0);
            let (seq, xi) = stochastic_sequence(dt, steps, config.p_kick()?, seed)?;
            let mut analytic = vec![1.0];
            for m in 1..=n {
                let head = SignSequence::new(xi.as_slice()[..2 * m].to_vec())?;
                analytic.push(stochastic_survival(&model, dt, m, &head)?);
            }
            let exact = exact_at_pairs(&model, &seq)?;
            three_columns(vec!["t", "analytic", "exact"], t, analytic, exact)
        }
        Experiment::Dd => {
            let lambdas = dd_sign_sequence(steps);
            let mut analytic = vec![1.0];
            for m in 1..=n {
                analytic.push(dd_survival(&model, dt, m, &dd_sign_sequence(2 * m))?);
            }
            let seq = PulseSequence::new(dt, kick_events(&lambdas.pulse_signs()), "dd")?;
            let exact = exact_at_pairs(&model, &seq)?;
            three_columns(vec!["t", "analytic", "exact"], t, analytic, exact)
        }
        Experiment::Zeno => {
            let mut rows = Vec::with_capacity(n + 1);
            let exact = exact_at_pairs(
                &model,
                &periodic_sequence(dt, steps, PulseKind::Projection)?,
            )?;
            for (m, (&t, &e)) in t.iter().zip(&exact).enumerate() {
                let lin = zeno_survival(&model, dt, m, ZenoForm::Linearized)?;
                let prod = zeno_survival(&model, dt, m, ZenoForm::Product)?;
                rows.push(vec![t, lin, prod, e]);
            }
            Table {
                header: vec!["t", "linearized", "product", "exact"],
                rows,
            }
        }
        Experiment::Ensemble => {
            let exp = Experiment::Ensemble;
            let spec = EnsembleSpec {
                n_realizations: config
                    .n_realizations
                    .ok_or_else(|| missing("n_realizations", exp))?,
                dt,
                n_steps: steps,
                p_kick: config.p_kick()?,
                seed: config.seed.ok_or_else(|| missing("seed", exp))?,
                evaluator: config
                    .evaluator
                    .ok_or_else(|| missing("evaluator", exp))?
                    .into(),
            };
            return Ok(Computed::Ensemble(run_ensemble(&model, &spec)?));
        }
        Experiment::Validate | Experiment::Sweep => {
            return Err(Error::invalid(
                "experiment",
                exp.name(),
                "cannot be nested in a sweep",
            ));
        }
    };
    Ok(Computed::Table(table))
}

fn run_single(config: &RunConfig, exp: Experiment) -> Result<Outcome> {
    match compute(config, exp)? {
        Computed::Table(table) => {
            let final_values = table.final_values();
            let mut summary = format!("{}:", exp.name());
            for (k, v) in &final_values {
                let _ = write!(summary, " {k}={v:.6}");
            }
            Ok(Outcome {
                csv: table.to_csv(),
                sidecar: sidecar(&Sidecar {
                    experiment: exp.name(),
                    config,
                    final_values,
                })?,
                summary,
                report: vec![],
                success: true,
            })
        }
        Computed::Ensemble(report) => {
            let summary = format!(
                "ensemble: t={:.6} mean={:.6} stderr={:.3e} analytic_mean={:.6} z={:.3} ({} realizations, seed {})",
                report.curve.times.last().copied().unwrap_or(0.0),
                report.final_mean(),
                report.final_stderr(),
                report.analytic_mean,
                report.z_score,
                report.n_realizations,
                report.seed
            );
            Ok(Outcome {
                csv: report.to_csv(),
                sidecar: sidecar(&EnsembleSidecar {
                    summary: report.summary(),
                    config,
                })?,
                summary,
                report: vec![],
                success: true,
            })
        }
    }
}

fn run_validate(config: &RunConfig) -> Result<Outcome> {
    let checks = identity_suite(config.seed.unwrap_or(0))?;
    let mut csv = String::from("identity,cases,max_error,tolerance,status\n");
    let mut report = Vec::new();
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            c.name,
            c.cases,
            fmt_f64(c.max_error),
            fmt_f64(c.tolerance),
            status
        );
        report.push(format!(
            "{status} {:<22} max_error={:.3e} tol={:.0e} ({} cases)",
            c.name, c.max_error, c.tolerance, c.cases
        ));
    }
    let passed = checks.iter().filter(|c| c.passed()).count();
    let final_values = checks.iter().map(|c| (c.name, c.max_error)).collect();
    Ok(Outcome {
        csv,
        sidecar: sidecar(&Sidecar {
            experiment: "validate",
            config,
            final_values,
        })?,
        summary: format!("validate: {passed}/{} identities pass", checks.len()),
        report,
        success: passed == checks.len(),
    })
}

/// Short machine-readable tag for the error column of a sweep.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Resonance { .. } => "resonance",
        Error::PerturbativeBreakdown { .. } => "perturbative_breakdown",
        Error::NormDrift { .. } => "norm_drift",
        Error::Realization { source, .. } => error_kind(source),
        Error::InvalidParameter { .. } => "invalid_parameter",
        _ => "error",
    }
}

fn sweep_point(base: &RunConfig, axis: SweepAxis, value: f64) -> Result<RunConfig> {
    let mut c = base.clone();
    c.experiment = base.sweep_experiment;
    c.axis = None;
    c.values = None;
    c.sweep_experiment = None;
    match axis {
        SweepAxis::Dt => {
            c.dt = Some(value);
            if c.t_total.is_some() {
                c.n = None;
            }
        }
        SweepAxis::N => {
            if !(value >= 1.0 && value.fract() == 0.0 && value < u32::MAX as f64) {
                return Err(Error::invalid(
                    "values",
                    value,
                    "n values must be positive integers",
                ));
            }
            c.n = Some(value as usize);
        }
        SweepAxis::Coupling => match &mut c.flat {
            Some(f) => f.coupling = value,
            None => return Err(Error::invalid("axis", "coupling", "needs a --flat model")),
        },
        SweepAxis::PKick => c.p_kick = Some(value),
    }
    Ok(c)
}

fn run_sweep(config: &RunConfig) -> Result<Outcome> {
    let axis = config
        .axis
        .ok_or_else(|| missing("axis", Experiment::Sweep))?;
    let values = config
        .values
        .as_ref()
        .ok_or_else(|| missing("values", Experiment::Sweep))?;
    if values.is_empty() {
        return Err(Error::invalid("values", "[]", "must not be empty"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid("values", bad, "must be finite"));
    }
    let target = config.sweep_experiment.unwrap_or(Experiment::Kicked);
    if matches!(target, Experiment::Validate | Experiment::Sweep) {
        return Err(Error::invalid(
            "experiment",
            target.name(),
            "cannot be nested in a sweep",
        ));
    }
    // bad grids are configuration errors, not per-point failures
    let points = values
        .iter()
        .map(|&v| sweep_point(config, axis, v))
        .collect::<Result<Vec<_>>>()?;

    let results: Vec<Result<Computed>> = points.par_iter().map(|c| compute(c, target)).collect();

    let mut csv = String::from("axis_value,t,p_s,method,error\n");
    let mut failures = 0;
    for (&v, result) in values.iter().zip(&results) {
        match result {
            Ok(Computed::Table(table)) => {
                for row in &table.rows {
                    for (col, &p) in table.header.iter().zip(row).skip(1) {
                        let _ = writeln!(
                            csv,
                            "{},{},{},{},",
                            fmt_f64(v),
                            fmt_f64(row[0]),
                            fmt_f64(p),
                            col
                        );
                    }
                }
            }
            Ok(Computed::Ensemble(report)) => {
                for (t, p) in report.curve.times.iter().zip(&report.curve.p_s) {
                    let _ = writeln!(
                        csv,
                        "{},{},{},ensemble,",
                        fmt_f64(v),
                        fmt_f64(*t),
                        fmt_f64(*p)
                    );
                }
            }
            Err(e) => {
                failures += 1;
                let _ = writeln!(csv, "{},,,{},{}", fmt_f64(v), target.name(), error_kind(e));
            }
        }
    }
    let mut final_values = BTreeMap::new();
    final_values.insert("points", values.len() as f64);
    final_values.insert("failed_points", failures as f64);
    Ok(Outcome {
        csv,
        sidecar: sidecar(&Sidecar {
            experiment: "sweep",
            config,
            final_values,
        })?,
        summary: format!(
            "sweep: {} over {} {} values, {} failed",
            target.name(),
            values.len(),
            axis.name(),
            failures
        ),
        report: vec![],
        success: true,
    })
}

/// Run an effective configuration (defaults already applied).
pub fn run(config: &RunConfig) -> Result<Outcome> {
    match config.experiment()? {
        Experiment::Validate => run_validate(config),
        Experiment::Sweep => run_sweep(config),
        exp => run_single(config, exp),
    }
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Write `<prefix>.csv` and `<prefix>.json`.
pub fn write_outputs(outcome: &Outcome, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv = with_suffix(prefix, "csv");
    let json = with_suffix(prefix, "json");
    std::fs::write(&csv, &outcome.csv)?;
    std::fs::write(&json, &outcome.sidecar)?;
    Ok((csv, json))
}

#[derive(Debug, Parser)]
#[command(
    name = "kickctl",
    version,
    about = "Bound-state survival under pulse sequences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Free decay with no pulses.
    Spontaneous(CommonArgs),
    /// A phase kick every dt.
    Kicked(CommonArgs),
    /// One random kick schedule (kick probability --p-kick per slot).
    Stochastic(CommonArgs),
    /// Monte Carlo mean over random kick schedules.
    Ensemble(CommonArgs),
    /// Projective measurement every dt.
    Zeno(CommonArgs),
    /// Alternating decoupling signs.
    Dd(CommonArgs),
    /// Check the closed-form identities on random models.
    Validate(CommonArgs),
    /// Repeat an experiment over a list of parameter values.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model JSON file.
    #[arg(long, conflicts_with = "flat")]
    pub model: Option<PathBuf>,
    /// Flat band: number of modes, bandwidth, coupling.
    #[arg(long, num_args = 3, value_names = ["N_MODES", "BANDWIDTH", "COUPLING"], allow_negative_numbers = true)]
    pub flat: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub omega_s: Option<f64>,
    /// Center of the flat band (defaults to omega_s).
    #[arg(long, allow_negative_numbers = true)]
    pub band_center: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Pulse pairs: the run lasts 2n intervals of dt.
    #[arg(long)]
    pub n: Option<usize>,
    /// Total time, used to pick n when --n is absent.
    #[arg(long)]
    pub t_total: Option<f64>,
    #[arg(long)]
    pub p_kick: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long, value_enum)]
    pub evaluator: Option<EvaluatorArg>,
    /// Output prefix; writes <prefix>.csv and <prefix>.json. Without it the
    /// CSV goes to stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub axis: Option<SweepAxis>,
    /// Comma- or space-separated values.
    #[arg(long, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Option<Vec<f64>>,
    /// Experiment run at every point (default kicked).
    #[arg(long, value_enum)]
    pub experiment: Option<Experiment>,
}

impl CommonArgs {
    fn to_config(&self, experiment: Experiment) -> Result<RunConfig> {
        let flat = match &self.flat {
            Some(v) => {
                let n = v[0];
                if !(n >= 1.0 && n.fract() == 0.0) {
                    return Err(Error::invalid(
                        "flat n_modes",
                        n,
                        "must be a positive integer",
                    ));
                }
                Some(FlatBand {
                    n_modes: n as usize,
                    bandwidth: v[1],
                    coupling: v[2],
                })
            }
            None => None,
        };
        Ok(RunConfig {
            experiment: Some(experiment),
            model: None,
            model_file: self.model.clone(),
            flat,
            omega_s: self.omega_s,
            band_center: self.band_center,
            dt: self.dt,
            n: self.n,
            t_total: self.t_total,
            p_kick: self.p_kick,
            seed: self.seed,
            n_realizations: self.realizations,
            evaluator: self.evaluator,
            output: self.output.clone(),
            axis: None,
            values: None,
            sweep_experiment: None,
        })
    }
}

impl Command {
    /// Effective configuration: flags over the `--config` file, defaults filled.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let (common, experiment) = match self {
            Command::Spontaneous(a) => (a, Experiment::Spontaneous),
            Command::Kicked(a) => (a, Experiment::Kicked),
            Command::Stochastic(a) => (a, Experiment::Stochastic),
            Command::Ensemble(a) => (a, Experiment::Ensemble),
            Command::Zeno(a) => (a, Experiment::Zeno),
            Command::Dd(a) => (a, Experiment::Dd),
            Command::Validate(a) => (a, Experiment::Validate),
            Command::Sweep(s) => (&s.common, Experiment::Sweep),
        };
        let mut flags = common.to_config(experiment)?;
        if let Command::Sweep(s) = self {
            flags.axis = s.axis;
            flags.values = s.values.clone();
            flags.sweep_experiment = s.experiment;
        }
        let file = match &common.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        Ok(flags.over(file).with_defaults())
    }
}

fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| Error::invalid("KICKCTL_THREADS", v, "must be a non-negative integer")),
        _ => Ok(0),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter { .. } | Error::Parse(_) | Error::Json(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

/// Parse arguments, run, write outputs. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let config = match cli.command.effective_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let result = thread_count().and_then(|threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Parse(format!("thread pool: {e}")))?;
        let outcome = pool.install(|| run(&config))?;
        let written = match &config.output {
            Some(prefix) => Some(write_outputs(&outcome, prefix)?),
            None => None,
        };
        Ok((outcome, written))
    });
    match result {
        Ok((outcome, written)) => {
            for line in &outcome.report {
                println!("{line}");
            }
            match written {
                Some((csv, _)) => println!("{} -> {}", outcome.summary, csv.display()),
                None => {
                    if outcome.report.is_empty() {
                        print!("{}", outcome.csv);
                    }
                    eprintln!("{}", outcome.summary);
                }
            }
            if outcome.success {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("reproduce: {}", config.command_line());
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(exp: Experiment) -> RunConfig {
        RunConfig {
            experiment: Some(exp),
            flat: Some(FlatBand {
                n_modes: 21,
                bandwidth: 8.0,
                coupling: 0.02,
            }),
            dt: Some(0.2),
            n: Some(5),
            ..RunConfig::default()
        }
        .with_defaults()
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig {
            dt: Some(0.5),
            n: Some(3),
            model_file: Some("m.json".into()),
            ..RunConfig::default()
        };
        let flags = RunConfig {
            dt: Some(0.1),
            flat: Some(FlatBand {
                n_modes: 3,
                bandwidth: 1.0,
                coupling: 0.1,
            }),
            ..RunConfig::default()
        };
        let eff = flags.over(file);
        assert_eq!(eff.dt, Some(0.1));
        assert_eq!(eff.n, Some(3));
        assert!(eff.model_file.is_none());
        assert!(eff.flat.is_some());
    }

    #[test]
    fn config_round_trip_and_unknown_fields() {
        let c = base(Experiment::Ensemble);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert!(RunConfig::from_json(r#"{"dtt": 0.1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"experiment": "bogus"}"#).is_err());
    }

    #[test]
    fn kicked_table_shape() {
        let out = run(&base(Experiment::Kicked)).unwrap();
        let mut lines = out.csv.lines();
        assert_eq!(lines.next(), Some("t,analytic,exact"));
        assert_eq!(lines.count(), 6);
    }

    #[test]
    fn missing_inputs_are_reported() {
        let mut c = base(Experiment::Kicked);
        c.dt = None;
        assert!(matches!(
            run(&c),
            Err(Error::InvalidParameter { name: "dt", .. })
        ));
        let mut c = base(Experiment::Kicked);
        c.flat = None;
        assert!(matches!(
            run(&c),
            Err(Error::InvalidParameter { name: "model", .. })
        ));
    }

    #[test]
    fn t_total_picks_n() {
        let mut c = base(Experiment::Kicked);
        c.n = None;
        c.t_total = Some(2.0);
        assert_eq!(c.pairs().unwrap(), 5);
    }

    #[test]
    fn sweep_marks_resonant_points() {
        let c = RunConfig {
            experiment: Some(Experiment::Sweep),
            flat: Some(FlatBand {
                n_modes: 1,
                bandwidth: 2.0,
                coupling: 0.1,
            }),
            band_center: Some(1.0),
            n: Some(2),
            axis: Some(SweepAxis::Dt),
            values: Some(vec![0.5, std::f64::consts::PI, 1.0]),
            ..RunConfig::default()
        }
        .with_defaults();
        let out = run(&c).unwrap();
        let rows: Vec<&str> = out.csv.lines().collect();
        assert_eq!(rows[0], "axis_value,t,p_s,method,error");
        assert!(rows.iter().any(|r| r.ends_with(",,,kicked,resonance")));
        assert_eq!(rows.len(), 1 + 6 + 1 + 6);
    }

    #[test]
    fn sweep_rejects_empty_and_bad_values() {
        let mut c = base(Experiment::Sweep);
        c.axis = Some(SweepAxis::Dt);
        c.values = Some(vec![]);
        assert!(run(&c).is_err());
        c.axis = Some(SweepAxis::N);
        c.values = Some(vec![1.5]);
        assert!(run(&c).is_err());
    }

    #[test]
    fn command_line_round_trips_through_clap() {
        let mut c = base(Experiment::Stochastic);
        c.omega_s = Some(-0.5);
        let line = c.command_line();
        let args: Vec<&str> = line.split_whitespace().collect();
        let cli = Cli::try_parse_from(args).unwrap();
        assert_eq!(cli.command.effective_config().unwrap(), c);
    }
}
