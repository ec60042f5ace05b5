//! The bound state `|s⟩` coupled to a discretized continuum `{|k⟩}`, and the
//! interaction-picture state that lives on it.
//!
//! The Hamiltonian is
//!
//! ```text
//! H = ω_s |s⟩⟨s| + Σ_k ω_k |k⟩⟨k| + Σ_k (V_ks |k⟩⟨s| + V_sk |s⟩⟨k|),   V_sk = V_ks*
//! ```
//!
//! with ħ = 1. State amplitudes are interaction-picture coefficients: the
//! free phases `e^{-iωt}` are factored out, so `α_s` and `β_k` only move
//! through the coupling.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::propagator::Spectrum;

/// Upper slack on `|α_s|² + Σ|β_k|²` accepted for a state.
pub const NORM_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub omega_k: f64,
    /// `V_ks`; the reverse coupling `V_sk` is its conjugate.
    pub v_ks: Complex64,
}

impl Mode {
    pub fn new(omega_k: f64, v_ks: impl Into<Complex64>) -> Self {
        Self {
            omega_k,
            v_ks: v_ks.into(),
        }
    }

    /// `ω_k - ω_s`.
    #[inline]
    pub fn detuning(&self, omega_s: f64) -> f64 {
        self.omega_k - omega_s
    }

    #[inline]
    pub fn coupling_sqr(&self) -> f64 {
        self.v_ks.norm_sqr()
    }

    fn is_finite(&self) -> bool {
        self.omega_k.is_finite() && self.v_ks.re.is_finite() && self.v_ks.im.is_finite()
    }
}

/// A bound level and a nonempty, frequency-sorted list of continuum modes.
///
/// Immutable after construction. The exact-propagation spectrum is computed
/// lazily on first use and shared by clones.
pub struct ContinuumModel {
    omega_s: f64,
    modes: Vec<Mode>,
    spectrum: OnceLock<Arc<Spectrum>>,
}

impl ContinuumModel {
    pub fn omega_s(&self) -> f64 {
        self.omega_s
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// `Σ_k |V_ks|²`.
    pub fn total_coupling_sqr(&self) -> f64 {
        self.modes.iter().map(Mode::coupling_sqr).sum()
    }

    /// Same frequencies, every coupling multiplied by `factor`.
    pub fn scale_couplings(&self, factor: f64) -> Result<Self> {
        let modes = self
            .modes
            .iter()
            .map(|m| (m.omega_k, m.v_ks * factor))
            .collect();
        build_custom(self.omega_s, modes)
    }

    /// Same modes, bound level moved to `omega_s`.
    pub fn with_omega_s(&self, omega_s: f64) -> Result<Self> {
        let modes = self.modes.iter().map(|m| (m.omega_k, m.v_ks)).collect();
        build_custom(omega_s, modes)
    }

    pub(crate) fn spectrum(&self) -> Result<Arc<Spectrum>> {
        if let Some(s) = self.spectrum.get() {
            return Ok(s.clone());
        }
        let computed = Arc::new(Spectrum::diagonalize(self)?);
        Ok(self.spectrum.get_or_init(|| computed).clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl Clone for ContinuumModel {
    fn clone(&self) -> Self {
        Self {
            omega_s: self.omega_s,
            modes: self.modes.clone(),
            spectrum: self.spectrum.clone(),
        }
    }
}

impl PartialEq for ContinuumModel {
    fn eq(&self, other: &Self) -> bool {
        self.omega_s == other.omega_s && self.modes == other.modes
    }
}

impl fmt::Debug for ContinuumModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuumModel")
            .field("omega_s", &self.omega_s)
            .field("n_modes", &self.modes.len())
            .finish()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    omega_s: f64,
    modes: Vec<[f64; 3]>,
}

impl Serialize for ContinuumModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ModelRepr {
            omega_s: self.omega_s,
            modes: self
                .modes
                .iter()
                .map(|m| [m.omega_k, m.v_ks.re, m.v_ks.im])
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ContinuumModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = ModelRepr::deserialize(deserializer)?;
        let modes = repr
            .modes
            .into_iter()
            .map(|[w, re, im]| (w, Complex64::new(re, im)))
            .collect();
        build_custom(repr.omega_s, modes).map_err(serde::de::Error::custom)
    }
}

/// Uniform grid of `n_modes` cells of total width `bandwidth` centered on
/// `omega_s`, every mode carrying the same coupling.
pub fn build_flat_band(
    n_modes: usize,
    bandwidth: f64,
    coupling: impl Into<Complex64>,
    omega_s: f64,
) -> Result<ContinuumModel> {
    build_flat_band_centered(n_modes, bandwidth, coupling, omega_s, omega_s)
}

/// As [`build_flat_band`], but with the band centered on `center` instead of
/// on the bound level.
pub fn build_flat_band_centered(
    n_modes: usize,
    bandwidth: f64,
    coupling: impl Into<Complex64>,
    omega_s: f64,
    center: f64,
) -> Result<ContinuumModel> {
    let coupling = coupling.into();
    if n_modes == 0 {
        return Err(Error::invalid("n_modes", n_modes, "must be at least 1"));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::invalid(
            "bandwidth",
            bandwidth,
            "must be finite and positive",
        ));
    }
    if !(coupling.re.is_finite() && coupling.im.is_finite()) {
        return Err(Error::invalid("coupling", coupling, "must be finite"));
    }
    if !omega_s.is_finite() {
        return Err(Error::invalid("omega_s", omega_s, "must be finite"));
    }
    if !center.is_finite() {
        return Err(Error::invalid("band_center", center, "must be finite"));
    }
    let spacing = bandwidth / n_modes as f64;
    let lower = center - 0.5 * bandwidth;
    let modes = (0..n_modes)
        .map(|j| (lower + (j as f64 + 0.5) * spacing, coupling))
        .collect();
    build_custom(omega_s, modes)
}

/// Model from explicit `(ω_k, V_ks)` pairs. Modes are sorted by frequency;
/// ties keep their input order.
pub fn build_custom(omega_s: f64, modes: Vec<(f64, Complex64)>) -> Result<ContinuumModel> {
    if modes.is_empty() {
        return Err(Error::invalid(
            "modes",
            "[]",
            "at least one continuum mode is required",
        ));
    }
    if !omega_s.is_finite() {
        return Err(Error::invalid("omega_s", omega_s, "must be finite"));
    }
    let mut modes: Vec<Mode> = modes.into_iter().map(|(w, v)| Mode::new(w, v)).collect();
    if let Some(bad) = modes.iter().find(|m| !m.is_finite()) {
        return Err(Error::invalid(
            "modes",
            format!("({}, {})", bad.omega_k, bad.v_ks),
            "mode frequency and coupling must be finite",
        ));
    }
    // stable sort keeps tie order
    modes.sort_by(|a, b| a.omega_k.total_cmp(&b.omega_k));
    Ok(ContinuumModel {
        omega_s,
        modes,
        spectrum: OnceLock::new(),
    })
}

/// `K(t) = Σ_k |V_ks|² e^{i(ω_s - ω_k)t}`.
pub fn memory_kernel(model: &ContinuumModel, t: f64) -> Complex64 {
    let omega_s = model.omega_s;
    model
        .modes
        .iter()
        .map(|m| Complex64::from_polar(m.coupling_sqr(), -m.detuning(omega_s) * t))
        .sum()
}

/// Fermi golden-rule estimate `Γ = 2π |V(ω_s)|² ρ(ω_s)` from the mode nearest
/// the bound level. A single-mode model has no density and returns 0.
pub fn golden_rule_rate(model: &ContinuumModel) -> f64 {
    let modes = &model.modes;
    let n = modes.len();
    if n < 2 {
        return 0.0;
    }
    let nearest = modes
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (a.omega_k - model.omega_s)
                .abs()
                .total_cmp(&(b.omega_k - model.omega_s).abs())
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = nearest.saturating_sub(1);
    let hi = (nearest + 1).min(n - 1);
    let mut spacing = (modes[hi].omega_k - modes[lo].omega_k) / (hi - lo) as f64;
    if spacing <= 0.0 {
        spacing = (modes[n - 1].omega_k - modes[0].omega_k) / (n - 1) as f64;
    }
    if spacing <= 0.0 {
        return 0.0;
    }
    2.0 * PI * modes[nearest].coupling_sqr() / spacing
}

/// Interaction-picture amplitudes `α_s`, `{β_k}` at `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    pub alpha_s: Complex64,
    pub beta: Vec<Complex64>,
    pub time: f64,
}

impl QuantumState {
    pub fn new(
        model: &ContinuumModel,
        alpha_s: Complex64,
        beta: Vec<Complex64>,
        time: f64,
    ) -> Result<Self> {
        let state = Self {
            alpha_s,
            beta,
            time,
        };
        state.check_aligned(model)?;
        let norm = state.norm_sqr();
        if !(norm.is_finite() && norm <= 1.0 + NORM_EPSILON) {
            return Err(Error::invalid("state norm", norm, "must not exceed 1"));
        }
        if !time.is_finite() {
            return Err(Error::invalid("time", time, "must be finite"));
        }
        Ok(state)
    }

    /// `α_s = 1`, `β = 0` at `t = 0`.
    pub fn bound(model: &ContinuumModel) -> Self {
        Self {
            alpha_s: Complex64::new(1.0, 0.0),
            beta: vec![Complex64::new(0.0, 0.0); model.n_modes()],
            time: 0.0,
        }
    }

    pub fn survival(&self) -> f64 {
        self.alpha_s.norm_sqr()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.alpha_s.norm_sqr() + self.beta.iter().map(|b| b.norm_sqr()).sum::<f64>()
    }

    pub(crate) fn check_aligned(&self, model: &ContinuumModel) -> Result<()> {
        if self.beta.len() != model.n_modes() {
            return Err(Error::Alignment {
                expected: model.n_modes(),
                found: self.beta.len(),
            });
        }
        Ok(())
    }
}
