use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: String,
        reason: &'static str,
    },

    /// A state whose continuum amplitudes do not line up with the model modes.
    #[error("state has {found} continuum amplitudes but the model has {expected} modes")]
    Alignment { expected: usize, found: usize },

    #[error("sign sequence too short: need {expected} entries, got {found}")]
    Length { expected: usize, found: usize },

    /// The first-order expansion is singular for this mode: the detuning
    /// phase (omega_s - omega_k) * dt sits on pi (mod 2 pi).
    #[error(
        "resonance at mode {mode_index} (omega_k = {omega_k}, omega_s = {omega_s}): \
         dt = {dt} gives (omega_s - omega_k) dt = {phase}, within {threshold:e} of an odd \
         multiple of pi (dt ~ pi/|omega_s - omega_k| = {period})",
        period = std::f64::consts::PI / (.omega_s - .omega_k).abs()
    )]
    Resonance {
        mode_index: usize,
        omega_k: f64,
        omega_s: f64,
        dt: f64,
        phase: f64,
        threshold: f64,
    },

    /// A first-order survival formula left the physical range. `value` is the
    /// raw, unclamped result.
    #[error("perturbative breakdown in {quantity}: raw value {value} ({context})")]
    PerturbativeBreakdown {
        quantity: &'static str,
        value: f64,
        context: String,
    },

    #[error("realization {index} (seed {seed}) failed: {source}")]
    Realization {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    /// Exact propagation lost norm beyond the configured tolerance.
    #[error("norm drift {drift:e} exceeds tolerance {tol:e} after {events} pulse events")]
    NormDrift { drift: f64, tol: f64, events: usize },

    #[error("eigendecomposition failed for a {dim}x{dim} Hamiltonian")]
    Eigen { dim: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, value: impl ToString, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value: value.to_string(),
            reason,
        }
    }

    pub(crate) fn breakdown(quantity: &'static str, value: f64, context: String) -> Self {
        Error::PerturbativeBreakdown {
            quantity,
            value,
            context,
        }
    }
}
