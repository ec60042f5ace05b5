//! First-order and exact dynamics of a bound state coupled to a discretized
//! continuum, under instantaneous phase kicks, random kicks, decoupling sign
//! schedules and projective measurements.

pub mod analytic;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod identities;
pub mod model;
pub mod propagator;
pub mod pulses;
pub mod special;

pub use error::{Error, Result};
pub use model::{
    build_custom, build_flat_band, build_flat_band_centered, ContinuumModel, Mode, QuantumState,
};
pub use propagator::{run_pulsed, PropagatorChoice, PropagatorKind, SurvivalCurve};
pub use pulses::{PulseKind, PulseSequence, SignSequence};
