//! Quantum state smoothing of a driven, decaying qubit whose two output channels
//! are monitored by different observers.
//!
//! The observed channel is recorded by the estimator; the unobserved one is
//! unravelled by someone else, and the estimator may assume the wrong setup for
//! it. The crate simulates true trajectories, computes filtered and smoothed
//! states, and evaluates the smoothing powers and record correlators used to
//! compare valid and wrongly assumed unravelings.

pub mod analysis;
pub mod correlation;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod filtering;
pub mod rng;
pub mod smoothing;
pub mod states;
pub mod unraveling;

pub use dynamics::{ModelParams, Setup};
pub use error::{Error, Result};
pub use filtering::filter;
pub use smoothing::{
    backward_effect, brute_force_smooth, sample_hypothetical_records, smooth, BackwardEffect,
    SamplerOptions, SmoothedSeries, SmoothingEnsemble,
};
pub use states::{fidelity, purity, trsd, BlochVector, QubitState};
pub use unraveling::{generate_true_trajectory, MeasurementRecord, TimeGrid, TrueTrajectory};

/// Round-trip formatting used in every CSV file.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
