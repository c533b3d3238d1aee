//! Deterministic discrete-time simulation and detection toolkit for a
//! model-based adaptive traffic controller at an isolated four-way
//! intersection.
//!
//! The intersection is modeled as two opposing-arm pairs sharing a fixed
//! signal cycle. Each pair carries a queue-length and occupancy state driven
//! by linear recursions; green time is reallocated once per cycle from
//! occupancy feedback. On top of the plant the crate provides a replay
//! attacker that falsifies the occupancy channel, two detectors (a
//! model-based residual monitor and a per-cycle threshold test), a
//! proportional mitigation law, least-squares recovery of the occupancy
//! coefficients, and a scenario harness that ties everything together
//! behind a TOML configuration.
//!
//! Module map:
//!
//! * [`model`] — plant recursions, signal-cycle bookkeeping, control law
//! * [`attack`] — replay attacker on the occupancy measurement channel
//! * [`detect`] — residual monitor, threshold detector, mitigation
//! * [`estimate`] — ordinary least squares for the occupancy parameters
//! * [`sim`] — scenario loop, arrival processes, noise calibration, sweeps
//! * [`trace`] — per-step/per-cycle logs, metrics, CSV and JSON round-trips
//! * [`config`] — scenario configuration, validation, dotted-path overrides
//!
//! All numeric kernels are generic over [`Scalar`] (any IEEE float); the
//! harness and the serialization layer operate on [`Real`]. Every scenario
//! is a pure function of `(config, seed)`: two runs with equal inputs
//! produce bit-identical traces.

pub mod attack;
pub mod config;
pub mod detect;
pub mod error;
pub mod estimate;
pub(crate) mod linalg;
pub mod model;
pub mod scalar;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the harness, the configuration layer, and the CLI.
pub type Real = f64;

/// Per-arm plant parameters at the harness scalar type.
pub type ArmParams = model::ArmParams<Real>;
/// Per-arm dynamic state at the harness scalar type.
pub type ArmState = model::ArmState<Real>;
/// Two-pair intersection state at the harness scalar type.
pub type IntersectionState = model::IntersectionState<Real>;
/// Green-time allocation at the harness scalar type.
pub type Controls = model::ControlState<Real>;
/// Replay attacker at the harness scalar type.
pub type ReplayAttack = attack::ReplayAttack<Real>;
/// Residual monitor at the harness scalar type.
pub type ResidualMonitor = detect::ResidualMonitor<Real>;
/// Threshold detector at the harness scalar type.
pub type ThresholdDetector = detect::ThresholdDetector<Real>;
