//! Semi-empirical capacity fade modeling for lithium-ion cells.
//!
//! The model combines two aging mechanisms:
//!
//! * **SEI layer growth** (calendar aging): a `sqrt(t)` law with an Arrhenius
//!   temperature factor and a calibrated overpotential lump `X(SOC, T)`,
//!   evaluated piecewise in closed form by [`aging`].
//! * **Loss of active material** (cycling aging): fade proportional to
//!   SOC-weighted charge throughput, also Arrhenius-scaled.
//!
//! Around that core the crate provides a first-order equivalent circuit model
//! ([`ecm`]), current-profile ingestion and synthesis ([`profile`]), the
//! three-step calibration procedure ([`calibration`]), and long-horizon
//! coupled simulation with end-of-life extrapolation ([`scenario`]).
//!
//! All state types are plain values and every operation is a pure function of
//! its inputs, so independent simulations and fits can run concurrently
//! without shared state.

// Argument checks are written as negated comparisons (`!(x > 0.0)`) so that
// NaN fails validation instead of slipping through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aging;
pub mod calibration;
pub mod ecm;
pub mod error;
pub mod optim;
pub mod profile;
pub mod scenario;
pub mod xmap;

pub use aging::{BatteryParams, FadeState, GAS_CONSTANT};
pub use ecm::{EcmParams, EcmState};
pub use error::{Error, Result};
pub use profile::CurrentProfile;
pub use scenario::{EolEstimate, FadeTrajectory, HouseholdTrace};
pub use xmap::XMap;

/// Converts a Celsius temperature to kelvin. All internal temperatures are
/// kelvin; Celsius appears only at I/O boundaries.
pub fn celsius_to_kelvin(temp_c: f64) -> f64 {
    temp_c + 273.15
}

/// Converts kelvin back to Celsius for report output.
pub fn kelvin_to_celsius(temp_k: f64) -> f64 {
    temp_k - 273.15
}

/// Seconds in one (non-leap) simulation year.
pub const SECONDS_PER_YEAR: f64 = 365.0 * 86_400.0;
