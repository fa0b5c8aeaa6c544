//! Capacity-fade equations: SEI layer growth and loss of active material.
//!
//! Both mechanisms share an Arrhenius temperature factor `k exp(-E / RT)`.
//! SEI growth follows a `sqrt(t)` law in absolute cell age, damped by the
//! calibrated overpotential lump `X` (see [`crate::xmap`]); LAM fade is
//! proportional to SOC-weighted charge throughput. Capacity losses are
//! expressed in percent of nominal capacity throughout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::xmap::XMap;

/// Universal gas constant, J/(mol·K).
pub const GAS_CONSTANT: f64 = 8.314;

/// Nominal capacity plus the four fitted aging coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Nominal cell capacity, Ah.
    pub nominal_capacity_ah: f64,
    /// SEI growth rate prefactor, 1/s^½.
    pub k_sei: f64,
    /// SEI growth activation energy, J/mol.
    pub e_sei: f64,
    /// LAM rate prefactor, 1/Ah.
    pub k_am: f64,
    /// LAM activation energy, J/mol.
    pub e_am: f64,
}

impl BatteryParams {
    pub fn new(
        nominal_capacity_ah: f64,
        k_sei: f64,
        e_sei: f64,
        k_am: f64,
        e_am: f64,
    ) -> Result<Self> {
        let params = Self {
            nominal_capacity_ah,
            k_sei,
            e_sei,
            k_am,
            e_am,
        };
        params.validate()?;
        Ok(params)
    }

    /// Fitted coefficients for the 2.3 Ah A123 26650 LFP cell.
    pub fn lfp_26650() -> Self {
        Self {
            nominal_capacity_ah: 2.3,
            k_sei: 7350.0,
            e_sei: 39333.0,
            k_am: 1.1798,
            e_am: 39111.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("nominal_capacity_ah", self.nominal_capacity_ah),
            ("k_sei", self.k_sei),
            ("e_sei", self.e_sei),
            ("k_am", self.k_am),
            ("e_am", self.e_am),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Config(format!(
                    "battery parameter {name} must be positive and finite, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Loads parameters from a TOML key-value file with the five fields of
    /// this struct.
    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: Self = toml::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: invalid battery params: {e}", path.display()))
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("battery params serialize")
    }
}

/// Arrhenius rate factor `k exp(-e / (R * temp))`.
///
/// Shared kernel of both aging mechanisms. Strictly increasing in `temp`
/// for `e > 0`.
pub fn arrhenius(k: f64, e: f64, temp_k: f64) -> Result<f64> {
    if !(temp_k > 0.0) {
        return Err(Error::Domain(format!(
            "arrhenius requires an absolute temperature > 0 K, got {temp_k}"
        )));
    }
    Ok(k * (-e / (GAS_CONSTANT * temp_k)).exp())
}

/// SEI capacity loss over the absolute-age interval `[t0, t1]` at constant
/// temperature and `x`, in percent of nominal.
///
/// Closed form of the SEI growth law: the integrand
/// `k_sei exp(-E_sei/RT) / (2 (1+x) sqrt(t))` integrates exactly to
/// `arrhenius(k_sei, e_sei, T) / (1 + x) * (sqrt(t1) - sqrt(t0))`.
/// `t0` and `t1` are absolute cell age, not segment-local time, so summing
/// increments over any partition of an interval telescopes to the single
/// closed-form value.
pub fn q_sei_increment(params: &BatteryParams, x: f64, temp_k: f64, t0: f64, t1: f64) -> Result<f64> {
    if !(t0 >= 0.0) || !(t1 >= t0) {
        return Err(Error::Domain(format!(
            "q_sei_increment requires 0 <= t0 <= t1, got t0={t0}, t1={t1}"
        )));
    }
    if !(1.0 + x > 0.0) {
        return Err(Error::ModelValidity(format!(
            "SEI denominator 1 + X must stay positive, got X={x}"
        )));
    }
    let rate = arrhenius(params.k_sei, params.e_sei, temp_k)?;
    Ok(rate / (1.0 + x) * (t1.sqrt() - t0.sqrt()))
}

/// LAM capacity loss over a step of length `dt` at constant SOC, current,
/// and temperature, in percent of nominal.
///
/// `|current| * dt` is converted from A·s to Ah to match `k_am`'s 1/Ah units:
/// `arrhenius(k_am, e_am, T) * soc * |I| * dt / 3600`.
pub fn q_am_increment(
    params: &BatteryParams,
    soc: f64,
    current_a: f64,
    temp_k: f64,
    dt: f64,
) -> Result<f64> {
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!(
            "q_am_increment requires dt >= 0, got {dt}"
        )));
    }
    if !(0.0..=1.0).contains(&soc) {
        return Err(Error::Domain(format!(
            "q_am_increment requires soc in [0, 1], got {soc}"
        )));
    }
    let rate = arrhenius(params.k_am, params.e_am, temp_k)?;
    Ok(rate * soc * current_a.abs() * dt / 3600.0)
}

/// Accumulated capacity fade and cell age.
///
/// `q_sei` and `q_am` are each non-decreasing across [`step`] calls and total
/// fade is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadeState {
    /// Elapsed cell lifetime, s.
    pub age_s: f64,
    /// Capacity loss from SEI growth, percent of nominal.
    pub q_sei_pct: f64,
    /// Capacity loss from loss of active material, percent of nominal.
    pub q_am_pct: f64,
}

impl FadeState {
    /// A fresh cell: zero age, zero fade.
    pub fn new() -> Self {
        Self {
            age_s: 0.0,
            q_sei_pct: 0.0,
            q_am_pct: 0.0,
        }
    }

    /// Total capacity loss `Q_sei + Q_am`, percent of nominal.
    pub fn q_total_pct(&self) -> f64 {
        self.q_sei_pct + self.q_am_pct
    }

    /// Remaining capacity as a fraction of nominal.
    pub fn capacity_fraction(&self) -> f64 {
        1.0 - self.q_total_pct() / 100.0
    }
}

impl Default for FadeState {
    fn default() -> Self {
        Self::new()
    }
}

/// Advances a fade state by `dt` seconds under piecewise-constant conditions.
///
/// The SEI increment is the closed form over `[age, age + dt]` with `x`
/// looked up at the step's `(soc, temp)`; the LAM increment is linear in the
/// step's throughput. Both components are non-decreasing.
pub fn step(
    state: &FadeState,
    params: &BatteryParams,
    map: &XMap,
    soc: f64,
    current_a: f64,
    temp_k: f64,
    dt: f64,
) -> Result<FadeState> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step requires dt > 0, got {dt}")));
    }
    let x = map.lookup(soc, temp_k)?;
    let dq_sei = q_sei_increment(params, x, temp_k, state.age_s, state.age_s + dt)?;
    let dq_am = q_am_increment(params, soc, current_a, temp_k, dt)?;
    Ok(FadeState {
        age_s: state.age_s + dt,
        q_sei_pct: state.q_sei_pct + dq_sei,
        q_am_pct: state.q_am_pct + dq_am,
    })
}
