//! First-order equivalent circuit model: series resistance plus one RC
//! branch, with coulomb-counted SOC and a piecewise-linear OCV table.
//!
//! Sign convention everywhere: **positive current discharges** the cell.
//! The RC branch uses the exact zero-order-hold discretization, so stepping
//! is exact for piecewise-constant current regardless of step size.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Electrical parameters and OCV relation of one cell (or of a pack scaled
/// as one equivalent cell).
#[derive(Debug, Clone, PartialEq)]
pub struct EcmParams {
    /// Series resistance, ohm.
    pub r0_ohm: f64,
    /// Polarization resistance, ohm.
    pub r1_ohm: f64,
    /// Polarization capacitance, farad.
    pub c1_farad: f64,
    /// Cell capacity, Ah.
    pub capacity_ah: f64,
    ocv_curve: Vec<(f64, f64)>,
}

impl EcmParams {
    pub fn new(
        r0_ohm: f64,
        r1_ohm: f64,
        c1_farad: f64,
        capacity_ah: f64,
        ocv_curve: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if !(r0_ohm >= 0.0) {
            return Err(Error::Config(format!("r0 must be >= 0, got {r0_ohm}")));
        }
        if !(r1_ohm > 0.0) || !(c1_farad > 0.0) || !(capacity_ah > 0.0) {
            return Err(Error::Config(format!(
                "r1, c1, capacity must be positive, got r1={r1_ohm}, c1={c1_farad}, capacity={capacity_ah}"
            )));
        }
        if ocv_curve.len() < 2 {
            return Err(Error::Config("OCV curve needs at least two points".into()));
        }
        if ocv_curve[0].0 != 0.0 || ocv_curve[ocv_curve.len() - 1].0 != 1.0 {
            return Err(Error::Config("OCV curve must cover soc in [0, 1]".into()));
        }
        for pair in ocv_curve.windows(2) {
            if !(pair[1].0 > pair[0].0) || !(pair[1].1 > pair[0].1) {
                return Err(Error::Config(
                    "OCV curve must be strictly increasing in soc and voltage".into(),
                ));
            }
        }
        Ok(Self {
            r0_ohm,
            r1_ohm,
            c1_farad,
            capacity_ah,
            ocv_curve,
        })
    }

    /// Illustrative defaults for a 2.3 Ah 26650 LFP cell: a flat ~3.2-3.3 V
    /// plateau with steep ends and a small series resistance. All values are
    /// ordinary configuration and carry no calibration significance.
    pub fn default_lfp_26650() -> Self {
        Self::new(
            0.010,
            0.015,
            2000.0,
            2.3,
            vec![
                (0.00, 2.50),
                (0.05, 3.00),
                (0.10, 3.15),
                (0.20, 3.22),
                (0.30, 3.26),
                (0.40, 3.28),
                (0.50, 3.30),
                (0.60, 3.31),
                (0.70, 3.32),
                (0.80, 3.33),
                (0.90, 3.35),
                (1.00, 3.45),
            ],
        )
        .expect("default LFP parameters are valid")
    }

    pub fn ocv_curve(&self) -> &[(f64, f64)] {
        &self.ocv_curve
    }

    /// Loads parameters from a TOML file with keys `r0_ohm, r1_ohm, c1_farad,
    /// capacity_ah` and either an inline `ocv = [[soc, v], ...]` table or an
    /// `ocv_csv` path (schema `soc_frac,ocv_v`) resolved relative to the
    /// config file.
    pub fn from_toml_path(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct EcmConfig {
            r0_ohm: f64,
            r1_ohm: f64,
            c1_farad: f64,
            capacity_ah: f64,
            ocv: Option<Vec<[f64; 2]>>,
            ocv_csv: Option<String>,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: EcmConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: invalid ECM params: {e}", path.display())))?;
        let curve = match (cfg.ocv, cfg.ocv_csv) {
            (Some(inline), None) => inline.into_iter().map(|[s, v]| (s, v)).collect(),
            (None, Some(rel)) => {
                let csv_path = path.parent().unwrap_or(Path::new(".")).join(rel);
                load_ocv_csv(&csv_path)?
            }
            _ => {
                return Err(Error::Config(format!(
                    "{}: exactly one of `ocv` or `ocv_csv` must be set",
                    path.display()
                )))
            }
        };
        Self::new(cfg.r0_ohm, cfg.r1_ohm, cfg.c1_farad, cfg.capacity_ah, curve)
    }
}

fn load_ocv_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut curve = Vec::new();
    let mut saw_header = false;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "soc_frac,ocv_v" {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected header 'soc_frac,ocv_v', got '{line}'"),
                ));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::parse(path, lineno, "expected 2 comma-separated fields"));
        }
        let soc = fields[0]
            .parse::<f64>()
            .map_err(|_| Error::parse(path, lineno, format!("invalid soc_frac '{}'", fields[0])))?;
        let v = fields[1]
            .parse::<f64>()
            .map_err(|_| Error::parse(path, lineno, format!("invalid ocv_v '{}'", fields[1])))?;
        curve.push((soc, v));
    }
    if curve.is_empty() {
        return Err(Error::parse(path, 1, "empty OCV table"));
    }
    Ok(curve)
}

/// Electrical state of the cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcmState {
    /// State of charge, fraction of capacity.
    pub soc: f64,
    /// RC-branch voltage, V.
    pub v1_volt: f64,
}

impl EcmState {
    pub fn new(soc: f64) -> Self {
        Self { soc, v1_volt: 0.0 }
    }
}

/// One ECM step result. `saturated` flags that coulomb counting hit an SOC
/// rail and the state was clamped; long simulations report these as
/// statistics instead of aborting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcmStep {
    pub state: EcmState,
    pub voltage_v: f64,
    pub saturated: bool,
}

/// Open-circuit voltage at `soc`, piecewise-linear and exact at table knots.
pub fn ocv(params: &EcmParams, soc: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(Error::Domain(format!("ocv requires soc in [0, 1], got {soc}")));
    }
    let curve = &params.ocv_curve;
    let n = curve.len();
    let (i0, i1) = if soc <= curve[0].0 {
        (0, 1)
    } else if soc >= curve[n - 1].0 {
        (n - 2, n - 1)
    } else {
        let hi = curve.partition_point(|&(s, _)| s <= soc);
        (hi - 1, hi)
    };
    let (s0, v0) = curve[i0];
    let (s1, v1) = curve[i1];
    let t = (soc - s0) / (s1 - s0);
    Ok(v0 * (1.0 - t) + v1 * t)
}

/// Advances the ECM by `dt` seconds at constant `current_a` (positive =
/// discharge) and returns the new state plus terminal voltage.
///
/// SOC uses coulomb counting `soc - I dt / (3600 C)` clamped to `[0, 1]`;
/// the RC voltage uses the exact exponential update
/// `v1 e^(-dt/tau) + r1 (1 - e^(-dt/tau)) I` with `tau = r1 c1`; terminal
/// voltage is `ocv(soc') - I r0 - v1'`.
pub fn ecm_step(
    state: &EcmState,
    params: &EcmParams,
    current_a: f64,
    dt: f64,
) -> Result<EcmStep> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("ecm_step requires dt > 0, got {dt}")));
    }
    let raw_soc = state.soc - current_a * dt / (3600.0 * params.capacity_ah);
    let (soc, saturated) = if raw_soc < 0.0 {
        (0.0, true)
    } else if raw_soc > 1.0 {
        (1.0, true)
    } else {
        (raw_soc, false)
    };
    let decay = (-dt / (params.r1_ohm * params.c1_farad)).exp();
    let v1 = state.v1_volt * decay + params.r1_ohm * (1.0 - decay) * current_a;
    let voltage = ocv(params, soc)? - current_a * params.r0_ohm - v1;
    Ok(EcmStep {
        state: EcmState { soc, v1_volt: v1 },
        voltage_v: voltage,
        saturated,
    })
}
