//! Long-horizon coupled ECM + aging simulation, energy-storage dispatch
//! policies, end-of-life extrapolation, and usage histograms.
//!
//! The coupling is feedforward: the ECM produces SOC and voltage from the
//! current profile, and `(SOC, current, temperature)` feed the aging model.
//! Accumulated fade never feeds back into the electrical parameters within
//! a run, so a run split at any point and re-accumulated reproduces the
//! unsplit result.

use std::path::Path;

use serde::Serialize;

use crate::aging::{self, BatteryParams, FadeState};
use crate::ecm::{ecm_step, EcmParams, EcmState};
use crate::error::{Error, Result};
use crate::profile::{CurrentProfile, ProfileSample, SegmentIter};
use crate::xmap::XMap;
use crate::{celsius_to_kelvin, SECONDS_PER_YEAR};

/// Smallest trajectory window accepted by [`extrapolate_eol`] (30 days).
pub const EOL_MIN_WINDOW_S: f64 = 30.0 * 86_400.0;

/// One household power sample: PV production, appliance load, temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub time_s: f64,
    pub pv_w: f64,
    pub load_w: f64,
    pub temp_k: f64,
}

/// Timestamped PV/load/temperature series driving the dispatch policies.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdTrace {
    samples: Vec<TraceSample>,
}

impl HouseholdTrace {
    pub fn new(samples: Vec<TraceSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Domain("trace needs at least two samples".into()));
        }
        if samples[0].time_s != 0.0 {
            return Err(Error::Domain(format!(
                "trace must start at time 0, got {}",
                samples[0].time_s
            )));
        }
        for pair in samples.windows(2) {
            if !(pair[1].time_s > pair[0].time_s) {
                return Err(Error::Domain(format!(
                    "trace times must increase strictly, got {} after {}",
                    pair[1].time_s, pair[0].time_s
                )));
            }
        }
        for s in &samples {
            if !(s.pv_w >= 0.0) || !(s.load_w >= 0.0) {
                return Err(Error::Domain(format!(
                    "trace powers must be >= 0 at t={}",
                    s.time_s
                )));
            }
            if !(s.temp_k > 0.0) {
                return Err(Error::Domain(format!(
                    "trace temperature must be > 0 K at t={}",
                    s.time_s
                )));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    /// Loads a trace from CSV with header `time_s,pv_w,load_w,temp_c`.
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut samples = Vec::new();
        let mut saw_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if line != "time_s,pv_w,load_w,temp_c" {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected header 'time_s,pv_w,load_w,temp_c', got '{line}'"),
                    ));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::parse(path, lineno, "expected 4 comma-separated fields"));
            }
            let mut nums = [0.0f64; 4];
            for (slot, (field, name)) in nums.iter_mut().zip(
                fields
                    .iter()
                    .zip(["time_s", "pv_w", "load_w", "temp_c"]),
            ) {
                *slot = field.parse::<f64>().map_err(|_| {
                    Error::parse(path, lineno, format!("invalid {name} value '{field}'"))
                })?;
            }
            samples.push(TraceSample {
                time_s: nums[0],
                pv_w: nums[1],
                load_w: nums[2],
                temp_k: celsius_to_kelvin(nums[3]),
            });
        }
        Self::new(samples)
    }
}

/// Series/parallel cell arrangement mapping household power to per-cell
/// current. The aging model is calibrated at cell scale, so pack power is
/// divided down: `I_cell = P / (series * parallel * V_cell)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PackConfig {
    pub series: u32,
    pub parallel: u32,
}

impl PackConfig {
    pub fn new(series: u32, parallel: u32) -> Result<Self> {
        if series == 0 || parallel == 0 {
            return Err(Error::Config("pack needs at least 1s1p".into()));
        }
        Ok(Self { series, parallel })
    }

    pub fn cell_count(&self) -> u64 {
        u64::from(self.series) * u64::from(self.parallel)
    }

    /// ECM parameters of the whole pack treated as one equivalent cell.
    pub fn pack_ecm(&self, cell: &EcmParams) -> EcmParams {
        let s = f64::from(self.series);
        let p = f64::from(self.parallel);
        let curve = cell
            .ocv_curve()
            .iter()
            .map(|&(soc, v)| (soc, v * s))
            .collect();
        EcmParams::new(
            cell.r0_ohm * s / p,
            cell.r1_ohm * s / p,
            cell.c1_farad * p / s,
            cell.capacity_ah * p,
            curve,
        )
        .expect("scaling preserves validity")
    }

    /// Converts a pack-current profile into the per-cell profile the aging
    /// model consumes.
    pub fn per_cell_profile(&self, pack_profile: &CurrentProfile) -> CurrentProfile {
        pack_profile.scale_current(1.0 / f64::from(self.parallel))
    }
}

/// Trajectory sample: accumulated fade components at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub time_s: f64,
    pub q_sei_pct: f64,
    pub q_am_pct: f64,
    pub q_total_pct: f64,
}

/// Run identifiers and saturation statistics attached to a trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrajectoryMeta {
    pub profile: String,
    pub policy: Option<String>,
    /// Number of steps where coulomb counting hit an SOC rail.
    pub saturation_events: u64,
    pub final_soc: f64,
}

/// Capacity-fade history of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FadeTrajectory {
    pub points: Vec<TrajectoryPoint>,
    pub meta: TrajectoryMeta,
}

impl FadeTrajectory {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("time_s,q_sei_pct,q_am_pct,q_total_pct\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.time_s, p.q_sei_pct, p.q_am_pct, p.q_total_pct
            ));
        }
        out
    }

    /// Reads a trajectory back from the CSV schema written by
    /// [`FadeTrajectory::to_csv_string`].
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut points = Vec::new();
        let mut saw_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if line != "time_s,q_sei_pct,q_am_pct,q_total_pct" {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!(
                            "expected header 'time_s,q_sei_pct,q_am_pct,q_total_pct', got '{line}'"
                        ),
                    ));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::parse(path, lineno, "expected 4 comma-separated fields"));
            }
            let mut nums = [0.0f64; 4];
            for (slot, field) in nums.iter_mut().zip(&fields) {
                *slot = field.parse::<f64>().map_err(|_| {
                    Error::parse(path, lineno, format!("invalid value '{field}'"))
                })?;
            }
            if let Some(prev) = points.last() {
                let prev: &TrajectoryPoint = prev;
                if nums[0] <= prev.time_s {
                    return Err(Error::parse(path, lineno, "times must increase strictly"));
                }
            }
            points.push(TrajectoryPoint {
                time_s: nums[0],
                q_sei_pct: nums[1],
                q_am_pct: nums[2],
                q_total_pct: nums[3],
            });
        }
        if points.is_empty() {
            return Err(Error::parse(path, 1, "empty trajectory file"));
        }
        Ok(Self {
            points,
            meta: TrajectoryMeta::default(),
        })
    }
}

/// Incremental coupled ECM + aging stepper.
///
/// Steps land on profile segment boundaries, so each step is exact for the
/// piecewise-constant input: the RC update is the exact ZOH discretization
/// and the SEI increment is the closed form over the step's age interval.
pub struct CoupledSim<'a> {
    params: &'a BatteryParams,
    map: &'a XMap,
    ecm: &'a EcmParams,
    cursor: SegmentIter<'a>,
    ecm_state: EcmState,
    fade: FadeState,
    saturation_events: u64,
    time_s: f64,
}

impl<'a> CoupledSim<'a> {
    pub fn new(
        profile: &'a CurrentProfile,
        params: &'a BatteryParams,
        map: &'a XMap,
        ecm: &'a EcmParams,
        initial_soc: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&initial_soc) {
            return Err(Error::Domain(format!(
                "initial SOC must lie in [0, 1], got {initial_soc}"
            )));
        }
        params.validate()?;
        Ok(Self {
            params,
            map,
            ecm,
            cursor: profile.segments(),
            ecm_state: EcmState::new(initial_soc),
            fade: FadeState::new(),
            saturation_events: 0,
            time_s: 0.0,
        })
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn ecm_state(&self) -> EcmState {
        self.ecm_state
    }

    pub fn fade(&self) -> FadeState {
        self.fade
    }

    pub fn saturation_events(&self) -> u64 {
        self.saturation_events
    }

    /// Returns the fade accumulated so far and restarts accumulation from
    /// zero; the age clock keeps running. Splitting a run this way and
    /// summing the parts reproduces the unsplit totals.
    pub fn take_fade(&mut self) -> FadeState {
        let out = self.fade;
        self.fade.q_sei_pct = 0.0;
        self.fade.q_am_pct = 0.0;
        out
    }

    /// Advances the simulation to `target_s`, stepping on every profile
    /// segment boundary in between.
    pub fn advance_to(&mut self, target_s: f64) -> Result<()> {
        if target_s < self.time_s {
            return Err(Error::Domain(format!(
                "cannot step backwards from {} to {target_s}",
                self.time_s
            )));
        }
        while self.time_s < target_s {
            let seg = self.cursor.current();
            if seg.end_s <= self.time_s {
                self.cursor.advance();
                continue;
            }
            let step_end = seg.end_s.min(target_s);
            let dt = step_end - self.time_s;
            if dt > 0.0 {
                let out = ecm_step(&self.ecm_state, self.ecm, seg.current_a, dt)?;
                if out.saturated {
                    self.saturation_events += 1;
                }
                self.ecm_state = out.state;
                // Feed the post-step SOC into the aging model (ECM first,
                // aging second).
                self.fade = aging::step(
                    &self.fade,
                    self.params,
                    self.map,
                    self.ecm_state.soc,
                    seg.current_a,
                    seg.temp_k,
                    dt,
                )?;
            }
            self.time_s = step_end;
            if step_end >= seg.end_s {
                self.cursor.advance();
            }
        }
        Ok(())
    }
}

/// Runs the coupled simulation over `horizon_s`, recording every
/// `record_every_s` seconds (plus the endpoints).
pub fn simulate(
    profile: &CurrentProfile,
    params: &BatteryParams,
    map: &XMap,
    ecm: &EcmParams,
    initial_soc: f64,
    horizon_s: f64,
    record_every_s: f64,
) -> Result<FadeTrajectory> {
    if !(horizon_s > 0.0) || !(record_every_s > 0.0) {
        return Err(Error::Domain(format!(
            "horizon and record cadence must be > 0, got {horizon_s} and {record_every_s}"
        )));
    }
    let mut sim = CoupledSim::new(profile, params, map, ecm, initial_soc)?;
    let mut points = vec![TrajectoryPoint {
        time_s: 0.0,
        q_sei_pct: 0.0,
        q_am_pct: 0.0,
        q_total_pct: 0.0,
    }];
    let mut k = 1.0f64;
    loop {
        let t = (k * record_every_s).min(horizon_s);
        sim.advance_to(t)?;
        let fade = sim.fade();
        points.push(TrajectoryPoint {
            time_s: t,
            q_sei_pct: fade.q_sei_pct,
            q_am_pct: fade.q_am_pct,
            q_total_pct: fade.q_total_pct(),
        });
        if t >= horizon_s {
            break;
        }
        k += 1.0;
    }
    Ok(FadeTrajectory {
        points,
        meta: TrajectoryMeta {
            profile: String::new(),
            policy: None,
            saturation_events: sim.saturation_events(),
            final_soc: sim.ecm_state().soc,
        },
    })
}

/// SOC trace of an ECM-only run over a profile, sampled at every step
/// boundary. Returns the series and the saturation-event count.
pub fn ecm_soc_series(
    profile: &CurrentProfile,
    ecm: &EcmParams,
    initial_soc: f64,
    horizon_s: f64,
) -> Result<(Vec<(f64, f64)>, u64)> {
    if !(horizon_s > 0.0) {
        return Err(Error::Domain(format!("horizon must be > 0, got {horizon_s}")));
    }
    if !(0.0..=1.0).contains(&initial_soc) {
        return Err(Error::Domain(format!(
            "initial SOC must lie in [0, 1], got {initial_soc}"
        )));
    }
    let mut series = vec![(0.0, initial_soc)];
    let mut state = EcmState::new(initial_soc);
    let mut saturations = 0;
    let mut cursor = profile.segments();
    let mut t = 0.0;
    while t < horizon_s {
        let seg = cursor.current();
        if seg.end_s <= t {
            cursor.advance();
            continue;
        }
        let step_end = seg.end_s.min(horizon_s);
        let dt = step_end - t;
        if dt > 0.0 {
            let out = ecm_step(&state, ecm, seg.current_a, dt)?;
            if out.saturated {
                saturations += 1;
            }
            state = out.state;
            series.push((step_end, state.soc));
        }
        t = step_end;
        if step_end >= seg.end_s {
            cursor.advance();
        }
    }
    Ok((series, saturations))
}

fn sample_duration(samples: &[TraceSample], i: usize) -> f64 {
    if i + 1 < samples.len() {
        samples[i + 1].time_s - samples[i].time_s
    } else if i > 0 {
        // Hold the last sample for as long as the previous one lasted.
        samples[i].time_s - samples[i - 1].time_s
    } else {
        3600.0
    }
}

/// Baseline energy-storage dispatch: store PV surplus, discharge on deficit
/// while the SOC stays above `soc_floor`, let the grid cover the rest.
///
/// Currents are `power / nominal_voltage_v` at the scale the `ecm`
/// parameters describe (pass pack-level parameters for pack currents).
/// Battery temperature is taken from the trace. Charging is bounded so the
/// projected SOC never passes 1; a deficit step that would cross the floor
/// draws nothing from the battery.
pub fn baseline_policy(
    trace: &HouseholdTrace,
    ecm: &EcmParams,
    nominal_voltage_v: f64,
    soc_floor: f64,
    initial_soc: f64,
) -> Result<CurrentProfile> {
    if !(nominal_voltage_v > 0.0) {
        return Err(Error::Domain(format!(
            "nominal voltage must be > 0, got {nominal_voltage_v}"
        )));
    }
    if !(0.0..1.0).contains(&soc_floor) {
        return Err(Error::Domain(format!(
            "soc floor must lie in [0, 1), got {soc_floor}"
        )));
    }
    let samples = trace.samples();
    let mut soc = initial_soc.clamp(0.0, 1.0);
    let mut out = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let dt = sample_duration(samples, i);
        let surplus = s.pv_w - s.load_w;
        let current = if surplus > 0.0 {
            // Charge with the surplus, limited by the headroom to full.
            let desired = surplus / nominal_voltage_v;
            let headroom = (1.0 - soc) * ecm.capacity_ah * 3600.0 / dt;
            -desired.min(headroom)
        } else if surplus < 0.0 {
            let desired = -surplus / nominal_voltage_v;
            let projected = soc - desired * dt / (3600.0 * ecm.capacity_ah);
            if projected >= soc_floor {
                desired
            } else {
                0.0
            }
        } else {
            0.0
        };
        soc -= current * dt / (3600.0 * ecm.capacity_ah);
        soc = soc.clamp(0.0, 1.0);
        out.push(ProfileSample {
            time_s: s.time_s,
            current_a: current,
            temp_k: s.temp_k,
        });
    }
    CurrentProfile::new(out, None)
}

/// Synthetic comparison policy that works the battery the way a
/// cost-optimizing scheduler does: the SOC is held near `soc_target`
/// around the clock with grid-assisted boost charging at `boost_c`, PV
/// surplus still tops the battery up, and deficits discharge down to
/// `soc_floor` like the baseline.
///
/// A boost pulse fires at full rate whenever the SOC sags more than one
/// pulse worth below the target, so the hold shows up as a high-SOC
/// sawtooth with recurring `boost_c` charge pulses.
pub fn aggressive_policy(
    trace: &HouseholdTrace,
    ecm: &EcmParams,
    nominal_voltage_v: f64,
    soc_target: f64,
    boost_c: f64,
    soc_floor: f64,
    initial_soc: f64,
) -> Result<CurrentProfile> {
    if !(nominal_voltage_v > 0.0) {
        return Err(Error::Domain(format!(
            "nominal voltage must be > 0, got {nominal_voltage_v}"
        )));
    }
    if !(0.0 < soc_target && soc_target <= 1.0) || !(boost_c > 0.0) {
        return Err(Error::Domain(format!(
            "need soc_target in (0, 1] and boost_c > 0, got {soc_target} and {boost_c}"
        )));
    }
    let samples = trace.samples();
    let mut soc = initial_soc.clamp(0.0, 1.0);
    let mut out = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let dt = sample_duration(samples, i);
        let surplus = s.pv_w - s.load_w;
        // SOC recovered by one full-rate boost step.
        let band = boost_c * dt / 3600.0;
        let headroom_full = (1.0 - soc) * ecm.capacity_ah * 3600.0 / dt;
        let current = if soc < soc_target - band {
            // Grid-assisted boost at full rate, or the PV surplus if that
            // is even larger.
            let desired = (boost_c * ecm.capacity_ah).max(surplus.max(0.0) / nominal_voltage_v);
            -desired.min(headroom_full)
        } else if surplus < 0.0 {
            let desired = -surplus / nominal_voltage_v;
            let projected = soc - desired * dt / (3600.0 * ecm.capacity_ah);
            if projected >= soc_floor {
                desired
            } else {
                0.0
            }
        } else if surplus > 0.0 {
            // Near or above the target: store the surplus like the baseline.
            -(surplus / nominal_voltage_v).min(headroom_full)
        } else {
            0.0
        };
        soc -= current * dt / (3600.0 * ecm.capacity_ah);
        soc = soc.clamp(0.0, 1.0);
        out.push(ProfileSample {
            time_s: s.time_s,
            current_a: current,
            temp_k: s.temp_k,
        });
    }
    CurrentProfile::new(out, None)
}

/// End-of-life estimate from extrapolated fade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EolEstimate {
    pub years_to_eol: f64,
    /// Remaining-capacity fraction defining end of life.
    pub threshold: f64,
    /// Coefficient of the `sqrt(years)` term, %/sqrt(year).
    pub coeff_sqrt: f64,
    /// Coefficient of the linear term, %/year.
    pub coeff_linear: f64,
}

/// Fits `q_total(t) = a sqrt(t_years) + b t_years` by least squares and
/// solves for the year count where total fade reaches
/// `100 (1 - threshold)` percent.
///
/// The two-term form matches the model physics: SEI fade is exactly
/// `sqrt(t)` under stationary conditions and LAM fade grows linearly in
/// time for periodic usage. Both terms model non-negative contributions,
/// so the coefficients are constrained to `a, b >= 0` (otherwise slightly
/// concave trajectories fit a fade trend that peaks and falls, which the
/// aging equations cannot do).
pub fn extrapolate_eol(trajectory: &FadeTrajectory, threshold: f64) -> Result<EolEstimate> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::Domain(format!(
            "EOL threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let points = &trajectory.points;
    if points.len() < 2 {
        return Err(Error::Domain("trajectory needs at least two points".into()));
    }
    let span = points[points.len() - 1].time_s - points[0].time_s;
    if span < EOL_MIN_WINDOW_S {
        return Err(Error::Domain(format!(
            "trajectory spans {span} s; extrapolation needs at least {EOL_MIN_WINDOW_S} s"
        )));
    }
    let fade_gain = points[points.len() - 1].q_total_pct - points[0].q_total_pct;
    if !(fade_gain > 0.0) {
        return Err(Error::NoEol(format!(
            "no positive fade over the window (gained {fade_gain} %)"
        )));
    }

    // Least squares on phi = (sqrt(nu), nu), nu in years.
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut distinct = 0;
    let mut last_nu = f64::NAN;
    for p in points {
        let nu = p.time_s / SECONDS_PER_YEAR;
        if nu <= 0.0 {
            continue;
        }
        if nu != last_nu {
            distinct += 1;
            last_nu = nu;
        }
        let r = nu.sqrt();
        s11 += nu; // r * r
        s12 += r * nu;
        s22 += nu * nu;
        b1 += r * p.q_total_pct;
        b2 += nu * p.q_total_pct;
    }
    if distinct < 2 {
        return Err(Error::Fit(
            "EOL fit needs at least two distinct positive times".into(),
        ));
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < 1e-30 {
        return Err(Error::Fit("singular normal equations in EOL fit".into()));
    }
    // Non-negative least squares over two variables: take the unconstrained
    // solution when feasible, otherwise the better of the two single-term
    // boundary fits.
    let (a, b) = {
        let a_free = (b1 * s22 - b2 * s12) / det;
        let b_free = (s11 * b2 - s12 * b1) / det;
        if a_free >= 0.0 && b_free >= 0.0 {
            (a_free, b_free)
        } else {
            let a_only = (b1 / s11).max(0.0);
            let b_only = (b2 / s22).max(0.0);
            // sse(a, b) up to the constant sum of q^2.
            let partial_sse = |a: f64, b: f64| {
                a * a * s11 + b * b * s22 + 2.0 * a * b * s12 - 2.0 * a * b1 - 2.0 * b * b2
            };
            if partial_sse(a_only, 0.0) <= partial_sse(0.0, b_only) {
                (a_only, 0.0)
            } else {
                (0.0, b_only)
            }
        }
    };

    let loss_limit = 100.0 * (1.0 - threshold);
    if a < 1e-12 && b < 1e-12 {
        return Err(Error::Fit(format!(
            "degenerate EOL fit: both coefficients vanish (a={a}, b={b})"
        )));
    }

    // Solve b u^2 + a u = loss_limit for u = sqrt(years).
    let u = if b < 1e-15 {
        loss_limit / a
    } else {
        let disc = a * a + 4.0 * b * loss_limit;
        (-a + disc.sqrt()) / (2.0 * b)
    };

    Ok(EolEstimate {
        years_to_eol: u * u,
        threshold,
        coeff_sqrt: a,
        coeff_linear: b,
    })
}

/// Time-weighted occupancy histogram. Values outside the edge range are
/// clamped into the boundary bins so the total mass always equals the
/// observed duration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    edges: Vec<f64>,
    seconds: Vec<f64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::Domain("histogram needs at least two edges".into()));
        }
        for pair in edges.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(Error::Domain(format!(
                    "histogram edges must increase strictly, got {} after {}",
                    pair[1], pair[0]
                )));
            }
        }
        let bins = edges.len() - 1;
        Ok(Self {
            edges,
            seconds: vec![0.0; bins],
        })
    }

    fn add(&mut self, value: f64, weight_s: f64) {
        let n = self.seconds.len();
        let idx = if value < self.edges[0] {
            0
        } else if value >= self.edges[n] {
            n - 1
        } else {
            self.edges.partition_point(|&e| e <= value) - 1
        };
        self.seconds[idx] += weight_s;
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn seconds(&self) -> &[f64] {
        &self.seconds
    }

    pub fn total_seconds(&self) -> f64 {
        self.seconds.iter().sum()
    }

    /// Mass in bins whose lower edge is at or above `threshold`.
    pub fn mass_at_or_above(&self, threshold: f64) -> f64 {
        self.edges[..self.edges.len() - 1]
            .iter()
            .zip(&self.seconds)
            .filter(|(lo, _)| **lo >= threshold)
            .map(|(_, s)| s)
            .sum()
    }

    /// Mass in bins whose upper edge is at or below `threshold`.
    pub fn mass_at_or_below(&self, threshold: f64) -> f64 {
        self.edges[1..]
            .iter()
            .zip(&self.seconds)
            .filter(|(hi, _)| **hi <= threshold)
            .map(|(_, s)| s)
            .sum()
    }

    /// CSV rows `bin_low,bin_high,seconds`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("bin_low,bin_high,seconds\n");
        for (i, s) in self.seconds.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], s));
        }
        out
    }
}

/// Time-weighted C-rate and SOC occupancy histograms over the window covered
/// by `soc_series`.
///
/// C-rate is signed current over capacity (charge negative); the SOC series
/// is weighted zero-order hold. Both totals equal the window duration.
pub fn usage_histograms(
    profile: &CurrentProfile,
    soc_series: &[(f64, f64)],
    capacity_ah: f64,
    c_rate_edges: Vec<f64>,
    soc_edges: Vec<f64>,
) -> Result<(Histogram, Histogram)> {
    if soc_series.len() < 2 {
        return Err(Error::Domain(
            "soc series needs at least two samples to define a window".into(),
        ));
    }
    if !(capacity_ah > 0.0) {
        return Err(Error::Domain(format!("capacity must be > 0, got {capacity_ah}")));
    }
    let window_start = soc_series[0].0;
    let window_end = soc_series[soc_series.len() - 1].0;
    if !(window_end > window_start) {
        return Err(Error::Domain("soc series window has zero length".into()));
    }

    let mut c_rate_hist = Histogram::new(c_rate_edges)?;
    let mut cursor = profile.segments();
    loop {
        let seg = cursor.current();
        if seg.start_s >= window_end {
            break;
        }
        let lo = seg.start_s.max(window_start);
        let hi = seg.end_s.min(window_end);
        if hi > lo {
            c_rate_hist.add(seg.current_a / capacity_ah, hi - lo);
        }
        if seg.end_s >= window_end {
            break;
        }
        cursor.advance();
    }

    let mut soc_hist = Histogram::new(soc_edges)?;
    for pair in soc_series.windows(2) {
        let (t0, soc) = pair[0];
        let (t1, _) = pair[1];
        if !(t1 > t0) {
            return Err(Error::Domain("soc series times must increase strictly".into()));
        }
        soc_hist.add(soc, t1 - t0);
    }

    Ok((c_rate_hist, soc_hist))
}
