//! The four workflows behind the subcommands, plus exit-code mapping.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use battfade::aging::BatteryParams;
use battfade::calibration::{
    fit_am, fit_sei_reference, fit_x_points, sei_calendar_loss, AmBounds, AmGuess,
    CalibrationDataset, DatasetCondition, FitResult, SeiBounds, SeiGuess, X_BOUNDS,
};
use battfade::ecm::EcmParams;
use battfade::error::Error;
use battfade::scenario::{
    ecm_soc_series, extrapolate_eol, simulate as run_simulation, usage_histograms, CoupledSim,
    FadeTrajectory,
};
use battfade::xmap::XMap;

use crate::config::{
    default_c_rate_edges, default_soc_edges, LoadedConfig, PolicyKind, ProfileSpec,
};

pub struct RunContext {
    pub config_path: PathBuf,
    pub out_override: Option<PathBuf>,
    pub seed: u64,
    pub parallel: usize,
}

/// Error carrying the exit-code contract: 1 validation, 2 fit, 3 model.
#[derive(Debug)]
pub struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        self.code
    }

    fn fit(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            code: 2,
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            code: 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::Domain(_) | Error::Config(_) | Error::Parse { .. } | Error::Io { .. } => 1,
            Error::Fit(_) => 2,
            Error::ModelValidity(_) | Error::NoEol(_) => 3,
        };
        Self {
            message: err.to_string(),
            code,
        }
    }
}

type CmdResult = Result<(), CliError>;

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::validation(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::validation(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, &text)
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Serialize)]
struct SimulateSummary {
    command: &'static str,
    seed: u64,
    profile: String,
    initial_soc: f64,
    horizon_s: f64,
    record_every_s: f64,
    q_sei_pct: f64,
    q_am_pct: f64,
    q_total_pct: f64,
    final_soc: f64,
    saturation_events: u64,
}

fn run_configured_simulation(
    loaded: &LoadedConfig,
) -> Result<(FadeTrajectory, SimulateSummary), CliError> {
    let sim_cfg = loaded
        .cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::validation("config has no [simulate] section"))?;
    let battery = loaded.battery()?;
    let map = loaded.x_map()?;
    let ecm = loaded.ecm()?;
    let profile = loaded.build_profile(&sim_cfg.profile, &ecm, sim_cfg.initial_soc)?;

    let mut trajectory = run_simulation(
        &profile,
        &battery,
        &map,
        &ecm,
        sim_cfg.initial_soc,
        sim_cfg.horizon_s,
        sim_cfg.record_every_s,
    )?;
    trajectory.meta.profile = sim_cfg.profile.label();
    if let ProfileSpec::Policy { policy, .. } = &sim_cfg.profile {
        trajectory.meta.policy = Some(
            match policy {
                PolicyKind::Baseline => "baseline",
                PolicyKind::Aggressive => "aggressive",
            }
            .to_string(),
        );
    }

    let last = *trajectory.points.last().expect("non-empty trajectory");
    let summary = SimulateSummary {
        command: "simulate",
        seed: 0,
        profile: trajectory.meta.profile.clone(),
        initial_soc: sim_cfg.initial_soc,
        horizon_s: sim_cfg.horizon_s,
        record_every_s: sim_cfg.record_every_s,
        q_sei_pct: last.q_sei_pct,
        q_am_pct: last.q_am_pct,
        q_total_pct: last.q_total_pct,
        final_soc: trajectory.meta.final_soc,
        saturation_events: trajectory.meta.saturation_events,
    };
    Ok((trajectory, summary))
}

pub fn simulate(ctx: &RunContext) -> CmdResult {
    let loaded = LoadedConfig::load(&ctx.config_path)?;
    let (trajectory, mut summary) = run_configured_simulation(&loaded)?;
    summary.seed = ctx.seed;

    let out = loaded.out_dir(ctx.out_override.as_deref());
    ensure_out_dir(&out)?;
    write_file(&out.join("trajectory.csv"), &trajectory.to_csv_string())?;
    write_json(&out.join("simulate_summary.json"), &summary)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eol

#[derive(Serialize)]
struct EolReport {
    command: &'static str,
    seed: u64,
    source: String,
    threshold: f64,
    years_to_eol: f64,
    coeff_sqrt_pct_per_sqrt_year: f64,
    coeff_linear_pct_per_year: f64,
}

pub fn eol(ctx: &RunContext) -> CmdResult {
    let loaded = LoadedConfig::load(&ctx.config_path)?;
    let (trajectory_path, threshold) = match &loaded.cfg.eol {
        Some(section) => (section.trajectory.clone(), section.threshold),
        None => (None, 0.80),
    };

    let out = loaded.out_dir(ctx.out_override.as_deref());
    let (trajectory, source) = match trajectory_path {
        Some(rel) => {
            let path = loaded.resolve(&rel);
            let trajectory = FadeTrajectory::from_csv_path(&path)?;
            (trajectory, format!("file:{rel}"))
        }
        None => {
            let (trajectory, _) = run_configured_simulation(&loaded)?;
            ensure_out_dir(&out)?;
            write_file(&out.join("trajectory.csv"), &trajectory.to_csv_string())?;
            let source = format!("simulated:{}", trajectory.meta.profile);
            (trajectory, source)
        }
    };

    let estimate = extrapolate_eol(&trajectory, threshold)?;
    let report = EolReport {
        command: "eol",
        seed: ctx.seed,
        source,
        threshold: estimate.threshold,
        years_to_eol: estimate.years_to_eol,
        coeff_sqrt_pct_per_sqrt_year: estimate.coeff_sqrt,
        coeff_linear_pct_per_year: estimate.coeff_linear,
    };
    ensure_out_dir(&out)?;
    write_json(&out.join("eol_report.json"), &report)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze

#[derive(Serialize)]
struct AnalyzeSummary {
    command: &'static str,
    seed: u64,
    profile: String,
    initial_soc: f64,
    horizon_s: f64,
    c_rate_total_s: f64,
    soc_total_s: f64,
    /// Time spent at |C-rate| at or above 0.5C.
    high_c_rate_s: f64,
    /// Time spent at SOC at or above 0.80.
    high_soc_s: f64,
    saturation_events: u64,
}

pub fn analyze(ctx: &RunContext) -> CmdResult {
    let loaded = LoadedConfig::load(&ctx.config_path)?;
    let section = loaded
        .cfg
        .analyze
        .as_ref()
        .ok_or_else(|| CliError::validation("config has no [analyze] section"))?;
    let ecm = loaded.ecm()?;
    let profile = loaded.build_profile(&section.profile, &ecm, section.initial_soc)?;

    let (series, saturations) =
        ecm_soc_series(&profile, &ecm, section.initial_soc, section.horizon_s)?;
    let c_edges = section
        .c_rate_edges
        .clone()
        .unwrap_or_else(default_c_rate_edges);
    let soc_edges = section.soc_edges.clone().unwrap_or_else(default_soc_edges);
    let (c_hist, soc_hist) =
        usage_histograms(&profile, &series, ecm.capacity_ah, c_edges, soc_edges)?;

    let summary = AnalyzeSummary {
        command: "analyze",
        seed: ctx.seed,
        profile: section.profile.label(),
        initial_soc: section.initial_soc,
        horizon_s: section.horizon_s,
        c_rate_total_s: c_hist.total_seconds(),
        soc_total_s: soc_hist.total_seconds(),
        high_c_rate_s: c_hist.mass_at_or_above(0.5) + c_hist.mass_at_or_below(-0.5),
        high_soc_s: soc_hist.mass_at_or_above(0.80),
        saturation_events: saturations,
    };

    let out = loaded.out_dir(ctx.out_override.as_deref());
    ensure_out_dir(&out)?;
    write_file(&out.join("hist_c_rate.csv"), &c_hist.to_csv_string())?;
    write_file(&out.join("hist_soc.csv"), &soc_hist.to_csv_string())?;
    write_json(&out.join("analyze_summary.json"), &summary)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate

#[derive(Serialize)]
struct ResidualRow {
    dataset: String,
    time_s: f64,
    residual_pct: f64,
}

#[derive(Serialize)]
struct StepReport {
    #[serde(flatten)]
    fit: FitResult,
    residuals: Vec<ResidualRow>,
}

#[derive(Serialize)]
struct XKnotRow {
    soc_frac: f64,
    temp_k: f64,
    x: f64,
}

#[derive(Serialize)]
struct Step2Report {
    fits: Vec<(String, FitResult)>,
    failures: Vec<(String, String)>,
    knots: Vec<XKnotRow>,
}

#[derive(Serialize)]
struct CalibrationReport {
    command: &'static str,
    seed: u64,
    step1: StepReport,
    step2: Step2Report,
    step3: Option<StepReport>,
    notices: Vec<String>,
}

fn load_datasets(
    loaded: &LoadedConfig,
    rels: &[String],
) -> Result<Vec<CalibrationDataset>, CliError> {
    rels.iter()
        .map(|rel| Ok(CalibrationDataset::from_csv_path(&loaded.resolve(rel))?))
        .collect()
}

fn calendar_residuals(
    datasets: &[CalibrationDataset],
    k_sei: f64,
    e_sei: f64,
    per_dataset_x: impl Fn(&CalibrationDataset) -> f64,
) -> Vec<ResidualRow> {
    let mut rows = Vec::new();
    for ds in datasets {
        let temp_k = match ds.condition {
            DatasetCondition::Calendar { temp_k, .. } => temp_k,
            DatasetCondition::Cycling { .. } => continue,
        };
        let x = per_dataset_x(ds);
        for &(t, measured) in &ds.points {
            let predicted = sei_calendar_loss(k_sei, e_sei, x, temp_k, t).unwrap_or(f64::NAN);
            rows.push(ResidualRow {
                dataset: ds.label.clone(),
                time_s: t,
                residual_pct: predicted - measured,
            });
        }
    }
    rows
}

fn cycling_residuals(
    datasets: &[CalibrationDataset],
    params: &BatteryParams,
    map: &XMap,
    ecm: &EcmParams,
) -> Vec<ResidualRow> {
    let mut rows = Vec::new();
    for ds in datasets {
        let (profile, initial_soc) = match &ds.condition {
            DatasetCondition::Cycling {
                profile,
                initial_soc,
            } => (profile, *initial_soc),
            DatasetCondition::Calendar { .. } => continue,
        };
        if let Ok(mut sim) = CoupledSim::new(profile, params, map, ecm, initial_soc) {
            for &(t, measured) in &ds.points {
                if sim.advance_to(t).is_err() {
                    break;
                }
                rows.push(ResidualRow {
                    dataset: ds.label.clone(),
                    time_s: t,
                    residual_pct: sim.fade().q_total_pct() - measured,
                });
            }
        }
    }
    rows
}

/// Step-2 fits, one dataset at a time so `--parallel` changes nothing but
/// wall time; knots keep the input order.
fn fit_x_each(
    datasets: &[CalibrationDataset],
    k_sei: f64,
    e_sei: f64,
    parallel: usize,
) -> Result<Step2Report, CliError> {
    type Single = Result<battfade::calibration::XFitOutcome, Error>;
    let fit_one = |ds: &CalibrationDataset| -> Single {
        fit_x_points(std::slice::from_ref(ds), k_sei, e_sei, X_BOUNDS)
    };
    let outcomes: Vec<(String, Single)> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
        pool.install(|| {
            datasets
                .par_iter()
                .map(|ds| (ds.label.clone(), fit_one(ds)))
                .collect()
        })
    } else {
        datasets
            .iter()
            .map(|ds| (ds.label.clone(), fit_one(ds)))
            .collect()
    };

    let mut fits = Vec::new();
    let mut failures = Vec::new();
    let mut knots = Vec::new();
    for (label, outcome) in outcomes {
        match outcome {
            Ok(single) => {
                for (_, fit) in single.fits {
                    let &(soc, temp_k, x) = &single.map.knots()[0];
                    knots.push(XKnotRow { soc_frac: soc, temp_k, x });
                    fits.push((label.clone(), fit));
                }
                for (_, reason) in single.failures {
                    failures.push((label.clone(), reason));
                }
            }
            Err(e) => failures.push((label, e.to_string())),
        }
    }
    Ok(Step2Report {
        fits,
        failures,
        knots,
    })
}

pub fn calibrate(ctx: &RunContext) -> CmdResult {
    let loaded = LoadedConfig::load(&ctx.config_path)?;
    let section = loaded
        .cfg
        .calibrate
        .as_ref()
        .ok_or_else(|| CliError::validation("config has no [calibrate] section"))?;
    if section.reference.is_empty() {
        return Err(CliError::validation(
            "calibrate needs at least one reference calendar dataset",
        ));
    }
    let ecm = loaded.ecm()?;

    // Validate every input before writing any output.
    let reference = load_datasets(&loaded, &section.reference)?;
    let x_datasets = load_datasets(&loaded, &section.x_datasets)?;
    let cycling = load_datasets(&loaded, &section.cycling)?;

    let mut notices = Vec::new();

    // Step 1: reference calendar fit; k_sei/e_sei frozen afterwards.
    let mut sei_guess = SeiGuess::default();
    if let Some(v) = section.guess.k_sei {
        sei_guess.k_sei = v;
    }
    if let Some(v) = section.guess.e_sei {
        sei_guess.e_sei = v;
    }
    if let Some(v) = section.guess.x {
        sei_guess.x = v;
    }
    let step1 = fit_sei_reference(&reference, &sei_guess, &SeiBounds::default())?;
    let k_sei = step1.get("k_sei").expect("k_sei fitted");
    let e_sei = step1.get("e_sei").expect("e_sei fitted");
    let x_ref = step1.get("x_ref").expect("x_ref fitted");
    if step1.under_determined {
        notices.push(
            "step 1 is under-determined (single temperature or fewer points than parameters); \
             fitted values depend on the initial guess"
                .to_string(),
        );
    }

    // Step 2: per-condition X fits over the additional calendar datasets.
    let step2 = if x_datasets.is_empty() {
        notices.push(
            "no x_datasets configured; X map assembled from the reference conditions at x_ref"
                .to_string(),
        );
        let knots = reference
            .iter()
            .filter_map(|ds| match ds.condition {
                DatasetCondition::Calendar { soc, temp_k } => Some(XKnotRow {
                    soc_frac: soc,
                    temp_k,
                    x: x_ref,
                }),
                DatasetCondition::Cycling { .. } => None,
            })
            .collect();
        Step2Report {
            fits: Vec::new(),
            failures: Vec::new(),
            knots,
        }
    } else {
        fit_x_each(&x_datasets, k_sei, e_sei, ctx.parallel)?
    };
    if step2.knots.is_empty() {
        return Err(CliError::fit("step 2 produced no X map knots"));
    }
    let map = XMap::new(
        step2
            .knots
            .iter()
            .map(|k| (k.soc_frac, k.temp_k, k.x))
            .collect(),
    )?;

    // Step 3: cycling fit, skipped with a notice when no data is configured.
    let mut am_fitted = None;
    let step3 = if cycling.is_empty() {
        notices.push("step 3 skipped: no cycling datasets configured".to_string());
        None
    } else {
        let mut am_guess = AmGuess::default();
        if let Some(v) = section.guess.k_am {
            am_guess.k_am = v;
        }
        if let Some(v) = section.guess.e_am {
            am_guess.e_am = v;
        }
        let fit = fit_am(
            &cycling,
            k_sei,
            e_sei,
            &map,
            &ecm,
            &am_guess,
            &AmBounds::default(),
        )?;
        am_fitted = Some((
            fit.get("k_am").expect("k_am fitted"),
            fit.get("e_am").expect("e_am fitted"),
        ));
        Some(fit)
    };

    // Assemble the fitted battery parameter file. Without a step 3, the LAM
    // coefficients carry over from the input battery file when present.
    let am_pair = match am_fitted {
        Some(pair) => Some(pair),
        None => match loaded.battery() {
            Ok(input) => {
                notices.push(
                    "k_am/e_am carried over from the input battery file (step 3 did not run)"
                        .to_string(),
                );
                Some((input.k_am, input.e_am))
            }
            Err(_) => {
                notices.push(
                    "no fitted battery file written: step 3 did not run and no input battery \
                     file provides k_am/e_am"
                        .to_string(),
                );
                None
            }
        },
    };

    let step1_report = StepReport {
        residuals: calendar_residuals(&reference, k_sei, e_sei, |_| x_ref),
        fit: step1.clone(),
    };
    let step3_report = step3.clone().map(|fit| {
        let (k_am, e_am) = am_fitted.expect("step 3 parameters");
        let params = BatteryParams {
            nominal_capacity_ah: ecm.capacity_ah,
            k_sei,
            e_sei,
            k_am,
            e_am,
        };
        StepReport {
            residuals: cycling_residuals(&cycling, &params, &map, &ecm),
            fit,
        }
    });

    let report = CalibrationReport {
        command: "calibrate",
        seed: ctx.seed,
        step1: step1_report,
        step2,
        step3: step3_report,
        notices,
    };

    let out = loaded.out_dir(ctx.out_override.as_deref());
    ensure_out_dir(&out)?;
    write_file(&out.join("xmap_fitted.csv"), &map.to_csv_string())?;
    if let Some((k_am, e_am)) = am_pair {
        let fitted = BatteryParams::new(ecm.capacity_ah, k_sei, e_sei, k_am, e_am)
            .map_err(|e| CliError::fit(format!("fitted parameters invalid: {e}")))?;
        write_file(&out.join("battery_fitted.toml"), &fitted.to_toml_string())?;
    }
    write_json(&out.join("calibration_report.json"), &report)?;
    for notice in &report.notices {
        eprintln!("notice: {notice}");
    }

    let mut unconverged: Vec<&str> = Vec::new();
    if !report.step1.fit.converged {
        unconverged.push("step 1");
    }
    if report.step2.fits.iter().any(|(_, f)| !f.converged) {
        unconverged.push("step 2");
    }
    if report.step3.as_ref().is_some_and(|s| !s.fit.converged) {
        unconverged.push("step 3");
    }
    if !report.step2.failures.is_empty() {
        unconverged.push("step 2 failures");
    }
    if !unconverged.is_empty() {
        return Err(CliError::fit(format!(
            "calibration incomplete: {} (outputs written for diagnosis)",
            unconverged.join(", ")
        )));
    }
    Ok(())
}
