//! Run configuration: one human-editable TOML file per workflow, with all
//! file references resolved relative to the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use battfade::aging::BatteryParams;
use battfade::ecm::EcmParams;
use battfade::error::{Error, Result};
use battfade::profile::{generate_cycle, generate_hev_cycle, CurrentProfile, ProfileSample};
use battfade::scenario::{aggressive_policy, baseline_policy, HouseholdTrace, PackConfig};
use battfade::xmap::XMap;
use battfade::celsius_to_kelvin;

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Battery aging parameters (TOML, five keys).
    pub battery: Option<String>,
    /// X lookup map (CSV `soc_frac,temp_c,x`).
    pub x_map: Option<String>,
    /// ECM parameters (TOML with inline `ocv` or an `ocv_csv` reference).
    pub ecm: Option<String>,
    /// Output directory; created if missing. Default `out`.
    pub out_dir: Option<String>,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
pub struct PackSection {
    pub series: u32,
    pub parallel: u32,
    /// Nominal per-cell voltage used to convert household power to current.
    #[serde(default = "default_cell_v")]
    pub cell_nominal_v: f64,
}

fn default_cell_v() -> f64 {
    3.3
}

impl Default for PackSection {
    fn default() -> Self {
        Self {
            series: 1,
            parallel: 1,
            cell_nominal_v: default_cell_v(),
        }
    }
}

/// How to obtain the current profile driving a run.
#[derive(Debug, Deserialize, Clone)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// Load from CSV (`time_s,current_a[,temp_c]`).
    Csv {
        path: String,
        #[serde(default = "default_temp_c")]
        default_temp_c: f64,
    },
    /// Storage at zero current and constant temperature.
    Rest { temp_c: f64 },
    /// Constant-current charge/rest/discharge/rest cycle.
    Cycle {
        soc_low: f64,
        soc_high: f64,
        charge_c: f64,
        discharge_c: f64,
        #[serde(default)]
        rest_s: f64,
        temp_c: f64,
    },
    /// Synthetic HEV-style multi-pulse cycle.
    Hev {
        throughput_ah: f64,
        temp_c: f64,
    },
    /// Dispatch policy applied to a household trace; emits the per-cell
    /// profile of the configured pack.
    Policy {
        trace: String,
        policy: PolicyKind,
        #[serde(default = "default_soc_floor")]
        soc_floor: f64,
        #[serde(default = "default_soc_target")]
        soc_target: f64,
        #[serde(default = "default_boost_c")]
        boost_c: f64,
        /// Tile the trace periodically so horizons beyond its span repeat it.
        #[serde(default = "default_true")]
        tile: bool,
    },
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Baseline,
    Aggressive,
}

fn default_temp_c() -> f64 {
    25.0
}
fn default_soc_floor() -> f64 {
    0.20
}
fn default_soc_target() -> f64 {
    0.95
}
fn default_boost_c() -> f64 {
    0.6
}
fn default_true() -> bool {
    true
}

impl ProfileSpec {
    pub fn label(&self) -> String {
        match self {
            ProfileSpec::Csv { path, .. } => format!("csv:{path}"),
            ProfileSpec::Rest { temp_c } => format!("rest@{temp_c}C"),
            ProfileSpec::Cycle {
                soc_low, soc_high, ..
            } => format!("cycle:{soc_low}-{soc_high}"),
            ProfileSpec::Hev { throughput_ah, .. } => format!("hev:{throughput_ah}Ah"),
            ProfileSpec::Policy { policy, .. } => match policy {
                PolicyKind::Baseline => "policy:baseline".into(),
                PolicyKind::Aggressive => "policy:aggressive".into(),
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub initial_soc: f64,
    pub horizon_s: f64,
    pub record_every_s: f64,
    pub profile: ProfileSpec,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GuessSection {
    pub k_sei: Option<f64>,
    pub e_sei: Option<f64>,
    pub x: Option<f64>,
    pub k_am: Option<f64>,
    pub e_am: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    /// Step-1 reference calendar datasets (one shared X).
    pub reference: Vec<String>,
    /// Step-2 calendar datasets, one X map knot each.
    #[serde(default)]
    pub x_datasets: Vec<String>,
    /// Step-3 cycling datasets.
    #[serde(default)]
    pub cycling: Vec<String>,
    #[serde(default)]
    pub guess: GuessSection,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EolSection {
    /// Extrapolate this trajectory CSV; when absent, the `[simulate]`
    /// section is run first.
    pub trajectory: Option<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.80
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub initial_soc: f64,
    pub horizon_s: f64,
    pub profile: ProfileSpec,
    /// Signed C-rate bin edges; default -4..4 in 0.25 steps.
    pub c_rate_edges: Option<Vec<f64>>,
    /// SOC bin edges; default 0..1 in 0.05 steps.
    pub soc_edges: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: PathsSection,
    pub pack: Option<PackSection>,
    pub simulate: Option<SimulateSection>,
    pub calibrate: Option<CalibrateSection>,
    pub eol: Option<EolSection>,
    pub analyze: Option<AnalyzeSection>,
}

/// A parsed config plus the directory its relative paths resolve against.
pub struct LoadedConfig {
    pub cfg: RunConfig,
    base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Ok(Self { cfg, base })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out_dir(&self, cli_override: Option<&Path>) -> PathBuf {
        match cli_override {
            Some(p) => p.to_path_buf(),
            None => self.resolve(self.cfg.paths.out_dir.as_deref().unwrap_or("out")),
        }
    }

    pub fn pack(&self) -> Result<(PackSection, PackConfig)> {
        let section = self.cfg.pack.unwrap_or_default();
        let pack = PackConfig::new(section.series, section.parallel)?;
        Ok((section, pack))
    }

    pub fn battery(&self) -> Result<BatteryParams> {
        let rel = self.cfg.paths.battery.as_deref().ok_or_else(|| {
            Error::Config("this command needs `paths.battery` in the config".into())
        })?;
        BatteryParams::from_toml_path(&self.resolve(rel))
    }

    pub fn x_map(&self) -> Result<XMap> {
        let rel = self.cfg.paths.x_map.as_deref().ok_or_else(|| {
            Error::Config("this command needs `paths.x_map` in the config".into())
        })?;
        XMap::from_csv_path(&self.resolve(rel))
    }

    pub fn ecm(&self) -> Result<EcmParams> {
        let rel = self
            .cfg
            .paths
            .ecm
            .as_deref()
            .ok_or_else(|| Error::Config("this command needs `paths.ecm` in the config".into()))?;
        EcmParams::from_toml_path(&self.resolve(rel))
    }

    /// Materializes a profile spec into the per-cell current profile a
    /// simulation consumes.
    pub fn build_profile(
        &self,
        spec: &ProfileSpec,
        ecm: &EcmParams,
        initial_soc: f64,
    ) -> Result<CurrentProfile> {
        match spec {
            ProfileSpec::Csv { path, default_temp_c } => CurrentProfile::from_csv_path(
                &self.resolve(path),
                celsius_to_kelvin(*default_temp_c),
            ),
            ProfileSpec::Rest { temp_c } => CurrentProfile::new(
                vec![ProfileSample {
                    time_s: 0.0,
                    current_a: 0.0,
                    temp_k: celsius_to_kelvin(*temp_c),
                }],
                Some(86_400.0),
            ),
            ProfileSpec::Cycle {
                soc_low,
                soc_high,
                charge_c,
                discharge_c,
                rest_s,
                temp_c,
            } => generate_cycle(
                ecm.capacity_ah,
                *soc_low,
                *soc_high,
                *charge_c,
                *discharge_c,
                *rest_s,
                celsius_to_kelvin(*temp_c),
            ),
            ProfileSpec::Hev {
                throughput_ah,
                temp_c,
            } => generate_hev_cycle(ecm.capacity_ah, *throughput_ah, celsius_to_kelvin(*temp_c)),
            ProfileSpec::Policy {
                trace,
                policy,
                soc_floor,
                soc_target,
                boost_c,
                tile,
            } => {
                let trace = HouseholdTrace::from_csv_path(&self.resolve(trace))?;
                let (section, pack) = self.pack()?;
                let pack_ecm = pack.pack_ecm(ecm);
                let nominal_v = section.cell_nominal_v * f64::from(section.series);
                let pack_profile = match policy {
                    PolicyKind::Baseline => {
                        baseline_policy(&trace, &pack_ecm, nominal_v, *soc_floor, initial_soc)?
                    }
                    PolicyKind::Aggressive => aggressive_policy(
                        &trace,
                        &pack_ecm,
                        nominal_v,
                        *soc_target,
                        *boost_c,
                        *soc_floor,
                        initial_soc,
                    )?,
                };
                let cell_profile = pack.per_cell_profile(&pack_profile);
                if *tile {
                    let samples = trace.samples();
                    // Tile with the trace's natural cadence: span plus one
                    // final sample period.
                    let last = samples[samples.len() - 1].time_s;
                    let step = if samples.len() >= 2 {
                        last - samples[samples.len() - 2].time_s
                    } else {
                        3600.0
                    };
                    cell_profile.into_periodic(last + step)
                } else {
                    Ok(cell_profile)
                }
            }
        }
    }
}

pub fn default_c_rate_edges() -> Vec<f64> {
    (-16..=16).map(|i| f64::from(i) * 0.25).collect()
}

pub fn default_soc_edges() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) * 0.05).collect()
}
