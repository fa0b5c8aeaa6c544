//! Current/temperature profiles: CSV ingestion, synthetic cycle generators,
//! and throughput accounting.
//!
//! Samples use zero-order hold: the current and temperature of a sample
//! apply from its time until the next sample (or the period boundary).
//! Positive current discharges the cell. Periodic profiles tile forever;
//! aperiodic profiles hold their final sample indefinitely when a simulation
//! runs past the last timestamp.

use std::path::Path;

use crate::error::{Error, Result};
use crate::{celsius_to_kelvin, kelvin_to_celsius};

/// One zero-order-hold sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    pub time_s: f64,
    pub current_a: f64,
    pub temp_k: f64,
}

/// Timestamped current + ambient-temperature series.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentProfile {
    samples: Vec<ProfileSample>,
    period_s: Option<f64>,
}

impl CurrentProfile {
    /// Validates and builds a profile. Times must increase strictly from 0;
    /// temperatures must be positive; a periodic profile's last sample must
    /// not pass the period.
    pub fn new(samples: Vec<ProfileSample>, period_s: Option<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("profile must contain at least one sample".into()));
        }
        if samples[0].time_s != 0.0 {
            return Err(Error::Domain(format!(
                "profile must start at time 0, got {}",
                samples[0].time_s
            )));
        }
        for pair in samples.windows(2) {
            if !(pair[1].time_s > pair[0].time_s) {
                return Err(Error::Domain(format!(
                    "profile times must increase strictly, got {} after {}",
                    pair[1].time_s, pair[0].time_s
                )));
            }
        }
        for s in &samples {
            if !(s.temp_k > 0.0) {
                return Err(Error::Domain(format!(
                    "profile temperature must be > 0 K, got {} at t={}",
                    s.temp_k, s.time_s
                )));
            }
            if !s.current_a.is_finite() {
                return Err(Error::Domain(format!(
                    "profile current must be finite at t={}",
                    s.time_s
                )));
            }
        }
        if let Some(p) = period_s {
            if !(p > 0.0) {
                return Err(Error::Domain(format!("period must be > 0, got {p}")));
            }
            let last = samples[samples.len() - 1].time_s;
            if last > p {
                return Err(Error::Domain(format!(
                    "last sample time {last} exceeds the period {p}"
                )));
            }
        }
        Ok(Self { samples, period_s })
    }

    pub fn samples(&self) -> &[ProfileSample] {
        &self.samples
    }

    pub fn period_s(&self) -> Option<f64> {
        self.period_s
    }

    /// Marks the profile periodic with the given period.
    pub fn into_periodic(self, period_s: f64) -> Result<Self> {
        Self::new(self.samples, Some(period_s))
    }

    /// Span covered by the sample data: the period when periodic, otherwise
    /// the last sample time.
    pub fn span_s(&self) -> f64 {
        self.period_s
            .unwrap_or_else(|| self.samples[self.samples.len() - 1].time_s)
    }

    /// Returns a copy with every current multiplied by `factor`.
    pub fn scale_current(&self, factor: f64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| ProfileSample {
                current_a: s.current_a * factor,
                ..*s
            })
            .collect();
        Self {
            samples,
            period_s: self.period_s,
        }
    }

    /// Infinite walk over constant-condition segments in time order.
    pub fn segments(&self) -> SegmentIter<'_> {
        SegmentIter {
            profile: self,
            cycle: 0.0,
            idx: 0,
        }
    }

    /// Loads a profile from CSV (`time_s,current_a[,temp_c]`). Rows without a
    /// temperature column use `default_temp_k`. A comment line
    /// `# period_s=<value>` marks the profile periodic.
    pub fn from_csv_path(path: &Path, default_temp_k: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut samples = Vec::new();
        let mut period = None;
        let mut has_temp_column = None;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(value) = comment.strip_prefix("period_s=") {
                    let p = value.trim().parse::<f64>().map_err(|_| {
                        Error::parse(path, lineno, format!("invalid period_s value '{value}'"))
                    })?;
                    period = Some(p);
                }
                continue;
            }
            if has_temp_column.is_none() {
                has_temp_column = Some(match line {
                    "time_s,current_a" => false,
                    "time_s,current_a,temp_c" => true,
                    _ => {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!(
                                "expected header 'time_s,current_a[,temp_c]', got '{line}'"
                            ),
                        ))
                    }
                });
                continue;
            }
            let with_temp = has_temp_column.unwrap();
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let expected = if with_temp { 3 } else { 2 };
            if fields.len() != expected {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {expected} fields, got {}", fields.len()),
                ));
            }
            let time_s = fields[0].parse::<f64>().map_err(|_| {
                Error::parse(path, lineno, format!("invalid time_s '{}'", fields[0]))
            })?;
            let current_a = fields[1].parse::<f64>().map_err(|_| {
                Error::parse(path, lineno, format!("invalid current_a '{}'", fields[1]))
            })?;
            let temp_k = if with_temp {
                let c = fields[2].parse::<f64>().map_err(|_| {
                    Error::parse(path, lineno, format!("invalid temp_c '{}'", fields[2]))
                })?;
                celsius_to_kelvin(c)
            } else {
                default_temp_k
            };
            if let Some(prev) = samples.last() {
                let prev: &ProfileSample = prev;
                if time_s <= prev.time_s {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("time {time_s} is not after previous time {}", prev.time_s),
                    ));
                }
            }
            samples.push(ProfileSample {
                time_s,
                current_a,
                temp_k,
            });
        }
        if has_temp_column.is_none() {
            return Err(Error::parse(path, 1, "empty profile file"));
        }
        Self::new(samples, period)
    }

    /// Serializes to the CSV schema with an explicit temperature column.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        if let Some(p) = self.period_s {
            out.push_str(&format!("# period_s={p}\n"));
        }
        out.push_str("time_s,current_a,temp_c\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{}\n",
                s.time_s,
                s.current_a,
                kelvin_to_celsius(s.temp_k)
            ));
        }
        out
    }
}

/// Constant-condition time slice `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub current_a: f64,
    pub temp_k: f64,
}

/// Walks profile segments in time order, tiling periodic profiles forever
/// and holding the last sample of an aperiodic profile indefinitely.
pub struct SegmentIter<'a> {
    profile: &'a CurrentProfile,
    cycle: f64,
    idx: usize,
}

impl SegmentIter<'_> {
    /// The segment under the cursor.
    pub fn current(&self) -> Segment {
        let samples = self.profile.samples();
        let s = samples[self.idx];
        match self.profile.period_s {
            Some(period) => {
                let base = self.cycle * period;
                let end = if self.idx + 1 < samples.len() {
                    base + samples[self.idx + 1].time_s
                } else {
                    (self.cycle + 1.0) * period
                };
                Segment {
                    start_s: base + s.time_s,
                    end_s: end,
                    current_a: s.current_a,
                    temp_k: s.temp_k,
                }
            }
            None => {
                let end = if self.idx + 1 < samples.len() {
                    samples[self.idx + 1].time_s
                } else {
                    f64::INFINITY
                };
                Segment {
                    start_s: s.time_s,
                    end_s: end,
                    current_a: s.current_a,
                    temp_k: s.temp_k,
                }
            }
        }
    }

    /// Moves to the next non-empty segment.
    pub fn advance(&mut self) {
        let samples = self.profile.samples();
        loop {
            if self.idx + 1 < samples.len() {
                self.idx += 1;
            } else if self.profile.period_s.is_some() {
                self.idx = 0;
                self.cycle += 1.0;
            } else {
                return; // terminal hold segment, stays forever
            }
            let seg = self.current();
            if seg.end_s > seg.start_s {
                return;
            }
        }
    }
}

/// Ah throughput of one period (periodic) or of the sampled span (aperiodic):
/// `sum |I_i| dt_i / 3600` under zero-order hold.
pub fn throughput(profile: &CurrentProfile) -> f64 {
    let samples = profile.samples();
    let span = profile.span_s();
    let mut ah = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let end = if i + 1 < samples.len() {
            samples[i + 1].time_s
        } else {
            span
        };
        ah += s.current_a.abs() * (end - s.time_s) / 3600.0;
    }
    ah
}

/// Signed Ah moved over one period/span; negative means net charge.
pub fn net_charge_ah(profile: &CurrentProfile) -> f64 {
    let samples = profile.samples();
    let span = profile.span_s();
    let mut ah = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let end = if i + 1 < samples.len() {
            samples[i + 1].time_s
        } else {
            span
        };
        ah += s.current_a * (end - s.time_s) / 3600.0;
    }
    ah
}

/// Periodic constant-current charge/rest/discharge/rest cycle over an SOC
/// window. Ah throughput per period is exactly
/// `2 (soc_high - soc_low) capacity`.
pub fn generate_cycle(
    capacity_ah: f64,
    soc_low: f64,
    soc_high: f64,
    charge_c: f64,
    discharge_c: f64,
    rest_s: f64,
    temp_k: f64,
) -> Result<CurrentProfile> {
    if !(capacity_ah > 0.0) {
        return Err(Error::Domain(format!("capacity must be > 0, got {capacity_ah}")));
    }
    if !(0.0 <= soc_low && soc_low < soc_high && soc_high <= 1.0) {
        return Err(Error::Domain(format!(
            "need 0 <= soc_low < soc_high <= 1, got [{soc_low}, {soc_high}]"
        )));
    }
    if !(charge_c > 0.0) || !(discharge_c > 0.0) {
        return Err(Error::Domain(format!(
            "rates must be > 0, got charge {charge_c}C, discharge {discharge_c}C"
        )));
    }
    if !(rest_s >= 0.0) {
        return Err(Error::Domain(format!("rest must be >= 0, got {rest_s}")));
    }
    let delta = soc_high - soc_low;
    let charge_dur = delta * 3600.0 / charge_c;
    let discharge_dur = delta * 3600.0 / discharge_c;

    let mut samples = Vec::new();
    let mut t = 0.0;
    let push = |t: &mut f64, current: f64, dur: f64, samples: &mut Vec<ProfileSample>| {
        if dur > 0.0 {
            samples.push(ProfileSample {
                time_s: *t,
                current_a: current,
                temp_k,
            });
            *t += dur;
        }
    };
    push(&mut t, -charge_c * capacity_ah, charge_dur, &mut samples);
    push(&mut t, 0.0, rest_s, &mut samples);
    push(&mut t, discharge_c * capacity_ah, discharge_dur, &mut samples);
    push(&mut t, 0.0, rest_s, &mut samples);
    CurrentProfile::new(samples, Some(t))
}

/// C-rate/duration shape of the synthetic HEV duty cycle: paired
/// discharge/regen pulses from 4C down to 0.25C with rests, zero net charge
/// by construction, 1080 s period.
const HEV_SHAPE: [(f64, f64); 12] = [
    (4.0, 30.0),
    (-2.0, 60.0),
    (0.0, 30.0),
    (2.0, 45.0),
    (-1.0, 90.0),
    (0.0, 30.0),
    (1.0, 90.0),
    (-0.5, 180.0),
    (0.0, 30.0),
    (0.5, 120.0),
    (-0.25, 240.0),
    (0.0, 135.0),
];

/// Fixed-shape multi-pulse charge/discharge pattern mimicking an HEV duty
/// cycle, scaled so the Ah throughput per period equals `throughput_ah`.
/// Net charge over a period is zero.
pub fn generate_hev_cycle(
    capacity_ah: f64,
    throughput_ah: f64,
    temp_k: f64,
) -> Result<CurrentProfile> {
    if !(capacity_ah > 0.0) {
        return Err(Error::Domain(format!("capacity must be > 0, got {capacity_ah}")));
    }
    if !(throughput_ah > 0.0) {
        return Err(Error::Domain(format!(
            "throughput target must be > 0, got {throughput_ah}"
        )));
    }
    let base_throughput: f64 = HEV_SHAPE
        .iter()
        .map(|&(c, dur)| c.abs() * capacity_ah * dur / 3600.0)
        .sum();
    // Every shape C-rate is a power of two, so scaling by one shared
    // amplitude keeps opposite pulses cancelling bit-exactly.
    let amp = capacity_ah * (throughput_ah / base_throughput);
    let mut samples = Vec::with_capacity(HEV_SHAPE.len());
    let mut t = 0.0;
    for &(c, dur) in &HEV_SHAPE {
        samples.push(ProfileSample {
            time_s: t,
            current_a: c * amp,
            temp_k,
        });
        t += dur;
    }
    CurrentProfile::new(samples, Some(t))
}
