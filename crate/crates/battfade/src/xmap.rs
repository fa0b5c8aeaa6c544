//! Calibrated overpotential lump `X(SOC, T)` as an interpolated lookup map.
//!
//! `X` stands in for the product of the overpotential factor and its scaling
//! coefficient in the SEI denominator; it is only ever known at the scattered
//! `(SOC, temperature)` points where it was calibrated. Queries anywhere else
//! are served by completing the knot set into a rectangular grid (1-D linear
//! interpolation/extrapolation along the temperature axis within each SOC
//! row), then interpolating bilinearly on that grid, extending linearly
//! outside its hull. Every returned value is clamped so that `1 + X` never
//! falls below [`MIN_ONE_PLUS_X`], which keeps the SEI denominator away from
//! zero.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::{celsius_to_kelvin, kelvin_to_celsius};

/// Smallest admissible value of `1 + X` after clamping.
pub const MIN_ONE_PLUS_X: f64 = 0.05;

/// Calibrated `X` values for the 2.3 Ah LFP cell at the seven tuned
/// operating points (SOC fraction, temperature).
pub const LFP_X_TABLE: [(f64, f64, f64); 7] = [
    (0.30, 30.0, 1.6227),
    (0.30, 45.0, 1.0331),
    (0.50, 25.0, 0.6970),
    (0.50, 45.0, 0.2841),
    (1.00, 25.0, 0.0482),
    (1.00, 45.0, 0.0331),
    (1.00, 60.0, -0.1433),
];

/// Scattered `(soc, temp) -> X` map with interpolation and clamped
/// extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct XMap {
    /// Original knots as `(soc fraction, temperature K, x)`.
    knots: Vec<(f64, f64, f64)>,
    /// Distinct knot SOCs, ascending.
    socs: Vec<f64>,
    /// Distinct knot temperatures, ascending (K).
    temps: Vec<f64>,
    /// Completed grid, row-major over `socs x temps`.
    grid: Vec<f64>,
}

impl XMap {
    /// Builds a map from `(soc fraction, temperature K, x)` knots.
    pub fn new(knots: Vec<(f64, f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config("X map must contain at least one knot".into()));
        }
        let mut seen = HashSet::new();
        for &(soc, temp, x) in &knots {
            if !(0.0..=1.0).contains(&soc) {
                return Err(Error::Config(format!(
                    "X map knot SOC must lie in [0, 1], got {soc}"
                )));
            }
            if !(temp > 0.0) {
                return Err(Error::Config(format!(
                    "X map knot temperature must be > 0 K, got {temp}"
                )));
            }
            if !x.is_finite() || !(1.0 + x > 0.0) {
                return Err(Error::Config(format!(
                    "X map knot must keep 1 + X positive, got X={x}"
                )));
            }
            if !seen.insert((soc.to_bits(), temp.to_bits())) {
                return Err(Error::Config(format!(
                    "duplicate X map knot at soc={soc}, temp={temp} K"
                )));
            }
        }

        let socs = distinct_sorted(knots.iter().map(|k| k.0));
        let temps = distinct_sorted(knots.iter().map(|k| k.1));

        // Complete each SOC row across all grid temperatures. Knot values are
        // copied bit-exactly; missing cells come from 1-D linear
        // interpolation/extrapolation along the row.
        let mut grid = Vec::with_capacity(socs.len() * temps.len());
        for &soc in &socs {
            let mut row: Vec<(f64, f64)> = knots
                .iter()
                .filter(|k| k.0 == soc)
                .map(|k| (k.1, k.2))
                .collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0));
            for &temp in &temps {
                let value = match row.iter().find(|(t, _)| *t == temp) {
                    Some(&(_, x)) => x,
                    None => lerp_series(&row, temp),
                };
                grid.push(value);
            }
        }

        Ok(Self {
            knots,
            socs,
            temps,
            grid,
        })
    }

    /// The shipped LFP map (Celsius table converted to kelvin).
    pub fn lfp_table() -> Self {
        let knots = LFP_X_TABLE
            .iter()
            .map(|&(soc, temp_c, x)| (soc, celsius_to_kelvin(temp_c), x))
            .collect();
        Self::new(knots).expect("shipped LFP X table is valid")
    }

    /// Original calibration knots as `(soc, temp K, x)`.
    pub fn knots(&self) -> &[(f64, f64, f64)] {
        &self.knots
    }

    /// Looks up `X` at an operating point.
    ///
    /// Returns the knot value exactly when `(soc, temp)` coincides with a
    /// knot; elsewhere the bilinear/extrapolated grid value, clamped so that
    /// `1 + X >= MIN_ONE_PLUS_X`.
    pub fn lookup(&self, soc: f64, temp_k: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&soc) {
            return Err(Error::Domain(format!(
                "X lookup requires soc in [0, 1], got {soc}"
            )));
        }
        if !(temp_k > 0.0) {
            return Err(Error::Domain(format!(
                "X lookup requires an absolute temperature > 0 K, got {temp_k}"
            )));
        }

        let nt = self.temps.len();
        let ns = self.socs.len();
        let raw = if ns == 1 && nt == 1 {
            self.grid[0]
        } else if ns == 1 {
            let row: Vec<(f64, f64)> = self.temps.iter().copied().zip(self.grid.iter().copied()).collect();
            lerp_series(&row, temp_k)
        } else if nt == 1 {
            let col: Vec<(f64, f64)> = self.socs.iter().copied().zip(self.grid.iter().copied()).collect();
            lerp_series(&col, soc)
        } else {
            let (t0, t1) = bracket(&self.temps, temp_k);
            let (s0, s1) = bracket(&self.socs, soc);
            let u = (temp_k - self.temps[t0]) / (self.temps[t1] - self.temps[t0]);
            let w = (soc - self.socs[s0]) / (self.socs[s1] - self.socs[s0]);
            let v00 = self.grid[s0 * nt + t0];
            let v01 = self.grid[s0 * nt + t1];
            let v10 = self.grid[s1 * nt + t0];
            let v11 = self.grid[s1 * nt + t1];
            let low = v00 * (1.0 - u) + v01 * u;
            let high = v10 * (1.0 - u) + v11 * u;
            low * (1.0 - w) + high * w
        };

        Ok(clamp_floor(raw))
    }

    /// Loads a map from CSV with header `soc_frac,temp_c,x`; Celsius is
    /// converted to kelvin on load. Lines starting with `#` are comments.
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut knots = Vec::new();
        let mut saw_header = false;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if line != "soc_frac,temp_c,x" {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected header 'soc_frac,temp_c,x', got '{line}'"),
                    ));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, lineno, "expected 3 comma-separated fields"));
            }
            let soc = parse_f64(path, lineno, fields[0], "soc_frac")?;
            let temp_c = parse_f64(path, lineno, fields[1], "temp_c")?;
            let x = parse_f64(path, lineno, fields[2], "x")?;
            knots.push((soc, celsius_to_kelvin(temp_c), x));
        }
        if !saw_header {
            return Err(Error::parse(path, 1, "empty X map file"));
        }
        Self::new(knots)
    }

    /// Serializes the knots back to the CSV schema (temperature in Celsius).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("soc_frac,temp_c,x\n");
        for &(soc, temp_k, x) in &self.knots {
            out.push_str(&format!("{},{},{}\n", soc, kelvin_to_celsius(temp_k), x));
        }
        out
    }
}

fn clamp_floor(x: f64) -> f64 {
    let floor = MIN_ONE_PLUS_X - 1.0;
    if x < floor {
        floor
    } else {
        x
    }
}

fn parse_f64(path: &Path, lineno: usize, field: &str, name: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::parse(path, lineno, format!("invalid {name} value '{field}'")))
}

fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Picks the interpolation segment for `x`, reusing the edge segment for
/// points outside the range (linear extrapolation).
fn bracket(xs: &[f64], x: f64) -> (usize, usize) {
    let n = xs.len();
    if x <= xs[0] {
        (0, 1)
    } else if x >= xs[n - 1] {
        (n - 2, n - 1)
    } else {
        let hi = xs.partition_point(|&v| v <= x);
        (hi - 1, hi)
    }
}

/// 1-D linear interpolation/extrapolation over sorted `(x, y)` pairs.
/// A single pair yields a constant; evaluation at a pair's `x` reproduces
/// its `y` exactly.
fn lerp_series(series: &[(f64, f64)], x: f64) -> f64 {
    match series.len() {
        0 => unreachable!("rows always contain at least one knot"),
        1 => series[0].1,
        _ => {
            let xs: Vec<f64> = series.iter().map(|p| p.0).collect();
            let (i0, i1) = bracket(&xs, x);
            let (x0, y0) = series[i0];
            let (x1, y1) = series[i1];
            let t = (x - x0) / (x1 - x0);
            y0 * (1.0 - t) + y1 * t
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Hand evaluations of the documented scheme on the shipped LFP table,
    // frozen as regression values.
    const PIN_SOC75_25C: f64 = 0.3726;
    const PIN_SOC50_30C: f64 = 0.593775;
    const PIN_SOC40_37_5C: f64 = 0.88341875;

    #[test]
    fn knots_reproduce_bit_exactly() {
        let map = XMap::lfp_table();
        for &(soc, temp_k, x) in map.knots() {
            assert_eq!(map.lookup(soc, temp_k).unwrap(), x);
        }
    }

    #[test]
    fn pinned_off_knot_queries_match_hand_evaluation() {
        let map = XMap::lfp_table();
        let q1 = map.lookup(0.75, celsius_to_kelvin(25.0)).unwrap();
        assert_relative_eq!(q1, PIN_SOC75_25C, epsilon = 1e-12);
        let q2 = map.lookup(0.50, celsius_to_kelvin(30.0)).unwrap();
        assert_relative_eq!(q2, PIN_SOC50_30C, epsilon = 1e-12);
        let q3 = map.lookup(0.40, celsius_to_kelvin(37.5)).unwrap();
        assert_relative_eq!(q3, PIN_SOC40_37_5C, epsilon = 1e-12);
    }

    #[test]
    fn empty_map_is_rejected() {
        assert!(matches!(XMap::new(vec![]), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_knot_is_rejected() {
        let err = XMap::new(vec![(0.5, 298.15, 0.1), (0.5, 298.15, 0.2)]);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn knot_below_denominator_limit_is_rejected() {
        assert!(XMap::new(vec![(0.5, 298.15, -1.0)]).is_err());
        assert!(XMap::new(vec![(0.5, 298.15, -1.5)]).is_err());
    }

    #[test]
    fn single_knot_map_is_constant() {
        let map = XMap::new(vec![(0.5, 298.15, 0.42)]).unwrap();
        assert_eq!(map.lookup(0.0, 250.0).unwrap(), 0.42);
        assert_eq!(map.lookup(1.0, 350.0).unwrap(), 0.42);
    }

    #[test]
    fn extrapolation_is_clamped_at_denominator_floor() {
        // Steep negative slope in temperature: far extrapolation would cross
        // 1 + X = 0 without the clamp.
        let map = XMap::new(vec![(0.5, 300.0, 0.5), (0.5, 310.0, -0.5)]).unwrap();
        let x = map.lookup(0.5, 400.0).unwrap();
        assert_eq!(x, MIN_ONE_PLUS_X - 1.0);
        assert!(1.0 + x >= MIN_ONE_PLUS_X - 1e-15);
    }

    #[test]
    fn out_of_range_queries_are_domain_errors() {
        let map = XMap::lfp_table();
        assert!(matches!(map.lookup(-0.1, 298.15), Err(Error::Domain(_))));
        assert!(matches!(map.lookup(1.1, 298.15), Err(Error::Domain(_))));
        assert!(matches!(map.lookup(0.5, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn interior_queries_stay_within_grid_range() {
        // Bilinear interpolation cannot overshoot its cell corners.
        let map = XMap::lfp_table();
        let lo = map
            .knots()
            .iter()
            .map(|k| k.2)
            .fold(f64::INFINITY, f64::min);
        let hi = map
            .knots()
            .iter()
            .map(|k| k.2)
            .fold(f64::NEG_INFINITY, f64::max);
        // Completed-grid cells can sit slightly outside the knot range; the
        // row-completion extremes bound the whole hull.
        let margin = 0.2;
        for i in 0..=20 {
            for j in 0..=20 {
                let soc = 0.30 + 0.70 * f64::from(i) / 20.0;
                let temp = 298.15 + 35.0 * f64::from(j) / 20.0;
                let x = map.lookup(soc, temp).unwrap();
                assert!(x >= lo - margin && x <= hi + margin, "x={x} at ({soc},{temp})");
            }
        }
    }

    #[test]
    fn csv_round_trip_preserves_knots() {
        let dir = std::env::temp_dir().join("battfade_xmap_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("xmap.csv");
        let map = XMap::lfp_table();
        std::fs::write(&path, map.to_csv_string()).unwrap();
        let back = XMap::from_csv_path(&path).unwrap();
        assert_eq!(back.knots().len(), 7);
        for (a, b) in map.knots().iter().zip(back.knots()) {
            assert_eq!(a.0, b.0);
            assert_relative_eq!(a.1, b.1, epsilon = 1e-9);
            assert_eq!(a.2, b.2);
        }
    }

    #[test]
    fn csv_load_converts_celsius() {
        let dir = std::env::temp_dir().join("battfade_xmap_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("xmap.csv");
        std::fs::write(&path, "soc_frac,temp_c,x\n0.5,25,0.6970\n").unwrap();
        let map = XMap::from_csv_path(&path).unwrap();
        assert_relative_eq!(map.knots()[0].1, 298.15, epsilon = 1e-12);
    }

    #[test]
    fn csv_parse_errors_name_the_line() {
        let dir = std::env::temp_dir().join("battfade_xmap_test3");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "soc_frac,temp_c,x\n0.5,25,0.6970\n0.5,oops,1\n").unwrap();
        match XMap::from_csv_path(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Whatever the knots, every query respects the denominator
            /// clamp floor.
            #[test]
            fn lookups_never_cross_the_clamp_floor(
                knots in proptest::collection::vec(
                    (0.0f64..=1.0, 250.0f64..=350.0, -0.98f64..=10.0),
                    1..8,
                ),
                queries in proptest::collection::vec(
                    (0.0f64..=1.0, 250.0f64..=350.0),
                    20,
                ),
            ) {
                let map = match XMap::new(knots) {
                    Ok(map) => map,
                    // Duplicate (soc, temp) pairs are rejected inputs.
                    Err(_) => return Ok(()),
                };
                for (soc, temp) in queries {
                    let x = map.lookup(soc, temp).unwrap();
                    prop_assert!(1.0 + x >= MIN_ONE_PLUS_X - 1e-12);
                }
            }
        }
    }
}
