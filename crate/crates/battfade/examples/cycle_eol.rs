//! Minimal end-to-end run: cycle a cell for a year, extrapolate end of life.

use battfade::profile::generate_cycle;
use battfade::scenario::{extrapolate_eol, simulate};
use battfade::{BatteryParams, EcmParams, XMap};

fn main() -> battfade::Result<()> {
    let params = BatteryParams::lfp_26650();
    let map = XMap::lfp_table();
    let ecm = EcmParams::default_lfp_26650();
    let cycle = generate_cycle(2.3, 0.20, 0.95, 0.5, 0.5, 600.0, 298.15)?;
    let year = 365.0 * 86_400.0;
    let trajectory = simulate(&cycle, &params, &map, &ecm, 0.20, year, 30.0 * 86_400.0)?;
    let eol = extrapolate_eol(&trajectory, 0.80)?;
    println!(
        "one year of 20-95% cycling at 25 C: {:.2}% fade, EOL after {:.1} years",
        trajectory.points.last().unwrap().q_total_pct,
        eol.years_to_eol
    );
    Ok(())
}
