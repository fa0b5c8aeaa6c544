//! Regenerates the `fixtures/` tree at the repository root: shipped
//! parameter sets, the synthetic household trace, and the synthetic
//! calibration datasets used by the demo configs.
//!
//! Everything is a pure function of the shipped coefficients, so the output
//! is byte-stable: `cargo run -p battfade --example make_fixtures`.

use std::fs;
use std::path::{Path, PathBuf};

use battfade::aging::BatteryParams;
use battfade::calibration::{synthesize_calendar_dataset, synthesize_cycling_dataset};
use battfade::ecm::EcmParams;
use battfade::profile::generate_hev_cycle;
use battfade::xmap::{XMap, LFP_X_TABLE};
use battfade::celsius_to_kelvin;

const DAYS: f64 = 86_400.0;

fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn household_week_csv() -> String {
    let mut out = String::from("time_s,pv_w,load_w,temp_c\n");
    for i in 0..(7 * 96) {
        let t = f64::from(i) * 900.0;
        let day = (t / 86_400.0).floor();
        let hour = (t - day * 86_400.0) / 3600.0;
        // Midday PV bell, morning and evening load peaks, mild diurnal
        // temperature swing; a weekly load modulation adds variety.
        let sun = ((hour - 6.0) * std::f64::consts::PI / 12.0).sin().max(0.0);
        let pv = 4000.0 * sun * sun;
        let load = 350.0
            + 1500.0 * (-((hour - 7.5) / 1.2).powi(2)).exp()
            + 2200.0 * (-((hour - 19.5) / 1.8).powi(2)).exp()
            + 250.0 * (day * std::f64::consts::TAU / 7.0).sin().max(0.0);
        let temp_c = 21.0 + 4.0 * ((hour - 14.0) * std::f64::consts::TAU / 24.0).sin();
        out.push_str(&format!("{t},{pv},{load},{temp_c}\n"));
    }
    out
}

fn calendar_dataset_csv(soc: f64, temp_c: f64, x: f64, times: &[f64]) -> String {
    let params = BatteryParams::lfp_26650();
    let ds = synthesize_calendar_dataset(
        "fixture",
        params.k_sei,
        params.e_sei,
        x,
        soc,
        celsius_to_kelvin(temp_c),
        times,
    )
    .unwrap();
    let mut out = format!("# kind=calendar\n# soc_frac={soc}\n# temp_c={temp_c}\n");
    out.push_str("time_s,loss_pct\n");
    for (t, loss) in ds.points {
        out.push_str(&format!("{t},{loss}\n"));
    }
    out
}

fn main() {
    let root = fixtures_root();
    let data = root.join("data");
    fs::create_dir_all(&data).expect("create fixtures/data");

    let params = BatteryParams::lfp_26650();
    fs::write(root.join("battery_lfp.toml"), params.to_toml_string()).unwrap();

    let map = XMap::lfp_table();
    fs::write(root.join("xmap_lfp.csv"), map.to_csv_string()).unwrap();

    let ecm = EcmParams::default_lfp_26650();
    let mut ocv = String::from("soc_frac,ocv_v\n");
    for &(soc, v) in ecm.ocv_curve() {
        ocv.push_str(&format!("{soc},{v}\n"));
    }
    fs::write(root.join("ocv_lfp.csv"), ocv).unwrap();
    fs::write(
        root.join("ecm_lfp.toml"),
        "# Illustrative 2.3 Ah 26650 LFP cell; every value is overridable.\n\
         r0_ohm = 0.010\nr1_ohm = 0.015\nc1_farad = 2000.0\ncapacity_ah = 2.3\n\
         ocv_csv = \"ocv_lfp.csv\"\n",
    )
    .unwrap();

    fs::write(root.join("household_week.csv"), household_week_csv()).unwrap();

    // Calendar datasets: a three-temperature reference set sharing one X,
    // plus one dataset per shipped X-map condition.
    let times: Vec<f64> = [30.0, 91.0, 182.0, 365.0].iter().map(|d| d * DAYS).collect();
    for temp_c in [25.0, 45.0, 60.0] {
        fs::write(
            data.join(format!("cal_ref_{temp_c:.0}c.csv")),
            calendar_dataset_csv(0.5, temp_c, 0.2841, &times),
        )
        .unwrap();
    }
    for &(soc, temp_c, x) in &LFP_X_TABLE {
        let name = format!("x_soc{:.0}_{temp_c:.0}c.csv", soc * 100.0);
        fs::write(data.join(name), calendar_dataset_csv(soc, temp_c, x, &times)).unwrap();
    }

    // Cycling datasets: HEV-style profiles at two ambient temperatures and
    // the total-fade measurements a coupled run produces under the shipped
    // coefficients.
    let cyc_times: Vec<f64> = (1..=5).map(|d| f64::from(d) * 10.0 * DAYS).collect();
    for temp_c in [25.0, 45.0] {
        let profile = generate_hev_cycle(2.3, 0.48, celsius_to_kelvin(temp_c)).unwrap();
        let profile_name = format!("hev_{temp_c:.0}c.csv");
        fs::write(data.join(&profile_name), profile.to_csv_string()).unwrap();
        let ds = synthesize_cycling_dataset(
            "fixture",
            &params,
            &map,
            &ecm,
            &profile,
            0.5,
            &cyc_times,
        )
        .unwrap();
        let mut out = format!("# kind=cycling\n# profile={profile_name}\n# initial_soc=0.5\n");
        out.push_str("time_s,loss_pct\n");
        for (t, loss) in ds.points {
            out.push_str(&format!("{t},{loss}\n"));
        }
        fs::write(data.join(format!("cyc_{temp_c:.0}c.csv")), out).unwrap();
    }

    println!("fixtures written to {}", root.display());
}
