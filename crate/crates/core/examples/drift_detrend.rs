//! Repeated calibrations at one piezo setting over half a day: the curvature
//! follows the slow distance drift, and a moving average separates the drift
//! from the visit-to-visit scatter.

use sphereplane::electrostatics::ContactPotentialModel;
use sphereplane::fitting::detrend_moving_average;
use sphereplane::pipeline::{extract_calibration, simulate_run, DistanceGrid, SimulationConfig};

pub fn run_example() -> sphereplane::Result<()> {
    let mut cfg = SimulationConfig::run1_like(9);
    cfg.vc_model = ContactPotentialModel::Constant { v: 0.03 };
    cfg.include_casimir = false;
    cfg.drift.amplitude = 30e-9;
    cfg.noise.k_el_rel_sigma = 0.02;
    cfg.noise.freq_sigma_hz = 0.005;
    cfg.dwell_time = 40.0;
    let v = 60.0 - 500e-9 / 87e-9;
    // A 1 nV alternation keeps consecutive visits apart.
    cfg.distance_grid = DistanceGrid {
        beta: 87e-9,
        v0_pzt: 60.0,
        v_pzt: (0..48).map(|i| v + 1e-9 * (i % 2) as f64).collect(),
    };

    let run = simulate_run(&cfg)?;
    let cal = extract_calibration(&run, &Default::default())?;
    let series: Vec<(f64, f64)> = cal
        .distances
        .iter()
        .map(|d| (d.t_mean, d.parabola.parabola.k_el))
        .collect();
    let d = detrend_moving_average(&series, 7)?;
    let (lo, hi) = d
        .moving_average
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &k| {
            (l.min(k), h.max(k))
        });
    println!(
        "{} visits over {:.1} h",
        series.len(),
        series.last().map_or(0.0, |s| s.0) / 3600.0
    );
    println!(
        "moving-average envelope: {:.1} to {:.1} Hz²/V² ({:.0}% swing)",
        lo,
        hi,
        100.0 * (hi - lo) / lo
    );
    println!(
        "scatter about the trend: {:.1}% (injected 2%)",
        100.0 * d.relative_error
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
