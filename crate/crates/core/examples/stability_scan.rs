//! Refit the curvature law while adding closer distances one at a time, and
//! probe how much the closest point alone moves α and the exponent.

use sphereplane::electrostatics::ContactPotentialModel;
use sphereplane::fitting::{displacement_sensitivity, stability_scan, ExponentMode, ScanOutcome};
use sphereplane::pipeline::{extract_calibration, simulate_run, DistanceGrid, SimulationConfig};

pub fn run_example() -> sphereplane::Result<()> {
    let mut cfg = SimulationConfig::run1_like(5);
    cfg.vc_model = ContactPotentialModel::Constant { v: 0.0 };
    cfg.include_casimir = false;
    cfg.distance_grid = DistanceGrid::spanning(87e-9, 60.0, 1e-6, 29.6e-9, 12);
    cfg.anomaly_exponent = Some(-1.7);
    let run = simulate_run(&cfg)?;
    let cal = extract_calibration(&run, &Default::default())?;
    let points = cal.curvature_points(0.04);
    let beta = run.metadata.beta;

    for mode in [ExponentMode::Fixed, ExponentMode::Free] {
        let scan = stability_scan(&points, mode, beta)?;
        println!("{mode:?} exponent");
        println!("  n   x_closest [nm]   alpha          e        V0_PZT [V]");
        for step in &scan.steps {
            if let ScanOutcome::Ok { fit } = &step.outcome {
                let m = &fit.model;
                println!(
                    "  {:2}   {:14.1}   {:.4e}   {:6.3}   {:.4}",
                    step.n_points,
                    cfg.distance_grid.distance(step.closest_v_pzt) * 1e9,
                    m.alpha,
                    m.e,
                    m.v0_pzt
                );
            }
        }
    }

    let s = displacement_sensitivity(&points, 2e-9, beta, ExponentMode::Free)?;
    let (a_fwd, a_back) = s.alpha_changes();
    let (e_fwd, e_back) = s.exponent_changes();
    println!(
        "closest point moved by ±2 nm: alpha {:+.1}% / {:+.1}%, e {:+.3} / {:+.3}",
        100.0 * a_fwd,
        100.0 * a_back,
        e_fwd,
        e_back
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
