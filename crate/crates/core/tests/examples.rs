//! Every example under examples/ runs to completion.

#[allow(dead_code)]
#[path = "../examples/bias_parabola.rs"]
mod bias_parabola;

#[allow(dead_code)]
#[path = "../examples/capacitance_calibration.rs"]
mod capacitance_calibration;

#[allow(dead_code)]
#[path = "../examples/casimir_scales.rs"]
mod casimir_scales;

#[allow(dead_code)]
#[path = "../examples/cli_workflow.rs"]
mod cli_workflow;

#[allow(dead_code)]
#[path = "../examples/contact_potential_ode.rs"]
mod contact_potential_ode;

#[allow(dead_code)]
#[path = "../examples/drift_detrend.rs"]
mod drift_detrend;

#[allow(dead_code)]
#[path = "../examples/interferometer_fringes.rs"]
mod interferometer_fringes;

#[allow(dead_code)]
#[path = "../examples/lifshitz_shift.rs"]
mod lifshitz_shift;

#[allow(dead_code)]
#[path = "../examples/power_law_distances.rs"]
mod power_law_distances;

#[allow(dead_code)]
#[path = "../examples/residual_analysis.rs"]
mod residual_analysis;

#[allow(dead_code)]
#[path = "../examples/simulate_run.rs"]
mod simulate_run;

#[allow(dead_code)]
#[path = "../examples/stability_scan.rs"]
mod stability_scan;

#[test]
fn bias_parabola_runs() {
    bias_parabola::run_example().unwrap();
}

#[test]
fn capacitance_calibration_runs() {
    capacitance_calibration::run_example().unwrap();
}

#[test]
fn casimir_scales_runs() {
    casimir_scales::run_example().unwrap();
}

#[test]
fn cli_workflow_runs() {
    cli_workflow::run_example().unwrap();
}

#[test]
fn contact_potential_ode_runs() {
    contact_potential_ode::run_example().unwrap();
}

#[test]
fn drift_detrend_runs() {
    drift_detrend::run_example().unwrap();
}

#[test]
fn interferometer_fringes_runs() {
    interferometer_fringes::run_example().unwrap();
}

#[test]
fn lifshitz_shift_runs() {
    lifshitz_shift::run_example().unwrap();
}

#[test]
fn power_law_distances_runs() {
    power_law_distances::run_example().unwrap();
}

#[test]
fn residual_analysis_runs() {
    residual_analysis::run_example().unwrap();
}

#[test]
fn simulate_run_runs() {
    simulate_run::run_example().unwrap();
}

#[test]
fn stability_scan_runs() {
    stability_scan::run_example().unwrap();
}
