//! The whole chain on a simulated run: calibration, distances, both V₀
//! branches, corrected residuals, the Casimir fit and the Lifshitz overlay.

use sphereplane::io::write_report;
use sphereplane::lifshitz::ideal_casimir_coefficient;
use sphereplane::pipeline::{analyze_run, simulate_run, AnalysisOptions, SimulationConfig, Stage};

pub fn run_example() -> sphereplane::Result<()> {
    let mut cfg = SimulationConfig::run1_like(21);
    cfg.noise.freq_sigma_hz = 0.01;
    let run = simulate_run(&cfg)?;
    let report = analyze_run(&run, &AnalysisOptions::default())?;

    for b in &report.branches {
        match b.casimir.as_ref() {
            Some(Stage::Ok { value: c }) => println!(
                "{:<12} K_Cas = {:.3e} ± {:.1e} (fit) ± {:.1e} (distance) ± {:.1e} (V₀ law), nu_p² = {:.2} Hz²",
                b.form.label(),
                c.k_cas,
                c.k_cas_sigma,
                c.k_cas_sigma_distance,
                c.k_cas_sigma_v0,
                c.nu_p_sq
            ),
            Some(Stage::Failed { message, .. }) => {
                println!("{:<12} failed: {message}", b.form.label())
            }
            None => println!("{:<12} stopped before the Casimir fit", b.form.label()),
        }
    }
    let k = ideal_casimir_coefficient(cfg.geometry.radius, cfg.cantilever.m_eff)?;
    println!("injected ideal K_Cas = {k:.3e} Hz² m⁴");
    for f in report.failures() {
        println!("stage failure: {f}");
    }

    let dir = std::env::temp_dir().join("sphereplane-residual-example");
    let files = write_report(&report, &dir)?;
    println!("wrote {} files under {}", files.len(), dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
