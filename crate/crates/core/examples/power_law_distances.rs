//! Fit K_el(V_PZT) = α(V⁰_PZT − V_PZT)^e with the exponent fixed at −2 and
//! free, then infer absolute distances from the asymptote and from the
//! curvature.

use sphereplane::fitting::{fit_power_law, infer_absolute_distance, ExponentMode};
use sphereplane::pipeline::{extract_calibration, simulate_run, SimulationConfig};

pub fn run_example() -> sphereplane::Result<()> {
    let mut cfg = SimulationConfig::run1_like(3);
    cfg.noise.k_el_rel_sigma = 0.04;
    let run = simulate_run(&cfg)?;
    let cal = extract_calibration(&run, &Default::default())?;
    let points = cal.curvature_points(0.04);
    let beta = run.metadata.beta;

    for mode in [ExponentMode::Fixed, ExponentMode::Free] {
        let f = fit_power_law(&points, mode, beta)?;
        let m = &f.model;
        println!(
            "{mode:?}: alpha = {:.4e} {}, V0_PZT = {:.3} V, e = {:.3} ± {:.3}, x0 = {:.1} nm, chi2_red = {:.2}",
            m.alpha,
            m.alpha_unit,
            m.v0_pzt,
            m.e,
            f.fit.param("e").map_or(0.0, |p| p.sigma),
            m.x0 * 1e9,
            f.fit.chi2_red
        );
    }

    let free = fit_power_law(&points, ExponentMode::Free, beta)?;
    println!("V_PZT [V]   x_true [nm]   x_asymptote [nm]   x_curvature [nm]");
    for p in &points {
        let d = infer_absolute_distance(&free.model, p.x, p.y)?;
        println!(
            "{:8.3}   {:11.1}   {:16.1}   {:16.1}",
            p.x,
            cfg.distance_grid.distance(p.x) * 1e9,
            d.x_asymptote * 1e9,
            d.x_curvature * 1e9
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
