//! Sweep the bias at one distance, fit the frequency parabola and compare its
//! curvature with the proximity-force value ε₀R/(4πm x²).

use sphereplane::electrostatics::{
    coulombian_frequency_sq, electrostatic_curvature, ContactPotentialModel,
};
use sphereplane::fitting::fit_parabola;
use sphereplane::lsq::DataPoint;
use sphereplane::models::{Cantilever, Geometry};

pub fn run_example() -> sphereplane::Result<()> {
    let geometry = Geometry::reference();
    let cantilever = Cantilever::reference();
    let vc = ContactPotentialModel::Constant { v: 0.03 };
    let x = 200e-9;
    let nu0_sq = cantilever.nu_p * cantilever.nu_p;

    let samples = (-5..=5)
        .map(|i| {
            let v = 0.03 + 0.25 * i as f64;
            let nu_sq = coulombian_frequency_sq(x, v, &vc, &geometry, &cantilever, nu0_sq)?;
            // 10 mHz frequency resolution.
            Ok(DataPoint::new(v, nu_sq, 2.0 * cantilever.nu_p * 0.01))
        })
        .collect::<sphereplane::Result<Vec<_>>>()?;

    let fit = fit_parabola(&samples)?;
    let k = electrostatic_curvature(x, geometry.radius, cantilever.m_eff)?;
    let p = &fit.parabola;
    println!("vertex V0 = {:.6} V (injected 0.03 V)", p.v0);
    println!(
        "K_el = {:.6e} Hz²/V² ± {:.1e}, PFA {:.6e}",
        p.k_el,
        fit.fit.sigma("k_el"),
        k
    );
    println!("nu0² = {:.3} Hz² (nu_p² = {:.3})", p.nu0_sq, nu0_sq);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
