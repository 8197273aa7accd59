//! Finite-temperature Lifshitz free energy between Drude gold plates and the
//! resulting sphere-plane frequency shift, compared with ideal mirrors.

use sphereplane::lifshitz::{
    casimir_shift_with, ideal_casimir_coefficient, ideal_plane_plane_energy, LifshitzConfig,
    LifshitzEvaluator, MaterialResponse,
};
use sphereplane::models::{Cantilever, Geometry};

pub fn run_example() -> sphereplane::Result<()> {
    let radius = Geometry::reference().radius;
    let m_eff = Cantilever::reference().m_eff;
    let gold = MaterialResponse::gold_drude();
    let k_ideal = ideal_casimir_coefficient(radius, m_eff)?;
    println!("ideal-mirror K_Cas = {k_ideal:.4e} Hz² m⁴");

    for t in [0.0, 300.0] {
        let cfg = LifshitzConfig::at_temperature(t);
        let mut eval = LifshitzEvaluator::new(&gold, &cfg)?;
        println!("T = {t} K");
        println!("  x [nm]   E/E_ideal   Δν²_Cas [Hz²]   ideal [Hz²]   Matsubara terms");
        for x in [64e-9, 100e-9, 300e-9, 1e-6] {
            let e = eval.free_energy(x)?;
            let shift = casimir_shift_with(&mut eval, x, radius, m_eff)?;
            println!(
                "  {:6.0}   {:9.4}   {:13.4e}   {:11.4e}   {}",
                x * 1e9,
                e.value / ideal_plane_plane_energy(x)?,
                shift.nu_sq,
                -k_ideal / x.powi(4),
                if t > 0.0 {
                    e.terms.to_string()
                } else {
                    "integral".into()
                }
            );
        }
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
