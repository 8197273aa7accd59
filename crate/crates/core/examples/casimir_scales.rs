//! Scale estimates: the bias that mimics the ideal Casimir shift, the
//! voltage precision needed to resolve a fraction of it, the roughness
//! enhancement and the cantilever's beam-theory predictions.

use sphereplane::models::{
    cantilever_predictions, equivalent_casimir_voltage, roughness_correction,
    voltage_precision_bound, Cantilever, Geometry,
};

pub fn run_example() -> sphereplane::Result<()> {
    let g = Geometry::reference();
    println!("x [nm]   V_eq [mV]   δV for 1% [µV]   roughness factor");
    for x in [64e-9, 100e-9, 200e-9, 500e-9, 1e-6] {
        let r = roughness_correction(x, g.h2_sphere, g.h2_plane)?;
        println!(
            "{:6.0}   {:9.3}   {:14.3}   {:.4}{}",
            x * 1e9,
            equivalent_casimir_voltage(x)? * 1e3,
            voltage_precision_bound(x, 0.01)? * 1e6,
            r.factor,
            if r.perturbative {
                ""
            } else {
                " (outside expansion)"
            }
        );
    }
    let c = Cantilever::reference();
    let p = cantilever_predictions(&c)?;
    println!(
        "cantilever: nu_p = {:.1} Hz (measured {:.2}), k = {:.0} N/m, m = {:.3} g, m_eff = {:.2} g",
        p.nu_p,
        c.nu_p,
        p.stiffness,
        p.m_phys * 1e3,
        c.m_eff * 1e3
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
