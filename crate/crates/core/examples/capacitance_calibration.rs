//! Independent distance calibration from C(V_PZT) = C₀ + A ln(V⁰_PZT − V_PZT),
//! with the slope compared against −2πε₀R.

use sphereplane::fitting::fit_capacitance;
use sphereplane::lsq::DataPoint;
use sphereplane::models::pfa_capacitance;

pub fn run_example() -> sphereplane::Result<()> {
    let radius = 30.9e-3;
    let beta = 87e-9;
    let v0_pzt = 60.0;
    let stray = 180e-12;

    let points = (0..15)
        .map(|i| {
            let x = 1e-6 * (0.05f64).powf(i as f64 / 14.0);
            let v = v0_pzt - x / beta;
            Ok(DataPoint::new(
                v,
                stray + pfa_capacitance(x, radius)?.c,
                1e-15,
            ))
        })
        .collect::<sphereplane::Result<Vec<_>>>()?;

    let fit = fit_capacitance(&points, beta)?;
    println!(
        "C0 = {:.4e} F, A = {:.4e} F, V0_PZT = {:.4} V",
        fit.c0, fit.a, fit.v0_pzt
    );
    println!(
        "slope discrepancy versus -2 pi eps0 R: {:.2e}",
        fit.discrepancy(radius)
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
