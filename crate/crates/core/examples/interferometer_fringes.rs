//! Recover the piezo actuation coefficient β from interferometer fringes
//! I = I₀ + I₁ sin(4πβV/λ + φ).

use sphereplane::fitting::fit_sinusoid;

pub fn run_example() -> sphereplane::Result<()> {
    let wavelength = 632.8e-9;
    let beta = 87e-9;
    let v: Vec<f64> = (0..400).map(|i| 0.05 * i as f64).collect();
    let intensity: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let wiggle = 0.002 * ((i * 7919) % 13) as f64 / 13.0;
            1.0 + 0.4 * (4.0 * std::f64::consts::PI * beta * v / wavelength + 0.3).sin() + wiggle
        })
        .collect();
    let fit = fit_sinusoid(&v, &intensity, wavelength)?;
    println!(
        "beta = {:.4} ± {:.4} nm/V (injected 87 nm/V), chi2_red = {:.2e}",
        fit.beta * 1e9,
        fit.beta_sigma * 1e9,
        fit.fit.chi2_red
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
