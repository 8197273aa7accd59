//! Reconstruct the distance-dependent contact potential V_c(x) from the
//! measured minimizing potential V₀(x), then evaluate the bias-independent
//! electrostatic frequency shift it leaves behind.

use sphereplane::contact_potential::{
    bias_independent_residual, fit_v0_model, solve_vc_ode, xn_sensitivity, BoundaryCondition,
    SolveOptions, V0Form,
};
use sphereplane::electrostatics::ContactPotentialModel;
use sphereplane::lsq::DataPoint;
use sphereplane::models::{Cantilever, Geometry};

pub fn run_example() -> sphereplane::Result<()> {
    let geometry = Geometry::reference();
    let m_eff = Cantilever::reference().m_eff;
    let truth = ContactPotentialModel::Exponential {
        v0: 0.011,
        dv: 0.25,
        lambda: 703e-9,
    };
    let points = (0..12)
        .map(|i| {
            let x = 1e-6 * (0.0644f64).powf(i as f64 / 11.0);
            Ok(DataPoint::new(x, truth.eval(x)?.v, 1e-3))
        })
        .collect::<sphereplane::Result<Vec<_>>>()?;

    for form in [V0Form::Exponential, V0Form::logarithmic()] {
        let fit = fit_v0_model(&points, form)?;
        let x_n = 1e-6;
        let x_min = 64.4e-9;
        let bc = BoundaryCondition::flat_at(&fit.model, x_n)?;
        let opts = SolveOptions::default();
        let sol = solve_vc_ode(&fit.model, geometry.radius, &bc, x_min, &opts)?;
        let sens = xn_sensitivity(&fit.model, geometry.radius, x_n, x_min, 0.2, &opts)?;
        println!(
            "{} branch, chi2_red = {:.3}",
            form.label(),
            fit.fit.chi2_red
        );
        println!("  x [nm]   V0 [mV]   Vc [mV]   residual shift [Hz²]");
        for x in [1000e-9, 500e-9, 200e-9, 100e-9, 64.4e-9] {
            let v0 = fit.model.eval(x)?.v;
            let vc = sol.eval(x)?.v;
            let shift = bias_independent_residual(x, &sol, &geometry, m_eff)?;
            println!(
                "  {:6.1}   {:7.2}   {:7.2}   {:+.4e}",
                x * 1e9,
                v0 * 1e3,
                vc * 1e3,
                shift
            );
        }
        println!(
            "  moving x_n by ±20% changes Vc(x_min) by at most {:.3} mV",
            sens.max_change * 1e3
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
