//! From the measured minimizing potential V₀(x) back to the contact potential.
//!
//! The two are linked by x² ln(R/x) V_c″ − 2x V_c′ + V_c = V₀(x), which is
//! integrated from the largest measured distance x_n down toward contact.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::electrostatics::{ContactPotentialModel, PotentialDerivs};
use crate::error::{Error, FitError, OdeError, Result};
use crate::lsq::{
    check_points, levenberg_marquardt, linear_least_squares, CurveModel, DataPoint, FitResult,
    LmOptions,
};
use crate::models::{pfa_capacitance, Geometry};
use crate::ode::{integrate, Dopri5Options, Trajectory};

/// Trial form for V₀(x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum V0Form {
    /// V₀ + ΔV[1 − exp(−x/λ)]
    Exponential,
    /// V_log + ΔV_log ln(x/Λ). V_log and Λ only enter through
    /// V_log − ΔV_log ln Λ, so V_log is held at `v_log` and (ΔV_log, Λ) are fitted.
    Logarithmic { v_log: f64 },
}

impl V0Form {
    pub const DEFAULT_V_LOG: f64 = 0.07;

    pub fn logarithmic() -> Self {
        V0Form::Logarithmic {
            v_log: Self::DEFAULT_V_LOG,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            V0Form::Exponential => "exponential",
            V0Form::Logarithmic { .. } => "logarithmic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V0Fit {
    pub form: V0Form,
    pub model: ContactPotentialModel,
    pub fit: FitResult,
}

struct ExpLaw;

impl CurveModel for ExpLaw {
    fn n_params(&self) -> usize {
        3
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] + p[1] * (1.0 - (-x / p[2]).exp())
    }
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let e = (-x / p[2]).exp();
        out[0] = 1.0;
        out[1] = 1.0 - e;
        out[2] = -p[1] * e * x / (p[2] * p[2]);
    }
    fn feasible(&self, p: &[f64]) -> bool {
        p[2] > 0.0
    }
}

struct LogLaw {
    v_log: f64,
}

impl CurveModel for LogLaw {
    fn n_params(&self) -> usize {
        2
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        self.v_log + p[0] * (x / p[1]).ln()
    }
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        out[0] = (x / p[1]).ln();
        out[1] = -p[0] / p[1];
    }
    fn feasible(&self, p: &[f64]) -> bool {
        p[1] > 0.0
    }
}

fn exponential_start(data: &[DataPoint]) -> Result<[f64; 3]> {
    // For fixed λ the law is linear in (V₀, ΔV); scan λ on a log grid.
    let x_lo = data.iter().map(|d| d.x).fold(f64::INFINITY, f64::min);
    let x_hi = data.iter().map(|d| d.x).fold(0.0, f64::max);
    let sigma: Vec<f64> = data.iter().map(|d| d.sigma).collect();
    let y: Vec<f64> = data.iter().map(|d| d.y).collect();
    let mut best: Option<(f64, [f64; 3])> = None;
    let n = 200;
    let (a, b) = ((0.1 * x_lo).ln(), (30.0 * x_hi).ln());
    for k in 0..=n {
        let lambda = (a + (b - a) * k as f64 / n as f64).exp();
        let rows: Vec<Vec<f64>> = data
            .iter()
            .map(|d| vec![1.0, 1.0 - (-d.x / lambda).exp()])
            .collect();
        if let Ok(fit) = linear_least_squares(&rows, &y, &sigma) {
            if best.as_ref().is_none_or(|(c, _)| fit.chi2 < *c) {
                best = Some((fit.chi2, [fit.coef[0], fit.coef[1], lambda]));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| FitError::BadStart.into())
}

/// Weighted fit of a V₀(x) law to (x, V₀, σ) points.
pub fn fit_v0_model(points: &[DataPoint], form: V0Form) -> Result<V0Fit> {
    check_points(points, 4)?;
    let opts = LmOptions::default();
    match form {
        V0Form::Exponential => {
            let p0 = exponential_start(points)?;
            let out = levenberg_marquardt(&ExpLaw, points, &p0, &opts)?;
            let fit = FitResult::build(
                &[("v0", "V"), ("dv", "V"), ("lambda", "m")],
                &out.params,
                &out.covariance,
                out.chi2,
                points.len(),
                true,
                out.n_iter,
            );
            Ok(V0Fit {
                form,
                model: ContactPotentialModel::Exponential {
                    v0: out.params[0],
                    dv: out.params[1],
                    lambda: out.params[2],
                },
                fit,
            })
        }
        V0Form::Logarithmic { v_log } => {
            if let Some(i) = points.iter().position(|d| !(d.x > 0.0)) {
                return Err(Error::domain(
                    "fit_v0_model",
                    format!("logarithmic form needs x > 0 (point {i})"),
                ));
            }
            // Linear in (ΔV_log, −ΔV_log ln Λ) once V_log is fixed.
            let rows: Vec<Vec<f64>> = points.iter().map(|d| vec![d.x.ln(), 1.0]).collect();
            let y: Vec<f64> = points.iter().map(|d| d.y - v_log).collect();
            let sigma: Vec<f64> = points.iter().map(|d| d.sigma).collect();
            let lin = linear_least_squares(&rows, &y, &sigma)?;
            let dv = lin.coef[0];
            if dv == 0.0 {
                return Err(FitError::Invalid("flat data: ΔV_log = 0".into()).into());
            }
            let lam = (-lin.coef[1] / dv).exp();
            if !(lam.is_finite() && lam > 0.0) {
                return Err(FitError::BadStart.into());
            }
            let law = LogLaw { v_log };
            let out = levenberg_marquardt(&law, points, &[dv, lam], &opts)?;
            let fit = FitResult::build(
                &[("dv_log", "V"), ("big_lambda", "m")],
                &out.params,
                &out.covariance,
                out.chi2,
                points.len(),
                true,
                out.n_iter,
            );
            Ok(V0Fit {
                form,
                model: ContactPotentialModel::Logarithmic {
                    v_log,
                    dv_log: out.params[0],
                    big_lambda: out.params[1],
                },
                fit,
            })
        }
    }
}

/// Conditions imposed at the starting node x_n of the downward integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub x_n: f64,
    pub vc_at_xn: f64,
    pub vc1_at_xn: f64,
}

impl BoundaryCondition {
    /// V_c(x_n) = V₀(x_n) and V_c′(x_n) = 0.
    pub fn flat_at(v0: &ContactPotentialModel, x_n: f64) -> Result<Self> {
        Ok(BoundaryCondition {
            x_n,
            vc_at_xn: v0.eval(x_n)?.v,
            vc1_at_xn: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub stepper: Dopri5Options,
    /// Also integrate upward from x_n to this distance.
    pub x_max: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            stepper: Dopri5Options {
                rtol: 1e-12,
                ..Dopri5Options::default()
            },
            x_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeSolution {
    /// Step nodes, strictly decreasing.
    pub x_grid: Vec<f64>,
    pub vc: Vec<f64>,
    pub vc1: Vec<f64>,
    pub bc: BoundaryCondition,
    pub v0_model: ContactPotentialModel,
    pub radius: f64,
    /// Accumulated embedded error estimate on V_c, V.
    pub error_estimate: f64,
    down: Trajectory<2>,
    up: Option<Trajectory<2>>,
}

impl OdeSolution {
    pub fn coverage(&self) -> (f64, f64) {
        (self.x_grid[self.x_grid.len() - 1], self.x_grid[0])
    }

    fn state(&self, x: f64) -> Result<([f64; 2], [f64; 2])> {
        let (lo, hi) = self.coverage();
        if !(x >= lo && x <= hi) {
            return Err(OdeError::OutOfRange { x, lo, hi }.into());
        }
        let traj = match &self.up {
            Some(up) if x > self.bc.x_n => up,
            _ => &self.down,
        };
        Ok(traj.eval(x)?)
    }

    /// V_c, V_c′ from the dense output; V_c″ from the differential relation.
    pub fn eval(&self, x: f64) -> Result<PotentialDerivs> {
        let ([v, d1], _) = self.state(x)?;
        let v0 = self.v0_model.eval(x)?.v;
        let d2 = vc_second_derivative(x, self.radius, v, d1, v0);
        Ok(PotentialDerivs { v, d1, d2 })
    }

    /// V_c″ taken from the derivative of the interpolated V_c′ instead.
    pub fn interpolated_second_derivative(&self, x: f64) -> Result<f64> {
        Ok(self.state(x)?.1[1])
    }

    /// Left-hand side of the differential relation evaluated with the
    /// interpolated V_c″; equals V₀(x) for an exact solution.
    pub fn lhs(&self, x: f64) -> Result<f64> {
        let ([v, d1], [_, d2]) = self.state(x)?;
        Ok(x * x * (self.radius / x).ln() * d2 - 2.0 * x * d1 + v)
    }

    /// Spline through the nodes, for use as a tabulated contact potential.
    pub fn to_model(&self) -> Result<ContactPotentialModel> {
        let xs: Vec<f64> = self.x_grid.iter().rev().copied().collect();
        let vs: Vec<f64> = self.vc.iter().rev().copied().collect();
        ContactPotentialModel::tabulated(&xs, &vs)
    }
}

fn vc_second_derivative(x: f64, radius: f64, vc: f64, vc1: f64, v0: f64) -> f64 {
    (v0 - vc + 2.0 * x * vc1) / (x * x * (radius / x).ln())
}

fn ensure_regular(x_top: f64, radius: f64) -> Result<()> {
    if (radius / x_top).ln() < 1e-6 {
        return Err(OdeError::SingularCoefficient(x_top).into());
    }
    Ok(())
}

/// Integrate the contact-potential relation from `bc.x_n` down to `x_min`
/// (and up to `opts.x_max` when given).
pub fn solve_vc_ode(
    v0: &ContactPotentialModel,
    radius: f64,
    bc: &BoundaryCondition,
    x_min: f64,
    opts: &SolveOptions,
) -> Result<OdeSolution> {
    v0.validate()?;
    let x_n = bc.x_n;
    if !(x_min > 0.0 && x_min < x_n && x_n < radius) {
        return Err(OdeError::Interval(format!(
            "need 0 < x_min < x_n < R, got x_min = {x_min}, x_n = {x_n}, R = {radius}"
        ))
        .into());
    }
    let x_top = opts.x_max.map_or(x_n, |m| m.max(x_n));
    ensure_regular(x_top, radius)?;
    let (d_lo, d_hi) = v0.domain();
    if x_min < d_lo || x_top > d_hi {
        return Err(OdeError::OutOfRange {
            x: if x_min < d_lo { x_min } else { x_top },
            lo: d_lo,
            hi: d_hi,
        }
        .into());
    }

    let rhs = |x: f64, y: &[f64; 2]| -> std::result::Result<[f64; 2], String> {
        let v = v0.eval(x).map_err(|e| e.to_string())?.v;
        Ok([y[1], vc_second_derivative(x, radius, y[0], y[1], v)])
    };
    let y0 = [bc.vc_at_xn, bc.vc1_at_xn];
    let down = integrate(rhs, x_n, y0, x_min, &opts.stepper)?;
    let up = if x_top > x_n {
        Some(integrate(rhs, x_n, y0, x_top, &opts.stepper)?)
    } else {
        None
    };

    let mut x_grid = Vec::new();
    let mut vc = Vec::new();
    let mut vc1 = Vec::new();
    if let Some(up) = &up {
        for (x, y) in up.xs.iter().zip(&up.ys).skip(1).rev() {
            x_grid.push(*x);
            vc.push(y[0]);
            vc1.push(y[1]);
        }
    }
    for (x, y) in down.xs.iter().zip(&down.ys) {
        x_grid.push(*x);
        vc.push(y[0]);
        vc1.push(y[1]);
    }
    let error_estimate =
        down.local_error_sum[0] + up.as_ref().map_or(0.0, |u| u.local_error_sum[0]);
    Ok(OdeSolution {
        x_grid,
        vc,
        vc1,
        bc: *bc,
        v0_model: v0.clone(),
        radius,
        error_estimate,
        down,
        up,
    })
}

/// Δν_e² = [−C V_c′² + (2C′V_c′ + C V_c″)²/(2C″)] / (4π² m_eff) on the ODE
/// solution.
pub fn bias_independent_residual(
    x: f64,
    sol: &OdeSolution,
    g: &Geometry,
    m_eff: f64,
) -> Result<f64> {
    if !(m_eff > 0.0) {
        return Err(Error::domain(
            "bias_independent_residual",
            format!("m_eff = {m_eff}"),
        ));
    }
    let p = sol.eval(x)?;
    Ok(residual_from_derivs(x, &p, g.radius, m_eff)?)
}

pub(crate) fn residual_from_derivs(
    x: f64,
    p: &PotentialDerivs,
    radius: f64,
    m_eff: f64,
) -> Result<f64> {
    let c = pfa_capacitance(x, radius)?;
    let q = 2.0 * c.c1 * p.d1 + c.c * p.d2;
    Ok((-c.c * p.d1 * p.d1 + q * q / (2.0 * c.c2)) / (4.0 * PI * PI * m_eff))
}

/// Effect of moving x_n on the reconstructed V_c(x_min).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XnSensitivity {
    pub x_n: f64,
    pub fraction: f64,
    pub vc_nominal: f64,
    pub vc_lower: f64,
    pub vc_upper: f64,
    /// max |V_c(x_min; x_n(1 ± fraction)) − V_c(x_min; x_n)|, V.
    pub max_change: f64,
}

pub fn xn_sensitivity(
    v0: &ContactPotentialModel,
    radius: f64,
    x_n: f64,
    x_min: f64,
    fraction: f64,
    opts: &SolveOptions,
) -> Result<XnSensitivity> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(
            "xn_sensitivity",
            format!("fraction = {fraction}"),
        ));
    }
    let at = |xn: f64| -> Result<f64> {
        let bc = BoundaryCondition::flat_at(v0, xn)?;
        let o = SolveOptions {
            x_max: None,
            ..*opts
        };
        solve_vc_ode(v0, radius, &bc, x_min, &o)?
            .eval(x_min)
            .map(|p| p.v)
    };
    let vc_nominal = at(x_n)?;
    let vc_lower = at(x_n * (1.0 - fraction))?;
    let vc_upper = at(x_n * (1.0 + fraction))?;
    Ok(XnSensitivity {
        x_n,
        fraction,
        vc_nominal,
        vc_lower,
        vc_upper,
        max_change: (vc_lower - vc_nominal)
            .abs()
            .max((vc_upper - vc_nominal).abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsq::numeric_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const R: f64 = 30.9e-3;

    fn run1() -> ContactPotentialModel {
        ContactPotentialModel::Exponential {
            v0: 0.011,
            dv: 0.25,
            lambda: 703e-9,
        }
    }

    fn grid() -> Vec<f64> {
        (0..25).map(|i| 50e-9 + i as f64 * 40e-9).collect()
    }

    #[test]
    fn law_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = [
                rng.random_range(-0.1..0.1),
                rng.random_range(0.05..0.5),
                rng.random_range(1e-7..2e-6),
            ];
            let x = rng.random_range(3e-8..3e-6);
            let mut g = [0.0; 3];
            ExpLaw.gradient(x, &p, &mut g);
            let n = numeric_gradient(&ExpLaw, x, &p);
            for i in 0..3 {
                assert!(
                    (g[i] - n[i]).abs() <= 1e-5 * g[i].abs().max(1e-8),
                    "{g:?} {n:?}"
                );
            }
            let law = LogLaw { v_log: 0.07 };
            let q = [p[1], p[2]];
            let mut g = [0.0; 2];
            law.gradient(x, &q, &mut g);
            let n = numeric_gradient(&law, x, &q);
            for i in 0..2 {
                assert!((g[i] - n[i]).abs() <= 1e-5 * g[i].abs(), "{g:?} {n:?}");
            }
        }
    }

    #[test]
    fn exponential_exact_recovery() {
        let m = run1();
        let pts: Vec<DataPoint> = grid()
            .into_iter()
            .map(|x| DataPoint::new(x, m.eval(x).unwrap().v, 1e-3))
            .collect();
        let f = fit_v0_model(&pts, V0Form::Exponential).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(f.fit.value("v0"), 0.011) < 1e-8);
        assert!(rel(f.fit.value("dv"), 0.25) < 1e-8);
        assert!(rel(f.fit.value("lambda"), 703e-9) < 1e-8);
    }

    #[test]
    fn noisy_fit_is_consistent_and_log_form_runs() {
        let m = run1();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 2e-3).unwrap();
        let pts: Vec<DataPoint> = grid()
            .into_iter()
            .map(|x| DataPoint::new(x, m.eval(x).unwrap().v + noise.sample(&mut rng), 2e-3))
            .collect();
        let f = fit_v0_model(&pts, V0Form::Exponential).unwrap();
        for (name, truth) in [("v0", 0.011), ("dv", 0.25), ("lambda", 703e-9)] {
            let p = f.fit.param(name).unwrap();
            assert!((p.value - truth).abs() < 4.0 * p.sigma, "{name}: {p:?}");
        }
        let l = fit_v0_model(&pts, V0Form::logarithmic()).unwrap();
        assert!(l.fit.value("dv_log") > 0.0);
        assert!(l.fit.value("big_lambda") > 0.0);
        // A log law is a poorer description of exponential data.
        assert!(l.fit.chi2_red > f.fit.chi2_red);
    }

    #[test]
    fn log_form_rejects_nonpositive_x_and_few_points() {
        let mut pts: Vec<DataPoint> = (1..6)
            .map(|i| DataPoint::new(i as f64 * 1e-7, 0.1, 1e-3))
            .collect();
        pts[0].x = 0.0;
        assert!(fit_v0_model(&pts, V0Form::logarithmic()).is_err());
        assert!(fit_v0_model(&pts[1..4], V0Form::Exponential).is_err());
    }

    #[test]
    fn constant_v0_is_exact() {
        let v0 = ContactPotentialModel::Constant { v: -0.123 };
        let bc = BoundaryCondition::flat_at(&v0, 3e-6).unwrap();
        let sol = solve_vc_ode(&v0, R, &bc, 35e-9, &SolveOptions::default()).unwrap();
        for &v in &sol.vc {
            assert!((v + 0.123).abs() < 1e-12);
        }
        for x in [35e-9, 1e-7, 2.2e-6] {
            assert!((sol.eval(x).unwrap().v + 0.123).abs() < 1e-12);
            let g = Geometry::new(R, 8e-3).unwrap();
            assert_eq!(bias_independent_residual(x, &sol, &g, 4.6e-4).unwrap(), 0.0);
        }
    }

    #[test]
    fn manufactured_linear_solution() {
        // V_c = a + b x solves the relation with V₀ = a − b x.
        let (a, b) = (0.05, 4.0e4);
        let xs: Vec<f64> = (0..400).map(|i| 1e-8 + i as f64 * 1e-8).collect();
        let v0: Vec<f64> = xs.iter().map(|x| a - b * x).collect();
        let model = ContactPotentialModel::tabulated(&xs, &v0).unwrap();
        let x_n = 3e-6;
        let bc = BoundaryCondition {
            x_n,
            vc_at_xn: a + b * x_n,
            vc1_at_xn: b,
        };
        let sol = solve_vc_ode(&model, R, &bc, 35e-9, &SolveOptions::default()).unwrap();
        let max_err = sol
            .x_grid
            .iter()
            .zip(&sol.vc)
            .map(|(x, v)| (v - (a + b * x)).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "{max_err}");
        assert_eq!(sol.vc[0], bc.vc_at_xn);
        assert_eq!(sol.vc1[0], bc.vc1_at_xn);
    }

    #[test]
    fn dense_output_satisfies_relation() {
        let v0 = run1();
        let bc = BoundaryCondition::flat_at(&v0, 3e-6).unwrap();
        let sol = solve_vc_ode(&v0, R, &bc, 35e-9, &SolveOptions::default()).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..=1000 {
            let x = 35e-9 * (3e-6f64 / 35e-9).powf(k as f64 / 1000.0);
            let x = x.min(3e-6);
            worst = worst.max((sol.lhs(x).unwrap() - v0.eval(x).unwrap().v).abs());
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn grid_is_decreasing_and_covers_interval() {
        let v0 = run1();
        let bc = BoundaryCondition::flat_at(&v0, 3e-6).unwrap();
        let opts = SolveOptions {
            x_max: Some(3.5e-6),
            ..Default::default()
        };
        let sol = solve_vc_ode(&v0, R, &bc, 35e-9, &opts).unwrap();
        assert!(sol.x_grid.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(sol.coverage(), (35e-9, 3.5e-6));
        assert!(sol.eval(3.4e-6).is_ok());
        assert!(sol.eval(3.6e-6).is_err());
        assert!(sol.eval(30e-9).is_err());
        let at_bc = sol.eval(3e-6).unwrap();
        assert!((at_bc.v - bc.vc_at_xn).abs() < 1e-15);
    }

    #[test]
    fn tolerance_halving_within_error_estimate() {
        let v0 = run1();
        let bc = BoundaryCondition::flat_at(&v0, 3e-6).unwrap();
        let tight = SolveOptions::default();
        let half = SolveOptions {
            stepper: Dopri5Options {
                rtol: tight.stepper.rtol / 2.0,
                atol: tight.stepper.atol / 2.0,
                ..tight.stepper
            },
            x_max: None,
        };
        let a = solve_vc_ode(&v0, R, &bc, 35e-9, &tight).unwrap();
        let b = solve_vc_ode(&v0, R, &bc, 35e-9, &half).unwrap();
        let diff = (a.eval(35e-9).unwrap().v - b.eval(35e-9).unwrap().v).abs();
        assert!(diff < a.error_estimate, "{diff} vs {}", a.error_estimate);
    }

    #[test]
    fn interval_and_range_errors() {
        let v0 = run1();
        let bc = BoundaryCondition::flat_at(&v0, 3e-6).unwrap();
        let o = SolveOptions::default();
        assert!(solve_vc_ode(&v0, R, &bc, 4e-6, &o).is_err());
        let near_r = BoundaryCondition::flat_at(&v0, R * (1.0 - 1e-9)).unwrap();
        assert!(matches!(
            solve_vc_ode(&v0, R, &near_r, 1e-6, &o),
            Err(Error::Ode(OdeError::SingularCoefficient(_)))
        ));
        let tab = ContactPotentialModel::tabulated(&[1e-7, 1e-6, 2e-6], &[0.0, 0.1, 0.2]).unwrap();
        let bc = BoundaryCondition::flat_at(&tab, 2e-6).unwrap();
        assert!(matches!(
            solve_vc_ode(&tab, R, &bc, 5e-8, &o),
            Err(Error::Ode(OdeError::OutOfRange { .. }))
        ));
    }

    #[test]
    fn residual_positive_and_matches_finite_differences() {
        let v0 = run1();
        let g = Geometry::new(R, 8e-3).unwrap();
        let m = 4.6e-4;
        let bc = BoundaryCondition::flat_at(&v0, 3e-6).unwrap();
        let sol = solve_vc_ode(&v0, R, &bc, 35e-9, &SolveOptions::default()).unwrap();
        for k in 0..20 {
            let x = 50e-9 + k as f64 * 50e-9;
            let r = bias_independent_residual(x, &sol, &g, m).unwrap();
            assert!(r > 0.0, "x = {x}: {r}");

            // Oracle: V_c″ by central differences of the dense V_c.
            let h = 1e-3 * x;
            let f = |t: f64| sol.eval(t).unwrap().v;
            let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
            let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
            let fd = residual_from_derivs(x, &PotentialDerivs { v: f(x), d1, d2 }, R, m).unwrap();
            assert!(((fd - r) / r).abs() < 1e-4, "x = {x}: {fd} vs {r}");
        }
    }

    #[test]
    fn vc_differs_from_v0_for_varying_law() {
        let v0 = run1();
        let bc = BoundaryCondition::flat_at(&v0, 3e-6).unwrap();
        let sol = solve_vc_ode(&v0, R, &bc, 35e-9, &SolveOptions::default()).unwrap();
        let x = 100e-9;
        let gap = sol.eval(x).unwrap().v - v0.eval(x).unwrap().v;
        assert!(gap.abs() > 1e-3, "{gap}");
    }

    #[test]
    fn log_form_is_sensitive_to_xn() {
        let v0 = ContactPotentialModel::Logarithmic {
            v_log: 0.07,
            dv_log: 0.058,
            big_lambda: 140.4e-9,
        };
        let s = xn_sensitivity(&v0, R, 3e-6, 35e-9, 0.2, &SolveOptions::default()).unwrap();
        assert!(s.max_change > 1e-3, "{s:?}");
    }
}
