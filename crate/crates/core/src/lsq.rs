//! Weighted least-squares engine: a damped Gauss–Newton (Levenberg–Marquardt)
//! loop for small nonlinear models and a column-scaled QR solver for models
//! that are linear in their parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::FitError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

impl DataPoint {
    pub fn new(x: f64, y: f64, sigma: f64) -> Self {
        DataPoint { x, y, sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
    pub unit: String,
}

/// Outcome of any fit: named parameters with 1σ errors, covariance and χ².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<FitParam>,
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub dof: usize,
    /// χ²/dof, or 0 when the fit is exactly determined.
    pub chi2_red: f64,
    pub converged: bool,
    pub n_iter: usize,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Value of a parameter that is known to exist.
    pub fn value(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("fit has no parameter `{name}`"))
            .value
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("fit has no parameter `{name}`"))
            .sigma
    }

    pub(crate) fn build(
        names: &[(&str, &str)],
        values: &[f64],
        cov: &DMatrix<f64>,
        chi2: f64,
        n_points: usize,
        converged: bool,
        n_iter: usize,
    ) -> FitResult {
        let k = values.len();
        let dof = n_points - k;
        FitResult {
            params: names
                .iter()
                .zip(values)
                .enumerate()
                .map(|(i, ((name, unit), &value))| FitParam {
                    name: name.to_string(),
                    value,
                    sigma: cov[(i, i)].max(0.0).sqrt(),
                    unit: unit.to_string(),
                })
                .collect(),
            covariance: (0..k)
                .map(|i| (0..k).map(|j| cov[(i, j)]).collect())
                .collect(),
            chi2,
            dof,
            chi2_red: if dof > 0 { chi2 / dof as f64 } else { 0.0 },
            converged,
            n_iter,
        }
    }
}

pub(crate) fn check_points(data: &[DataPoint], needed: usize) -> Result<(), FitError> {
    if data.len() < needed {
        return Err(FitError::TooFewPoints {
            needed,
            got: data.len(),
        });
    }
    for (i, p) in data.iter().enumerate() {
        if !(p.sigma > 0.0 && p.sigma.is_finite()) {
            return Err(FitError::BadSigma(i));
        }
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(FitError::Invalid(format!("non-finite data at point {i}")));
        }
    }
    Ok(())
}

/// A model y = f(x; p) with analytic parameter gradient.
pub trait CurveModel {
    fn n_params(&self) -> usize;
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]);
    /// Hard constraints; infeasible trial steps are rejected like uphill ones.
    fn feasible(&self, _p: &[f64]) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Converged when every |Δp_i| / |p_i| falls below this.
    pub step_tol: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            step_tol: 1e-10,
            lambda_init: 1e-3,
            lambda_up: 2.0,
            lambda_down: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub n_iter: usize,
    pub trace: Vec<f64>,
}

fn chi2_of<M: CurveModel>(model: &M, data: &[DataPoint], p: &[f64]) -> f64 {
    data.iter()
        .map(|d| ((d.y - model.eval(d.x, p)) / d.sigma).powi(2))
        .sum()
}

/// Normal-equation pieces in scaled coordinates q = p / s.
fn normal_equations<M: CurveModel>(
    model: &M,
    data: &[DataPoint],
    p: &[f64],
    scale: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let k = p.len();
    let mut jtj = DMatrix::zeros(k, k);
    let mut jtr = DVector::zeros(k);
    let mut g = vec![0.0; k];
    for d in data {
        model.gradient(d.x, p, &mut g);
        let w = 1.0 / d.sigma;
        let r = (d.y - model.eval(d.x, p)) * w;
        for i in 0..k {
            let ji = g[i] * scale[i] * w;
            jtr[i] += ji * r;
            for j in 0..=i {
                jtj[(i, j)] += ji * g[j] * scale[j] * w;
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            jtj[(j, i)] = jtj[(i, j)];
        }
    }
    (jtj, jtr)
}

fn covariance_from(jtj_scaled: &DMatrix<f64>, scale: &[f64]) -> Result<DMatrix<f64>, FitError> {
    let inv = jtj_scaled
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| jtj_scaled.clone().try_inverse())
        .ok_or_else(|| FitError::RankDeficient("singular normal matrix at optimum".into()))?;
    let k = scale.len();
    Ok(DMatrix::from_fn(k, k, |i, j| {
        inv[(i, j)] * scale[i] * scale[j]
    }))
}

/// Damped least squares with Marquardt diagonal scaling. Parameters are
/// rescaled by their starting magnitudes so the damped system is O(1).
pub fn levenberg_marquardt<M: CurveModel>(
    model: &M,
    data: &[DataPoint],
    p0: &[f64],
    opts: &LmOptions,
) -> Result<LmOutcome, FitError> {
    let k = model.n_params();
    assert_eq!(p0.len(), k, "starting point has wrong dimension");
    check_points(data, k + 1)?;
    if !model.feasible(p0) {
        return Err(FitError::BadStart);
    }
    let scale: Vec<f64> = p0
        .iter()
        .map(|v| if v.abs() > 1e-300 { v.abs() } else { 1.0 })
        .collect();
    let mut p = p0.to_vec();
    let mut chi2 = chi2_of(model, data, &p);
    if !chi2.is_finite() {
        return Err(FitError::BadStart);
    }
    let mut lambda = opts.lambda_init;
    let mut trace = vec![chi2];
    let mut converged = false;
    let mut n_iter = 0;

    while n_iter < opts.max_iter {
        n_iter += 1;
        let (jtj, jtr) = normal_equations(model, data, &p, &scale);
        let mut accepted = false;
        let mut small_step = false;
        for _ in 0..120 {
            let mut a = jtj.clone();
            for i in 0..k {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-30);
            }
            let Some(delta_q) = a
                .clone()
                .cholesky()
                .map(|c| c.solve(&jtr))
                .or_else(|| a.lu().solve(&jtr))
            else {
                lambda *= opts.lambda_up;
                continue;
            };
            let trial: Vec<f64> = (0..k).map(|i| p[i] + delta_q[i] * scale[i]).collect();
            let rel_step = (0..k)
                .map(|i| (delta_q[i] * scale[i]).abs() / p[i].abs().max(1e-300))
                .fold(0.0, f64::max);
            if model.feasible(&trial) {
                let c = chi2_of(model, data, &trial);
                if c.is_finite() && c <= chi2 {
                    p = trial;
                    chi2 = c;
                    lambda = (lambda * opts.lambda_down).max(1e-15);
                    accepted = true;
                    small_step = rel_step < opts.step_tol;
                    break;
                }
            }
            if rel_step < opts.step_tol * 1e-3 {
                // The damped step no longer moves the parameters: stationary.
                small_step = true;
                break;
            }
            lambda *= opts.lambda_up;
        }
        trace.push(chi2);
        if small_step || (accepted && chi2 == 0.0) {
            converged = true;
            break;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        return Err(FitError::NotConverged {
            iterations: n_iter,
            trace,
        });
    }
    let (jtj, _) = normal_equations(model, data, &p, &scale);
    let covariance = covariance_from(&jtj, &scale)?;
    Ok(LmOutcome {
        params: p,
        covariance,
        chi2,
        n_iter,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coef: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
}

/// Weighted linear least squares y ≈ Σ_j coef_j·basis_j(x). Columns are
/// normalised before the QR solve, which matters for bases such as 1/x⁴.
pub fn linear_least_squares(
    rows: &[Vec<f64>],
    y: &[f64],
    sigma: &[f64],
) -> Result<LinearFit, FitError> {
    let n = rows.len();
    let k = rows.first().map_or(0, |r| r.len());
    if n < k || k == 0 {
        return Err(FitError::TooFewPoints {
            needed: k + 1,
            got: n,
        });
    }
    if let Some(i) = sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(FitError::BadSigma(i));
    }
    let mut a = DMatrix::from_fn(n, k, |i, j| rows[i][j] / sigma[i]);
    let b = DVector::from_fn(n, |i, _| y[i] / sigma[i]);
    let col_scale: Vec<f64> = (0..k)
        .map(|j| {
            let m = a.column(j).amax();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        })
        .collect();
    for j in 0..k {
        a.column_mut(j).scale_mut(1.0 / col_scale[j]);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-13) {
        return Err(FitError::RankDeficient(format!(
            "condition number {:.3e}",
            smax / smin
        )));
    }
    let sol = svd
        .solve(&b, 0.0)
        .map_err(|e| FitError::RankDeficient(e.to_string()))?;
    let ata = a.transpose() * &a;
    let inv = ata
        .try_inverse()
        .ok_or_else(|| FitError::RankDeficient("singular normal matrix".into()))?;
    let coef: Vec<f64> = (0..k).map(|j| sol[j] / col_scale[j]).collect();
    let covariance = DMatrix::from_fn(k, k, |i, j| inv[(i, j)] / (col_scale[i] * col_scale[j]));
    let chi2 = (0..n)
        .map(|i| {
            let f: f64 = (0..k).map(|j| rows[i][j] * coef[j]).sum();
            ((y[i] - f) / sigma[i]).powi(2)
        })
        .sum();
    Ok(LinearFit {
        coef,
        covariance,
        chi2,
    })
}

/// Central-difference Jacobian, used to check analytic gradients.
pub fn numeric_gradient<M: CurveModel>(model: &M, x: f64, p: &[f64]) -> Vec<f64> {
    (0..p.len())
        .map(|i| {
            let h = 1e-6 * p[i].abs().max(1e-8);
            let mut pp = p.to_vec();
            let mut pm = p.to_vec();
            pp[i] += h;
            pm[i] -= h;
            (model.eval(x, &pp) - model.eval(x, &pm)) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Exp;
    impl CurveModel for Exp {
        fn n_params(&self) -> usize {
            2
        }
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            p[0] * (-x / p[1]).exp()
        }
        fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
            let e = (-x / p[1]).exp();
            out[0] = e;
            out[1] = p[0] * e * x / (p[1] * p[1]);
        }
    }

    #[test]
    fn recovers_noiseless_exponential() {
        let data: Vec<DataPoint> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.25;
                DataPoint::new(x, 3.0 * (-x / 1.7).exp(), 0.01)
            })
            .collect();
        let out = levenberg_marquardt(&Exp, &data, &[1.0, 1.0], &LmOptions::default()).unwrap();
        assert!((out.params[0] - 3.0).abs() < 1e-9);
        assert!((out.params[1] - 1.7).abs() < 1e-9);
        assert!(out.chi2 < 1e-12);
    }

    #[test]
    fn deterministic() {
        let data: Vec<DataPoint> = (0..15)
            .map(|i| {
                let x = i as f64 * 0.3;
                DataPoint::new(x, 2.0 * (-x / 0.9).exp() + 0.01 * (i as f64).sin(), 0.01)
            })
            .collect();
        let a = levenberg_marquardt(&Exp, &data, &[1.0, 1.0], &LmOptions::default()).unwrap();
        let b = levenberg_marquardt(&Exp, &data, &[1.0, 1.0], &LmOptions::default()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.chi2.to_bits(), b.chi2.to_bits());
    }

    #[test]
    fn not_converged_reports_trace() {
        let data: Vec<DataPoint> = (0..10)
            .map(|i| DataPoint::new(i as f64, (i as f64).sin(), 0.1))
            .collect();
        let opts = LmOptions {
            max_iter: 1,
            ..Default::default()
        };
        match levenberg_marquardt(&Exp, &data, &[1.0, 5.0], &opts) {
            Err(FitError::NotConverged { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn linear_fit_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.5 - 0.25 * x).collect();
        let fit = linear_least_squares(&rows, &y, &vec![0.1; 10]).unwrap();
        assert!((fit.coef[0] - 1.5).abs() < 1e-12);
        assert!((fit.coef[1] + 0.25).abs() < 1e-12);
        // σ_slope² = σ² / Σ(x − x̄)²
        let sxx: f64 = xs.iter().map(|x| (x - 4.5).powi(2)).sum();
        assert!((fit.covariance[(1, 1)] - 0.01 / sxx).abs() < 1e-14);
    }

    #[test]
    fn linear_fit_rank_deficient() {
        let rows = vec![vec![1.0, 2.0]; 5];
        let err = linear_least_squares(&rows, &[1.0; 5], &[1.0; 5]).unwrap_err();
        assert!(matches!(err, FitError::RankDeficient(_)));
    }
}
