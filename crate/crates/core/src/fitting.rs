//! Calibration fit models: bias parabola, curvature power law, logarithmic
//! capacitance, interferometer fringes, plus stability and displacement scans
//! and moving-average detrending.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constants::EPS0;
use crate::electrostatics::VoltageParabola;
use crate::error::{Error, FitError, Result};
use crate::lsq::{
    check_points, levenberg_marquardt, linear_least_squares, CurveModel, DataPoint, FitResult,
    LmOptions,
};

/// Relative K_el uncertainty assumed when none is supplied.
pub const DEFAULT_KEL_REL_SIGMA: f64 = 0.04;

// ---------------------------------------------------------------- parabola

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolaFit {
    pub parabola: VoltageParabola,
    pub fit: FitResult,
}

/// Merge samples sharing the same bias into inverse-variance weighted means.
fn aggregate_duplicates(samples: &[DataPoint]) -> Vec<DataPoint> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let mut out: Vec<DataPoint> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut sw, mut swy) = (0.0, 0.0);
        while j < sorted.len() && sorted[j].x == sorted[i].x {
            let w = 1.0 / (sorted[j].sigma * sorted[j].sigma);
            sw += w;
            swy += w * sorted[j].y;
            j += 1;
        }
        out.push(DataPoint::new(sorted[i].x, swy / sw, 1.0 / sw.sqrt()));
        i = j;
    }
    out
}

/// ν²(V) = ν₀² − K_el (V − V₀)² from (V, ν², σ) samples.
pub fn fit_parabola(samples: &[DataPoint]) -> Result<ParabolaFit> {
    check_points(samples, 3)?;
    let data = aggregate_duplicates(samples);
    if data.len() < 3 {
        return Err(FitError::RankDeficient(format!(
            "{} distinct bias values, need 3",
            data.len()
        ))
        .into());
    }
    let vbar = data.iter().map(|d| d.x).sum::<f64>() / data.len() as f64;
    let rows: Vec<Vec<f64>> = data
        .iter()
        .map(|d| {
            let u = d.x - vbar;
            vec![1.0, u, u * u]
        })
        .collect();
    let y: Vec<f64> = data.iter().map(|d| d.y).collect();
    let s: Vec<f64> = data.iter().map(|d| d.sigma).collect();
    let lin = linear_least_squares(&rows, &y, &s)?;
    let (a, b, c) = (lin.coef[0], lin.coef[1], lin.coef[2]);
    if !(c < 0.0) {
        return Err(FitError::NonConcave(-c).into());
    }
    let k_el = -c;
    let v0 = vbar - b / (2.0 * c);
    let nu0_sq = a - b * b / (4.0 * c);
    // ∂(ν₀², K_el, V₀)/∂(a, b, c)
    let jac = DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0,
            -b / (2.0 * c),
            b * b / (4.0 * c * c),
            0.0,
            0.0,
            -1.0,
            0.0,
            -1.0 / (2.0 * c),
            b / (2.0 * c * c),
        ],
    );
    let cov = &jac * &lin.covariance * jac.transpose();
    let fit = FitResult::build(
        &[("nu0_sq", "Hz^2"), ("k_el", "Hz^2 V^-2"), ("v0", "V")],
        &[nu0_sq, k_el, v0],
        &cov,
        lin.chi2,
        data.len(),
        true,
        1,
    );
    Ok(ParabolaFit {
        parabola: VoltageParabola { nu0_sq, k_el, v0 },
        fit,
    })
}

// --------------------------------------------------------------- power law

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentMode {
    /// e = −2
    Fixed,
    Free,
}

/// K_el(V_PZT) = α (V⁰_PZT − V_PZT)^e.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawModel {
    pub alpha: f64,
    /// Unit of α, which depends on e.
    pub alpha_unit: String,
    pub v0_pzt: f64,
    pub e: f64,
    pub mode: ExponentMode,
    pub beta: f64,
    /// β (V⁰_PZT − largest measured V_PZT), m.
    pub x0: f64,
    pub x0_sigma: f64,
}

impl PowerLawModel {
    pub fn k_el(&self, v_pzt: f64) -> f64 {
        self.alpha * (self.v0_pzt - v_pzt).powf(self.e)
    }

    /// β (V⁰_PZT − V_PZT).
    pub fn distance_from_asymptote(&self, v_pzt: f64) -> f64 {
        self.beta * (self.v0_pzt - v_pzt)
    }

    /// β (α/K_el)^(−1/e), which is β√(α/K_el) for e = −2.
    pub fn distance_from_curvature(&self, k_el: f64) -> Result<f64> {
        if !(k_el > 0.0) {
            return Err(Error::domain(
                "distance_from_curvature",
                format!("K_el = {k_el}"),
            ));
        }
        Ok(self.beta * (self.alpha / k_el).powf(-1.0 / self.e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub model: PowerLawModel,
    pub fit: FitResult,
}

struct PowerLaw {
    fixed: bool,
    v_max: f64,
}

impl PowerLaw {
    fn exponent(&self, p: &[f64]) -> f64 {
        if self.fixed {
            -2.0
        } else {
            p[2]
        }
    }
}

impl CurveModel for PowerLaw {
    fn n_params(&self) -> usize {
        if self.fixed {
            2
        } else {
            3
        }
    }
    fn eval(&self, v: f64, p: &[f64]) -> f64 {
        p[0] * (p[1] - v).powf(self.exponent(p))
    }
    fn gradient(&self, v: f64, p: &[f64], out: &mut [f64]) {
        let e = self.exponent(p);
        let d = p[1] - v;
        let base = d.powf(e);
        out[0] = base;
        out[1] = p[0] * e * base / d;
        if !self.fixed {
            out[2] = p[0] * base * d.ln();
        }
    }
    fn feasible(&self, p: &[f64]) -> bool {
        p[0] > 0.0 && p[1] > self.v_max && (self.fixed || p[2] < 0.0)
    }
}

fn alpha_unit(e: f64) -> String {
    if e == -2.0 {
        "Hz^2 V^-2 V_PZT^2".to_string()
    } else {
        format!("Hz^2 V^-2 V_PZT^{:.4}", -e)
    }
}

/// Starting point for the e = −2 law: K^{−1/2} is linear in V_PZT.
fn inverse_sqrt_start(points: &[DataPoint]) -> Result<[f64; 2]> {
    if let Some(i) = points.iter().position(|d| !(d.y > 0.0)) {
        return Err(FitError::Invalid(format!("K_el must be positive (point {i})")).into());
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|d| vec![1.0, d.x]).collect();
    let y: Vec<f64> = points.iter().map(|d| d.y.powf(-0.5)).collect();
    let s: Vec<f64> = points
        .iter()
        .map(|d| 0.5 * d.sigma * d.y.powf(-1.5))
        .collect();
    let lin = linear_least_squares(&rows, &y, &s)?;
    let (a, b) = (lin.coef[0], lin.coef[1]);
    if !(b < 0.0) {
        return Err(FitError::BadStart.into());
    }
    let v_max = points.iter().map(|d| d.x).fold(f64::NEG_INFINITY, f64::max);
    let v0 = (-a / b).max(v_max + 1e-6 * (1.0 + v_max.abs()));
    Ok([1.0 / (b * b), v0])
}

/// Damped least-squares fit of K_el versus V_PZT. Free-exponent fits start
/// from the fixed-exponent solution.
pub fn fit_power_law(points: &[DataPoint], mode: ExponentMode, beta: f64) -> Result<PowerLawFit> {
    if !(beta > 0.0) {
        return Err(Error::domain("fit_power_law", format!("beta = {beta}")));
    }
    let needed = match mode {
        ExponentMode::Fixed => 4,
        ExponentMode::Free => 5,
    };
    check_points(points, needed)?;
    let v_max = points.iter().map(|d| d.x).fold(f64::NEG_INFINITY, f64::max);
    let opts = LmOptions::default();
    let fixed_model = PowerLaw { fixed: true, v_max };
    let start = inverse_sqrt_start(points)?;
    let fixed = levenberg_marquardt(&fixed_model, points, &start, &opts)?;
    let (params, cov, chi2, n_iter) = match mode {
        ExponentMode::Fixed => (fixed.params, fixed.covariance, fixed.chi2, fixed.n_iter),
        ExponentMode::Free => {
            let model = PowerLaw {
                fixed: false,
                v_max,
            };
            let p0 = [fixed.params[0], fixed.params[1], -2.0];
            let out = levenberg_marquardt(&model, points, &p0, &opts)?;
            (
                out.params,
                out.covariance,
                out.chi2,
                fixed.n_iter + out.n_iter,
            )
        }
    };
    let gap = params[1] - v_max;
    if !(gap > 1e-9 * (1.0 + v_max.abs())) {
        return Err(FitError::AtBound {
            name: "v0_pzt",
            detail: format!("V0_PZT − max V_PZT = {gap}"),
        }
        .into());
    }
    let e = if mode == ExponentMode::Fixed {
        -2.0
    } else {
        params[2]
    };
    let names: &[(&str, &str)] = match mode {
        ExponentMode::Fixed => &[("alpha", "Hz^2 V^-2 V_PZT^2"), ("v0_pzt", "V")],
        ExponentMode::Free => &[("alpha", "Hz^2 V^-2 V_PZT^-e"), ("v0_pzt", "V"), ("e", "")],
    };
    let fit = FitResult::build(names, &params, &cov, chi2, points.len(), true, n_iter);
    let x0_sigma = beta * cov[(1, 1)].max(0.0).sqrt();
    Ok(PowerLawFit {
        model: PowerLawModel {
            alpha: params[0],
            alpha_unit: alpha_unit(e),
            v0_pzt: params[1],
            e,
            mode,
            beta,
            x0: beta * gap,
            x0_sigma,
        },
        fit,
    })
}

/// Both absolute-distance estimates at one calibration point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub v_pzt: f64,
    pub x_asymptote: f64,
    pub x_curvature: f64,
}

pub fn infer_absolute_distance(
    model: &PowerLawModel,
    v_pzt: f64,
    k_el: f64,
) -> Result<DistanceEstimate> {
    Ok(DistanceEstimate {
        v_pzt,
        x_asymptote: model.distance_from_asymptote(v_pzt),
        x_curvature: model.distance_from_curvature(k_el)?,
    })
}

// ------------------------------------------------------------- capacitance

/// C = C₀ + A ln[β(V⁰_PZT − V_PZT)] with the logarithm taken of the distance
/// in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceFit {
    pub c0: f64,
    pub a: f64,
    pub v0_pzt: f64,
    pub fit: FitResult,
}

impl CapacitanceFit {
    /// Relative difference of A from the proximity value −2πε₀R.
    pub fn discrepancy(&self, radius: f64) -> f64 {
        let theory = -2.0 * PI * EPS0 * radius;
        (self.a - theory) / theory
    }
}

struct LogCapacitance {
    beta: f64,
    v_max: f64,
}

impl CurveModel for LogCapacitance {
    fn n_params(&self) -> usize {
        3
    }
    fn eval(&self, v: f64, p: &[f64]) -> f64 {
        p[0] + p[1] * (self.beta * (p[2] - v)).ln()
    }
    fn gradient(&self, v: f64, p: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = (self.beta * (p[2] - v)).ln();
        out[2] = p[1] / (p[2] - v);
    }
    fn feasible(&self, p: &[f64]) -> bool {
        p[2] > self.v_max
    }
}

pub fn fit_capacitance(points: &[DataPoint], beta: f64) -> Result<CapacitanceFit> {
    if !(beta > 0.0) {
        return Err(Error::domain("fit_capacitance", format!("beta = {beta}")));
    }
    check_points(points, 4)?;
    let v_min = points.iter().map(|d| d.x).fold(f64::INFINITY, f64::min);
    let v_max = points.iter().map(|d| d.x).fold(f64::NEG_INFINITY, f64::max);
    let span = (v_max - v_min).max(1e-12);
    let y: Vec<f64> = points.iter().map(|d| d.y).collect();
    let s: Vec<f64> = points.iter().map(|d| d.sigma).collect();
    // Linear in (C₀, A) for a fixed asymptote; scan the asymptote offset.
    let mut best: Option<(f64, [f64; 3])> = None;
    for k in 0..=240 {
        let v0 = v_max + span * 10f64.powf(-5.0 + 8.0 * k as f64 / 240.0);
        let rows: Vec<Vec<f64>> = points
            .iter()
            .map(|d| vec![1.0, (beta * (v0 - d.x)).ln()])
            .collect();
        if let Ok(l) = linear_least_squares(&rows, &y, &s) {
            if best.as_ref().is_none_or(|(c, _)| l.chi2 < *c) {
                best = Some((l.chi2, [l.coef[0], l.coef[1], v0]));
            }
        }
    }
    let (_, p0) = best.ok_or(FitError::BadStart)?;
    let model = LogCapacitance { beta, v_max };
    let out = levenberg_marquardt(&model, points, &p0, &LmOptions::default())?;
    let fit = FitResult::build(
        &[("c0", "F"), ("a", "F"), ("v0_pzt", "V")],
        &out.params,
        &out.covariance,
        out.chi2,
        points.len(),
        true,
        out.n_iter,
    );
    Ok(CapacitanceFit {
        c0: out.params[0],
        a: out.params[1],
        v0_pzt: out.params[2],
        fit,
    })
}

// ---------------------------------------------------------------- fringes

/// I = I₀ + I₁ sin(2π·2βV/λ + φ); one fringe per half wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub beta: f64,
    pub beta_sigma: f64,
    pub wavelength: f64,
    pub fit: FitResult,
}

struct Fringe {
    wavelength: f64,
}

impl CurveModel for Fringe {
    fn n_params(&self) -> usize {
        4
    }
    fn eval(&self, v: f64, p: &[f64]) -> f64 {
        p[0] + p[1] * (4.0 * PI * p[2] * v / self.wavelength + p[3]).sin()
    }
    fn gradient(&self, v: f64, p: &[f64], out: &mut [f64]) {
        let k = 4.0 * PI / self.wavelength;
        let arg = k * p[2] * v + p[3];
        let (s, c) = arg.sin_cos();
        out[0] = 1.0;
        out[1] = s;
        out[2] = p[1] * c * k * v;
        out[3] = p[1] * c;
    }
    fn feasible(&self, p: &[f64]) -> bool {
        p[2] > 0.0
    }
}

/// Unweighted fit; the covariance is scaled by χ²_red.
pub fn fit_sinusoid(v: &[f64], intensity: &[f64], wavelength: f64) -> Result<SinusoidFit> {
    if v.len() != intensity.len() {
        return Err(FitError::Invalid("voltage and intensity lengths differ".into()).into());
    }
    if !(wavelength > 0.0) {
        return Err(Error::domain(
            "fit_sinusoid",
            format!("wavelength = {wavelength}"),
        ));
    }
    let data: Vec<DataPoint> = v
        .iter()
        .zip(intensity)
        .map(|(&x, &y)| DataPoint::new(x, y, 1.0))
        .collect();
    check_points(&data, 5)?;
    let v_min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let v_max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = v_max - v_min;
    if !(span > 0.0) {
        return Err(FitError::PeriodNotResolvable.into());
    }
    // Periodogram over β from one period across the span up to the point
    // density limit, oversampled tenfold.
    let b_lo = wavelength / (2.0 * span);
    let b_hi = b_lo * (data.len() as f64 / 2.0);
    let n_grid = ((b_hi / b_lo) * 10.0).ceil() as usize + 1;
    let y: Vec<f64> = data.iter().map(|d| d.y).collect();
    let ones = vec![1.0; data.len()];
    let mut best: Option<(f64, [f64; 4])> = None;
    for k in 0..n_grid {
        let beta = b_lo + (b_hi - b_lo) * k as f64 / (n_grid - 1).max(1) as f64;
        let w = 4.0 * PI * beta / wavelength;
        let rows: Vec<Vec<f64>> = v
            .iter()
            .map(|x| vec![1.0, (w * x).sin(), (w * x).cos()])
            .collect();
        if let Ok(l) = linear_least_squares(&rows, &y, &ones) {
            if best.as_ref().is_none_or(|(c, _)| l.chi2 < *c) {
                let amp = l.coef[1].hypot(l.coef[2]);
                let phi = l.coef[2].atan2(l.coef[1]);
                best = Some((l.chi2, [l.coef[0], amp, beta, phi]));
            }
        }
    }
    let (_, p0) = best.ok_or(FitError::PeriodNotResolvable)?;
    let model = Fringe { wavelength };
    let out = levenberg_marquardt(&model, &data, &p0, &LmOptions::default())?;
    let mut p = out.params.clone();
    let period_v = wavelength / (2.0 * p[2]);
    if period_v > span {
        return Err(FitError::PeriodNotResolvable.into());
    }
    if p[1] < 0.0 {
        p[1] = -p[1];
        p[3] += PI;
    }
    p[3] = (p[3] + PI).rem_euclid(2.0 * PI) - PI;
    let dof = (data.len() - 4) as f64;
    let cov = &out.covariance * (out.chi2 / dof);
    let fit = FitResult::build(
        &[("i0", ""), ("i1", ""), ("beta", "m/V"), ("phi", "rad")],
        &p,
        &cov,
        out.chi2,
        data.len(),
        true,
        out.n_iter,
    );
    Ok(SinusoidFit {
        beta: p[2],
        beta_sigma: fit.sigma("beta"),
        wavelength,
        fit,
    })
}

// ------------------------------------------------------------------ scans

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScanOutcome {
    Ok { fit: PowerLawFit },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanStep {
    /// Points included, counted from the largest distance.
    pub n_points: usize,
    /// V_PZT of the closest point included.
    pub closest_v_pzt: f64,
    pub outcome: ScanOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityScan {
    pub mode: ExponentMode,
    pub steps: Vec<ScanStep>,
}

impl StabilityScan {
    /// (n_points, value) for a fitted quantity across successful steps.
    pub fn trajectory(&self, f: impl Fn(&PowerLawFit) -> f64) -> Vec<(usize, f64)> {
        self.steps
            .iter()
            .filter_map(|s| match &s.outcome {
                ScanOutcome::Ok { fit } => Some((s.n_points, f(fit))),
                ScanOutcome::Failed { .. } => None,
            })
            .collect()
    }
}

/// Refit with progressively more points, starting at the largest distances
/// (smallest V_PZT).
pub fn stability_scan(
    points: &[DataPoint],
    mode: ExponentMode,
    beta: f64,
) -> Result<StabilityScan> {
    let min = match mode {
        ExponentMode::Fixed => 4,
        ExponentMode::Free => 5,
    };
    check_points(points, min)?;
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let steps = (min..=sorted.len())
        .map(|n| {
            let outcome = match fit_power_law(&sorted[..n], mode, beta) {
                Ok(fit) => ScanOutcome::Ok { fit },
                Err(e) => ScanOutcome::Failed {
                    reason: e.to_string(),
                },
            };
            ScanStep {
                n_points: n,
                closest_v_pzt: sorted[n - 1].x,
                outcome,
            }
        })
        .collect();
    Ok(StabilityScan { mode, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSensitivity {
    pub delta_x: f64,
    /// Closest point moved toward the plane by delta_x.
    pub forward: PowerLawFit,
    pub nominal: PowerLawFit,
    pub backward: PowerLawFit,
}

impl DisplacementSensitivity {
    /// Relative change of α for the forward and backward refits.
    pub fn alpha_changes(&self) -> (f64, f64) {
        let a = self.nominal.model.alpha;
        (
            (self.forward.model.alpha - a) / a,
            (self.backward.model.alpha - a) / a,
        )
    }

    pub fn exponent_changes(&self) -> (f64, f64) {
        let e = self.nominal.model.e;
        (self.forward.model.e - e, self.backward.model.e - e)
    }
}

/// Refits with the closest-approach point displaced by ±delta_x, applied as a
/// V_PZT shift of ±delta_x/β on that point alone.
pub fn displacement_sensitivity(
    points: &[DataPoint],
    delta_x: f64,
    beta: f64,
    mode: ExponentMode,
) -> Result<DisplacementSensitivity> {
    if !(delta_x >= 0.0) {
        return Err(Error::domain(
            "displacement_sensitivity",
            format!("delta_x = {delta_x}"),
        ));
    }
    if points.is_empty() {
        return Err(FitError::TooFewPoints { needed: 5, got: 0 }.into());
    }
    let closest = points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.x.total_cmp(&b.1.x))
        .map(|(i, _)| i)
        .expect("non-empty");
    let shifted = |dv: f64| {
        let mut p = points.to_vec();
        p[closest].x += dv;
        p
    };
    let dv = delta_x / beta;
    Ok(DisplacementSensitivity {
        delta_x,
        forward: fit_power_law(&shifted(dv), mode, beta)?,
        nominal: fit_power_law(points, mode, beta)?,
        backward: fit_power_law(&shifted(-dv), mode, beta)?,
    })
}

// -------------------------------------------------------------- detrending

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detrended {
    pub window: usize,
    pub moving_average: Vec<f64>,
    /// (t, K_el − moving average)
    pub residuals: Vec<(f64, f64)>,
    /// Standard deviation of residual/moving-average.
    pub relative_error: f64,
}

/// Centred moving average over `window` samples that include the point
/// itself; windows are shifted inward at the ends.
pub fn detrend_moving_average(series: &[(f64, f64)], window: usize) -> Result<Detrended> {
    if window < 2 {
        return Err(Error::domain(
            "detrend_moving_average",
            format!("window = {window}"),
        ));
    }
    if series.len() <= window {
        return Err(FitError::TooFewPoints {
            needed: window + 1,
            got: series.len(),
        }
        .into());
    }
    let n = series.len();
    let half = window / 2;
    let mut ma = Vec::with_capacity(n);
    for i in 0..n {
        let start = i.saturating_sub(half).min(n - window);
        let s: f64 = series[start..start + window].iter().map(|p| p.1).sum();
        ma.push(s / window as f64);
    }
    let residuals: Vec<(f64, f64)> = series
        .iter()
        .zip(&ma)
        .map(|(p, m)| (p.0, p.1 - m))
        .collect();
    let rel: Vec<f64> = residuals.iter().zip(&ma).map(|(r, m)| r.1 / m).collect();
    let mean = rel.iter().sum::<f64>() / n as f64;
    let var = rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(Detrended {
        window,
        moving_average: ma,
        residuals,
        relative_error: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsq::numeric_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const BETA: f64 = 87e-9;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn parabola_samples(vs: &[f64], sigma: f64) -> Vec<DataPoint> {
        vs.iter()
            .map(|&v| DataPoint::new(v, 790_000.0 - 2e4 * (v + 0.15).powi(2), sigma))
            .collect()
    }

    #[test]
    fn parabola_exact_recovery() {
        for vs in [
            vec![-0.3, 0.0, 0.2],
            vec![-0.5, -0.4, -0.1, 0.05, 0.3, 0.31],
        ] {
            let f = fit_parabola(&parabola_samples(&vs, 0.05)).unwrap();
            assert!(rel(f.parabola.nu0_sq, 790_000.0) < 1e-9);
            assert!(rel(f.parabola.k_el, 2e4) < 1e-9);
            assert!(rel(f.parabola.v0, -0.15) < 1e-9);
        }
    }

    #[test]
    fn parabola_translation_and_duplicates() {
        let vs = [-0.4, -0.2, 0.0, 0.1, 0.25];
        let a = fit_parabola(&parabola_samples(&vs, 0.05)).unwrap();
        let shifted: Vec<DataPoint> = parabola_samples(&vs, 0.05)
            .into_iter()
            .map(|mut p| {
                p.x += 0.7;
                p
            })
            .collect();
        let b = fit_parabola(&shifted).unwrap();
        assert!((b.parabola.v0 - a.parabola.v0 - 0.7).abs() < 1e-12);

        let dup = parabola_samples(&[0.1, 0.1, 0.1, 0.2, 0.2], 0.05);
        assert!(matches!(
            fit_parabola(&dup),
            Err(Error::Fit(FitError::RankDeficient(_)))
        ));
        let mut upward = parabola_samples(&vs, 0.05);
        for p in &mut upward {
            p.y = -p.y;
        }
        assert!(matches!(
            fit_parabola(&upward),
            Err(Error::Fit(FitError::NonConcave(_)))
        ));
    }

    #[test]
    fn parabola_monte_carlo_coverage() {
        let vs: Vec<f64> = (0..11).map(|i| -0.6 + 0.09 * i as f64).collect();
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut inside = [0usize; 3];
        let trials = 1000;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<DataPoint> = parabola_samples(&vs, 0.05)
                .into_iter()
                .map(|mut p| {
                    p.y += noise.sample(&mut rng);
                    p
                })
                .collect();
            let f = fit_parabola(&pts).unwrap();
            for (i, (name, truth)) in [("nu0_sq", 790_000.0), ("k_el", 2e4), ("v0", -0.15)]
                .iter()
                .enumerate()
            {
                let p = f.fit.param(name).unwrap();
                if (p.value - truth).abs() <= 3.0 * p.sigma {
                    inside[i] += 1;
                }
            }
        }
        for c in inside {
            assert!(c as f64 / trials as f64 >= 0.99, "{inside:?}");
        }
    }

    fn power_points(alpha: f64, v0: f64, e: f64, vs: &[f64], rel_sigma: f64) -> Vec<DataPoint> {
        vs.iter()
            .map(|&v| {
                let k = alpha * (v0 - v).powf(e);
                DataPoint::new(v, k, rel_sigma * k)
            })
            .collect()
    }

    /// V_PZT grid for distances from x_closest to ~1 µm.
    fn grid(v0: f64, x_closest: f64, n: usize) -> Vec<f64> {
        let d_min = x_closest / BETA;
        let d_max = 1e-6 / BETA;
        (0..n)
            .map(|i| v0 - (d_max - (d_max - d_min) * i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn power_law_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = [
                rng.random_range(1e3..1e4),
                rng.random_range(60.0..80.0),
                rng.random_range(-2.2..-1.5),
            ];
            let v = rng.random_range(40.0..59.0);
            let m = PowerLaw {
                fixed: false,
                v_max: 59.0,
            };
            let mut g = [0.0; 3];
            m.gradient(v, &p, &mut g);
            let n = numeric_gradient(&m, v, &p);
            for i in 0..3 {
                assert!(rel(g[i], n[i]) < 1e-5, "{g:?} {n:?}");
            }
            let c = LogCapacitance {
                beta: BETA,
                v_max: 59.0,
            };
            let q = [193.9e-12, -1.757e-12, p[1]];
            let mut g = [0.0; 3];
            c.gradient(v, &q, &mut g);
            let n = numeric_gradient(&c, v, &q);
            for i in 0..3 {
                assert!(rel(g[i], n[i]) < 1e-5, "{g:?} {n:?}");
            }
            let f = Fringe { wavelength: 781e-9 };
            let q = [
                1.0,
                0.5,
                rng.random_range(5e-8..1.2e-7),
                rng.random_range(-3.0..3.0),
            ];
            let mut g = [0.0; 4];
            f.gradient(v, &q, &mut g);
            let n = numeric_gradient(&f, v, &q);
            for i in 0..4 {
                assert!(
                    (g[i] - n[i]).abs() <= 1e-5 * g[i].abs().max(1e-3),
                    "{g:?} {n:?}"
                );
            }
        }
    }

    #[test]
    fn fixed_power_law_exact_recovery() {
        let v0 = 70.0;
        let vs = grid(v0, 64.4e-9, 12);
        let pts = power_points(6200.0, v0, -2.0, &vs, 0.04);
        let f = fit_power_law(&pts, ExponentMode::Fixed, BETA).unwrap();
        assert!(rel(f.model.alpha, 6200.0) < 1e-8);
        assert!(rel(f.model.v0_pzt, v0) < 1e-10);
        assert!(rel(f.model.x0, 64.4e-9) < 1e-6);
        assert!(f.fit.chi2_red < 1e-12);
        let free = fit_power_law(&pts, ExponentMode::Free, BETA).unwrap();
        assert!((free.model.e + 2.0).abs() < 1e-8);
        // Two distance estimates coincide on exact inverse-square data.
        for p in &pts {
            let d = infer_absolute_distance(&f.model, p.x, p.y).unwrap();
            assert!(rel(d.x_curvature, d.x_asymptote) < 1e-9);
        }
    }

    #[test]
    fn power_law_scale_property() {
        let v0 = 70.0;
        let vs = grid(v0, 40e-9, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<DataPoint> = power_points(2805.0, v0, -1.7, &vs, 0.04)
            .into_iter()
            .map(|mut p| {
                p.y *= 1.0 + 0.04 * rng.random_range(-1.0..1.0);
                p
            })
            .collect();
        let a = fit_power_law(&pts, ExponentMode::Free, BETA).unwrap();
        let scaled: Vec<DataPoint> = pts
            .iter()
            .map(|p| DataPoint::new(p.x, 3.0 * p.y, 3.0 * p.sigma))
            .collect();
        let b = fit_power_law(&scaled, ExponentMode::Free, BETA).unwrap();
        assert!(rel(b.model.alpha, 3.0 * a.model.alpha) < 1e-7);
        assert!((b.model.e - a.model.e).abs() < 1e-7);
        assert!((b.model.v0_pzt - a.model.v0_pzt).abs() < 1e-7);
    }

    #[test]
    fn anomalous_exponent_recovery() {
        let x0 = 29.6e-9;
        let v0 = 70.0;
        let vs = grid(v0, x0, 20);
        let noise = Normal::new(0.0, 0.04).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<DataPoint> = power_points(2805.0, v0, -1.7, &vs, 0.04)
            .into_iter()
            .map(|mut p| {
                p.y *= 1.0 + noise.sample(&mut rng);
                p
            })
            .collect();
        let free = fit_power_law(&pts, ExponentMode::Free, BETA).unwrap();
        let fixed = fit_power_law(&pts, ExponentMode::Fixed, BETA).unwrap();
        assert!((free.model.e + 1.7).abs() < 0.04, "{}", free.model.e);
        assert!(fixed.fit.chi2_red > 5.0 * free.fit.chi2_red);
    }

    #[test]
    fn power_law_covariance_calibration() {
        let v0 = 70.0;
        let vs = grid(v0, 40e-9, 12);
        let noise = Normal::new(0.0, 0.04).unwrap();
        let trials = 500;
        let mut inside = [0usize; 3];
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let pts: Vec<DataPoint> = power_points(2805.0, v0, -1.7, &vs, 0.04)
                .into_iter()
                .map(|mut p| {
                    p.y += p.sigma * noise.sample(&mut rng) / 0.04;
                    p
                })
                .collect();
            let f = fit_power_law(&pts, ExponentMode::Free, BETA).unwrap();
            for (i, (name, truth)) in [("alpha", 2805.0), ("v0_pzt", v0), ("e", -1.7)]
                .iter()
                .enumerate()
            {
                let p = f.fit.param(name).unwrap();
                if (p.value - truth).abs() <= p.sigma {
                    inside[i] += 1;
                }
            }
        }
        for c in inside {
            let frac = c as f64 / trials as f64;
            assert!((frac - 0.68).abs() < 0.05, "{inside:?}");
        }
    }

    #[test]
    fn power_law_errors() {
        let pts = power_points(6200.0, 70.0, -2.0, &grid(70.0, 64e-9, 4), 0.04);
        assert!(fit_power_law(&pts, ExponentMode::Free, BETA).is_err());
        assert!(fit_power_law(&pts, ExponentMode::Fixed, BETA).is_ok());
        assert!(fit_power_law(&pts, ExponentMode::Fixed, 0.0).is_err());
    }

    fn cap_points(vs: &[f64], sigma: f64) -> Vec<DataPoint> {
        vs.iter()
            .map(|&v| DataPoint::new(v, 193.9e-12 - 1.757e-12 * (BETA * (69.31 - v)).ln(), sigma))
            .collect()
    }

    #[test]
    fn capacitance_recovery_and_discrepancy() {
        let vs: Vec<f64> = (0..30)
            .map(|i| 69.31 - (3e-6 - i as f64 * 0.1e-6) / BETA)
            .collect();
        let f = fit_capacitance(&cap_points(&vs, 0.01e-12), BETA).unwrap();
        assert!(rel(f.c0, 193.9e-12) < 1e-7);
        assert!(rel(f.a, -1.757e-12) < 1e-7);
        assert!(rel(f.v0_pzt, 69.31) < 1e-9);
        let d = f.discrepancy(30.9e-3);
        assert!((d - 0.0221).abs() < 5e-4, "{d}");
        let vs_theory: f64 = (-1.757e-12 + 1.72e-12) / -1.72e-12;
        assert!((vs_theory - 0.021).abs() < 0.002);
    }

    #[test]
    fn capacitance_uncertainty_scales_with_noise() {
        let vs: Vec<f64> = (0..30)
            .map(|i| 69.31 - (3e-6 - i as f64 * 0.1e-6) / BETA)
            .collect();
        let a = fit_capacitance(&cap_points(&vs, 0.01e-12), BETA).unwrap();
        let b = fit_capacitance(&cap_points(&vs, 0.02e-12), BETA).unwrap();
        for name in ["c0", "a", "v0_pzt"] {
            assert!(rel(b.fit.sigma(name), 2.0 * a.fit.sigma(name)) < 1e-6);
        }
    }

    fn fringes(
        beta: f64,
        phi: f64,
        v_span: f64,
        n: usize,
        seed: u64,
        noise: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let v: Vec<f64> = (0..n).map(|i| v_span * i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = v
            .iter()
            .map(|x| {
                let clean = 2.0 + 0.8 * (4.0 * PI * beta * x / 781e-9 + phi).sin();
                clean
                    + if noise > 0.0 {
                        dist.sample(&mut rng)
                    } else {
                        0.0
                    }
            })
            .collect();
        (v, y)
    }

    #[test]
    fn sinusoid_recovers_beta() {
        let (v, y) = fringes(87e-9, 0.3, 10.0, 80, 1, 0.02);
        let f = fit_sinusoid(&v, &y, 781e-9).unwrap();
        assert!(rel(f.beta, 87e-9) < 1e-3, "{}", f.beta);
        let (v, y) = fringes(87e-9, 2.1, 10.0, 80, 1, 0.0);
        let g = fit_sinusoid(&v, &y, 781e-9).unwrap();
        assert!(rel(g.beta, 87e-9) < 1e-9);
        assert!((g.fit.value("phi") - 2.1).abs() < 1e-8);
    }

    #[test]
    fn sinusoid_needs_a_full_period() {
        // One period spans 781/(2·87) ≈ 4.5 V.
        let (v, y) = fringes(87e-9, 0.3, 3.0, 40, 2, 0.0);
        assert!(fit_sinusoid(&v, &y, 781e-9).is_err());
    }

    #[test]
    fn sinusoid_more_periods_tighter_beta() {
        let mut one = 0.0;
        let mut two = 0.0;
        for seed in 0..50 {
            let (v, y) = fringes(87e-9, 0.3, 4.6, 40, seed, 0.05);
            one += fit_sinusoid(&v, &y, 781e-9).unwrap().beta_sigma;
            let (v, y) = fringes(87e-9, 0.3, 9.2, 40, seed, 0.05);
            two += fit_sinusoid(&v, &y, 781e-9).unwrap().beta_sigma;
        }
        assert!(two < one);
    }

    #[test]
    fn scan_counts_and_flatness() {
        let vs = grid(70.0, 64e-9, 5);
        let pts = power_points(6200.0, 70.0, -2.0, &vs, 0.04);
        let s = stability_scan(&pts, ExponentMode::Fixed, BETA).unwrap();
        assert_eq!(s.steps.len(), 2);
        let vs = grid(70.0, 64e-9, 12);
        let pts = power_points(6200.0, 70.0, -2.0, &vs, 0.04);
        let s = stability_scan(&pts, ExponentMode::Fixed, BETA).unwrap();
        let alpha = s.trajectory(|f| f.model.alpha);
        assert_eq!(alpha.len(), 9);
        for (_, a) in &alpha {
            assert!(rel(*a, 6200.0) < 1e-7);
        }
        assert!(s
            .steps
            .windows(2)
            .all(|w| w[1].closest_v_pzt > w[0].closest_v_pzt));
    }

    #[test]
    fn scan_fixed_drifts_free_converges_on_anomalous_data() {
        let vs = grid(70.0, 29.6e-9, 16);
        let pts = power_points(2805.0, 70.0, -1.7, &vs, 0.04);
        let fixed = stability_scan(&pts, ExponentMode::Fixed, BETA).unwrap();
        let free = stability_scan(&pts, ExponentMode::Free, BETA).unwrap();
        let v0_fixed = fixed.trajectory(|f| f.model.v0_pzt);
        let v0_free = free.trajectory(|f| f.model.v0_pzt);
        let spread = |t: &[(usize, f64)]| {
            let lo = t.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let hi = t.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        assert!(spread(&v0_free) < 1e-8, "{v0_free:?}");
        assert!(spread(&v0_fixed) > 1e-2, "{v0_fixed:?}");
    }

    #[test]
    fn displacement_zero_and_symmetry() {
        let vs = grid(70.0, 29.6e-9, 16);
        let pts = power_points(2805.0, 70.0, -1.7, &vs, 0.04);
        let z = displacement_sensitivity(&pts, 0.0, BETA, ExponentMode::Free).unwrap();
        assert_eq!(z.forward, z.nominal);
        assert_eq!(z.backward, z.nominal);
        let s = displacement_sensitivity(&pts, 2e-9, BETA, ExponentMode::Free).unwrap();
        let (f, b) = s.alpha_changes();
        assert!(f * b < 0.0, "{f} {b}");
    }

    #[test]
    fn detrend_cases() {
        let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 5.0)).collect();
        let d = detrend_moving_average(&flat, 4).unwrap();
        assert!(d.residuals.iter().all(|r| r.1.abs() < 1e-12));
        assert!(detrend_moving_average(&flat[..4], 4).is_err());
        assert!(detrend_moving_average(&flat, 1).is_err());

        let noise = Normal::new(0.0, 0.04).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let series: Vec<(f64, f64)> = (0..400)
            .map(|i| {
                let t = i as f64 * 100.0;
                let drift = 1e4 * (1.0 + 0.2 * (t / 2e4).sin());
                (t, drift * (1.0 + noise.sample(&mut rng)))
            })
            .collect();
        let d = detrend_moving_average(&series, 4).unwrap();
        assert!(
            (d.relative_error - 0.04).abs() < 0.01,
            "{}",
            d.relative_error
        );
        let profile: Vec<f64> = [2, 6, 8, 10]
            .iter()
            .map(|w| detrend_moving_average(&series, *w).unwrap().relative_error)
            .collect();
        assert!(
            profile[0] < profile[1] && profile[1] < profile[3],
            "{profile:?}"
        );
    }

    #[test]
    fn fitters_are_deterministic() {
        let vs = grid(70.0, 29.6e-9, 16);
        let pts = power_points(2805.0, 70.0, -1.7, &vs, 0.04);
        let a = fit_power_law(&pts, ExponentMode::Free, BETA).unwrap();
        let b = fit_power_law(&pts, ExponentMode::Free, BETA).unwrap();
        assert_eq!(a, b);
    }
}
