//! Forward simulation of complete calibration runs and the end-to-end analysis
//! chain: parabola extraction, distance inference, contact-potential
//! reconstruction, residuals, Casimir fit and Lifshitz overlay.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constants::EPS0;
use crate::contact_potential::{
    fit_v0_model, residual_from_derivs, solve_vc_ode, xn_sensitivity, BoundaryCondition,
    OdeSolution, SolveOptions, V0Fit, V0Form, XnSensitivity,
};
use crate::electrostatics::{electrostatic_curvature, ContactPotentialModel};
use crate::error::{Category, Error, Result};
use crate::fitting::{
    fit_capacitance, fit_parabola, fit_power_law, infer_absolute_distance, stability_scan,
    CapacitanceFit, DistanceEstimate, ExponentMode, ParabolaFit, PowerLawFit, StabilityScan,
    DEFAULT_KEL_REL_SIGMA,
};
use crate::lifshitz::{
    casimir_shift_with, ideal_casimir_coefficient, LifshitzConfig, LifshitzEvaluator,
    MaterialResponse,
};
use crate::lsq::{linear_least_squares, DataPoint, FitResult};
use crate::models::{Cantilever, Geometry};
use crate::spline::CubicSpline;

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the JSON encoding, hex encoded.
pub fn hash_of<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_string(value).map_err(|e| Error::Serde(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

// ------------------------------------------------------------------ config

/// Source of the injected non-electrostatic shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CasimirSource {
    /// −K_Cas/x⁴; K_Cas defaults to πħcR/(480 m_eff).
    Ideal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_cas: Option<f64>,
    },
    Lifshitz {
        material: MaterialResponse,
        #[serde(default)]
        lifshitz: LifshitzConfig,
    },
}

impl Default for CasimirSource {
    fn default() -> Self {
        CasimirSource::Ideal { k_cas: None }
    }
}

/// x = β (V⁰_PZT − V_PZT) at each listed V_PZT, visited in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceGrid {
    /// m/V
    pub beta: f64,
    pub v0_pzt: f64,
    pub v_pzt: Vec<f64>,
}

impl DistanceGrid {
    pub fn distance(&self, v_pzt: f64) -> f64 {
        self.beta * (self.v0_pzt - v_pzt)
    }

    /// Evenly spaced V_PZT giving distances from `x_far` down to `x_near`.
    pub fn spanning(beta: f64, v0_pzt: f64, x_far: f64, x_near: f64, n: usize) -> Self {
        let v_far = v0_pzt - x_far / beta;
        let v_near = v0_pzt - x_near / beta;
        DistanceGrid {
            beta,
            v0_pzt,
            v_pzt: linspace(v_far, v_near, n),
        }
    }
}

/// Bias values per distance: `points` values centred on the vertex, with the
/// span chosen so the largest shift of ν is `target_shift_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasGrid {
    pub points: usize,
    pub target_shift_hz: f64,
}

impl Default for BiasGrid {
    fn default() -> Self {
        BiasGrid {
            points: 11,
            target_shift_hz: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gaussian σ on each measured frequency, Hz.
    pub freq_sigma_hz: f64,
    /// Relative Gaussian σ of the curvature, drawn once per distance visit.
    pub k_el_rel_sigma: f64,
    /// Gaussian σ on each capacitance sample, F.
    pub cap_sigma: f64,
}

/// Gap drift δx(t) = amplitude · sin(2πt/timescale + φ), φ drawn from the seed,
/// plus a linear drift of the proper frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    /// m
    pub amplitude: f64,
    /// s
    pub timescale: f64,
    /// Hz/s
    pub nu_p_rate: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            amplitude: 0.0,
            timescale: 43_200.0,
            nu_p_rate: 0.0,
        }
    }
}

/// C(x) = stray + slope · ln(x/R); slope defaults to −2πε₀R.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CapacitanceConfig {
    pub stray: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
}

fn default_geometry() -> Geometry {
    Geometry::reference()
}
fn default_cantilever() -> Cantilever {
    Cantilever::reference()
}
fn default_x_ref() -> f64 {
    1e-6
}
fn default_dwell() -> f64 {
    30.0
}
fn default_temperature() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
    #[serde(default = "default_cantilever")]
    pub cantilever: Cantilever,
    /// Minimizing-potential law V₀(x). The contact potential follows from the
    /// contact-potential relation with a flat boundary at the largest distance.
    pub vc_model: ContactPotentialModel,
    #[serde(default)]
    pub include_casimir: bool,
    #[serde(default)]
    pub casimir: CasimirSource,
    pub distance_grid: DistanceGrid,
    #[serde(default)]
    pub bias_grid: BiasGrid,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub drift: DriftConfig,
    /// K_el = K_phys(x_ref)·(x/x_ref)^e instead of the inverse-square law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_exponent: Option<f64>,
    #[serde(default = "default_x_ref")]
    pub anomaly_x_ref: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacitance: Option<CapacitanceConfig>,
    /// Time per recorded frequency or capacitance sample, s.
    #[serde(default = "default_dwell")]
    pub dwell_time: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    pub seed: u64,
}

impl SimulationConfig {
    /// Run-1-like settings: R = 30.9 mm, m_eff = 0.46 g, β = 87 nm/V,
    /// twelve distances from 1 µm to 64.4 nm, exponential V₀ law
    /// (0.011 V, 0.25 V, 703 nm), ideal Casimir shift injected.
    pub fn run1_like(seed: u64) -> Self {
        SimulationConfig {
            geometry: Geometry::reference(),
            cantilever: Cantilever::reference(),
            vc_model: ContactPotentialModel::Exponential {
                v0: 0.011,
                dv: 0.25,
                lambda: 703e-9,
            },
            include_casimir: true,
            casimir: CasimirSource::default(),
            distance_grid: DistanceGrid::spanning(87e-9, 60.0, 1e-6, 64.4e-9, 12),
            bias_grid: BiasGrid::default(),
            noise: NoiseConfig::default(),
            drift: DriftConfig::default(),
            anomaly_exponent: None,
            anomaly_x_ref: default_x_ref(),
            capacitance: None,
            dwell_time: default_dwell(),
            temperature: default_temperature(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.cantilever.validate()?;
        self.vc_model.validate()?;
        let cfg = |msg: String| Err(Error::Config(msg));
        let g = &self.distance_grid;
        if g.v_pzt.is_empty() {
            return cfg("distance grid is empty".into());
        }
        if !(g.beta > 0.0 && g.beta.is_finite()) {
            return cfg(format!("beta = {} must be > 0", g.beta));
        }
        for &v in &g.v_pzt {
            let x = g.distance(v);
            if !(x > 0.0 && x < self.geometry.radius) {
                return cfg(format!("V_PZT = {v} gives x = {x} outside (0, R)"));
            }
            if !(x - self.drift.amplitude > 0.0) {
                return cfg(format!("drift amplitude reaches contact at V_PZT = {v}"));
            }
        }
        if self.bias_grid.points < 3 {
            return cfg("bias grid needs at least 3 points".into());
        }
        if !(self.bias_grid.target_shift_hz > 0.0) {
            return cfg("bias target shift must be > 0".into());
        }
        let n = &self.noise;
        for (name, s) in [
            ("freq_sigma_hz", n.freq_sigma_hz),
            ("k_el_rel_sigma", n.k_el_rel_sigma),
            ("cap_sigma", n.cap_sigma),
            ("drift amplitude", self.drift.amplitude),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return cfg(format!("{name} = {s} must be >= 0"));
            }
        }
        if !(self.drift.timescale > 0.0 && self.drift.nu_p_rate.is_finite()) {
            return cfg("drift timescale must be > 0".into());
        }
        if !(self.dwell_time > 0.0) {
            return cfg("dwell time must be > 0".into());
        }
        if !(self.anomaly_x_ref > 0.0) {
            return cfg("anomaly x_ref must be > 0".into());
        }
        if let Some(e) = self.anomaly_exponent {
            if !(e < 0.0) {
                return cfg(format!("anomaly exponent {e} must be < 0"));
            }
        }
        if !(self.temperature >= 0.0) {
            return cfg("temperature must be >= 0".into());
        }
        if let CasimirSource::Ideal { k_cas: Some(k) } = self.casimir {
            if !(k >= 0.0) {
                return cfg(format!("k_cas = {k} must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        hash_of(self)
    }
}

// ----------------------------------------------------------------- dataset

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// Biased frequency measurement.
    Sweep,
    /// Unbiased reference frequency.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencySample {
    pub kind: SampleKind,
    pub v_pzt: f64,
    /// Absent for reference rows.
    pub v_bias: Option<f64>,
    pub nu_m: f64,
    pub t: f64,
    /// True gap of synthetic data, m.
    pub x_true: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceSample {
    pub v_pzt: f64,
    /// F
    pub c: f64,
    pub t: f64,
    pub x_true: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub format_version: u32,
    pub tool_version: String,
    pub radius: f64,
    pub beta: f64,
    pub m_eff: Option<f64>,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDataset {
    pub samples: Vec<FrequencySample>,
    pub capacitance_samples: Vec<CapacitanceSample>,
    pub metadata: RunMetadata,
}

// --------------------------------------------------------------- simulator

struct ForwardModel {
    radius: f64,
    m_eff: f64,
    v0_law: ContactPotentialModel,
    vc: Option<OdeSolution>,
    casimir: Option<CasimirCurve>,
    anomaly: Option<(f64, f64)>,
}

enum CasimirCurve {
    Power(f64),
    /// ln(−Δν²) against ln x.
    Table(CubicSpline),
}

impl CasimirCurve {
    fn eval(&self, x: f64) -> Result<f64> {
        match self {
            CasimirCurve::Power(k) => Ok(-k / x.powi(4)),
            CasimirCurve::Table(s) => Ok(-s.eval(x.ln())?.0.exp()),
        }
    }
}

impl ForwardModel {
    fn curvature(&self, x: f64) -> Result<f64> {
        match self.anomaly {
            None => electrostatic_curvature(x, self.radius, self.m_eff),
            Some((e, x_ref)) => {
                Ok(electrostatic_curvature(x_ref, self.radius, self.m_eff)? * (x / x_ref).powf(e))
            }
        }
    }

    fn v0(&self, x: f64) -> Result<f64> {
        Ok(self.v0_law.eval(x)?.v)
    }

    fn residual(&self, x: f64) -> Result<f64> {
        match &self.vc {
            None => Ok(0.0),
            Some(sol) => residual_from_derivs(x, &sol.eval(x)?, self.radius, self.m_eff),
        }
    }

    fn casimir(&self, x: f64) -> Result<f64> {
        self.casimir.as_ref().map_or(Ok(0.0), |c| c.eval(x))
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// n points spaced evenly in ln x from a to b.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = linspace(a.ln(), b.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect();
    if n >= 2 {
        g[0] = a;
        g[n - 1] = b;
    }
    g
}

fn build_forward(cfg: &SimulationConfig) -> Result<ForwardModel> {
    let g = &cfg.distance_grid;
    let xs: Vec<f64> = g.v_pzt.iter().map(|&v| g.distance(v)).collect();
    let x_far = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x_near = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let lo = x_near - cfg.drift.amplitude;
    let hi = x_far + cfg.drift.amplitude;
    let radius = cfg.geometry.radius;
    let m_eff = cfg.cantilever.m_eff;

    let vc = if cfg.vc_model.is_constant() {
        None
    } else {
        let bc = BoundaryCondition::flat_at(&cfg.vc_model, x_far)?;
        let opts = SolveOptions {
            x_max: (hi > x_far).then_some(hi),
            ..SolveOptions::default()
        };
        Some(solve_vc_ode(
            &cfg.vc_model,
            radius,
            &bc,
            lo.min(0.999 * x_far),
            &opts,
        )?)
    };

    let casimir = if !cfg.include_casimir {
        None
    } else {
        Some(match &cfg.casimir {
            CasimirSource::Ideal { k_cas } => CasimirCurve::Power(match k_cas {
                Some(k) => *k,
                None => ideal_casimir_coefficient(radius, m_eff)?,
            }),
            CasimirSource::Lifshitz { material, lifshitz } => {
                let mut eval = LifshitzEvaluator::new(material, lifshitz)?;
                let nodes = log_grid(0.95 * lo, 1.05 * hi, 24);
                let mut ln_x = Vec::with_capacity(nodes.len());
                let mut ln_v = Vec::with_capacity(nodes.len());
                for x in nodes {
                    let s = casimir_shift_with(&mut eval, x, radius, m_eff)?;
                    if !(s.nu_sq < 0.0) {
                        return Err(Error::domain(
                            "simulate_run",
                            format!("non-attractive Casimir shift {} at x = {x}", s.nu_sq),
                        ));
                    }
                    ln_x.push(x.ln());
                    ln_v.push((-s.nu_sq).ln());
                }
                CasimirCurve::Table(CubicSpline::new(&ln_x, &ln_v)?)
            }
        })
    };

    Ok(ForwardModel {
        radius,
        m_eff,
        v0_law: cfg.vc_model.clone(),
        vc,
        casimir,
        anomaly: cfg.anomaly_exponent.map(|e| (e, cfg.anomaly_x_ref)),
    })
}

/// Synthetic run: for each listed V_PZT a reference frequency, then each bias
/// value followed by another reference, then an optional capacitance sample.
pub fn simulate_run(cfg: &SimulationConfig) -> Result<RunDataset> {
    cfg.validate()?;
    let fwd = build_forward(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phase = 2.0 * PI * rng.random::<f64>();
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };

    let nu_p = cfg.cantilever.nu_p;
    let target = (nu_p + cfg.bias_grid.target_shift_hz).powi(2) - nu_p * nu_p;
    let drift = cfg.drift;
    let gap = |x_nom: f64, t: f64| {
        x_nom + drift.amplitude * (2.0 * PI * t / drift.timescale + phase).sin()
    };

    let mut samples = Vec::new();
    let mut caps = Vec::new();
    let mut t = 0.0;
    for &v_pzt in &cfg.distance_grid.v_pzt {
        let x_nom = cfg.distance_grid.distance(v_pzt);
        let k_factor = 1.0 + cfg.noise.k_el_rel_sigma * normal();
        if !(k_factor > 0.0) {
            return Err(Error::Config(format!(
                "k_el noise draw {k_factor} is non-positive; reduce k_el_rel_sigma"
            )));
        }
        let span = (target / (fwd.curvature(x_nom)? * k_factor)).sqrt();
        let centre = fwd.v0(x_nom)?;
        let biases = linspace(centre - span, centre + span, cfg.bias_grid.points);

        let record = |kind: SampleKind, v: f64, t: f64, noise: f64| -> Result<FrequencySample> {
            let x = gap(x_nom, t);
            let nu_pt = nu_p + drift.nu_p_rate * t;
            let nu_sq = nu_pt * nu_pt - fwd.curvature(x)? * k_factor * (v - fwd.v0(x)?).powi(2)
                + fwd.residual(x)?
                + fwd.casimir(x)?;
            if !(nu_sq > 0.0) {
                return Err(Error::domain(
                    "simulate_run",
                    format!("ν² = {nu_sq} at x = {x}"),
                ));
            }
            Ok(FrequencySample {
                kind,
                v_pzt,
                v_bias: (kind == SampleKind::Sweep).then_some(v),
                nu_m: nu_sq.sqrt() + cfg.noise.freq_sigma_hz * noise,
                t,
                x_true: Some(x),
            })
        };
        samples.push(record(SampleKind::Reference, 0.0, t, normal())?);
        t += cfg.dwell_time;
        for &v in &biases {
            samples.push(record(SampleKind::Sweep, v, t, normal())?);
            t += cfg.dwell_time;
            samples.push(record(SampleKind::Reference, 0.0, t, normal())?);
            t += cfg.dwell_time;
        }
        if let Some(c) = cfg.capacitance {
            let x = gap(x_nom, t);
            let slope = c.slope.unwrap_or(-2.0 * PI * EPS0 * fwd.radius);
            caps.push(CapacitanceSample {
                v_pzt,
                c: c.stray + slope * (x / fwd.radius).ln() + cfg.noise.cap_sigma * normal(),
                t,
                x_true: Some(x),
            });
            t += cfg.dwell_time;
        }
    }

    Ok(RunDataset {
        samples,
        capacitance_samples: caps,
        metadata: RunMetadata {
            format_version: FORMAT_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            radius: cfg.geometry.radius,
            beta: cfg.distance_grid.beta,
            m_eff: Some(cfg.cantilever.m_eff),
            temperature: Some(cfg.temperature),
            seed: Some(cfg.seed),
            config_hash: Some(cfg.hash()?),
        },
    })
}

// ------------------------------------------------------------- calibration

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    /// Assumed σ of each measured frequency, Hz.
    pub freq_sigma_hz: f64,
    /// Subtract the drift seen by the neighbouring reference frequencies.
    pub use_references: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            freq_sigma_hz: 0.01,
            use_references: true,
        }
    }
}

/// Parabola extracted from one contiguous visit at a fixed V_PZT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCalibration {
    pub v_pzt: f64,
    pub t_mean: f64,
    pub reference_corrected: bool,
    /// (V, ν²) after reference correction.
    pub samples: Vec<[f64; 2]>,
    pub parabola: ParabolaFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDistance {
    pub v_pzt: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub distances: Vec<DistanceCalibration>,
    pub skipped: Vec<SkippedDistance>,
}

impl Calibration {
    /// (V_PZT, K_el, σ) with σ combining the fit error and a relative floor.
    pub fn curvature_points(&self, rel_sigma: f64) -> Vec<DataPoint> {
        self.distances
            .iter()
            .map(|d| {
                let k = d.parabola.parabola.k_el;
                let s_fit = d.parabola.fit.sigma("k_el");
                DataPoint::new(d.v_pzt, k, s_fit.hypot(rel_sigma * k))
            })
            .collect()
    }
}

fn visits(samples: &[FrequencySample]) -> Vec<&[FrequencySample]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].v_pzt != samples[start].v_pzt {
            out.push(&samples[start..i]);
            start = i;
        }
    }
    out
}

fn calibrate_visit(
    visit: &[FrequencySample],
    opts: &CalibrationOptions,
) -> Result<DistanceCalibration> {
    let mut ordered = visit.to_vec();
    ordered.sort_by(|a, b| a.t.total_cmp(&b.t));
    let refs: Vec<(f64, f64)> = ordered
        .iter()
        .filter(|s| s.kind == SampleKind::Reference)
        .map(|s| (s.t, s.nu_m * s.nu_m))
        .collect();
    let use_refs = opts.use_references && !refs.is_empty();
    let ref_mean = refs.iter().map(|r| r.1).sum::<f64>() / refs.len().max(1) as f64;

    let mut points = Vec::new();
    let mut raw = Vec::new();
    for s in ordered.iter().filter(|s| s.kind == SampleKind::Sweep) {
        let v = s.v_bias.ok_or_else(|| Error::Column {
            column: "V_bias".into(),
            msg: format!("missing on sweep row at t = {}", s.t),
        })?;
        let nu_sq = s.nu_m * s.nu_m;
        let mut sigma = 2.0 * s.nu_m * opts.freq_sigma_hz;
        let mut y = nu_sq;
        if use_refs {
            let before = refs.iter().rev().find(|r| r.0 <= s.t);
            let after = refs.iter().find(|r| r.0 >= s.t);
            let adjacent: Vec<f64> = before.into_iter().chain(after).map(|r| r.1).collect();
            let avg = adjacent.iter().sum::<f64>() / adjacent.len() as f64;
            y -= avg - ref_mean;
            sigma *= (1.0 + 1.0 / adjacent.len() as f64).sqrt();
        }
        points.push(DataPoint::new(v, y, sigma));
        raw.push([v, y]);
    }
    let parabola = fit_parabola(&points)?;
    Ok(DistanceCalibration {
        v_pzt: visit[0].v_pzt,
        t_mean: ordered.iter().map(|s| s.t).sum::<f64>() / ordered.len() as f64,
        reference_corrected: use_refs,
        samples: raw,
        parabola,
    })
}

/// One parabola per contiguous V_PZT visit. Visits that cannot be fitted are
/// listed in `skipped`.
pub fn extract_calibration(run: &RunDataset, opts: &CalibrationOptions) -> Result<Calibration> {
    if !(opts.freq_sigma_hz > 0.0) {
        return Err(Error::Config(format!(
            "freq_sigma_hz = {} must be > 0",
            opts.freq_sigma_hz
        )));
    }
    let mut distances = Vec::new();
    let mut skipped = Vec::new();
    for visit in visits(&run.samples) {
        match calibrate_visit(visit, opts) {
            Ok(d) => distances.push(d),
            Err(e) => skipped.push(SkippedDistance {
                v_pzt: visit[0].v_pzt,
                reason: e.to_string(),
            }),
        }
    }
    Ok(Calibration { distances, skipped })
}

// ---------------------------------------------------------------- analysis

/// How far down the chain to go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisDepth {
    Calibration,
    ContactPotential,
    Residuals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub calibration: CalibrationOptions,
    pub k_el_rel_sigma: f64,
    /// Exponent mode whose asymptote sets the distances.
    pub distance_mode: ExponentMode,
    pub v_log: f64,
    /// Boundary point of the contact-potential solve; defaults to the largest
    /// inferred distance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_n: Option<f64>,
    pub xn_fraction: f64,
    /// Overrides the run metadata.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_eff: Option<f64>,
    /// Overrides the run metadata; 300 K when neither is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// σ of capacitance samples, F.
    pub cap_sigma: f64,
    pub ode: SolveOptions,
    pub material: MaterialResponse,
    pub lifshitz: LifshitzConfig,
    pub overlay_points: usize,
    pub depth: AnalysisDepth,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            calibration: CalibrationOptions::default(),
            k_el_rel_sigma: DEFAULT_KEL_REL_SIGMA,
            distance_mode: ExponentMode::Free,
            v_log: V0Form::DEFAULT_V_LOG,
            x_n: None,
            xn_fraction: 0.2,
            m_eff: None,
            temperature: None,
            cap_sigma: 1e-14,
            ode: SolveOptions::default(),
            material: MaterialResponse::gold_drude(),
            lifshitz: LifshitzConfig::default(),
            overlay_points: 24,
            depth: AnalysisDepth::Residuals,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.calibration.freq_sigma_hz > 0.0) {
            return cfg("calibration.freq_sigma_hz must be > 0".into());
        }
        if !(self.k_el_rel_sigma >= 0.0) {
            return cfg("k_el_rel_sigma must be >= 0".into());
        }
        if !(self.xn_fraction > 0.0 && self.xn_fraction < 1.0) {
            return cfg("xn_fraction must lie in (0, 1)".into());
        }
        if let Some(x) = self.x_n {
            if !(x > 0.0) {
                return cfg(format!("x_n = {x} must be > 0"));
            }
        }
        if let Some(m) = self.m_eff {
            if !(m > 0.0) {
                return cfg(format!("m_eff = {m} must be > 0"));
            }
        }
        if !(self.cap_sigma > 0.0) {
            return cfg("cap_sigma must be > 0".into());
        }
        if self.overlay_points < 2 {
            return cfg("overlay_points must be >= 2".into());
        }
        self.material.validate()?;
        self.lifshitz.validate()?;
        Ok(())
    }
}

/// Outcome of one analysis stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Stage<T> {
    Ok { value: T },
    Failed { category: String, message: String },
}

impl<T> Stage<T> {
    pub fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(value) => Stage::Ok { value },
            Err(e) => Stage::failed(e.category(), e.to_string()),
        }
    }

    pub fn failed(category: Category, message: impl Into<String>) -> Self {
        let category = match category {
            Category::Validation => "validation",
            Category::Numerical => "numerical",
            Category::Io => "io",
        };
        Stage::Failed {
            category: category.to_string(),
            message: message.into(),
        }
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Stage::Ok { value } => Some(value),
            Stage::Failed { .. } => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Stage::Ok { .. })
    }

    fn require(&self, what: &str) -> Result<&T> {
        match self {
            Stage::Ok { value } => Ok(value),
            Stage::Failed { message, .. } => {
                Err(Error::Config(format!("{what} unavailable: {message}")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub v_pzt: f64,
    pub k_el: f64,
    pub fixed: Option<DistanceEstimate>,
    pub free: Option<DistanceEstimate>,
    /// Distance used downstream, m.
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeSummary {
    pub x_n: f64,
    pub x_min: f64,
    /// (x, V_c, V_c′) at the integrator nodes, x decreasing.
    pub nodes: Vec<[f64; 3]>,
    pub error_estimate: f64,
    pub xn_sensitivity: Option<XnSensitivity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub x: f64,
    pub v0: f64,
    pub vc: f64,
    /// Parabola vertex ν_m²(x, V = V₀), Hz².
    pub nu0_sq: f64,
    pub sigma_nu0_sq: f64,
    /// Bias-independent electrostatic shift Δν_e²(x, V₀), Hz².
    pub delta_nu_e_sq: f64,
    /// nu0_sq − delta_nu_e_sq
    pub corrected: f64,
}

/// ν_p² − K_Cas/x⁴ fitted to the corrected residuals. Conditional on the
/// residuals being Casimir-like; patch forces would enter the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasimirFit {
    pub nu_p_sq: f64,
    pub nu_p_sq_sigma: f64,
    pub k_cas: f64,
    pub k_cas_sigma: f64,
    /// Spread of K_Cas when every distance moves by ± the offset uncertainty.
    pub k_cas_sigma_distance: f64,
    /// K_Cas error carried from the V₀(x) fit covariance through the ODE.
    #[serde(default)]
    pub k_cas_sigma_v0: f64,
    pub fit: FitResult,
    pub model_conditional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifshitzPoint {
    pub x: f64,
    /// Δν²_Cas for the configured material, Hz².
    pub nu_sq: f64,
    pub error: f64,
    /// −K_Cas/x⁴ for ideal mirrors at zero temperature, Hz².
    pub nu_sq_ideal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifshitzCurve {
    pub material: String,
    pub temperature: f64,
    pub points: Vec<LifshitzPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub form: V0Form,
    pub v0_fit: Stage<V0Fit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode: Option<Stage<OdeSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<Stage<Vec<ResidualRow>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub casimir: Option<Stage<CasimirFit>>,
    /// (x, ν_p² + Δν²_Cas) with this branch's ν_p².
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifshitz_overlay: Option<Stage<Vec<[f64; 2]>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool_version: String,
    pub options_hash: String,
    pub run_config_hash: Option<String>,
    pub seed: Option<u64>,
    pub options: AnalysisOptions,
    pub calibration: Vec<DistanceCalibration>,
    pub skipped: Vec<SkippedDistance>,
    pub power_law_fixed: Stage<PowerLawFit>,
    pub power_law_free: Stage<PowerLawFit>,
    pub stability_fixed: Stage<StabilityScan>,
    pub stability_free: Stage<StabilityScan>,
    pub distances: Stage<Vec<DistanceRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacitance: Option<Stage<CapacitanceFit>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branches: Vec<BranchReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifshitz: Option<Stage<LifshitzCurve>>,
}

impl AnalysisReport {
    pub fn branch(&self, label: &str) -> Option<&BranchReport> {
        self.branches.iter().find(|b| b.form.label() == label)
    }

    /// Messages of every failed stage.
    pub fn failures(&self) -> Vec<String> {
        fn push<T>(out: &mut Vec<String>, name: &str, s: &Stage<T>) {
            if let Stage::Failed { message, .. } = s {
                out.push(format!("{name}: {message}"));
            }
        }
        let mut out = Vec::new();
        push(&mut out, "power_law_fixed", &self.power_law_fixed);
        push(&mut out, "power_law_free", &self.power_law_free);
        push(&mut out, "stability_fixed", &self.stability_fixed);
        push(&mut out, "stability_free", &self.stability_free);
        push(&mut out, "distances", &self.distances);
        if let Some(s) = &self.capacitance {
            push(&mut out, "capacitance", s);
        }
        for b in &self.branches {
            let l = b.form.label();
            push(&mut out, &format!("{l}.v0_fit"), &b.v0_fit);
            if let Some(s) = &b.ode {
                push(&mut out, &format!("{l}.ode"), s);
            }
            if let Some(s) = &b.residuals {
                push(&mut out, &format!("{l}.residuals"), s);
            }
            if let Some(s) = &b.casimir {
                push(&mut out, &format!("{l}.casimir"), s);
            }
            if let Some(s) = &b.lifshitz_overlay {
                push(&mut out, &format!("{l}.lifshitz_overlay"), s);
            }
        }
        if let Some(s) = &self.lifshitz {
            push(&mut out, "lifshitz", s);
        }
        out
    }
}

fn distance_table(
    cal: &Calibration,
    fixed: &Stage<PowerLawFit>,
    free: &Stage<PowerLawFit>,
    mode: ExponentMode,
) -> Result<Vec<DistanceRow>> {
    let chosen = match mode {
        ExponentMode::Fixed => fixed.require("fixed-exponent power law")?,
        ExponentMode::Free => free.require("free-exponent power law")?,
    };
    cal.distances
        .iter()
        .map(|d| {
            let k = d.parabola.parabola.k_el;
            let est = |s: &Stage<PowerLawFit>| {
                s.value()
                    .and_then(|f| infer_absolute_distance(&f.model, d.v_pzt, k).ok())
            };
            let x = chosen.model.distance_from_asymptote(d.v_pzt);
            if !(x > 0.0) {
                return Err(Error::domain(
                    "distance_table",
                    format!("x = {x} at V_PZT = {}", d.v_pzt),
                ));
            }
            Ok(DistanceRow {
                v_pzt: d.v_pzt,
                k_el: k,
                fixed: est(fixed),
                free: est(free),
                x,
            })
        })
        .collect()
}

fn ode_stage(
    v0: &V0Fit,
    rows: &[DistanceRow],
    radius: f64,
    opts: &AnalysisOptions,
) -> Result<(OdeSolution, OdeSummary)> {
    let x_far = rows.iter().map(|r| r.x).fold(f64::NEG_INFINITY, f64::max);
    let x_min = rows.iter().map(|r| r.x).fold(f64::INFINITY, f64::min);
    let x_n = opts.x_n.unwrap_or(x_far);
    let bc = BoundaryCondition::flat_at(&v0.model, x_n)?;
    let ode_opts = SolveOptions {
        x_max: (x_far > x_n).then_some(x_far),
        ..opts.ode
    };
    let sol = solve_vc_ode(&v0.model, radius, &bc, x_min, &ode_opts)?;
    let sens = xn_sensitivity(&v0.model, radius, x_n, x_min, opts.xn_fraction, &opts.ode).ok();
    let summary = OdeSummary {
        x_n,
        x_min,
        nodes: sol
            .x_grid
            .iter()
            .zip(&sol.vc)
            .zip(&sol.vc1)
            .map(|((&x, &v), &d)| [x, v, d])
            .collect(),
        error_estimate: sol.error_estimate,
        xn_sensitivity: sens,
    };
    Ok((sol, summary))
}

fn residual_rows(
    cal: &Calibration,
    rows: &[DistanceRow],
    sol: &OdeSolution,
    radius: f64,
    m_eff: f64,
) -> Result<Vec<ResidualRow>> {
    cal.distances
        .iter()
        .zip(rows)
        .map(|(d, r)| {
            let p = sol.eval(r.x)?;
            let delta = residual_from_derivs(r.x, &p, radius, m_eff)?;
            let nu0_sq = d.parabola.parabola.nu0_sq;
            Ok(ResidualRow {
                x: r.x,
                v0: d.parabola.parabola.v0,
                vc: p.v,
                nu0_sq,
                sigma_nu0_sq: d.parabola.fit.sigma("nu0_sq"),
                delta_nu_e_sq: delta,
                corrected: nu0_sq - delta,
            })
        })
        .collect()
}

/// Weighted fit of y = ν_p² − K_Cas/x⁴.
pub fn fit_casimir(points: &[DataPoint]) -> Result<CasimirFit> {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![1.0, -p.x.powi(-4)]).collect();
    let y: Vec<f64> = points.iter().map(|p| p.y).collect();
    let s: Vec<f64> = points.iter().map(|p| p.sigma).collect();
    crate::lsq::check_points(points, 2)?;
    let lin = linear_least_squares(&rows, &y, &s)?;
    let fit = FitResult::build(
        &[("nu_p_sq", "Hz^2"), ("k_cas", "Hz^2 m^4")],
        &lin.coef,
        &lin.covariance,
        lin.chi2,
        points.len(),
        true,
        1,
    );
    Ok(CasimirFit {
        nu_p_sq: lin.coef[0],
        nu_p_sq_sigma: fit.sigma("nu_p_sq"),
        k_cas: lin.coef[1],
        k_cas_sigma: fit.sigma("k_cas"),
        k_cas_sigma_distance: 0.0,
        k_cas_sigma_v0: 0.0,
        fit,
        model_conditional: true,
    })
}

impl CasimirFit {
    /// Statistical, distance and V₀-law contributions in quadrature.
    pub fn k_cas_sigma_total(&self) -> f64 {
        self.k_cas_sigma
            .hypot(self.k_cas_sigma_distance)
            .hypot(self.k_cas_sigma_v0)
    }
}

/// Δν²_Cas for `material` and for ideal mirrors on a logarithmic grid.
pub fn lifshitz_curve(
    x_min: f64,
    x_max: f64,
    n: usize,
    radius: f64,
    m_eff: f64,
    material: &MaterialResponse,
    cfg: &LifshitzConfig,
) -> Result<LifshitzCurve> {
    if !(x_min > 0.0 && x_max >= x_min) {
        return Err(Error::domain(
            "lifshitz_curve",
            format!("range [{x_min}, {x_max}]"),
        ));
    }
    let k_ideal = ideal_casimir_coefficient(radius, m_eff)?;
    let mut eval = LifshitzEvaluator::new(material, cfg)?;
    let grid = if x_max > x_min {
        log_grid(x_min, x_max, n)
    } else {
        vec![x_min]
    };
    let points = grid
        .into_iter()
        .map(|x| {
            let s = casimir_shift_with(&mut eval, x, radius, m_eff)?;
            Ok(LifshitzPoint {
                x,
                nu_sq: s.nu_sq,
                error: s.error,
                nu_sq_ideal: -k_ideal / x.powi(4),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LifshitzCurve {
        material: material.label().to_string(),
        temperature: cfg.temperature,
        points,
    })
}

fn branch(
    form: V0Form,
    cal: &Calibration,
    rows: &[DistanceRow],
    radius: f64,
    m_eff: Option<f64>,
    overlay: Option<&Stage<LifshitzCurve>>,
    opts: &AnalysisOptions,
) -> BranchReport {
    let points = v0_points(cal, rows);
    let mut out = BranchReport {
        form,
        v0_fit: Stage::from_result(fit_v0_model(&points, form)),
        ode: None,
        residuals: None,
        casimir: None,
        lifshitz_overlay: None,
    };
    let Some(v0) = out.v0_fit.value().cloned() else {
        return out;
    };
    let (sol, summary) = match ode_stage(&v0, rows, radius, opts) {
        Ok(v) => v,
        Err(e) => {
            out.ode = Some(Stage::from_result(Err(e)));
            return out;
        }
    };
    out.ode = Some(Stage::Ok { value: summary });
    if opts.depth < AnalysisDepth::Residuals {
        return out;
    }
    let residuals = match m_eff {
        Some(m) => residual_rows(cal, rows, &sol, radius, m),
        None => Err(Error::Config(
            "m_eff is neither in the run metadata nor in the options".into(),
        )),
    };
    out.residuals = Some(Stage::from_result(residuals));
    let Some(res) = out.residuals.as_ref().and_then(Stage::value) else {
        return out;
    };
    let pts: Vec<DataPoint> = res
        .iter()
        .map(|r| DataPoint::new(r.x, r.corrected, r.sigma_nu0_sq))
        .collect();
    let casimir = fit_casimir(&pts);
    out.casimir = Some(Stage::from_result(casimir));
    if let (Some(fit), Some(curve)) = (out.casimir.as_ref().and_then(Stage::value), overlay) {
        out.lifshitz_overlay = Some(match curve {
            Stage::Ok { value } => Stage::Ok {
                value: value
                    .points
                    .iter()
                    .map(|p| [p.x, fit.nu_p_sq + p.nu_sq])
                    .collect(),
            },
            Stage::Failed { category, message } => Stage::Failed {
                category: category.clone(),
                message: format!("Lifshitz curve unavailable: {message}"),
            },
        });
    }
    out
}

/// K_Cas from the ODE onward for a given V₀ law and distance table.
fn k_cas_with(
    v0: &V0Fit,
    cal: &Calibration,
    rows: &[DistanceRow],
    radius: f64,
    m_eff: f64,
    opts: &AnalysisOptions,
) -> Option<f64> {
    let (sol, _) = ode_stage(v0, rows, radius, opts).ok()?;
    let res = residual_rows(cal, rows, &sol, radius, m_eff).ok()?;
    let pts: Vec<DataPoint> = res
        .iter()
        .map(|r| DataPoint::new(r.x, r.corrected, r.sigma_nu0_sq))
        .collect();
    fit_casimir(&pts).ok().map(|f| f.k_cas)
}

/// Half the K_Cas spread when every distance moves by ±dx, refitting V₀ on
/// the moved distances. Zero if either side fails.
fn distance_sensitivity(
    form: V0Form,
    cal: &Calibration,
    rows: &[DistanceRow],
    radius: f64,
    m_eff: f64,
    dx: f64,
    opts: &AnalysisOptions,
) -> f64 {
    if !(dx > 0.0) {
        return 0.0;
    }
    let k_at = |shift: f64| {
        let moved: Vec<DistanceRow> = rows
            .iter()
            .map(|r| DistanceRow {
                x: r.x + shift,
                ..r.clone()
            })
            .collect();
        let v0 = fit_v0_model(&v0_points(cal, &moved), form).ok()?;
        k_cas_with(&v0, cal, &moved, radius, m_eff, opts)
    };
    match (k_at(dx), k_at(-dx)) {
        (Some(up), Some(down)) => 0.5 * (up - down).abs(),
        _ => 0.0,
    }
}

/// Linearised σ(K_Cas) from the V₀-law covariance, by central differences of
/// one standard deviation in each parameter.
fn v0_law_sensitivity(
    v0: &V0Fit,
    cal: &Calibration,
    rows: &[DistanceRow],
    radius: f64,
    m_eff: f64,
    opts: &AnalysisOptions,
) -> f64 {
    let p: Vec<f64> = v0.fit.params.iter().map(|q| q.value).collect();
    let n = p.len();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let h = v0.fit.params[i].sigma;
        if !(h > 0.0) {
            continue;
        }
        let k_at = |d: f64| {
            let mut q = p.clone();
            q[i] += d;
            let model = v0_law(v0.form, &q)?;
            let moved = V0Fit {
                model,
                ..v0.clone()
            };
            k_cas_with(&moved, cal, rows, radius, m_eff, opts)
        };
        match (k_at(h), k_at(-h)) {
            (Some(up), Some(down)) => grad[i] = (up - down) / (2.0 * h),
            _ => return 0.0,
        }
    }
    let cov = &v0.fit.covariance;
    let mut var = 0.0;
    for i in 0..n {
        for j in 0..n {
            var += grad[i] * cov[i][j] * grad[j];
        }
    }
    var.max(0.0).sqrt()
}

fn v0_law(form: V0Form, p: &[f64]) -> Option<ContactPotentialModel> {
    let m = match form {
        V0Form::Exponential => ContactPotentialModel::Exponential {
            v0: p[0],
            dv: p[1],
            lambda: p[2],
        },
        V0Form::Logarithmic { v_log } => ContactPotentialModel::Logarithmic {
            v_log,
            dv_log: p[0],
            big_lambda: p[1],
        },
    };
    m.validate().ok().map(|_| m)
}

fn v0_points(cal: &Calibration, rows: &[DistanceRow]) -> Vec<DataPoint> {
    cal.distances
        .iter()
        .zip(rows)
        .map(|(d, r)| DataPoint::new(r.x, d.parabola.parabola.v0, d.parabola.fit.sigma("v0")))
        .collect()
}

/// Full chain on a run. Stage failures are recorded in the report; only
/// invalid options or metadata return an error.
pub fn analyze_run(run: &RunDataset, opts: &AnalysisOptions) -> Result<AnalysisReport> {
    opts.validate()?;
    let meta = &run.metadata;
    if !(meta.radius > 0.0 && meta.beta > 0.0) {
        return Err(Error::Config(format!(
            "run metadata needs radius > 0 and beta > 0, got {} and {}",
            meta.radius, meta.beta
        )));
    }
    let cal = extract_calibration(run, &opts.calibration)?;
    let k_points = cal.curvature_points(opts.k_el_rel_sigma);
    let beta = meta.beta;
    let power_law_fixed = Stage::from_result(fit_power_law(&k_points, ExponentMode::Fixed, beta));
    let power_law_free = Stage::from_result(fit_power_law(&k_points, ExponentMode::Free, beta));
    let stability_fixed = Stage::from_result(stability_scan(&k_points, ExponentMode::Fixed, beta));
    let stability_free = Stage::from_result(stability_scan(&k_points, ExponentMode::Free, beta));
    let distances = Stage::from_result(distance_table(
        &cal,
        &power_law_fixed,
        &power_law_free,
        opts.distance_mode,
    ));
    let capacitance = (!run.capacitance_samples.is_empty()).then(|| {
        let pts: Vec<DataPoint> = run
            .capacitance_samples
            .iter()
            .map(|c| DataPoint::new(c.v_pzt, c.c, opts.cap_sigma))
            .collect();
        Stage::from_result(fit_capacitance(&pts, beta))
    });

    let m_eff = opts.m_eff.or(meta.m_eff);
    let temperature = opts.temperature.or(meta.temperature).unwrap_or(300.0);
    let mut lifshitz = None;
    let mut branches = Vec::new();
    if opts.depth >= AnalysisDepth::ContactPotential {
        let forms = [
            V0Form::Exponential,
            V0Form::Logarithmic { v_log: opts.v_log },
        ];
        match &distances {
            Stage::Ok { value: rows } => {
                if opts.depth >= AnalysisDepth::Residuals {
                    let x_lo = rows.iter().map(|r| r.x).fold(f64::INFINITY, f64::min);
                    let x_hi = rows.iter().map(|r| r.x).fold(f64::NEG_INFINITY, f64::max);
                    let cfg = LifshitzConfig {
                        temperature,
                        ..opts.lifshitz
                    };
                    lifshitz = Some(Stage::from_result(match m_eff {
                        Some(m) => lifshitz_curve(
                            x_lo,
                            x_hi,
                            opts.overlay_points,
                            meta.radius,
                            m,
                            &opts.material,
                            &cfg,
                        ),
                        None => Err(Error::Config("m_eff unknown".into())),
                    }));
                }
                let chosen = match opts.distance_mode {
                    ExponentMode::Fixed => &power_law_fixed,
                    ExponentMode::Free => &power_law_free,
                };
                let x0_sigma = chosen.value().map_or(0.0, |f| f.model.x0_sigma);
                for form in forms {
                    let mut b = branch(
                        form,
                        &cal,
                        rows,
                        meta.radius,
                        m_eff,
                        lifshitz.as_ref(),
                        opts,
                    );
                    let v0 = b.v0_fit.value().cloned();
                    if let (Some(Stage::Ok { value: fit }), Some(v0), Some(m)) =
                        (b.casimir.as_mut(), v0, m_eff)
                    {
                        fit.k_cas_sigma_distance =
                            distance_sensitivity(form, &cal, rows, meta.radius, m, x0_sigma, opts);
                        fit.k_cas_sigma_v0 =
                            v0_law_sensitivity(&v0, &cal, rows, meta.radius, m, opts);
                    }
                    branches.push(b);
                }
            }
            Stage::Failed { message, .. } => {
                for form in forms {
                    branches.push(BranchReport {
                        form,
                        v0_fit: Stage::failed(
                            Category::Numerical,
                            format!("distances unavailable: {message}"),
                        ),
                        ode: None,
                        residuals: None,
                        casimir: None,
                        lifshitz_overlay: None,
                    });
                }
            }
        }
    }

    Ok(AnalysisReport {
        tool_version: TOOL_VERSION.to_string(),
        options_hash: hash_of(opts)?,
        run_config_hash: meta.config_hash.clone(),
        seed: meta.seed,
        options: opts.clone(),
        calibration: cal.distances,
        skipped: cal.skipped,
        power_law_fixed,
        power_law_free,
        stability_fixed,
        stability_free,
        distances,
        capacitance,
        branches,
        lifshitz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn constant_cfg() -> SimulationConfig {
        SimulationConfig {
            vc_model: ContactPotentialModel::Constant { v: 0.03 },
            include_casimir: false,
            ..SimulationConfig::run1_like(1)
        }
    }

    #[test]
    fn noiseless_constant_potential_gives_exact_parabolas() {
        let cfg = constant_cfg();
        let run = simulate_run(&cfg).unwrap();
        let cal = extract_calibration(&run, &CalibrationOptions::default()).unwrap();
        assert_eq!(cal.distances.len(), 12);
        assert!(cal.skipped.is_empty());
        for d in &cal.distances {
            let x = cfg.distance_grid.distance(d.v_pzt);
            let k = electrostatic_curvature(x, cfg.geometry.radius, cfg.cantilever.m_eff).unwrap();
            assert!(
                (d.parabola.parabola.v0 - 0.03).abs() < 1e-9,
                "{}",
                d.parabola.parabola.v0
            );
            assert!(rel(d.parabola.parabola.k_el, k) < 1e-8);
            let nu_p = cfg.cantilever.nu_p;
            assert!(rel(d.parabola.parabola.nu0_sq, nu_p * nu_p) < 1e-12);
        }
    }

    #[test]
    fn bias_sweep_brackets_vertex_at_target_shift() {
        let cfg = SimulationConfig::run1_like(3);
        let run = simulate_run(&cfg).unwrap();
        let nu_p = cfg.cantilever.nu_p;
        for visit in visits(&run.samples) {
            let top = visit
                .iter()
                .map(|s| s.nu_m)
                .fold(f64::NEG_INFINITY, f64::max);
            let sweeps: Vec<_> = visit
                .iter()
                .filter(|s| s.kind == SampleKind::Sweep)
                .collect();
            let (first, last) = (sweeps[0], sweeps[sweeps.len() - 1]);
            // The vertex sits at the centre, the ends at ≈ 1 Hz below it.
            assert!(
                ((top - first.nu_m) - 1.0).abs() < 0.01,
                "{}",
                top - first.nu_m
            );
            assert!(((top - last.nu_m) - 1.0).abs() < 0.01);
            assert!(top < nu_p + 0.01);
        }
    }

    #[test]
    fn seed_determinism() {
        let mut cfg = SimulationConfig::run1_like(7);
        cfg.noise = NoiseConfig {
            freq_sigma_hz: 0.01,
            k_el_rel_sigma: 0.04,
            cap_sigma: 0.0,
        };
        cfg.drift.amplitude = 20e-9;
        let a = simulate_run(&cfg).unwrap();
        let b = simulate_run(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 8;
        let c = simulate_run(&cfg).unwrap();
        assert_ne!(a.samples, c.samples);
        assert_ne!(a.metadata.config_hash, c.metadata.config_hash);
    }

    #[test]
    fn closed_loop_noiseless_recovers_injected_values() {
        let cfg = SimulationConfig::run1_like(11);
        let run = simulate_run(&cfg).unwrap();
        let report = analyze_run(&run, &AnalysisOptions::default()).unwrap();
        assert!(report.failures().is_empty(), "{:?}", report.failures());
        let r = cfg.geometry.radius;
        let m = cfg.cantilever.m_eff;
        let rows = report.distances.value().unwrap();
        for (row, d) in rows.iter().zip(&report.calibration) {
            let x = cfg.distance_grid.distance(row.v_pzt);
            assert!(rel(row.x, x) < 1e-6, "x {} vs {x}", row.x);
            let k = electrostatic_curvature(x, r, m).unwrap();
            assert!(rel(d.parabola.parabola.k_el, k) < 1e-6);
            let v0 = cfg.vc_model.eval(x).unwrap().v;
            assert!(rel(d.parabola.parabola.v0, v0) < 1e-6);
        }
        let exp = report.branch("exponential").unwrap();
        let fit = exp.v0_fit.value().unwrap();
        match fit.model {
            ContactPotentialModel::Exponential { v0, dv, lambda } => {
                assert!(
                    rel(v0, 0.011) < 1e-6 && rel(dv, 0.25) < 1e-6 && rel(lambda, 703e-9) < 1e-6
                );
            }
            _ => panic!("wrong model"),
        }
        let x_far = cfg.distance_grid.distance(cfg.distance_grid.v_pzt[0]);
        let x_near = cfg
            .distance_grid
            .distance(*cfg.distance_grid.v_pzt.last().unwrap());
        let bc = BoundaryCondition::flat_at(&cfg.vc_model, x_far).unwrap();
        let opts = SolveOptions {
            x_max: Some(1.01 * x_far),
            ..SolveOptions::default()
        };
        let truth = solve_vc_ode(&cfg.vc_model, r, &bc, 0.99 * x_near, &opts).unwrap();
        for row in exp.residuals.as_ref().unwrap().value().unwrap() {
            let vc = truth.eval(row.x).unwrap().v;
            assert!(rel(row.vc, vc) < 1e-6, "{} vs {vc}", row.vc);
        }
        let cas = exp.casimir.as_ref().unwrap().value().unwrap();
        let k_cas = ideal_casimir_coefficient(r, m).unwrap();
        assert!(rel(cas.k_cas, k_cas) < 1e-6, "{} vs {k_cas}", cas.k_cas);
        let nu_p = cfg.cantilever.nu_p;
        assert!(rel(cas.nu_p_sq, nu_p * nu_p) < 1e-9);
    }

    #[test]
    fn both_branches_always_present() {
        let cfg = SimulationConfig::run1_like(2);
        let run = simulate_run(&cfg).unwrap();
        let report = analyze_run(&run, &AnalysisOptions::default()).unwrap();
        assert!(report.branch("exponential").is_some());
        assert!(report.branch("logarithmic").is_some());

        // Too few distances: every stage fails but both branches are recorded.
        let mut short = run.clone();
        let keep = short.samples[0].v_pzt;
        short.samples.retain(|s| s.v_pzt == keep);
        let report = analyze_run(&short, &AnalysisOptions::default()).unwrap();
        assert!(!report.power_law_fixed.is_ok());
        assert_eq!(report.branches.len(), 2);
        for b in &report.branches {
            assert!(!b.v0_fit.is_ok());
            assert!(b.ode.is_none() && b.casimir.is_none());
        }
    }

    #[test]
    fn constant_potential_gives_flat_v0() {
        let mut cfg = constant_cfg();
        cfg.noise.freq_sigma_hz = 0.005;
        let run = simulate_run(&cfg).unwrap();
        let cal = extract_calibration(&run, &CalibrationOptions::default()).unwrap();
        for d in &cal.distances {
            let s = d.parabola.fit.sigma("v0");
            assert!(
                (d.parabola.parabola.v0 - 0.03).abs() < 4.0 * s,
                "{} ± {s}",
                d.parabola.parabola.v0
            );
        }
    }

    fn slope(rows: &[ResidualRow], f: impl Fn(&ResidualRow) -> f64) -> f64 {
        let pts: Vec<DataPoint> = rows
            .iter()
            .map(|r| DataPoint::new(r.x, f(r), 1.0))
            .collect();
        let rows: Vec<Vec<f64>> = pts.iter().map(|p| vec![1.0, p.x]).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.y).collect();
        linear_least_squares(&rows, &y, &vec![1.0; y.len()])
            .unwrap()
            .coef[1]
    }

    #[test]
    fn correction_flattens_residuals_without_casimir() {
        let cfg = SimulationConfig {
            include_casimir: false,
            ..SimulationConfig::run1_like(5)
        };
        let run = simulate_run(&cfg).unwrap();
        let report = analyze_run(&run, &AnalysisOptions::default()).unwrap();
        let rows = report
            .branch("exponential")
            .unwrap()
            .residuals
            .as_ref()
            .unwrap()
            .value()
            .unwrap();
        let raw = slope(rows, |r| r.nu0_sq).abs();
        let corrected = slope(rows, |r| r.corrected).abs();
        assert!(raw > 0.0);
        assert!(corrected < 1e-6 * raw, "{corrected} vs {raw}");
    }

    #[test]
    fn null_case_casimir_consistent_with_zero() {
        let mut cfg = constant_cfg();
        cfg.noise.freq_sigma_hz = 0.01;
        cfg.noise.k_el_rel_sigma = 0.04;
        let run = simulate_run(&cfg).unwrap();
        let report = analyze_run(&run, &AnalysisOptions::default()).unwrap();
        let log = report.branch("logarithmic").unwrap();
        let cas = log.casimir.as_ref().unwrap().value().unwrap();
        assert!(
            cas.k_cas.abs() < 2.0 * cas.k_cas_sigma,
            "{} ± {}",
            cas.k_cas,
            cas.k_cas_sigma
        );
        assert!(cas.model_conditional);
    }

    #[test]
    fn references_remove_linear_frequency_drift() {
        let mut cfg = constant_cfg();
        cfg.drift.nu_p_rate = 2.0 / 43_200.0;
        let run = simulate_run(&cfg).unwrap();
        let on = extract_calibration(&run, &CalibrationOptions::default()).unwrap();
        let off = extract_calibration(
            &run,
            &CalibrationOptions {
                use_references: false,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in on.distances.iter().zip(&off.distances) {
            let x = cfg.distance_grid.distance(a.v_pzt);
            let k = electrostatic_curvature(x, cfg.geometry.radius, cfg.cantilever.m_eff).unwrap();
            assert!(
                rel(a.parabola.parabola.k_el, k) < 1e-5,
                "{}",
                rel(a.parabola.parabola.k_el, k)
            );
            assert!(rel(b.parabola.parabola.k_el, k) > 10.0 * rel(a.parabola.parabola.k_el, k));
        }
    }

    #[test]
    fn drift_envelope_seen_in_curvature_series() {
        let amplitude = 200e-9;
        let mut cfg = constant_cfg();
        cfg.drift.amplitude = amplitude;
        cfg.dwell_time = 40.0;
        cfg.distance_grid = DistanceGrid {
            beta: 87e-9,
            v0_pzt: 60.0,
            v_pzt: vec![60.0 - 1e-6 / 87e-9; 48],
        };
        // Consecutive visits at one V_PZT stay separate parabolas.
        cfg.distance_grid
            .v_pzt
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v += 1e-9 * (i % 2) as f64);
        let run = simulate_run(&cfg).unwrap();
        let span = run.samples.last().unwrap().t;
        assert!(span > 0.9 * 43_200.0);
        let cal = extract_calibration(&run, &CalibrationOptions::default()).unwrap();
        assert_eq!(cal.distances.len(), 48);
        let m = cfg.cantilever.m_eff;
        let r = cfg.geometry.radius;
        let dx: Vec<f64> = cal
            .distances
            .iter()
            .map(|d| {
                (EPS0 * r / (4.0 * PI * m * d.parabola.parabola.k_el)).sqrt()
                    - cfg.distance_grid.distance(d.v_pzt)
            })
            .collect();
        let hi = dx.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = dx.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(
            hi <= amplitude * 1.01 && lo >= -amplitude * 1.01,
            "{lo} {hi}"
        );
        assert!(hi - lo > 1.6 * amplitude, "{}", hi - lo);
    }

    #[test]
    fn short_sweep_is_skipped() {
        let cfg = constant_cfg();
        let mut run = simulate_run(&cfg).unwrap();
        let v = run.samples[0].v_pzt;
        let mut kept = 0;
        run.samples.retain(|s| {
            if s.v_pzt != v || s.kind == SampleKind::Reference {
                return true;
            }
            kept += 1;
            kept <= 2
        });
        let cal = extract_calibration(&run, &CalibrationOptions::default()).unwrap();
        assert_eq!(cal.distances.len(), 11);
        assert_eq!(cal.skipped.len(), 1);
        assert_eq!(cal.skipped[0].v_pzt, v);
    }

    #[test]
    fn lifshitz_injection_below_ideal() {
        let mut cfg = SimulationConfig::run1_like(4);
        cfg.vc_model = ContactPotentialModel::Constant { v: 0.0 };
        cfg.casimir = CasimirSource::Lifshitz {
            material: MaterialResponse::gold_drude(),
            lifshitz: LifshitzConfig::default(),
        };
        let run = simulate_run(&cfg).unwrap();
        let cal = extract_calibration(&run, &CalibrationOptions::default()).unwrap();
        let nu_p2 = cfg.cantilever.nu_p.powi(2);
        let k = ideal_casimir_coefficient(cfg.geometry.radius, cfg.cantilever.m_eff).unwrap();
        for d in &cal.distances {
            let x = cfg.distance_grid.distance(d.v_pzt);
            let shift = d.parabola.parabola.nu0_sq - nu_p2;
            let ratio = shift / (-k / x.powi(4));
            assert!(ratio > 0.2 && ratio < 0.9, "x = {x}: ratio {ratio}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimulationConfig::run1_like(0);
        cfg.distance_grid.v_pzt.clear();
        assert!(matches!(simulate_run(&cfg), Err(Error::Config(_))));
        let mut cfg = SimulationConfig::run1_like(0);
        cfg.noise.freq_sigma_hz = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SimulationConfig::run1_like(0);
        cfg.drift.amplitude = 1e-7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = SimulationConfig::run1_like(9);
        let text = toml::to_string(&cfg).unwrap();
        let back: SimulationConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
    }
}
