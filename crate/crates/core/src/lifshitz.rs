//! Casimir–Lifshitz free energy between parallel plates and its proximity
//! mapping to the sphere-plane frequency shift.
//!
//! E_PP = (k_B T / 2πx²) Σ′_m Σ_p ∫_{mγ}^∞ y ln(1 − r_p² e^{−2y}) dy with
//! γ = 2πk_B T x/ħc; the m = 0 term carries half weight. At T = 0 the sum
//! becomes an integral over t = ξx/c.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::{ev_to_rad_per_s, C, HBAR, K_B};
use crate::error::{Error, Result};
use crate::models::Cantilever;
use crate::quadrature::{integrate, QuadOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaterialResponse {
    /// ε(iξ) = 1 + ω_p²/(ξ(ξ + γ_p)), both in rad/s.
    Drude { omega_p: f64, gamma_p: f64 },
    /// Absorption table ε″(ω) mapped to the imaginary axis by a dispersion
    /// integral. Below the table the Drude loss with (omega_p, gamma_p) is
    /// used; above it ε″ falls off as ω⁻³.
    TabulatedLoss {
        omega: Vec<f64>,
        eps2: Vec<f64>,
        omega_p: f64,
        gamma_p: f64,
    },
    /// r² = 1 for both polarisations at every frequency.
    PerfectConductor,
}

impl MaterialResponse {
    pub fn drude_ev(omega_p_ev: f64, gamma_p_ev: f64) -> Self {
        MaterialResponse::Drude {
            omega_p: ev_to_rad_per_s(omega_p_ev),
            gamma_p: ev_to_rad_per_s(gamma_p_ev),
        }
    }

    /// Gold, ω_p = 7.5 eV and γ_p = 0.061 eV.
    pub fn gold_drude() -> Self {
        Self::drude_ev(7.5, 0.061)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |w: f64, g: f64| {
            if w > 0.0 && g > 0.0 && w.is_finite() && g.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(
                    "MaterialResponse",
                    format!("omega_p = {w}, gamma_p = {g}"),
                ))
            }
        };
        match self {
            MaterialResponse::Drude { omega_p, gamma_p } => positive(*omega_p, *gamma_p),
            MaterialResponse::TabulatedLoss {
                omega,
                eps2,
                omega_p,
                gamma_p,
            } => {
                positive(*omega_p, *gamma_p)?;
                if omega.len() < 2 || omega.len() != eps2.len() {
                    return Err(Error::domain(
                        "MaterialResponse",
                        "table needs at least two (omega, eps2) rows of equal length",
                    ));
                }
                if omega[0] <= 0.0 || omega.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::domain(
                        "MaterialResponse",
                        "table frequencies must be positive and strictly increasing",
                    ));
                }
                if eps2.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                    return Err(Error::domain(
                        "MaterialResponse",
                        "eps2 must be finite and >= 0",
                    ));
                }
                Ok(())
            }
            MaterialResponse::PerfectConductor => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MaterialResponse::Drude { .. } => "drude",
            MaterialResponse::TabulatedLoss { .. } => "tabulated_loss",
            MaterialResponse::PerfectConductor => "perfect_conductor",
        }
    }
}

/// Two-column optical table: photon energy in eV and ε″.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalTable {
    pub energy_ev: Vec<f64>,
    pub eps2: Vec<f64>,
}

impl OpticalTable {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut energy_ev = Vec::new();
        let mut eps2 = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i as u64 + 1,
                msg,
            };
            let cols: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 2 {
                return Err(bad(format!("expected 2 columns, found {}", cols.len())));
            }
            let e: f64 = cols[0]
                .parse()
                .map_err(|_| bad(format!("bad energy `{}`", cols[0])))?;
            let l: f64 = cols[1]
                .parse()
                .map_err(|_| bad(format!("bad eps2 `{}`", cols[1])))?;
            energy_ev.push(e);
            eps2.push(l);
        }
        Ok(OpticalTable { energy_ev, eps2 })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Material built from this table with Drude extrapolation below it.
    pub fn into_material(self, omega_p_ev: f64, gamma_p_ev: f64) -> Result<MaterialResponse> {
        let m = MaterialResponse::TabulatedLoss {
            omega: self.energy_ev.iter().map(|e| ev_to_rad_per_s(*e)).collect(),
            eps2: self.eps2,
            omega_p: ev_to_rad_per_s(omega_p_ev),
            gamma_p: ev_to_rad_per_s(gamma_p_ev),
        };
        m.validate()?;
        Ok(m)
    }
}

const KK_OPTS: QuadOptions = QuadOptions {
    rel_tol: 1e-11,
    abs_tol: 0.0,
    max_subdivisions: 200,
};

/// ∫₀^a ω_p²γ / ((ω² + γ²)(ω² + ξ²)) dω, the Drude part of the dispersion
/// integral below the table.
fn drude_low_segment(a: f64, xi: f64, omega_p: f64, gamma: f64) -> Result<f64> {
    let d = xi * xi - gamma * gamma;
    if d.abs() > 1e-6 * xi * xi {
        Ok(omega_p * omega_p * gamma / d * ((a / gamma).atan() / gamma - (a / xi).atan() / xi))
    } else {
        let f = |w: f64| omega_p * omega_p * gamma / ((w * w + gamma * gamma) * (w * w + xi * xi));
        Ok(integrate(f, 0.0, a, KK_OPTS)?.value)
    }
}

fn tabulated_eps(omega: &[f64], eps2: &[f64], omega_p: f64, gamma_p: f64, xi: f64) -> Result<f64> {
    let mut sum = drude_low_segment(omega[0], xi, omega_p, gamma_p)?;
    for i in 0..omega.len() - 1 {
        let (w0, w1) = (omega[i], omega[i + 1]);
        let (e0, e1) = (eps2[i], eps2[i + 1]);
        let (u0, u1) = (w0.ln(), w1.ln());
        let loglog = e0 > 0.0 && e1 > 0.0;
        let slope = if loglog {
            (e1 / e0).ln() / (u1 - u0)
        } else {
            0.0
        };
        // In u = ln ω the integrand is ω² ε″(ω)/(ω² + ξ²).
        let f = |u: f64| {
            let w = u.exp();
            let e = if loglog {
                e0 * ((u - u0) * slope).exp()
            } else {
                e0 + (e1 - e0) * (w - w0) / (w1 - w0)
            };
            w * w * e / (w * w + xi * xi)
        };
        sum += integrate(f, u0, u1, KK_OPTS)?.value;
    }
    // ε″ = ε_N (ω_N/ω)³ above the table; with u = ω_N/ω the tail becomes
    // ε_N ∫₀¹ u²/(1 + (ξu/ω_N)²) du.
    let (wn, en) = (omega[omega.len() - 1], eps2[eps2.len() - 1]);
    let b = xi / wn;
    sum += en * integrate(|u| u * u / (1.0 + b * b * u * u), 0.0, 1.0, KK_OPTS)?.value;
    Ok(1.0 + 2.0 / PI * sum)
}

/// ε(iξ) for ξ > 0. Infinite for the perfect conductor.
pub fn permittivity_imaginary_axis(mat: &MaterialResponse, xi: f64) -> Result<f64> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::domain(
            "permittivity_imaginary_axis",
            format!("xi = {xi}"),
        ));
    }
    match mat {
        MaterialResponse::Drude { omega_p, gamma_p } => {
            Ok(1.0 + omega_p * omega_p / (xi * (xi + gamma_p)))
        }
        MaterialResponse::TabulatedLoss {
            omega,
            eps2,
            omega_p,
            gamma_p,
        } => {
            mat.validate()?;
            tabulated_eps(omega, eps2, *omega_p, *gamma_p, xi)
        }
        MaterialResponse::PerfectConductor => Ok(f64::INFINITY),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionPair {
    pub r_te: f64,
    pub r_tm: f64,
}

fn reflection_from_p(p: f64, eps: f64) -> ReflectionPair {
    if eps.is_infinite() {
        return ReflectionPair {
            r_te: -1.0,
            r_tm: -1.0,
        };
    }
    let s = (eps - 1.0 + p * p).sqrt();
    ReflectionPair {
        r_te: -(s - p) / (s + p),
        r_tm: (s - eps * p) / (s + eps * p),
    }
}

/// Fresnel coefficients at dimensionless wavevector y for Matsubara index m.
/// For m = 0 the metallic limit is returned: r_TM = −1 and r_TE = 0.
pub fn fresnel_reflection(y: f64, m: u32, gamma: f64, eps: f64) -> Result<ReflectionPair> {
    if !(gamma > 0.0) || !(eps >= 1.0) {
        return Err(Error::domain(
            "fresnel_reflection",
            format!("gamma = {gamma}, eps = {eps}"),
        ));
    }
    let lower = m as f64 * gamma;
    if !(y >= lower) {
        return Err(Error::domain(
            "fresnel_reflection",
            format!("y = {y} below m·gamma = {lower}"),
        ));
    }
    if m == 0 {
        return Ok(ReflectionPair {
            r_te: 0.0,
            r_tm: -1.0,
        });
    }
    Ok(reflection_from_p(y / lower, eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifshitzConfig {
    /// Kelvin; zero selects the continuous-frequency integral.
    pub temperature: f64,
    /// Largest Matsubara index allowed.
    pub matsubara_cutoff: u32,
    /// Stop summing once the estimated remaining tail falls below this
    /// fraction of the running sum.
    pub tail_tol: f64,
    pub quad_rel_tol: f64,
    /// Width of the y range kept above its lower limit (e^{−2·35} ≈ 10⁻³⁰).
    pub y_span: f64,
}

impl Default for LifshitzConfig {
    fn default() -> Self {
        LifshitzConfig {
            temperature: 300.0,
            matsubara_cutoff: 200_000,
            tail_tol: 1e-10,
            quad_rel_tol: 1e-8,
            y_span: 35.0,
        }
    }
}

impl LifshitzConfig {
    pub fn at_temperature(temperature: f64) -> Self {
        LifshitzConfig {
            temperature,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature = {}", self.temperature)));
        }
        for (name, v) in [
            ("tail_tol", self.tail_tol),
            ("quad_rel_tol", self.quad_rel_tol),
        ] {
            if !(v > 0.0 && v <= 1e-2) {
                return Err(Error::Config(format!("{name} = {v} outside (0, 1e-2]")));
            }
        }
        if !(self.y_span >= 10.0) {
            return Err(Error::Config(format!("y_span = {} too small", self.y_span)));
        }
        if self.matsubara_cutoff == 0 {
            return Err(Error::Config("matsubara_cutoff must be positive".into()));
        }
        Ok(())
    }

    fn quad(&self) -> QuadOptions {
        QuadOptions {
            rel_tol: self.quad_rel_tol,
            abs_tol: 0.0,
            max_subdivisions: 2000,
        }
    }
}

/// Contributions of one Matsubara index, already weighted (half for m = 0)
/// and multiplied by k_B T/2πx², J/m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatsubaraTerm {
    pub te: f64,
    pub tm: f64,
}

impl MatsubaraTerm {
    pub fn total(&self) -> f64 {
        self.te + self.tm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergy {
    /// J/m².
    pub value: f64,
    /// Number of Matsubara terms summed (0 for the T = 0 integral).
    pub terms: u32,
    pub last_term: f64,
}

/// Evaluates E_PP at many distances for one material and temperature,
/// caching ε(iξ_m) (which does not depend on x).
pub struct LifshitzEvaluator<'a> {
    mat: &'a MaterialResponse,
    cfg: LifshitzConfig,
    eps: Vec<f64>,
}

fn log_integrand(y: f64, r2: f64) -> f64 {
    y * (-r2 * (-2.0 * y).exp()).ln_1p()
}

impl<'a> LifshitzEvaluator<'a> {
    pub fn new(mat: &'a MaterialResponse, cfg: &LifshitzConfig) -> Result<Self> {
        mat.validate()?;
        cfg.validate()?;
        Ok(LifshitzEvaluator {
            mat,
            cfg: *cfg,
            eps: vec![f64::NAN],
        })
    }

    fn xi1(&self) -> f64 {
        2.0 * PI * K_B * self.cfg.temperature / HBAR
    }

    fn eps_m(&mut self, m: u32) -> Result<f64> {
        let m = m as usize;
        while self.eps.len() <= m {
            let xi = self.xi1() * self.eps.len() as f64;
            self.eps.push(permittivity_imaginary_axis(self.mat, xi)?);
        }
        Ok(self.eps[m])
    }

    fn gamma(&self, x: f64) -> f64 {
        2.0 * PI * K_B * self.cfg.temperature * x / (HBAR * C)
    }

    pub fn matsubara_term(&mut self, x: f64, m: u32) -> Result<MatsubaraTerm> {
        if !(x > 0.0) {
            return Err(Error::domain("matsubara_term", format!("x = {x}")));
        }
        if !(self.cfg.temperature > 0.0) {
            return Err(Error::domain("matsubara_term", "needs T > 0"));
        }
        let gamma = self.gamma(x);
        let pre = K_B * self.cfg.temperature / (2.0 * PI * x * x);
        let lo = m as f64 * gamma;
        let hi = lo + self.cfg.y_span;
        let q = self.cfg.quad();
        let perfect = matches!(self.mat, MaterialResponse::PerfectConductor);
        let (te, tm) = if perfect {
            let v = integrate(|y| log_integrand(y, 1.0), lo, hi, q)?.value;
            (v, v)
        } else if m == 0 {
            (0.0, integrate(|y| log_integrand(y, 1.0), 0.0, hi, q)?.value)
        } else {
            let eps = self.eps_m(m)?;
            let te = integrate(
                |y| log_integrand(y, reflection_from_p(y / lo, eps).r_te.powi(2)),
                lo,
                hi,
                q,
            )?
            .value;
            let tm = integrate(
                |y| log_integrand(y, reflection_from_p(y / lo, eps).r_tm.powi(2)),
                lo,
                hi,
                q,
            )?
            .value;
            (te, tm)
        };
        let w = if m == 0 { 0.5 } else { 1.0 };
        Ok(MatsubaraTerm {
            te: w * pre * te,
            tm: w * pre * tm,
        })
    }

    fn zero_temperature(&mut self, x: f64) -> Result<FreeEnergy> {
        let span = self.cfg.y_span;
        let q = self.cfg.quad();
        let outer = QuadOptions {
            rel_tol: (10.0 * self.cfg.quad_rel_tol).min(1e-2),
            ..q
        };
        let mat = self.mat;
        let mut failure: Option<Error> = None;
        let inner = |t: f64| -> f64 {
            let r = if matches!(mat, MaterialResponse::PerfectConductor) {
                integrate(|y| 2.0 * log_integrand(y, 1.0), t, t + span, q)
            } else {
                let eps = match permittivity_imaginary_axis(mat, t * C / x) {
                    Ok(e) => e,
                    Err(e) => {
                        failure.get_or_insert(e);
                        return f64::NAN;
                    }
                };
                integrate(
                    |y| {
                        let r = reflection_from_p(y / t, eps);
                        log_integrand(y, r.r_te * r.r_te) + log_integrand(y, r.r_tm * r.r_tm)
                    },
                    t,
                    t + span,
                    q,
                )
            };
            match r {
                Ok(v) => v.value,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        };
        let res = integrate(inner, 0.0, span, outer);
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(FreeEnergy {
            value: HBAR * C / (4.0 * PI * PI * x.powi(3)) * res?.value,
            terms: 0,
            last_term: 0.0,
        })
    }

    pub fn free_energy(&mut self, x: f64) -> Result<FreeEnergy> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::domain("plane_plane_free_energy", format!("x = {x}")));
        }
        if self.cfg.temperature == 0.0 {
            return self.zero_temperature(x);
        }
        let mut sum = 0.0;
        let mut prev = 0.0;
        let mut last = 0.0;
        for m in 0..=self.cfg.matsubara_cutoff {
            last = self.matsubara_term(x, m)?.total();
            sum += last;
            // Terms decay geometrically; bound the remaining tail by the
            // observed ratio.
            if m >= 2 {
                let ratio = (last / prev).abs();
                if ratio < 1.0 && last.abs() / (1.0 - ratio) <= self.cfg.tail_tol * sum.abs() {
                    return Ok(FreeEnergy {
                        value: sum,
                        terms: m + 1,
                        last_term: last,
                    });
                }
            }
            prev = last;
        }
        Err(Error::Quadrature(format!(
            "Matsubara sum not converged after {} terms at x = {x}: partial sum {sum}, last term {last}",
            self.cfg.matsubara_cutoff + 1
        )))
    }
}

pub fn plane_plane_free_energy(
    x: f64,
    mat: &MaterialResponse,
    cfg: &LifshitzConfig,
) -> Result<f64> {
    Ok(LifshitzEvaluator::new(mat, cfg)?.free_energy(x)?.value)
}

/// −π²ħc/720x³.
pub fn ideal_plane_plane_energy(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(
            "ideal_plane_plane_energy",
            format!("x = {x}"),
        ));
    }
    Ok(-PI * PI * HBAR * C / (720.0 * x.powi(3)))
}

/// K_Cas = πħcR/(480 m_eff), Hz²·m⁴.
pub fn ideal_casimir_coefficient(radius: f64, m_eff: f64) -> Result<f64> {
    if !(radius > 0.0 && m_eff > 0.0) {
        return Err(Error::domain(
            "ideal_casimir_coefficient",
            format!("R = {radius}, m_eff = {m_eff}"),
        ));
    }
    Ok(PI * HBAR * C * radius / (480.0 * m_eff))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CasimirShift {
    /// Δν²_Cas, Hz².
    pub nu_sq: f64,
    /// Richardson error estimate on nu_sq.
    pub error: f64,
    /// x/R; the proximity mapping is questionable above 10⁻².
    pub pfa_ratio: f64,
}

impl CasimirShift {
    pub fn pfa_questionable(&self) -> bool {
        self.pfa_ratio > 1e-2
    }
}

/// dE/dx by central differences with two Richardson levels.
pub fn energy_derivative(eval: &mut LifshitzEvaluator<'_>, x: f64) -> Result<(f64, f64)> {
    let mut central = |h: f64| -> Result<f64> {
        Ok((eval.free_energy(x + h)?.value - eval.free_energy(x - h)?.value) / (2.0 * h))
    };
    let h = 0.04 * x;
    let d1 = central(h)?;
    let d2 = central(h / 2.0)?;
    let d3 = central(h / 4.0)?;
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d3 - d2) / 3.0;
    let best = (16.0 * r2 - r1) / 15.0;
    Ok((best, (best - r2).abs().max((r2 - r1).abs() / 15.0)))
}

/// Δν²_Cas = −(R/2π m_eff) dE_PP/dx.
pub fn sphere_plane_casimir_shift(
    x: f64,
    radius: f64,
    cant: &Cantilever,
    mat: &MaterialResponse,
    cfg: &LifshitzConfig,
) -> Result<CasimirShift> {
    let mut eval = LifshitzEvaluator::new(mat, cfg)?;
    casimir_shift_with(&mut eval, x, radius, cant.m_eff)
}

pub fn casimir_shift_with(
    eval: &mut LifshitzEvaluator<'_>,
    x: f64,
    radius: f64,
    m_eff: f64,
) -> Result<CasimirShift> {
    if !(x > 0.0 && radius > x && m_eff > 0.0) {
        return Err(Error::domain(
            "sphere_plane_casimir_shift",
            format!("x = {x}, R = {radius}, m_eff = {m_eff}"),
        ));
    }
    let (de, err) = energy_derivative(eval, x)?;
    let k = radius / (2.0 * PI * m_eff);
    Ok(CasimirShift {
        nu_sq: -k * de,
        error: k * err,
        pfa_ratio: x / radius,
    })
}
