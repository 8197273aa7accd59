//! Sphere-plane electrostatics with a distance-dependent contact potential.
//!
//! With energy E = C(x)/2 (V − V_c(x))², the quantity the resonator sees is
//! E″, which regroups as A(V − V_c + B)² + D. The bias that minimises the
//! shift is V₀ = V_c − B, and D survives even at V = V₀ whenever V_c varies
//! with distance.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::EPS0;
use crate::error::{Error, Result};
use crate::models::{pfa_capacitance, Cantilever, Capacitance, Geometry};
use crate::spline::CubicSpline;

/// Value and first two distance derivatives of a potential law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialDerivs {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Parametric or tabulated potential as a function of gap distance. Used both
/// for the contact potential V_c(x) and for minimizing-potential laws V₀(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContactPotentialModel {
    Constant {
        v: f64,
    },
    /// v0 + dv·(1 − exp(−x/λ))
    Exponential {
        v0: f64,
        dv: f64,
        lambda: f64,
    },
    /// v_log + dv_log·ln(x/Λ)
    Logarithmic {
        v_log: f64,
        dv_log: f64,
        big_lambda: f64,
    },
    Tabulated {
        spline: CubicSpline,
    },
}

impl ContactPotentialModel {
    pub fn tabulated(x: &[f64], v: &[f64]) -> Result<Self> {
        Ok(ContactPotentialModel::Tabulated {
            spline: CubicSpline::new(x, v)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ContactPotentialModel::Exponential { lambda, .. } if !(lambda > 0.0) => Err(
                Error::domain("ContactPotentialModel", format!("lambda = {lambda}")),
            ),
            ContactPotentialModel::Logarithmic { big_lambda, .. } if !(big_lambda > 0.0) => Err(
                Error::domain("ContactPotentialModel", format!("Lambda = {big_lambda}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ContactPotentialModel::Constant { .. })
    }

    /// Distance range on which the model is defined.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            ContactPotentialModel::Tabulated { spline } => (spline.x_min(), spline.x_max()),
            ContactPotentialModel::Logarithmic { .. } => (f64::MIN_POSITIVE, f64::INFINITY),
            _ => (0.0, f64::INFINITY),
        }
    }

    pub fn eval(&self, x: f64) -> Result<PotentialDerivs> {
        match *self {
            ContactPotentialModel::Constant { v } => Ok(PotentialDerivs {
                v,
                d1: 0.0,
                d2: 0.0,
            }),
            ContactPotentialModel::Exponential { v0, dv, lambda } => {
                let e = (-x / lambda).exp();
                Ok(PotentialDerivs {
                    v: v0 + dv * (1.0 - e),
                    d1: dv / lambda * e,
                    d2: -dv / (lambda * lambda) * e,
                })
            }
            ContactPotentialModel::Logarithmic {
                v_log,
                dv_log,
                big_lambda,
            } => {
                if !(x > 0.0) {
                    return Err(Error::domain("logarithmic potential", format!("x = {x}")));
                }
                Ok(PotentialDerivs {
                    v: v_log + dv_log * (x / big_lambda).ln(),
                    d1: dv_log / x,
                    d2: -dv_log / (x * x),
                })
            }
            ContactPotentialModel::Tabulated { ref spline } => {
                let (v, d1, d2) = spline.eval(x)?;
                Ok(PotentialDerivs { v, d1, d2 })
            }
        }
    }
}

/// E″ = A(V − V_c + B)² + D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectrostaticCoefficients {
    /// C″/2, J/(m²·V²).
    pub a: f64,
    /// V.
    pub b: f64,
    /// J/m².
    pub d: f64,
}

/// ν²(V) = ν₀² − K_el (V − V₀)².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageParabola {
    /// Vertex value, Hz².
    pub nu0_sq: f64,
    /// Curvature, Hz²/V² (positive; the model subtracts it).
    pub k_el: f64,
    /// Vertex abscissa, V.
    pub v0: f64,
}

impl VoltageParabola {
    pub fn eval(&self, v: f64) -> f64 {
        self.nu0_sq - self.k_el * (v - self.v0).powi(2)
    }
}

fn capacitance_checked(x: f64, g: &Geometry, what: &'static str) -> Result<Capacitance> {
    if !(x > 0.0 && x < g.radius) {
        return Err(Error::domain(what, format!("x = {x} outside (0, R)")));
    }
    pfa_capacitance(x, g.radius)
}

/// 2C′V_c′ + C V_c″, the combination shared by B, D and V₀.
fn cross_term(c: &Capacitance, vc: &PotentialDerivs) -> f64 {
    2.0 * c.c1 * vc.d1 + c.c * vc.d2
}

pub fn energy_second_derivative(
    x: f64,
    v: f64,
    vc: &ContactPotentialModel,
    g: &Geometry,
) -> Result<f64> {
    let c = capacitance_checked(x, g, "energy_second_derivative")?;
    let p = vc.eval(x)?;
    let u = v - p.v;
    Ok(0.5 * c.c2 * u * u - cross_term(&c, &p) * u + c.c * p.d1 * p.d1)
}

pub fn regrouped_coefficients(
    x: f64,
    vc: &ContactPotentialModel,
    g: &Geometry,
) -> Result<ElectrostaticCoefficients> {
    let c = capacitance_checked(x, g, "regrouped_coefficients")?;
    let p = vc.eval(x)?;
    let q = cross_term(&c, &p);
    Ok(ElectrostaticCoefficients {
        a: 0.5 * c.c2,
        b: -q / c.c2,
        d: c.c * p.d1 * p.d1 - q * q / (2.0 * c.c2),
    })
}

pub fn minimizing_potential(x: f64, vc: &ContactPotentialModel, g: &Geometry) -> Result<f64> {
    let c = capacitance_checked(x, g, "minimizing_potential")?;
    let p = vc.eval(x)?;
    Ok(p.v + cross_term(&c, &p) / c.c2)
}

/// K_el = ε₀R / (4π m_eff x²).
pub fn electrostatic_curvature(x: f64, radius: f64, m_eff: f64) -> Result<f64> {
    if !(x > 0.0 && x < radius) {
        return Err(Error::domain("electrostatic_curvature", format!("x = {x}")));
    }
    if !(m_eff > 0.0) {
        return Err(Error::domain(
            "electrostatic_curvature",
            format!("m_eff = {m_eff}"),
        ));
    }
    Ok(EPS0 * radius / (4.0 * PI * m_eff * x * x))
}

/// Effective mass implied by a fixed-exponent curvature prefactor α
/// (in Hz²·V⁻²·V_PZT²) and actuation coefficient β.
pub fn effective_mass_from_alpha(alpha: f64, beta: f64, radius: f64) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0 && radius > 0.0) {
        return Err(Error::domain(
            "effective_mass_from_alpha",
            "inputs must be positive",
        ));
    }
    Ok(EPS0 * radius / (4.0 * PI * alpha * beta * beta))
}

/// Bias-independent shift −D/(4π² m_eff) for a contact potential law.
pub fn bias_independent_shift(
    x: f64,
    vc: &ContactPotentialModel,
    g: &Geometry,
    m_eff: f64,
) -> Result<f64> {
    let coeffs = regrouped_coefficients(x, vc, g)?;
    Ok(-coeffs.d / (4.0 * PI * PI * m_eff))
}

/// Squared frequency under Coulomb forces alone:
/// ν² = ν₀² − C″/(8π² m)(V − V₀)² + [−C V_c′² + (2C′V_c′ + C V_c″)²/(2C″)]/(4π² m).
pub fn coulombian_frequency_sq(
    x: f64,
    v: f64,
    vc: &ContactPotentialModel,
    g: &Geometry,
    cant: &Cantilever,
    nu0_sq: f64,
) -> Result<f64> {
    let m = cant.m_eff;
    if !(m > 0.0) {
        return Err(Error::domain(
            "coulombian_frequency_sq",
            format!("m_eff = {m}"),
        ));
    }
    let c = capacitance_checked(x, g, "coulombian_frequency_sq")?;
    let p = vc.eval(x)?;
    let q = cross_term(&c, &p);
    let v0 = p.v + q / c.c2;
    let w = 1.0 / (4.0 * PI * PI * m);
    Ok(
        nu0_sq - 0.5 * w * c.c2 * (v - v0).powi(2)
            + w * (-c.c * p.d1 * p.d1 + q * q / (2.0 * c.c2)),
    )
}
