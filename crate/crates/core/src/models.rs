//! Geometry, cantilever and the closed-form sphere-plane relations shared by
//! every other module: PFA capacitance, the frequency-shift/force-gradient
//! relation, the roughness correction and the equivalent-voltage bound.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{C, EPS0, HBAR};
use crate::error::{Error, Result};

/// Sphere (spherical mirror) facing a plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Radius of curvature, m.
    pub radius: f64,
    /// Mirror diameter, m.
    pub mirror_diameter: f64,
    /// Roughness variance of the sphere, m².
    #[serde(default)]
    pub h2_sphere: f64,
    /// Roughness variance of the plane, m².
    #[serde(default)]
    pub h2_plane: f64,
    /// Lateral roughness correlation length, m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_length: Option<f64>,
}

impl Geometry {
    pub fn new(radius: f64, mirror_diameter: f64) -> Result<Self> {
        let g = Geometry {
            radius,
            mirror_diameter,
            h2_sphere: 0.0,
            h2_plane: 0.0,
            correlation_length: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// R = 30.9 mm, a = 8 mm, ⟨h_s²⟩ = 4 nm², ⟨h_p²⟩ = 2.4 nm².
    pub fn reference() -> Self {
        Geometry {
            radius: 30.9e-3,
            mirror_diameter: 8.0e-3,
            h2_sphere: 4.0e-18,
            h2_plane: 2.4e-18,
            correlation_length: None,
        }
    }

    pub fn with_roughness(mut self, h2_sphere: f64, h2_plane: f64) -> Result<Self> {
        self.h2_sphere = h2_sphere;
        self.h2_plane = h2_plane;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::domain(
                "Geometry",
                format!("R = {} must be > 0", self.radius),
            ));
        }
        if !(self.mirror_diameter > 0.0 && self.mirror_diameter <= 2.0 * self.radius) {
            return Err(Error::domain(
                "Geometry",
                format!(
                    "mirror diameter {} must lie in (0, 2R]",
                    self.mirror_diameter
                ),
            ));
        }
        if self.h2_sphere < 0.0 || self.h2_plane < 0.0 {
            return Err(Error::domain(
                "Geometry",
                "roughness variances must be >= 0",
            ));
        }
        if let Some(xi) = self.correlation_length {
            if !(xi > 0.0) {
                return Err(Error::domain("Geometry", "correlation length must be > 0"));
            }
        }
        Ok(())
    }
}

/// Rectangular cantilever resonator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cantilever {
    pub length: f64,
    pub width: f64,
    pub thickness: f64,
    /// Density, kg/m³.
    pub density: f64,
    /// Young's modulus, Pa.
    pub young_modulus: f64,
    /// Physical mass, kg.
    pub m_phys: f64,
    /// Effective modal mass, kg.
    pub m_eff: f64,
    /// Proper frequency, Hz.
    pub nu_p: f64,
    /// Stiffness, N/m.
    pub stiffness: f64,
}

/// Relative tolerance between `m_phys` and ρ·L·w·t.
pub const MASS_CONSISTENCY_TOL: f64 = 0.05;

/// Silicon Young's modulus used when none is configured, Pa.
pub const DEFAULT_YOUNG_MODULUS: f64 = 1.69e11;

impl Cantilever {
    /// Laser-cut silicon cantilever: 22.56 mm × 9.93 mm × 330 µm, m_eff = 0.46 g,
    /// ν_p = 889.09 Hz. Mass and stiffness follow from the beam formulas.
    pub fn reference() -> Self {
        let mut c = Cantilever {
            length: 22.56e-3,
            width: 9.93e-3,
            thickness: 330e-6,
            density: 2.3e3,
            young_modulus: DEFAULT_YOUNG_MODULUS,
            m_phys: 0.0,
            m_eff: 0.46e-3,
            nu_p: 889.09,
            stiffness: 0.0,
        };
        let p = cantilever_predictions(&c).expect("reference cantilever is valid");
        c.m_phys = p.m_phys;
        c.stiffness = p.stiffness;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("length", self.length),
            ("width", self.width),
            ("thickness", self.thickness),
            ("density", self.density),
            ("young_modulus", self.young_modulus),
            ("m_phys", self.m_phys),
            ("m_eff", self.m_eff),
            ("nu_p", self.nu_p),
            ("stiffness", self.stiffness),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(
                    "Cantilever",
                    format!("{name} = {v} must be > 0"),
                ));
            }
        }
        let m = self.density * self.length * self.width * self.thickness;
        if ((self.m_phys - m) / m).abs() > MASS_CONSISTENCY_TOL {
            return Err(Error::domain(
                "Cantilever",
                format!("m_phys = {} inconsistent with rho*L*w*t = {m}", self.m_phys),
            ));
        }
        Ok(())
    }
}

/// PFA capacitance and its first two distance derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacitance {
    /// C, F.
    pub c: f64,
    /// dC/dx, F/m.
    pub c1: f64,
    /// d²C/dx², F/m².
    pub c2: f64,
}

pub fn pfa_capacitance(x: f64, radius: f64) -> Result<Capacitance> {
    if !(x > 0.0 && x <= radius) {
        return Err(Error::domain(
            "pfa_capacitance",
            format!("gap {x} m outside (0, R = {radius} m)"),
        ));
    }
    let k = 2.0 * PI * EPS0 * radius;
    Ok(Capacitance {
        c: k * (radius / x).ln(),
        c1: -k / x,
        c2: k / (x * x),
    })
}

/// Δν² = −F′/(4π² m_eff).
pub fn frequency_shift_from_gradient(force_gradient: f64, m_eff: f64) -> Result<f64> {
    if !(m_eff > 0.0) {
        return Err(Error::domain(
            "frequency_shift_from_gradient",
            format!("m_eff = {m_eff}"),
        ));
    }
    Ok(-force_gradient / (4.0 * PI * PI * m_eff))
}

/// Multiplicative second-order roughness factor for the electrostatic force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoughnessFactor {
    pub factor: f64,
    /// False when x < 3·max rms amplitude, where the expansion is unreliable.
    pub perturbative: bool,
}

pub fn roughness_correction(x: f64, h2_sphere: f64, h2_plane: f64) -> Result<RoughnessFactor> {
    if !(x > 0.0) {
        return Err(Error::domain("roughness_correction", format!("x = {x}")));
    }
    if h2_sphere < 0.0 || h2_plane < 0.0 {
        return Err(Error::domain("roughness_correction", "negative variance"));
    }
    let rms = h2_sphere.max(h2_plane).sqrt();
    Ok(RoughnessFactor {
        factor: 1.0 + (h2_sphere + h2_plane) / (x * x),
        perturbative: x >= 3.0 * rms,
    })
}

/// Bias whose electrostatic force gradient equals the ideal Casimir force
/// gradient at `x` (both in PFA). Scales exactly as 1/x:
/// V_eq = (π/√120)·√(ħc/ε₀)/x.
pub fn equivalent_casimir_voltage(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(
            "equivalent_casimir_voltage",
            format!("x = {x}"),
        ));
    }
    Ok(PI / 120f64.sqrt() * (HBAR * C / EPS0).sqrt() / x)
}

/// Smallest uncompensated voltage whose force equals `fraction` of the ideal
/// Casimir force at `x`. Force is quadratic in voltage, so this is
/// √fraction·V_eq.
pub fn voltage_precision_bound(x: f64, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0) {
        return Err(Error::domain(
            "voltage_precision_bound",
            format!("fraction = {fraction}"),
        ));
    }
    Ok(fraction.sqrt() * equivalent_casimir_voltage(x)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CantileverPrediction {
    pub nu_p: f64,
    pub stiffness: f64,
    pub m_phys: f64,
}

/// Fundamental flexural mode frequency, stiffness and mass of a rectangular
/// beam: ν_p = 0.162 (t/L²)√(E/ρ), k = 1.036 E w t³/L³, m = ρLwt.
pub fn cantilever_predictions(c: &Cantilever) -> Result<CantileverPrediction> {
    for (name, v) in [
        ("length", c.length),
        ("width", c.width),
        ("thickness", c.thickness),
        ("density", c.density),
        ("young_modulus", c.young_modulus),
    ] {
        if !(v > 0.0) {
            return Err(Error::domain(
                "cantilever_predictions",
                format!("{name} = {v}"),
            ));
        }
    }
    let (l, w, t) = (c.length, c.width, c.thickness);
    Ok(CantileverPrediction {
        nu_p: 0.162 * t / (l * l) * (c.young_modulus / c.density).sqrt(),
        stiffness: 1.036 * c.young_modulus * w * t.powi(3) / l.powi(3),
        m_phys: c.density * l * w * t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electrostatics::electrostatic_curvature;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn capacitance_vanishes_at_radius() {
        let c = pfa_capacitance(0.0309, 0.0309).unwrap();
        assert_eq!(c.c, 0.0);
    }

    #[test]
    fn capacitance_slope_coefficient() {
        // −2πε₀R at R = 30.9 mm is −1.72 pF to the quoted precision.
        let c = pfa_capacitance(1e-6, 30.9e-3).unwrap();
        let a = c.c1 * 1e-6;
        assert!(rel(a, -1.72e-12) < 0.005, "{a}");
    }

    #[test]
    fn capacitance_at_one_micron() {
        // mpmath, 30 digits
        let c = pfa_capacitance(1e-6, 30.9e-3).unwrap();
        assert!(rel(c.c, 1.777_235_956_950_183e-11) < 1e-12);
        assert!(rel(c.c1, -1.719_044_335_666_96e-6) < 1e-12);
        assert!(rel(c.c2, 1.719_044_335_666_96) < 1e-12);
    }

    #[test]
    fn capacitance_domain() {
        assert!(pfa_capacitance(0.0, 1.0).is_err());
        assert!(pfa_capacitance(-1e-9, 1.0).is_err());
        assert!(pfa_capacitance(1.5, 1.0).is_err());
    }

    #[test]
    fn capacitance_derivatives_match_central_differences() {
        let r = 30.9e-3;
        let mut x: f64 = 30e-9;
        while x <= 3e-6 {
            let h = x * 1e-4;
            let c = pfa_capacitance(x, r).unwrap();
            let cp = pfa_capacitance(x + h, r).unwrap();
            let cm = pfa_capacitance(x - h, r).unwrap();
            let d1 = (cp.c - cm.c) / (2.0 * h);
            let d2 = (cp.c1 - cm.c1) / (2.0 * h);
            assert!(rel(d1, c.c1) < 1e-6, "x={x}");
            assert!(rel(d2, c.c2) < 1e-6, "x={x}");
            x *= 1.37;
        }
    }

    #[test]
    fn frequency_shift_sign_and_linearity() {
        assert_eq!(frequency_shift_from_gradient(0.0, 1e-3).unwrap(), 0.0);
        let a = frequency_shift_from_gradient(-1e-3, 0.46e-3).unwrap();
        assert!(a > 0.0);
        let b = frequency_shift_from_gradient(-2e-3, 0.46e-3).unwrap();
        assert!(rel(b, 2.0 * a) < 1e-15);
        assert!(frequency_shift_from_gradient(1.0, 0.0).is_err());
    }

    #[test]
    fn frequency_shift_matches_curvature_at_48nm() {
        // Electrostatic force F = πε₀R V²/x toward the plane: F′ = −C″V²/2.
        let (r, m, x) = (30.9e-3, 0.46e-3, 48e-9);
        let c = pfa_capacitance(x, r).unwrap();
        let dnu2 = frequency_shift_from_gradient(-0.5 * c.c2, m).unwrap();
        let k = electrostatic_curvature(x, r, m).unwrap();
        assert!(rel(dnu2, k) < 1e-12);
        assert!(rel(dnu2, 2.054_267_705_779e4) < 1e-10);
    }

    #[test]
    fn roughness_values() {
        assert_eq!(roughness_correction(1e-7, 0.0, 0.0).unwrap().factor, 1.0);
        let f40 = roughness_correction(40e-9, 4e-18, 2.4e-18).unwrap();
        assert!((f40.factor - 1.004).abs() < 1e-12);
        assert!(f40.perturbative);
        let f80 = roughness_correction(80e-9, 4e-18, 2.4e-18).unwrap();
        assert!((f80.factor - 1.001).abs() < 1e-12);
        assert!(!roughness_correction(5e-9, 4e-18, 0.0).unwrap().perturbative);
        assert!(roughness_correction(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn roughness_monotone_towards_one() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let x = i as f64 * 5e-9;
            let f = roughness_correction(x, 4e-18, 2.4e-18).unwrap().factor;
            assert!(f < prev && f > 1.0);
            prev = f;
        }
    }

    #[test]
    fn equivalent_voltage_scaling() {
        let v1 = equivalent_casimir_voltage(1e-6).unwrap();
        let v2 = equivalent_casimir_voltage(2e-6).unwrap();
        assert!(rel(v2, v1 / 2.0) < 1e-15);
        assert!(rel(v1, 17.5e-3) < 0.10);
        let p = v1 * 1e-6;
        for i in 1..50 {
            let x = i as f64 * 71e-9;
            assert!(rel(equivalent_casimir_voltage(x).unwrap() * x, p) < 1e-14);
        }
        assert!(equivalent_casimir_voltage(0.0).is_err());
    }

    /// Brute-force route: finite-difference both PFA forces and bisect on V
    /// until the gradients match.
    fn gradient_matching_voltage(x: f64) -> f64 {
        let r = 30.9e-3;
        let f_el = |v: f64, x: f64| PI * EPS0 * r * v * v / x;
        let f_cas = |x: f64| PI.powi(3) * HBAR * C * r / (360.0 * x.powi(3));
        let h = x * 1e-5;
        let g_cas = (f_cas(x + h) - f_cas(x - h)) / (2.0 * h);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let v = 0.5 * (lo + hi);
            let g_el = (f_el(v, x + h) - f_el(v, x - h)) / (2.0 * h);
            if g_el.abs() < g_cas.abs() {
                lo = v;
            } else {
                hi = v;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn equivalent_voltage_matches_gradient_oracle() {
        for x in [0.2e-6, 1e-6, 2.5e-6] {
            let oracle = gradient_matching_voltage(x);
            assert!(rel(equivalent_casimir_voltage(x).unwrap(), oracle) < 1e-6);
        }
        assert!(rel(gradient_matching_voltage(1e-6), 17.1e-3) < 0.005);
    }

    #[test]
    fn precision_bound_at_one_micron() {
        let v = voltage_precision_bound(1e-6, 1e-3).unwrap();
        assert!(rel(v, 550e-6) < 0.02, "{v}");
    }

    #[test]
    fn cantilever_reference_values() {
        let c = Cantilever::reference();
        let p = cantilever_predictions(&c).unwrap();
        assert!(rel(p.nu_p, 894.0) < 0.01, "{}", p.nu_p);
        assert!(rel(p.stiffness, 5.4e3) < 0.01, "{}", p.stiffness);
        assert!(rel(p.m_phys, 1.72e-4) < 0.02, "{}", p.m_phys);
        c.validate().unwrap();
        let mut bad = c;
        bad.thickness = -1.0;
        assert!(cantilever_predictions(&bad).is_err());
    }
}
