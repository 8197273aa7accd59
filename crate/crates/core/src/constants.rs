//! CODATA 2018 physical constants (SI).

use serde::{Deserialize, Serialize};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Speed of light in vacuum, m/s.
pub const C: f64 = 299_792_458.0;
/// Vacuum permittivity, F/m.
pub const EPS0: f64 = 8.854_187_812_8e-12;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Elementary charge, C (also J per eV).
pub const E_CHARGE: f64 = 1.602_176_634e-19;
/// Apéry's constant ζ(3).
pub const ZETA3: f64 = 1.202_056_903_159_594_3;

/// The constant set as a value, for reports that echo what was used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub c: f64,
    pub eps0: f64,
    pub k_b: f64,
}

impl PhysicalConstants {
    pub const CODATA2018: PhysicalConstants = PhysicalConstants {
        hbar: HBAR,
        c: C,
        eps0: EPS0,
        k_b: K_B,
    };
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA2018
    }
}

/// Photon energy in eV to angular frequency in rad/s.
pub fn ev_to_rad_per_s(ev: f64) -> f64 {
    ev * E_CHARGE / HBAR
}

/// Angular frequency in rad/s to photon energy in eV.
pub fn rad_per_s_to_ev(omega: f64) -> f64 {
    omega * HBAR / E_CHARGE
}
