//! Electrostatic calibration, contact-potential reconstruction and
//! Casimir–Lifshitz residual analysis for sphere-plane force experiments
//! read out through the frequency shift of a resonating cantilever.

pub mod cli;
pub mod constants;
pub mod contact_potential;
pub mod electrostatics;
pub mod error;
pub mod fitting;
pub mod io;
pub mod lifshitz;
pub mod lsq;
pub mod models;
pub mod ode;
pub mod pipeline;
pub mod quadrature;
pub mod spline;

pub use error::{Error, FitError, OdeError, Result};
