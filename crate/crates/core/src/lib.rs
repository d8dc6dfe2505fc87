//! Collective decay of multilevel atoms: point-model, cumulant and exact
//! solvers for superradiant bursts in ordered arrays.

pub mod analysis;
pub mod atoms;
pub mod criteria;
pub mod cumulant;
pub mod dicke_point;
pub mod error;
pub mod exact;
pub mod geometry;
pub mod interactions;
pub mod ode;
pub mod record;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
