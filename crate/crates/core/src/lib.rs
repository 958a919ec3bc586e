pub mod bspline;
pub mod cfm;
pub mod error;
pub mod field;
pub mod ode;
pub mod partition;
pub mod points;
pub mod quadrature;
pub mod rng;
pub mod schedules;
pub mod stats;
pub mod targets;
pub mod theory;
pub mod velocity_model;
pub mod wasserstein;

pub use error::{Error, Result};
