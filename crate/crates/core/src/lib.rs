//! Linearization of incompressible hyperelasticity under pure traction
//! loads: energy densities, load functionals, flow-based recovery of
//! incompressible deformations and discrete minimizers.

pub mod domain;
pub mod energy;
pub mod flow;
pub mod loads;
pub mod poly;
pub mod error;
pub mod experiments;
pub mod rng;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
