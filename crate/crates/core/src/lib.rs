//! Paracontrolled calculus on Bravais lattices.

pub mod error;
pub mod lattice;
pub mod spectral;
pub mod calculus;
pub mod diffusion;
pub mod stochastic;
pub mod pam;
pub mod harness;

pub use error::{Error, Result};
