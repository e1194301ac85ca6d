//! Underdamped Langevin integrators driven by exactly sampled weighted
//! Brownian motion, with experiment harnesses for strong/weak convergence
//! order and for the adversarial bump-potential lower-bound machinery.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod lattice;
pub mod noise;
pub mod par;
pub mod potentials;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use rng::{RngSpec, StreamPurpose};
