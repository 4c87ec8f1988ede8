//! Numerical c-convex geometry for optimal transport with general costs.
//!
//! - [`cost`]: cost functions, derivative jets, nondegeneracy and twist checks
//! - [`mtw`]: the MTW quadratic form and cost classification
//! - [`cexp`]: c-exponential maps, cotangent charts, modified costs and dual frames
//! - [`potential`]: discrete c-convex potentials, semi-discrete transport, subdifferentials,
//!   degeneracy scans and contact sets
//! - [`loeper`]: Loeper's maximum principle and related A3w consequences
//! - [`harness`]: the proof-construction geometry and its volume-scaling checks

pub mod cexp;
pub mod cost;
pub mod error;
pub mod harness;
pub mod loeper;
pub mod mtw;
pub mod potential;
pub mod serde_vec;

pub use cost::{CostHandle, Domain, DomainPair, Point, Vector};
pub use error::{Error, Result};
