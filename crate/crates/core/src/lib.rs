//! Multi-fidelity co-design of agent morphology and control.
//!
//! A HyperBand scheduler allocates training budget across sampled designs,
//! while a single design-conditioned policy is trained on every evaluation
//! so that later (cheaper) evaluations start from a warmer controller.

pub mod analysis;
pub mod envs;
pub mod error;
pub mod policy;
pub mod rng;
pub mod records;
pub mod schedule;
pub mod search;

pub use error::{Error, Result};
