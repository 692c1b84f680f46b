//! Simulation of evolutionary federated learning over networks with
//! phase-shifted sine layers.
//!
//! Each round, clients perturb the global parameters with Gaussian noise,
//! fine-tune every perturbed copy with mini-batch SGD, keep the best one,
//! add Gaussian privacy noise and send it to the server, which averages.

pub mod data;
pub mod error;
pub mod evolution;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod privacy;
pub mod rng;

pub use error::{QeflError, Result};
