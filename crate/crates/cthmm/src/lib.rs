//! Bayesian continuous-time hidden Markov models with generalized-linear
//! emissions, trans-dimensional samplers over the number of hidden states,
//! and model-based clustering of subjects over heterogeneous dynamics.

pub mod clustering;
pub mod ctmc;
pub mod emission;
pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod hmm;
pub mod prior;
pub mod runner;
pub mod transdim;

pub use error::{Error, Result};
