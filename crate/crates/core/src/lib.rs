//! Tabular state marginal matching on finite MDPs.
//!
//! The crate computes exact state marginals of tabular policies and runs
//! fictitious play between a policy player (exact backward induction) and a
//! density player (histograms), alongside mixture-of-policies variants,
//! prediction-error exploration baselines and goal-reaching target
//! distributions.

pub mod baselines;
pub mod config;
pub mod density;
pub mod error;
pub mod experiment;
pub mod goals;
pub mod io;
pub mod marginal;
pub mod mdp;
pub mod sm4;
pub mod smm;
pub mod solvers;

pub use error::{Error, Result};
