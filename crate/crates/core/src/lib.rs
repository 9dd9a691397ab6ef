//! Recursive parameter estimation.
//!
//! The estimator `theta_t = theta_{t-1} + Gamma_t^{-1}(theta_{t-1}) psi_t(theta_{t-1})`
//! is driven by an [`EstimatingFunction`] and a predictable [`Normalizer`].
//! Models, robust estimating functions, diagnostics and a seeded replication
//! harness are built on top of the engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod functions;
pub mod linalg;
pub mod models;
pub mod normalizers;
pub mod quadrature;
pub mod rng;
pub mod robust;
pub mod simulator;

pub use engine::{
    linear_statistic, linear_statistic_forms, run, EstimatingFunction, EstimatorState, GammaMode,
    Normalizer, OnlineEstimator, Record, Recursion, Trajectory,
};
pub use error::{Error, Result};
pub use linalg::{solve_linear, Matrix};
