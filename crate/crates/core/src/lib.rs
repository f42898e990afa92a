//! Trace-driven cloud oversubscription laboratory.
//!
//! The crate contains a cluster simulator whose subscribers choose CPU
//! oversubscription rates, a primal-dual value-decomposition Q-learner that
//! trades saved cores against a probabilistic hot-machine constraint, the
//! usual static and statistical baselines, and an evaluation harness.

pub mod baselines;
pub mod cluster;
pub mod config;
pub mod env;
pub mod eval;
pub mod marl;
pub mod policy;
pub mod trace;
