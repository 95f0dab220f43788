//! Stochastic mirror Langevin dynamics for Bayesian models with
//! positive-definite-constrained parameters.
//!
//! The crate provides:
//! - mirror maps (barrier geometry) for unconstrained, positive-scalar,
//!   and positive-definite parameter blocks ([`mirror_maps`]);
//! - Langevin-type Markov kernels (full-batch and minibatch, Euclidean and
//!   mirrored) with a deterministic chain runner ([`samplers`]);
//! - generalized linear mixed models with Fisher-identity stochastic
//!   gradients and inner random-effect samplers ([`glmm`]);
//! - the Lyapunov-equation posterior-variance correction ([`correction`]);
//! - closed-form toy targets ([`toy_targets`]) and independent ground-truth
//!   engines used by tests and validation runs ([`oracles`]).

pub mod correction;
pub mod error;
pub mod glmm;
pub mod linalg;
pub mod mirror_maps;
pub mod oracles;
pub mod rng;
pub mod samplers;
pub mod summary;
pub mod toy_targets;
pub mod trace;
pub mod vech;

pub use error::{Result, SmldError};
