//! Particle-based samplers for energy-based models with closed-form entropy
//! tracking, plus the Stein soft actor-critic (S2AC) algorithm on a 2-D
//! multigoal environment.
//!
//! The crate is organized around a few layers:
//!
//! * [`linalg`], [`rng`], [`kernel`], [`fdiff`] — dense vector/matrix
//!   primitives, a counter-based RNG, the RBF kernel with derivatives, and
//!   finite-difference oracles.
//! * [`targets`] — analytic target densities (Gaussian, mixtures) and
//!   Q-network-backed policy targets.
//! * [`samplers`] — SVGD, SGLD, DLD and HMC-leapfrog particle dynamics.
//! * [`entropy`] — change-of-variable log-likelihood tracking: the generic
//!   trace update, sampler-specific closed forms, and an exact per-step
//!   Jacobian oracle.
//! * [`nn`] — a minimal MLP with reverse-mode gradients (parameters, inputs,
//!   and input Hessian-vector products), Adam, and Polyak averaging.
//! * [`env`] — the 2-D point-mass multigoal environment.
//! * [`agent`] — replay buffer, critic/actor/amortized updates, and the
//!   training loop.
//! * [`config`], [`experiments`] — experiment configuration and batch
//!   experiment runners backing the CLI.

pub mod agent;
pub mod config;
pub mod entropy;
pub mod env;
pub mod error;
pub mod experiments;
pub mod fdiff;
pub mod kernel;
pub mod linalg;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod samplers;
pub mod svg;
pub mod targets;

pub use error::{Error, Result};
