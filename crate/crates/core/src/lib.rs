//! Bayesian inference for discretely observed diffusions without
//! discretisation bias.
//!
//! A particle marginal Metropolis–Hastings chain runs on the coarsest Euler
//! model. Each accepted state then receives one importance-sampling
//! correction from a delta particle filter at a randomly drawn level, so
//! that the self-normalised estimator targets the posterior of the finest
//! model in the support of the level distribution.
//!
//! Modules, bottom up: [`rng`] and [`numeric`] utilities; [`sde`] Euler
//! schemes and their coupling; [`fk`] weighted path clouds; [`pf`] and
//! [`delta_pf`] filters; [`rmlmc`] level distributions and the single-term
//! estimator; [`hmm`] and [`models`] inference problems; [`pmmh`] the two
//! phases; [`harness`] configured, replicated experiments.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod delta_pf;
pub mod fk;
pub mod harness;
pub mod hmm;
pub mod models;
pub mod numeric;
pub mod pf;
pub mod pmmh;
pub mod rmlmc;
pub mod rng;
pub mod sde;
