//! Geometric Brownian motion `dX = a X dW`, `a = e^θ`, observed on the log scale.

use super::{GaussianObservations, GaussianPrior, Link, NoiseVariance};
use crate::hmm::HmmProblem;
use crate::sde::DiffusionSpec;

pub const GBM_OBS_VAR: f64 = 1.0;
pub const GBM_PRIOR_VAR: f64 = 0.1;
pub const GBM_LEVEL_OFFSET: u32 = 5;

/// Euler steps at level `ℓ` have size `2^{-5-ℓ}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GbmDiffusion;

impl DiffusionSpec for GbmDiffusion {
    /// `a`.
    type Params = f64;

    fn dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn level_offset(&self) -> u32 {
        GBM_LEVEL_OFFSET
    }

    fn params(&self, theta: &[f64]) -> f64 {
        theta[0].exp()
    }

    fn drift(&self, _a: &f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn diffusion(&self, a: &f64, x: &[f64], out: &mut [f64]) {
        out[0] = a * x[0];
    }
}

pub type GbmProblem = HmmProblem<GbmDiffusion, GaussianObservations, GaussianPrior>;

/// GBM from `x_0 = 1` with `y_k ~ N(log x_k, 1)` and `N(0, 0.1)` prior.
pub fn gbm_problem(y: Vec<Option<f64>>) -> GbmProblem {
    let values = y.into_iter().map(|v| v.map(|v| vec![v])).collect();
    HmmProblem::new(
        GbmDiffusion,
        GaussianObservations::new(values, Link::Log, NoiseVariance::Fixed(GBM_OBS_VAR)),
        GaussianPrior { mean: vec![0.0], var: GBM_PRIOR_VAR },
        vec![1.0],
    )
}
