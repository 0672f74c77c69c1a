//! Bivariate Pearson diffusion `dX = ρ(X - μ) dt + σ D(X) dW`,
//! `D(x) = diag(√(1 + x₁²), √(1 + x₂²))`, observed as `Y ~ N(X, diag(Σ₁₁, Σ₂₂))`.
//!
//! `θ` packs `(ρ₁₁, ρ₁₂, ρ₂₂, μ₁, μ₂, σ₁₁, σ₁₂, σ₂₂, Σ₁₁, Σ₂₂)`.

use super::{GaussianObservations, Link, NoiseVariance, UniformBoxPrior};
use crate::hmm::HmmProblem;
use crate::sde::DiffusionSpec;

pub const PEARSON_TRUTH: [f64; 10] = [-0.5, 0.25, -0.75, 1.0, 2.0, 0.5, -0.25, 0.75, 0.25, 0.25];

pub const PEARSON_PRIOR_BOX: [(f64, f64); 10] = [
    (-2.0, 0.0),
    (-1.0, 1.0),
    (-2.0, 0.0),
    (-0.2, 1.0),
    (1.6, 3.0),
    (0.0, 6.6),
    (-8.3, 1.8),
    (0.0, 7.2),
    (0.0, 1.0),
    (0.0, 1.0),
];

/// First index of the observation variances inside `θ`.
pub const PEARSON_NOISE_INDEX: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PearsonParams {
    pub rho: [[f64; 2]; 2],
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
}

impl PearsonParams {
    pub fn unpack(theta: &[f64]) -> Self {
        PearsonParams {
            rho: [[theta[0], theta[1]], [theta[1], theta[2]]],
            mu: [theta[3], theta[4]],
            sigma: [[theta[5], theta[6]], [theta[6], theta[7]]],
        }
    }
}

/// Level `ℓ` uses step size `2^-(level_offset + ℓ)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PearsonDiffusion {
    pub level_offset: u32,
}

impl DiffusionSpec for PearsonDiffusion {
    type Params = PearsonParams;

    fn dim(&self) -> usize {
        2
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn level_offset(&self) -> u32 {
        self.level_offset
    }

    fn params(&self, theta: &[f64]) -> PearsonParams {
        PearsonParams::unpack(theta)
    }

    fn drift(&self, p: &PearsonParams, x: &[f64], out: &mut [f64]) {
        let dx = [x[0] - p.mu[0], x[1] - p.mu[1]];
        for i in 0..2 {
            out[i] = p.rho[i][0] * dx[0] + p.rho[i][1] * dx[1];
        }
    }

    fn diffusion(&self, p: &PearsonParams, x: &[f64], out: &mut [f64]) {
        let dcol = [(1.0 + x[0] * x[0]).sqrt(), (1.0 + x[1] * x[1]).sqrt()];
        for i in 0..2 {
            for j in 0..2 {
                out[i * 2 + j] = p.sigma[i][j] * dcol[j];
            }
        }
    }
}

pub type PearsonProblem = HmmProblem<PearsonDiffusion, GaussianObservations, UniformBoxPrior>;

pub fn pearson_problem(values: Vec<Option<Vec<f64>>>, x0: [f64; 2], level_offset: u32) -> PearsonProblem {
    HmmProblem::new(
        PearsonDiffusion { level_offset },
        GaussianObservations::new(values, Link::Identity, NoiseVariance::Parameter { first: PEARSON_NOISE_INDEX }),
        UniformBoxPrior::from_bounds(&PEARSON_PRIOR_BOX),
        x0.to_vec(),
    )
}
