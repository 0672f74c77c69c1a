//! Ornstein–Uhlenbeck process `dX = -a X dt + b dW` with `a = e^{θ₁}`, `b = e^{θ₂}`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kalman::AffineTransition;
use super::{GaussianObservations, GaussianPrior, Link, NoiseVariance};
use crate::fk::FeynmanKacModel;
use crate::hmm::{potential_or_zero, HmmProblem, ObservationModel};
use crate::sde::DiffusionSpec;

pub const OU_OBS_VAR: f64 = 1.0;
pub const OU_PRIOR_VAR: f64 = 0.1;
pub const OU_HORIZON: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OuDiffusion;

impl DiffusionSpec for OuDiffusion {
    /// `(a, b)`.
    type Params = (f64, f64);

    fn dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn params(&self, theta: &[f64]) -> (f64, f64) {
        (theta[0].exp(), theta[1].exp())
    }

    fn drift(&self, p: &(f64, f64), x: &[f64], out: &mut [f64]) {
        out[0] = -p.0 * x[0];
    }

    fn diffusion(&self, p: &(f64, f64), _x: &[f64], out: &mut [f64]) {
        out[0] = p.1;
    }
}

pub type OuProblem = HmmProblem<OuDiffusion, GaussianObservations, GaussianPrior>;

/// OU problem with unit observation noise and `N(0, 0.1 I)` prior.
pub fn ou_problem(y: Vec<Option<f64>>, x0: f64) -> OuProblem {
    let values = y.into_iter().map(|v| v.map(|v| vec![v])).collect();
    HmmProblem::new(
        OuDiffusion,
        GaussianObservations::new(values, Link::Identity, NoiseVariance::Fixed(OU_OBS_VAR)),
        GaussianPrior { mean: vec![0.0; 2], var: OU_PRIOR_VAR },
        vec![x0],
    )
}

/// OU model with exact unit-time Gaussian transitions.
pub struct ExactOuModel<'a> {
    transition: AffineTransition,
    x0: f64,
    observations: &'a GaussianObservations,
    obs_params: Vec<f64>,
}

impl<'a> ExactOuModel<'a> {
    pub fn new(theta: &[f64], x0: f64, observations: &'a GaussianObservations) -> Self {
        ExactOuModel {
            transition: AffineTransition::ou_exact(theta[0].exp(), theta[1].exp()),
            x0,
            observations,
            obs_params: observations.params(theta),
        }
    }
}

impl FeynmanKacModel for ExactOuModel<'_> {
    fn state_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.observations.horizon()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, _rng: &mut R, out: &mut [f64]) {
        out[0] = self.x0;
    }

    fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, prev: &[f64], rng: &mut R, out: &mut [f64]) {
        let z: f64 = StandardNormal.sample(rng);
        let tr = self.transition;
        out[0] = tr.f * prev[0] + tr.shift + tr.q.sqrt() * z;
    }

    fn log_potential(&self, t: usize, x: &[f64]) -> f64 {
        potential_or_zero(self.observations, &self.obs_params, t, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::mean_var;
    use crate::rng::StreamSeed;
    use crate::sde::{euler_transition, LevelGrid};

    #[test]
    fn euler_law_matches_closed_form() {
        let theta = [0.3, -0.2];
        let p = OuDiffusion.params(&theta);
        let mut rng = StreamSeed::new(11).rng();
        for level in [0, 2, 4] {
            let g = LevelGrid::new(level, 0).unwrap();
            let draws: Vec<f64> = (0..100_000)
                .map(|_| {
                    let mut out = [0.0];
                    euler_transition(&OuDiffusion, &p, g, &[1.0], &mut rng, &mut out).unwrap();
                    out[0]
                })
                .collect();
            let tr = AffineTransition::ou_euler(p.0, p.1, level);
            let (m, v) = mean_var(&draws);
            let n = draws.len() as f64;
            assert!((m - tr.f).abs() < 4.0 * (tr.q / n).sqrt(), "level {level}: mean {m} vs {}", tr.f);
            assert!((v - tr.q).abs() < 4.0 * tr.q * (2.0 / n).sqrt(), "level {level}: var {v} vs {}", tr.q);
        }
    }
}
