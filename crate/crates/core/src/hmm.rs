//! Discretely observed diffusions as Feynman–Kac models.
//!
//! A problem bundles a diffusion, an observation model giving potentials
//! `G_t^θ(x_t)`, a prior on `θ` and a fixed start `x_0`. For each `(θ, ℓ)` it
//! yields the level-`ℓ` Euler model and the coupled `(ℓ, ℓ-1)` model.

use rand::Rng;

use crate::delta_pf::{CoupledDiffusionModel, CoupledFeynmanKac};
use crate::fk::FeynmanKacModel;
use crate::sde::{euler_transition, DiffusionSpec, LevelGrid, SdeError};

/// Observation potentials `G_t^θ(x_t)`, `t = 0..=n`.
pub trait ObservationModel: Sync {
    type Params: Send + Sync;

    fn horizon(&self) -> usize;

    fn params(&self, theta: &[f64]) -> Self::Params;

    /// `log G_t(x)`; `-inf` is a zero potential. Only called on finite `x`.
    fn log_potential(&self, p: &Self::Params, t: usize, x: &[f64]) -> f64;
}

/// Prior density (up to a constant) and sampler on `θ`.
pub trait Prior: Sync {
    fn dim(&self) -> usize;

    /// `-inf` outside the support.
    fn log_density(&self, theta: &[f64]) -> f64;

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;
}

#[derive(Clone, Debug)]
pub struct HmmProblem<D, O, P> {
    pub diffusion: D,
    pub observations: O,
    pub prior: P,
    pub x0: Vec<f64>,
}

impl<D, O, P> HmmProblem<D, O, P>
where
    D: DiffusionSpec,
    O: ObservationModel,
    P: Prior,
{
    pub fn new(diffusion: D, observations: O, prior: P, x0: Vec<f64>) -> Self {
        debug_assert_eq!(x0.len(), diffusion.dim());
        HmmProblem { diffusion, observations, prior, x0 }
    }

    pub fn horizon(&self) -> usize {
        self.observations.horizon()
    }

    pub fn theta_dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn level_model(&self, theta: &[f64], level: u32) -> Result<LevelModel<'_, D, O>, SdeError> {
        LevelModel::new(&self.diffusion, &self.observations, &self.x0, theta, level)
    }

    /// Fine leg at `level`, coarse leg at `level - 1`.
    pub fn coupled_model(&self, theta: &[f64], level: u32) -> Result<CoupledDiffusionModel<'_, D, O>, SdeError> {
        CoupledDiffusionModel::new(&self.diffusion, &self.observations, &self.x0, theta, level)
    }
}

/// Euler model at one level with observation potentials.
///
/// A diverged path is carried as `NaN` and has zero potential from then on.
pub struct LevelModel<'a, D: DiffusionSpec, O: ObservationModel> {
    diffusion: &'a D,
    params: D::Params,
    observations: &'a O,
    obs_params: O::Params,
    grid: LevelGrid,
    x0: &'a [f64],
}

impl<'a, D: DiffusionSpec, O: ObservationModel> LevelModel<'a, D, O> {
    pub fn new(
        diffusion: &'a D,
        observations: &'a O,
        x0: &'a [f64],
        theta: &[f64],
        level: u32,
    ) -> Result<Self, SdeError> {
        Ok(LevelModel {
            diffusion,
            params: diffusion.params(theta),
            observations,
            obs_params: observations.params(theta),
            grid: LevelGrid::for_spec(diffusion, level)?,
            x0,
        })
    }

    pub fn grid(&self) -> LevelGrid {
        self.grid
    }
}

impl<D: DiffusionSpec, O: ObservationModel> FeynmanKacModel for LevelModel<'_, D, O>
where
    D::Params: Sync,
    O::Params: Sync,
{
    fn state_dim(&self) -> usize {
        self.diffusion.dim()
    }

    fn horizon(&self) -> usize {
        self.observations.horizon()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, _rng: &mut R, out: &mut [f64]) {
        out.copy_from_slice(self.x0);
    }

    fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, prev: &[f64], rng: &mut R, out: &mut [f64]) {
        // Divergence leaves `out` as NaN; the potential then kills the particle.
        let _ = euler_transition(self.diffusion, &self.params, self.grid, prev, rng, out);
    }

    fn log_potential(&self, t: usize, x: &[f64]) -> f64 {
        potential_or_zero(self.observations, &self.obs_params, t, x)
    }
}

pub(crate) fn potential_or_zero<O: ObservationModel>(obs: &O, p: &O::Params, t: usize, x: &[f64]) -> f64 {
    if x.iter().all(|v| v.is_finite()) {
        obs.log_potential(p, t, x)
    } else {
        f64::NEG_INFINITY
    }
}

/// A parametrised family of level models with couplings between consecutive levels.
pub trait InferenceProblem: Sync {
    type Level<'a>: FeynmanKacModel
    where
        Self: 'a;
    type Coupled<'a>: CoupledFeynmanKac
    where
        Self: 'a;

    fn theta_dim(&self) -> usize;

    fn log_prior(&self, theta: &[f64]) -> f64;

    fn level_model(&self, theta: &[f64], level: u32) -> Result<Self::Level<'_>, SdeError>;

    /// Fails for `level = 0`.
    fn coupled_model(&self, theta: &[f64], level: u32) -> Result<Self::Coupled<'_>, SdeError>;
}

impl<D, O, P> InferenceProblem for HmmProblem<D, O, P>
where
    D: DiffusionSpec,
    O: ObservationModel,
    P: Prior,
{
    type Level<'a>
        = LevelModel<'a, D, O>
    where
        Self: 'a;
    type Coupled<'a>
        = CoupledDiffusionModel<'a, D, O>
    where
        Self: 'a;

    fn theta_dim(&self) -> usize {
        self.prior.dim()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.prior.log_density(theta)
    }

    fn level_model(&self, theta: &[f64], level: u32) -> Result<LevelModel<'_, D, O>, SdeError> {
        HmmProblem::level_model(self, theta, level)
    }

    fn coupled_model(&self, theta: &[f64], level: u32) -> Result<CoupledDiffusionModel<'_, D, O>, SdeError> {
        HmmProblem::coupled_model(self, theta, level)
    }
}
