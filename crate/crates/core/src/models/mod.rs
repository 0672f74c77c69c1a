//! Reference diffusions with Gaussian observations and their exact oracles.

pub mod gbm;
pub mod kalman;
pub mod ou;
pub mod pearson;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hmm::{ObservationModel, Prior};
use crate::numeric::normal_log_pdf;
use crate::sde::{euler_transition, DiffusionSpec, LevelGrid, SdeError};

pub use gbm::{gbm_problem, GbmDiffusion, GbmProblem, GBM_LEVEL_OFFSET, GBM_OBS_VAR, GBM_PRIOR_VAR};
pub use ou::{ou_problem, ExactOuModel, OuDiffusion, OuProblem, OU_HORIZON, OU_OBS_VAR, OU_PRIOR_VAR};
pub use pearson::{pearson_problem, PearsonDiffusion, PearsonProblem, PEARSON_PRIOR_BOX, PEARSON_TRUTH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("simulated path diverged: {0}")]
    Diverged(#[from] SdeError),
    #[error("latent state at time {t} is not positive; log link undefined")]
    NonPositive { t: usize },
    #[error("observation at time {t} has {got} components, expected {expected}")]
    ObservationShape { t: usize, got: usize, expected: usize },
}

/// Map from latent state to observation mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Identity,
    Log,
}

impl Link {
    fn apply(self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Log if x > 0.0 => x.ln(),
            Link::Log => f64::NAN,
        }
    }
}

/// Observation noise variances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseVariance {
    /// Same variance for every component.
    Fixed(f64),
    /// Component `j` has variance `θ[first + j]`.
    Parameter { first: usize },
}

/// `y_t ~ N(link(x_t), diag(v))` at observed times; unobserved times have `G_t ≡ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianObservations {
    /// Indexed by `t = 0..=n`.
    pub values: Vec<Option<Vec<f64>>>,
    pub link: Link,
    pub noise: NoiseVariance,
}

impl GaussianObservations {
    pub fn new(values: Vec<Option<Vec<f64>>>, link: Link, noise: NoiseVariance) -> Self {
        GaussianObservations { values, link, noise }
    }

    /// Scalar series, `None` at unobserved times.
    pub fn scalar(&self) -> Vec<Option<f64>> {
        self.values.iter().map(|v| v.as_ref().map(|v| v[0])).collect()
    }

    /// Check each observation has `dim` components.
    pub fn validate(&self, dim: usize) -> Result<(), ModelError> {
        for (t, v) in self.values.iter().enumerate() {
            if let Some(v) = v {
                if v.len() != dim {
                    return Err(ModelError::ObservationShape { t, got: v.len(), expected: dim });
                }
            }
        }
        Ok(())
    }

    fn variances(&self, theta: &[f64], dim: usize) -> Vec<f64> {
        match self.noise {
            NoiseVariance::Fixed(v) => vec![v; dim],
            NoiseVariance::Parameter { first } => theta[first..first + dim].to_vec(),
        }
    }
}

impl ObservationModel for GaussianObservations {
    type Params = Vec<f64>;

    fn horizon(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    fn params(&self, theta: &[f64]) -> Vec<f64> {
        let dim = self.values.iter().flatten().next().map_or(1, |v| v.len());
        self.variances(theta, dim)
    }

    fn log_potential(&self, var: &Vec<f64>, t: usize, x: &[f64]) -> f64 {
        let Some(y) = &self.values[t] else {
            return 0.0;
        };
        let mut acc = 0.0;
        for ((yj, xj), vj) in y.iter().zip(x).zip(var) {
            let m = self.link.apply(*xj);
            if m.is_nan() || !(*vj > 0.0) {
                return f64::NEG_INFINITY;
            }
            acc += normal_log_pdf(*yj, m, *vj);
        }
        acc
    }
}

/// Isotropic Gaussian prior `N(mean, var I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub var: f64,
}

impl Prior for GaussianPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.mean).map(|(t, m)| normal_log_pdf(*t, *m, self.var)).sum()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let sd = self.var.sqrt();
        self.mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + sd * z
            })
            .collect()
    }
}

/// Uniform prior on a closed box.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformBoxPrior {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl UniformBoxPrior {
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Self {
        UniformBoxPrior { lower: bounds.iter().map(|b| b.0).collect(), upper: bounds.iter().map(|b| b.1).collect() }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.iter().zip(self.lower.iter().zip(&self.upper)).all(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
    }
}

impl Prior for UniformBoxPrior {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            -self.lower.iter().zip(&self.upper).map(|(lo, hi)| (hi - lo).ln()).sum::<f64>()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                let u: f64 = rng.random();
                lo + (hi - lo) * u
            })
            .collect()
    }
}

/// Which times to observe and how.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationDesign {
    /// `observed[t]` for `t = 0..=n`.
    pub observed: Vec<bool>,
    pub link: Link,
    pub noise: NoiseVariance,
}

/// Forward-simulate the level-`ℓ` Euler skeleton from `x0` and add noise.
///
/// Returns the observations and the latent skeleton `x_{0:n}`.
pub fn simulate_data<D, R>(
    diffusion: &D,
    theta: &[f64],
    x0: &[f64],
    level: u32,
    design: &ObservationDesign,
    rng: &mut R,
) -> Result<(GaussianObservations, Vec<Vec<f64>>), ModelError>
where
    D: DiffusionSpec,
    R: Rng + ?Sized,
{
    let d = diffusion.dim();
    let params = diffusion.params(theta);
    let grid = LevelGrid::for_spec(diffusion, level)?;
    let template = GaussianObservations::new(Vec::new(), design.link, design.noise);
    let var = template.variances(theta, d);
    let mut latent = Vec::with_capacity(design.observed.len());
    let mut values = Vec::with_capacity(design.observed.len());
    let mut x = x0.to_vec();
    for (t, &obs) in design.observed.iter().enumerate() {
        if t > 0 {
            let mut next = vec![0.0; d];
            euler_transition(diffusion, &params, grid, &x, rng, &mut next)?;
            x = next;
        }
        if obs {
            let mut y = Vec::with_capacity(d);
            for (xj, vj) in x.iter().zip(&var) {
                let m = design.link.apply(*xj);
                if m.is_nan() {
                    return Err(ModelError::NonPositive { t });
                }
                let z: f64 = StandardNormal.sample(rng);
                y.push(m + vj.sqrt() * z);
            }
            values.push(Some(y));
        } else {
            values.push(None);
        }
        latent.push(x.clone());
    }
    Ok((GaussianObservations::new(values, design.link, design.noise), latent))
}
