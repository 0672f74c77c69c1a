//! Random-walk proposals, including the adaptive Metropolis covariance rule
//! `C = (2.38²/d)(Σ̂ + λI)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::cholesky;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProposalError {
    #[error("adaptation needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, got: usize, expected: usize },
    #[error("proposal covariance is not positive definite")]
    NotPositiveDefinite,
}

/// Proposal kernel `q(· | θ)` for the parameter chain.
pub trait Proposal {
    fn propose<R: Rng + ?Sized>(&mut self, current: &[f64], rng: &mut R) -> Vec<f64>;

    /// `log q(from | to) - log q(to | from)`; zero for symmetric kernels.
    fn log_ratio(&self, _from: &[f64], _to: &[f64]) -> f64 {
        0.0
    }

    /// Called once per iteration with the current state.
    fn observe(&mut self, _state: &[f64], _in_burn_in: bool) {}
}

/// Running mean and covariance (denominator `n - 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCovariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl EmpiricalCovariance {
    pub fn new(dim: usize) -> Self {
        EmpiricalCovariance { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim * dim] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn push(&mut self, x: &[f64]) {
        let d = self.mean.len();
        self.n += 1;
        let nf = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / nf;
        }
        for i in 0..d {
            let after_i = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[i * d + j] += delta[j] * after_i;
            }
        }
    }

    /// Row-major `d x d`; `None` with fewer than 2 samples.
    pub fn covariance(&self) -> Option<Vec<f64>> {
        (self.n >= 2).then(|| self.m2.iter().map(|v| v / (self.n as f64 - 1.0)).collect())
    }
}

/// `(2.38²/d)(cov + λI)`.
pub fn scaled_covariance(cov: &[f64], d: usize, lambda: f64) -> Vec<f64> {
    let s = 2.38 * 2.38 / d as f64;
    let mut out: Vec<f64> = cov.iter().map(|c| s * c).collect();
    for i in 0..d {
        out[i * d + i] += s * lambda;
    }
    out
}

/// Adaptive Metropolis covariance from a sample history.
pub fn adapt_proposal(history: &[Vec<f64>], lambda: f64) -> Result<Vec<f64>, ProposalError> {
    let d = history.first().map_or(0, |h| h.len());
    if history.len() < 2 {
        return Err(ProposalError::TooFewSamples(history.len()));
    }
    let mut acc = EmpiricalCovariance::new(d);
    for (index, h) in history.iter().enumerate() {
        if h.len() != d {
            return Err(ProposalError::DimensionMismatch { index, got: h.len(), expected: d });
        }
        acc.push(h);
    }
    Ok(scaled_covariance(&acc.covariance().expect("two or more samples"), d, lambda))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationSettings {
    /// Jitter `λ` added to the empirical covariance.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Samples collected before the first update.
    #[serde(default = "default_start")]
    pub start: usize,
    /// Iterations between updates.
    #[serde(default = "default_every")]
    pub every: usize,
    /// Probability of proposing from the starting covariance instead of the
    /// adapted one. A positive value keeps a chain whose history has
    /// collapsed onto one point able to move.
    #[serde(default)]
    pub mix: f64,
}

fn default_lambda() -> f64 {
    1e-6
}

fn default_start() -> usize {
    100
}

fn default_every() -> usize {
    50
}

impl Default for AdaptationSettings {
    fn default() -> Self {
        AdaptationSettings { lambda: default_lambda(), start: default_start(), every: default_every(), mix: 0.0 }
    }
}

/// Gaussian random walk whose covariance adapts during burn-in and is frozen afterwards.
#[derive(Clone, Debug)]
pub struct AdaptiveRandomWalk {
    dim: usize,
    chol: Vec<f64>,
    /// Cholesky factor of the starting covariance.
    base: Vec<f64>,
    history: EmpiricalCovariance,
    settings: Option<AdaptationSettings>,
}

impl AdaptiveRandomWalk {
    /// Fixed random walk `N(θ, cov)`.
    pub fn fixed(cov: &[f64], dim: usize) -> Result<Self, ProposalError> {
        let chol = cholesky(cov, dim).ok_or(ProposalError::NotPositiveDefinite)?;
        Ok(AdaptiveRandomWalk { dim, base: chol.clone(), chol, history: EmpiricalCovariance::new(dim), settings: None })
    }

    /// Random walk starting from `cov`, adapted with `settings` during burn-in.
    pub fn adaptive(cov: &[f64], dim: usize, settings: AdaptationSettings) -> Result<Self, ProposalError> {
        let mut walk = Self::fixed(cov, dim)?;
        walk.settings = Some(settings);
        Ok(walk)
    }

    /// Isotropic starting covariance `s² I`.
    pub fn isotropic(scale: f64, dim: usize) -> Vec<f64> {
        let mut c = vec![0.0; dim * dim];
        for i in 0..dim {
            c[i * dim + i] = scale * scale;
        }
        c
    }

    /// Current covariance `L Lᵀ`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = (0..d).map(|k| self.chol[i * d + k] * self.chol[j * d + k]).sum();
            }
        }
        c
    }
}

impl Proposal for AdaptiveRandomWalk {
    fn propose<R: Rng + ?Sized>(&mut self, current: &[f64], rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        let mix = self.settings.map_or(0.0, |s| s.mix);
        // Both components are symmetric, so the mixture is too.
        let chol = if mix > 0.0 && rng.random::<f64>() < mix { &self.base } else { &self.chol };
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        (0..d).map(|i| current[i] + (0..=i).map(|k| chol[i * d + k] * z[k]).sum::<f64>()).collect()
    }

    fn observe(&mut self, state: &[f64], in_burn_in: bool) {
        let Some(s) = self.settings else {
            return;
        };
        if !in_burn_in {
            return;
        }
        self.history.push(state);
        let n = self.history.len();
        if n >= s.start.max(2) && (n - s.start.max(2)).is_multiple_of(s.every.max(1)) {
            let cov = scaled_covariance(&self.history.covariance().expect("n >= 2"), self.dim, s.lambda);
            if let Some(chol) = cholesky(&cov, self.dim) {
                self.chol = chol;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;

    #[test]
    fn constant_history_gives_jitter() {
        let lambda = 1e-3;
        let cov = adapt_proposal(&vec![vec![0.4, -1.0]; 5], lambda).unwrap();
        let s = 2.38f64.powi(2) / 2.0;
        assert_eq!(cov, vec![s * lambda, 0.0, 0.0, s * lambda]);
    }

    #[test]
    fn two_point_history() {
        let cov = adapt_proposal(&[vec![0.0, 0.0], vec![2.0, 0.0]], 0.0).unwrap();
        let s = 2.38f64.powi(2) / 2.0;
        assert!((cov[0] - 2.0 * s).abs() < 1e-12);
        assert_eq!(&cov[1..], &[0.0, 0.0, 0.0]);
        assert!(adapt_proposal(&[vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn running_covariance_matches_batch() {
        let mut rng = StreamSeed::new(3).rng();
        let xs: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let mut acc = EmpiricalCovariance::new(3);
        xs.iter().for_each(|x| acc.push(x));
        let c = acc.covariance().unwrap();
        let mean: Vec<f64> = (0..3).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / 50.0).collect();
        for i in 0..3 {
            for j in 0..3 {
                let direct: f64 = xs.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / 49.0;
                assert!((c[i * 3 + j] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adaptation_freezes_after_burn_in() {
        let settings = AdaptationSettings { lambda: 1e-6, start: 2, every: 1, mix: 0.0 };
        let mut walk = AdaptiveRandomWalk::adaptive(&AdaptiveRandomWalk::isotropic(1.0, 1), 1, settings).unwrap();
        walk.observe(&[0.0], true);
        walk.observe(&[2.0], true);
        let adapted = walk.covariance()[0];
        assert!((adapted - 2.38f64.powi(2) * (2.0 + 1e-6)).abs() < 1e-9);
        walk.observe(&[100.0], false);
        assert_eq!(walk.covariance()[0], adapted);
    }
}
