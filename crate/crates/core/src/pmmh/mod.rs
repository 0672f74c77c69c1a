//! Coarse-level particle marginal Metropolis–Hastings followed by
//! importance-sampling corrections from randomised delta particle filters.
//!
//! Phase one runs a PMMH chain at level 0 whose likelihood estimate is
//! `ΣV + ε`. It is stored as a jump chain: accepted states with holding
//! times. Phase two attaches one independent correction to every accepted
//! state, and the self-normalised estimator combines both.

pub mod checkpoint;
pub mod correction;
pub mod proposal;

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fk::{FkError, WeightedCloud};
use crate::hmm::InferenceProblem;
use crate::numeric::log_add_exp;
use crate::pf::{run_pf, PfError, ResamplingScheme};
use crate::sde::SdeError;

pub use correction::{
    is_estimate, is_estimate_subsampled, is_estimate_vec, run_corrections, subsample, CorrectionRecord,
    CorrectionSettings, SubsampledRecord,
};
pub use proposal::{adapt_proposal, AdaptationSettings, AdaptiveRandomWalk, Proposal, ProposalError};

/// Attempts at the initial parameter before giving up on a zero estimate.
const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum PmmhError {
    #[error("prior density is zero at the initial parameter")]
    ZeroPrior,
    #[error("likelihood estimate at the initial parameter was zero in {0} attempts")]
    ZeroLikelihood(usize),
    #[error("epsilon must be finite and nonnegative, got {0}")]
    BadEpsilon(f64),
    #[error("parameter has dimension {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("the jump chain is empty")]
    EmptyChain,
    #[error("estimator denominator is zero")]
    ZeroDenominator,
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Level(#[from] SdeError),
    #[error(transparent)]
    Filter(#[from] PfError),
    #[error(transparent)]
    Delta(#[from] crate::delta_pf::DeltaPfError),
    #[error(transparent)]
    Integrand(#[from] FkError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmmhSettings {
    /// Particles in the level-0 filter.
    pub n0: usize,
    pub epsilon: f64,
    /// Iterations run first and discarded; the proposal adapts only here.
    pub burn_in: usize,
    /// Iterations kept after burn-in.
    pub iterations: usize,
    pub scheme: ResamplingScheme,
}

/// An accepted state `(θ, V^(1:N), X^(1:N))` with its holding time `D ≥ 1`.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub cloud: Arc<WeightedCloud>,
    /// `log(ΣV + ε)`.
    pub log_norm: f64,
    pub holding: u64,
}

/// Accepted states of the kept part of a chain.
#[derive(Clone, Debug)]
pub struct JumpChain {
    pub states: Vec<ChainState>,
    pub epsilon: f64,
}

impl JumpChain {
    /// Number of chain iterations represented, `Σ D_k`.
    pub fn iterations(&self) -> u64 {
        self.states.iter().map(|s| s.holding).sum()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Expand to the per-iteration sequence of state indices.
    pub fn expand(&self) -> Vec<usize> {
        self.states.iter().enumerate().flat_map(|(k, s)| std::iter::repeat_n(k, s.holding as usize)).collect()
    }

    /// Keep iterations `every - 1, 2 every - 1, ...` and rebuild the jump chain.
    pub fn thin(&self, every: usize) -> JumpChain {
        let every = every.max(1);
        let mut states: Vec<ChainState> = Vec::new();
        let mut last = usize::MAX;
        for (j, k) in self.expand().into_iter().enumerate() {
            if (j + 1) % every != 0 {
                continue;
            }
            if k == last {
                states.last_mut().expect("pushed before").holding += 1;
            } else {
                let mut s = self.states[k].clone();
                s.holding = 1;
                states.push(s);
                last = k;
            }
        }
        JumpChain { states, epsilon: self.epsilon }
    }

    /// Holding times of the first `iters` iterations; states beyond the
    /// prefix get zero.
    pub fn truncated_holdings(&self, iters: u64) -> Vec<u64> {
        let mut left = iters;
        self.states
            .iter()
            .map(|s| {
                let d = s.holding.min(left);
                left -= d;
                d
            })
            .collect()
    }

    /// Holding-time weighted mean of `θ`, the plain PMMH estimate.
    pub fn theta_mean(&self) -> Vec<f64> {
        let d = self.states.first().map_or(0, |s| s.theta.len());
        let mut acc = vec![0.0; d];
        for s in &self.states {
            for (a, t) in acc.iter_mut().zip(&s.theta) {
                *a += s.holding as f64 * t;
            }
        }
        let total = self.iterations() as f64;
        acc.iter().map(|a| a / total).collect()
    }
}

#[derive(Clone, Debug)]
pub struct PmmhOutput {
    pub chain: JumpChain,
    /// Proposals and acceptances over the kept iterations.
    pub proposals: usize,
    pub accepted: usize,
    /// Particle filters run over the kept iterations.
    pub filter_runs: usize,
    /// Wall-clock seconds spent on the kept iterations.
    pub seconds: f64,
}

impl PmmhOutput {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposals.max(1) as f64
    }
}

/// `log` of the Metropolis–Hastings ratio
/// `pr(θ') q(θ | θ') (ΣV' + ε) / [pr(θ) q(θ' | θ) (ΣV + ε)]`.
pub fn log_acceptance(
    log_prior_proposed: f64,
    log_prior_current: f64,
    log_q_ratio: f64,
    log_norm_proposed: f64,
    log_norm_current: f64,
) -> f64 {
    if log_prior_proposed == f64::NEG_INFINITY || log_norm_proposed == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    log_prior_proposed - log_prior_current + log_q_ratio + log_norm_proposed - log_norm_current
}

/// `log(ΣV + ε)` for a nonnegative cloud.
pub fn log_norm(cloud: &WeightedCloud, epsilon: f64) -> f64 {
    log_add_exp(cloud.log_total(), epsilon.ln())
}

/// Run phase one from `theta0`, returning the kept part as a jump chain.
pub fn run_pmmh<P, Q, R>(
    problem: &P,
    settings: &PmmhSettings,
    proposal: &mut Q,
    theta0: &[f64],
    rng: &mut R,
) -> Result<PmmhOutput, PmmhError>
where
    P: InferenceProblem,
    Q: Proposal,
    R: Rng + ?Sized,
{
    if !(settings.epsilon >= 0.0 && settings.epsilon.is_finite()) {
        return Err(PmmhError::BadEpsilon(settings.epsilon));
    }
    if theta0.len() != problem.theta_dim() {
        return Err(PmmhError::Dimension { got: theta0.len(), expected: problem.theta_dim() });
    }
    let mut lp = problem.log_prior(theta0);
    if lp == f64::NEG_INFINITY {
        return Err(PmmhError::ZeroPrior);
    }
    let filter = |theta: &[f64], rng: &mut R| -> Result<WeightedCloud, PmmhError> {
        Ok(run_pf(&problem.level_model(theta, 0)?, settings.n0, settings.scheme, rng)?)
    };

    let mut cloud = None;
    for _ in 0..INIT_ATTEMPTS {
        let c = filter(theta0, rng)?;
        if !c.is_zero() {
            cloud = Some(c);
            break;
        }
    }
    let cloud = cloud.ok_or(PmmhError::ZeroLikelihood(INIT_ATTEMPTS))?;
    let mut current = ChainState {
        theta: theta0.to_vec(),
        log_norm: log_norm(&cloud, settings.epsilon),
        cloud: Arc::new(cloud),
        holding: 0,
    };

    let mut states: Vec<ChainState> = Vec::new();
    let mut current_pushed = false;
    let (mut proposals, mut accepted, mut filter_runs) = (0, 0, 0);
    let mut kept_start = None;
    for it in 0..settings.burn_in + settings.iterations {
        let burning = it < settings.burn_in;
        if !burning && kept_start.is_none() {
            kept_start = Some(Instant::now());
        }
        let theta = proposal.propose(&current.theta, rng);
        let lp_new = problem.log_prior(&theta);
        let mut moved = false;
        if lp_new > f64::NEG_INFINITY {
            let c = filter(&theta, rng)?;
            filter_runs += usize::from(!burning);
            let ln_new = log_norm(&c, settings.epsilon);
            let a = log_acceptance(lp_new, lp, proposal.log_ratio(&current.theta, &theta), ln_new, current.log_norm);
            // `ln u < a` accepts with probability `min(1, e^a)`.
            if rng.random::<f64>().ln() < a {
                current = ChainState { theta, cloud: Arc::new(c), log_norm: ln_new, holding: 0 };
                lp = lp_new;
                current_pushed = false;
                moved = true;
            }
        }
        if !burning {
            proposals += 1;
            accepted += usize::from(moved);
            if current_pushed {
                states.last_mut().expect("pushed before").holding += 1;
            } else {
                let mut s = current.clone();
                s.holding = 1;
                states.push(s);
                current_pushed = true;
            }
        }
        proposal.observe(&current.theta, burning);
    }
    Ok(PmmhOutput {
        chain: JumpChain { states, epsilon: settings.epsilon },
        proposals,
        accepted,
        filter_runs,
        seconds: kept_start.map_or(0.0, |s| s.elapsed().as_secs_f64()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fk::WeightedCloud;

    fn state(theta: f64, holding: u64) -> ChainState {
        let cloud = WeightedCloud::from_paths(&[1.0], &[vec![theta]], 1).unwrap();
        ChainState { theta: vec![theta], cloud: Arc::new(cloud), log_norm: 0.0, holding }
    }

    #[test]
    fn equal_estimates_accept_surely() {
        assert_eq!(log_acceptance(-1.5, -1.5, 0.0, 2.25, 2.25), 0.0);
        assert_eq!(log_acceptance(f64::NEG_INFINITY, -1.0, 0.0, 0.0, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn thinning_rebuilds_holdings() {
        let chain = JumpChain { states: vec![state(0.0, 3), state(1.0, 1), state(2.0, 4)], epsilon: 0.0 };
        assert_eq!(chain.expand(), vec![0, 0, 0, 1, 2, 2, 2, 2]);
        let thin = chain.thin(2);
        let th: Vec<(f64, u64)> = thin.states.iter().map(|s| (s.theta[0], s.holding)).collect();
        assert_eq!(th, vec![(0.0, 1), (1.0, 1), (2.0, 2)]);
        assert_eq!(chain.thin(1).iterations(), 8);
    }

    #[test]
    fn truncation_and_mean() {
        let chain = JumpChain { states: vec![state(0.0, 3), state(1.0, 1), state(2.0, 4)], epsilon: 0.0 };
        assert_eq!(chain.truncated_holdings(5), vec![3, 1, 1]);
        assert_eq!(chain.truncated_holdings(100), vec![3, 1, 4]);
        assert_eq!(chain.theta_mean(), vec![9.0 / 8.0]);
    }
}
