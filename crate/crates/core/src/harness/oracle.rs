//! Ground truth from random-walk Metropolis on an exactly computable
//! log-posterior, with standard errors inflated by the integrated
//! autocorrelation time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::models::kalman::{gbm_exact_loglik, kalman_level_likelihood, ou_exact_loglik};
use crate::models::{GBM_OBS_VAR, GBM_PRIOR_VAR, OU_OBS_VAR, OU_PRIOR_VAR};
use crate::numeric::{integrated_autocorrelation_time, normal_log_pdf};
use crate::pmmh::{AdaptationSettings, AdaptiveRandomWalk, Proposal, ProposalError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcSummary {
    pub mean: Vec<f64>,
    /// `sqrt(τ s² / n)` per coordinate.
    pub std_error: Vec<f64>,
    pub iact: Vec<f64>,
    pub acceptance_rate: f64,
    pub steps: usize,
}

/// Adaptive random-walk Metropolis on `log_target` for `burn_in + steps`
/// iterations; the proposal adapts only during burn-in.
pub fn exact_mcmc<F, R>(
    log_target: F,
    theta0: &[f64],
    steps: usize,
    burn_in: usize,
    scale: f64,
    rng: &mut R,
) -> Result<McmcSummary, ProposalError>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let d = theta0.len();
    let settings = AdaptationSettings { start: 200.min(burn_in.max(2)), ..Default::default() };
    let mut q = AdaptiveRandomWalk::adaptive(&AdaptiveRandomWalk::isotropic(scale, d), d, settings)?;
    let mut theta = theta0.to_vec();
    let mut lp = log_target(&theta);
    let mut samples = vec![Vec::with_capacity(steps); d];
    let mut accepted = 0usize;
    for it in 0..burn_in + steps {
        let burning = it < burn_in;
        let prop = q.propose(&theta, rng);
        let lp_new = log_target(&prop);
        if lp_new > f64::NEG_INFINITY && rng.random::<f64>().ln() < lp_new - lp {
            theta = prop;
            lp = lp_new;
            accepted += usize::from(!burning);
        }
        if !burning {
            for (s, t) in samples.iter_mut().zip(&theta) {
                s.push(*t);
            }
        }
        q.observe(&theta, burning);
    }
    let n = steps as f64;
    let mut mean = Vec::with_capacity(d);
    let mut std_error = Vec::with_capacity(d);
    let mut iact = Vec::with_capacity(d);
    for s in &samples {
        let (m, v) = crate::numeric::mean_var(s);
        let tau = integrated_autocorrelation_time(s);
        mean.push(m);
        std_error.push((tau * v / n).sqrt());
        iact.push(tau);
    }
    Ok(McmcSummary { mean, std_error, iact, acceptance_rate: accepted as f64 / n, steps })
}

/// OU log-posterior: exact transitions, or the Euler model at `level`.
pub fn ou_log_posterior(theta: &[f64], y: &[Option<f64>], x0: f64, level: Option<u32>) -> f64 {
    let prior: f64 = theta.iter().map(|t| normal_log_pdf(*t, 0.0, OU_PRIOR_VAR)).sum();
    let ll = match level {
        None => ou_exact_loglik(theta, y, x0, OU_OBS_VAR),
        Some(l) => kalman_level_likelihood(theta, l, y, x0, OU_OBS_VAR),
    };
    ll.map_or(f64::NEG_INFINITY, |s| prior + s.log_likelihood)
}

/// GBM log-posterior from the exact log-scale likelihood.
pub fn gbm_log_posterior(theta: &[f64], y: &[Option<f64>]) -> f64 {
    let prior = normal_log_pdf(theta[0], 0.0, GBM_PRIOR_VAR);
    gbm_exact_loglik(theta[0], y, GBM_OBS_VAR, 0.0).map_or(f64::NEG_INFINITY, |ll| prior + ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;

    #[test]
    fn gaussian_target_moments() {
        // N((1, -2), diag(1, 4)).
        let target = |t: &[f64]| normal_log_pdf(t[0], 1.0, 1.0) + normal_log_pdf(t[1], -2.0, 4.0);
        let s = exact_mcmc(target, &[0.0, 0.0], 200_000, 5_000, 1.0, &mut StreamSeed::new(5).rng()).unwrap();
        assert!((s.mean[0] - 1.0).abs() < 4.0 * s.std_error[0], "{s:?}");
        assert!((s.mean[1] + 2.0).abs() < 4.0 * s.std_error[1], "{s:?}");
        assert!(s.iact.iter().all(|t| *t >= 1.0 && *t < 50.0));
        assert!(s.acceptance_rate > 0.1 && s.acceptance_rate < 0.6);
    }
}
