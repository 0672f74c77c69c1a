//! Coarse-level chain: jump-chain bookkeeping, acceptance ratios, the
//! proposal mixture and chain initialisation.

use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use unbiased_diffusion::fk::WeightedCloud;
use unbiased_diffusion::harness::experiment::prior_search;
use unbiased_diffusion::hmm::Prior;
use unbiased_diffusion::models::kalman::kalman_level_likelihood;
use unbiased_diffusion::models::{ou_problem, OU_OBS_VAR, OU_PRIOR_VAR};
use unbiased_diffusion::numeric::mean_var;
use unbiased_diffusion::pf::ResamplingScheme;
use unbiased_diffusion::pmmh::{
    log_acceptance, run_pmmh, AdaptationSettings, AdaptiveRandomWalk, ChainState, JumpChain, PmmhSettings, Proposal,
};
use unbiased_diffusion::rng::StreamSeed;

fn state(theta: f64, holding: u64) -> ChainState {
    let cloud = WeightedCloud::from_paths(&[1.0], &[vec![0.0]], 1).unwrap();
    ChainState { theta: vec![theta], cloud: Arc::new(cloud), log_norm: 0.0, holding }
}

#[test]
fn huge_epsilon_samples_the_prior() {
    // With ΣV ≪ ε the acceptance ratio reduces to the prior ratio.
    let problem = ou_problem(vec![Some(3.0), Some(2.5), Some(3.2)], 0.0);
    let settings =
        PmmhSettings { n0: 5, epsilon: 1e300, burn_in: 1000, iterations: 40_000, scheme: ResamplingScheme::Systematic };
    let mut q = AdaptiveRandomWalk::fixed(&AdaptiveRandomWalk::isotropic(0.4, 2), 2).unwrap();
    let out = run_pmmh(&problem, &settings, &mut q, &[0.0, 0.0], &mut StreamSeed::new(1).rng()).unwrap();
    assert_eq!(out.chain.iterations(), 40_000);
    for j in 0..2 {
        let xs: Vec<f64> = out.chain.expand().iter().map(|&k| out.chain.states[k].theta[j]).collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v / OU_PRIOR_VAR - 1.0).abs() < 0.15, "variance {v}");
    }
}

#[test]
fn mixture_component_keeps_the_starting_scale() {
    let sample_var = |mix: f64| {
        let settings = AdaptationSettings { lambda: 1e-6, start: 10, every: 10, mix };
        let mut q = AdaptiveRandomWalk::adaptive(&AdaptiveRandomWalk::isotropic(0.1, 1), 1, settings).unwrap();
        let mut rng = StreamSeed::new(2).rng();
        for _ in 0..200 {
            q.observe(&[rng.random::<f64>() * 100.0], true);
        }
        let xs: Vec<f64> = (0..20_000).map(|_| q.propose(&[0.0], &mut rng)[0]).collect();
        mean_var(&xs).1
    };
    assert!((sample_var(1.0) / 0.01 - 1.0).abs() < 0.05);
    // Uniform(0, 100) history: variance 833, scaled by 2.38².
    let adapted = 2.38f64.powi(2) * 100.0f64.powi(2) / 12.0;
    assert!((sample_var(0.0) / adapted - 1.0).abs() < 0.25);
    let half = sample_var(0.5);
    assert!((half / (0.5 * 0.01 + 0.5 * adapted) - 1.0).abs() < 0.25);
}

#[test]
fn prior_search_prefers_likely_parameters() {
    let y = vec![Some(1.5), Some(1.2), Some(1.8), Some(1.4), Some(1.6)];
    let problem = ou_problem(y.clone(), 1.0);
    let score = |t: &[f64]| {
        problem.prior.log_density(t) + kalman_level_likelihood(t, 0, &y, 1.0, OU_OBS_VAR).unwrap().log_likelihood
    };
    let chosen =
        prior_search(&problem, &problem.prior, 100, 500, ResamplingScheme::Systematic, StreamSeed::new(3)).unwrap();
    let mut rng = StreamSeed::new(4).rng();
    let mut others: Vec<f64> = (0..200).map(|_| score(&problem.prior.sample(&mut rng))).collect();
    others.sort_by(f64::total_cmp);
    assert!(score(&chosen) >= others[160], "{} vs 80th percentile {}", score(&chosen), others[160]);
    let again =
        prior_search(&problem, &problem.prior, 100, 500, ResamplingScheme::Systematic, StreamSeed::new(3)).unwrap();
    assert_eq!(chosen, again);
}

proptest! {
    #[test]
    fn acceptance_ratio_is_antisymmetric(
        lp in prop::array::uniform2(-50.0f64..0.0),
        ln in prop::array::uniform2(-200.0f64..10.0),
        q in -3.0f64..3.0,
    ) {
        let forward = log_acceptance(lp[1], lp[0], q, ln[1], ln[0]);
        let backward = log_acceptance(lp[0], lp[1], -q, ln[0], ln[1]);
        prop_assert!((forward + backward).abs() < 1e-9);
    }

    #[test]
    fn jump_chain_expansion_is_consistent(
        holdings in prop::collection::vec(1u64..6, 1..30),
        every in 1usize..5,
    ) {
        let chain = JumpChain {
            states: holdings.iter().enumerate().map(|(k, &d)| state(k as f64, d)).collect(),
            epsilon: 0.0,
        };
        let expanded = chain.expand();
        prop_assert_eq!(expanded.len() as u64, chain.iterations());
        let direct = expanded.iter().map(|&k| k as f64).sum::<f64>() / expanded.len() as f64;
        prop_assert!((chain.theta_mean()[0] - direct).abs() < 1e-9);

        let thin = chain.thin(every);
        prop_assert_eq!(thin.iterations(), chain.iterations() / every as u64);
        let kept: Vec<f64> = thin.expand().iter().map(|&k| thin.states[k].theta[0]).collect();
        let picked: Vec<f64> = expanded.iter().skip(every - 1).step_by(every).map(|&k| k as f64).collect();
        prop_assert_eq!(kept, picked);
        prop_assert!(thin.states.windows(2).all(|w| w[0].theta != w[1].theta));

        let total = chain.iterations();
        let cut = total / 2;
        let trunc = chain.truncated_holdings(cut);
        prop_assert_eq!(trunc.iter().sum::<u64>(), cut);
        prop_assert!(trunc.iter().zip(&holdings).all(|(t, h)| t <= h));
    }
}
