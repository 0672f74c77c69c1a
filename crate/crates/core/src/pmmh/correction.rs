//! Phase two: one randomised delta particle filter per accepted state, and
//! the self-normalised estimator assembled from the weights
//!
//! `W_{k,0}^(i) = D_k V_k^(i) / (ΣV_k + ε)` and
//! `W_{k,L}^(i) = D_k V_{k,L}^(i) / [p_L (ΣV_k + ε)]`.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::{JumpChain, PmmhError};
use crate::delta_pf::{run_delta_pf, CoupledPotential, DeltaOutput};
use crate::fk::{Path, WeightedCloud};
use crate::hmm::InferenceProblem;
use crate::numeric::log_sum_exp;
use crate::pf::ResamplingScheme;
use crate::rmlmc::{LevelDistribution, ParticleRule};
use crate::rng::StreamSeed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectionSettings {
    pub rule: ParticleRule,
    pub scheme: ResamplingScheme,
    pub potential: CoupledPotential,
    /// Worker threads, or 0 for the current rayon pool; results do not depend on this.
    pub workers: usize,
    /// Correction `k` draws from the stream `seed / "corr" / k`.
    pub seed: StreamSeed,
}

/// The correction attached to accepted state `index`.
#[derive(Clone, Debug)]
pub struct CorrectionRecord {
    pub index: usize,
    pub theta: Vec<f64>,
    pub holding: u64,
    pub level: u32,
    /// `p_L`.
    pub mass: f64,
    /// `log(ΣV_k + ε)`.
    pub log_norm: f64,
    pub base: Arc<WeightedCloud>,
    pub delta: DeltaOutput,
    pub cost_seconds: f64,
    /// `N_L (2^L + 2^{L-1})`, in units of one Euler step per unit time.
    pub cost_model: f64,
}

/// Modelled cost of a delta filter at `level` with `n` pairs.
pub fn delta_cost_model(level: u32, n: usize) -> f64 {
    n as f64 * 1.5 * 2f64.powi(level as i32)
}

impl CorrectionRecord {
    /// `W_{k,0}^(i)`.
    pub fn base_weight(&self, i: usize) -> f64 {
        self.holding as f64 * (self.base.log_abs_weight(i) - self.log_norm).exp()
    }

    /// `W_{k,L}^(i)`, signed.
    pub fn delta_weight(&self, i: usize) -> f64 {
        let c = &self.delta.cloud;
        let w = self.holding as f64 * (c.log_abs_weight(i) - self.log_norm - self.mass.ln()).exp();
        if c.is_negative(i) {
            -w
        } else {
            w
        }
    }

    /// Numerator and denominator terms of record `k` with holding time `holding`:
    /// `(Σ_i W^(i) f(θ, X^(i)), Σ_i W^(i))` over both clouds.
    pub fn contribution<F>(&self, holding: u64, dim: usize, f: F) -> Result<(Vec<f64>, f64), PmmhError>
    where
        F: Fn(&[f64], &Path<'_>, &mut [f64]),
    {
        let phi = |p: &Path<'_>, out: &mut [f64]| f(&self.theta, p, out);
        let one = |_: &Path<'_>, out: &mut [f64]| out[0] = 1.0;
        let delta_scale = self.log_norm + self.mass.ln();
        let d = holding as f64;
        let base_num = self.base.estimate_vec_scaled(dim, self.log_norm, phi)?;
        let delta_num = self.delta.cloud.estimate_vec_scaled(dim, delta_scale, phi)?;
        let den = self.base.estimate_vec_scaled(1, self.log_norm, one)?[0]
            + self.delta.cloud.estimate_vec_scaled(1, delta_scale, one)?[0];
        let num = base_num.iter().zip(&delta_num).map(|(a, b)| d * (a + b)).collect();
        Ok((num, d * den))
    }
}

/// Run the corrections for every state of `chain`.
/// Records come back in chain order whatever the scheduling.
pub fn run_corrections<P>(
    chain: &JumpChain,
    problem: &P,
    dist: &LevelDistribution,
    settings: &CorrectionSettings,
) -> Result<Vec<CorrectionRecord>, PmmhError>
where
    P: InferenceProblem,
{
    if chain.is_empty() {
        return Err(PmmhError::EmptyChain);
    }
    let corr = settings.seed.child("corr");
    let run = || {
        chain
            .states
            .par_iter()
            .enumerate()
            .map(|(k, s)| {
                let start = Instant::now();
                let mut rng = corr.index(k as u64).rng();
                let (level, mass) = dist.sample(&mut rng);
                let n = settings.rule.particles(level);
                let model = problem.coupled_model(&s.theta, level)?;
                let delta = run_delta_pf(&model, n, settings.scheme, settings.potential, &mut rng)?;
                Ok(CorrectionRecord {
                    index: k,
                    theta: s.theta.clone(),
                    holding: s.holding,
                    level,
                    mass,
                    log_norm: s.log_norm,
                    base: Arc::clone(&s.cloud),
                    delta,
                    cost_seconds: start.elapsed().as_secs_f64(),
                    cost_model: delta_cost_model(level, n),
                })
            })
            .collect()
    };
    if settings.workers == 0 {
        return run();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers)
        .build()
        .map_err(|e| PmmhError::Pool(e.to_string()))?
        .install(run)
}

/// Sum record contributions with the given holding times.
pub fn assemble<F>(
    records: &[CorrectionRecord],
    holdings: &[u64],
    dim: usize,
    f: F,
) -> Result<(Vec<f64>, f64), PmmhError>
where
    F: Fn(&[f64], &Path<'_>, &mut [f64]),
{
    let mut num = vec![0.0; dim];
    let mut den = 0.0;
    for (r, &h) in records.iter().zip(holdings) {
        if h == 0 {
            continue;
        }
        let (n, d) = r.contribution(h, dim, &f)?;
        num.iter_mut().zip(&n).for_each(|(a, b)| *a += b);
        den += d;
    }
    Ok((num, den))
}

/// `Σ_k [Σ W_{k,0} f + Σ W_{k,L} f] / Σ_k [Σ W_{k,0} + Σ W_{k,L}]` for vector `f`.
pub fn is_estimate_vec<F>(records: &[CorrectionRecord], dim: usize, f: F) -> Result<Vec<f64>, PmmhError>
where
    F: Fn(&[f64], &Path<'_>, &mut [f64]),
{
    let holdings: Vec<u64> = records.iter().map(|r| r.holding).collect();
    let (num, den) = assemble(records, &holdings, dim, f)?;
    if den == 0.0 {
        return Err(PmmhError::ZeroDenominator);
    }
    Ok(num.iter().map(|n| n / den).collect())
}

/// Scalar form of [`is_estimate_vec`].
pub fn is_estimate<F>(records: &[CorrectionRecord], f: F) -> Result<f64, PmmhError>
where
    F: Fn(&[f64], &Path<'_>) -> f64,
{
    Ok(is_estimate_vec(records, 1, |theta, p, out| out[0] = f(theta, p))?[0])
}

/// A correction record reduced to one level-0 trajectory and one pair.
#[derive(Clone, Debug)]
pub struct SubsampledRecord {
    pub index: usize,
    pub theta: Vec<f64>,
    pub holding: u64,
    /// Entries `X*`, fine `X̌*`, coarse `X̌*` with weights `W*_0 / D`,
    /// `W*^(1) / D`, `W*^(2) / D`.
    pub cloud: WeightedCloud,
}

/// Keep `X*` with probability `∝ V^(i)` and a pair `X̌*` with probability
/// `∝ V̌^(i)`, collapsing the weights onto them.
pub fn subsample<R: Rng + ?Sized>(record: &CorrectionRecord, rng: &mut R) -> Result<SubsampledRecord, PmmhError> {
    let base = &record.base;
    let delta = &record.delta;
    let n = delta.n_pairs();
    let pick = |log_w: &[f64], rng: &mut R| -> usize {
        let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return 0;
        }
        let w: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                return i;
            }
            u -= wi;
        }
        w.iter().rposition(|x| *x > 0.0).expect("some weight is positive")
    };
    let i0 = pick(base.log_abs_weights(), rng);
    let j = pick(&delta.coupled_log_weights, rng);
    let log_abs = delta.cloud.log_abs_weights();
    let log_scale = record.log_norm + record.mass.ln();
    let weights = vec![
        log_sum_exp(base.log_abs_weights()) - record.log_norm,
        log_sum_exp(&log_abs[..n]) - log_scale,
        log_sum_exp(&log_abs[n..]) - log_scale,
    ];
    let paths = [base.path(i0).to_vec(), delta.cloud.path(j).to_vec(), delta.cloud.path(n + j).to_vec()];
    let cloud = WeightedCloud::from_log_paths(weights, vec![false, false, true], &paths, base.dim())?;
    Ok(SubsampledRecord { index: record.index, theta: record.theta.clone(), holding: record.holding, cloud })
}

/// The subsampled estimator on records reduced by [`subsample`].
pub fn is_estimate_subsampled<F>(records: &[SubsampledRecord], dim: usize, f: F) -> Result<Vec<f64>, PmmhError>
where
    F: Fn(&[f64], &Path<'_>, &mut [f64]),
{
    let mut num = vec![0.0; dim];
    let mut den = 0.0;
    for r in records {
        let d = r.holding as f64;
        let v = r.cloud.estimate_vec_scaled(dim, 0.0, |p, out| f(&r.theta, p, out))?;
        num.iter_mut().zip(&v).for_each(|(a, b)| *a += d * b);
        den += d * r.cloud.estimate_vec_scaled(1, 0.0, |_, out| out[0] = 1.0)?[0];
    }
    if den == 0.0 {
        return Err(PmmhError::ZeroDenominator);
    }
    Ok(num.iter().map(|x| x / den).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ou_problem;
    use crate::pmmh::{run_pmmh, AdaptiveRandomWalk, PmmhSettings};
    use crate::rmlmc::LevelForm;

    fn chain(n0: usize, seed: u64) -> (crate::models::OuProblem, JumpChain) {
        let problem = ou_problem(vec![Some(0.3), None, Some(-0.2), Some(0.1)], 0.0);
        let settings =
            PmmhSettings { n0, epsilon: 0.0, burn_in: 0, iterations: 60, scheme: ResamplingScheme::Multinomial };
        let mut q = AdaptiveRandomWalk::fixed(&AdaptiveRandomWalk::isotropic(0.3, 2), 2).unwrap();
        let mut rng = StreamSeed::new(seed).rng();
        let out = run_pmmh(&problem, &settings, &mut q, &[0.0, 0.0], &mut rng).unwrap();
        (problem, out.chain)
    }

    fn settings(n_base: usize, workers: usize) -> CorrectionSettings {
        CorrectionSettings {
            rule: ParticleRule::constant(n_base),
            scheme: ResamplingScheme::Multinomial,
            potential: CoupledPotential::Average,
            workers,
            seed: StreamSeed::new(9),
        }
    }

    fn dist(l_max: u32) -> LevelDistribution {
        LevelDistribution::new(LevelForm::Geometric { r: 1.5 }, l_max).unwrap()
    }

    #[test]
    fn constant_integrand_is_reproduced() {
        let (problem, chain) = chain(20, 1);
        let records = run_corrections(&chain, &problem, &dist(4), &settings(10, 0)).unwrap();
        assert_eq!(records.len(), chain.len());
        let est = is_estimate(&records, |_, _| 2.5).unwrap();
        assert!((est - 2.5).abs() < 1e-12);
    }

    #[test]
    fn single_level_support() {
        let (problem, chain) = chain(20, 2);
        let records = run_corrections(&chain, &problem, &dist(1), &settings(10, 0)).unwrap();
        assert!(records.iter().all(|r| r.level == 1 && r.mass == 1.0));
        assert!(records.iter().all(|r| r.cost_model == delta_cost_model(1, 10)));
    }

    #[test]
    fn records_do_not_depend_on_worker_count() {
        let (problem, chain) = chain(20, 3);
        let a = run_corrections(&chain, &problem, &dist(4), &settings(10, 1)).unwrap();
        let b = run_corrections(&chain, &problem, &dist(4), &settings(10, 3)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.index, x.level), (y.index, y.level));
            assert_eq!(x.delta.cloud.log_abs_weights(), y.delta.cloud.log_abs_weights());
        }
    }

    #[test]
    fn weights_scale_by_holding_and_mass() {
        let (problem, chain) = chain(5, 4);
        let records = run_corrections(&chain, &problem, &dist(4), &settings(3, 0)).unwrap();
        let r = &records[0];
        let base: f64 = (0..5).map(|i| r.base_weight(i)).sum();
        // Σ_i W_{k,0} = D ΣV / (ΣV + ε) with ε = 0.
        assert!((base - r.holding as f64).abs() < 1e-9 * r.holding as f64);
        let c = &r.delta.cloud;
        let direct: f64 = (0..c.len())
            .map(|i| {
                let w = (c.log_abs_weight(i) - r.log_norm).exp();
                if c.is_negative(i) {
                    -w
                } else {
                    w
                }
            })
            .sum();
        let delta: f64 = (0..c.len()).map(|i| r.delta_weight(i)).sum();
        assert!((delta - r.holding as f64 * direct / r.mass).abs() < 1e-9 * delta.abs().max(1e-300));
    }

    #[test]
    fn one_particle_subsampling_is_exact() {
        let (problem, chain) = chain(1, 5);
        let records = run_corrections(&chain, &problem, &dist(3), &settings(1, 0)).unwrap();
        let mut rng = StreamSeed::new(6).rng();
        let sub: Vec<SubsampledRecord> = records.iter().map(|r| subsample(r, &mut rng).unwrap()).collect();
        let f = |theta: &[f64], p: &Path<'_>, out: &mut [f64]| {
            out[0] = theta[0];
            out[1] = p.terminal()[0];
        };
        let full = is_estimate_vec(&records, 2, f).unwrap();
        let reduced = is_estimate_subsampled(&sub, 2, f).unwrap();
        for (a, b) in full.iter().zip(&reduced) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn empty_chain_is_rejected() {
        let (problem, _) = chain(5, 7);
        let empty = JumpChain { states: vec![], epsilon: 0.0 };
        assert!(matches!(run_corrections(&empty, &problem, &dist(2), &settings(2, 0)), Err(PmmhError::EmptyChain)));
    }
}
