//! Replicated end-to-end runs: coarse chain, corrections, and the estimate
//! of the posterior mean of `θ` at a geometric grid of iteration counts.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::config::{parse_observation_csv, ConfigError, DataSpec, InitSpec, ModelSpec, RunConfig, TruthSpec};
use super::oracle::{exact_mcmc, gbm_log_posterior, ou_log_posterior, McmcSummary};
use crate::fk::Path;
use crate::hmm::{InferenceProblem, Prior};
use crate::models::{
    gbm_problem, ou_problem, pearson_problem, simulate_data, GbmDiffusion, GbmProblem, Link, ModelError, NoiseVariance,
    ObservationDesign, OuDiffusion, OuProblem, PearsonDiffusion, PearsonProblem, GBM_OBS_VAR, OU_OBS_VAR,
};
use crate::pf::{run_pf, ResamplingScheme};
use crate::pmmh::checkpoint::write_checkpoint;
use crate::pmmh::{
    run_corrections, run_pmmh, AdaptiveRandomWalk, CorrectionRecord, CorrectionSettings, JumpChain, PmmhError,
    PmmhSettings,
};
use crate::rmlmc::{ratio_estimator, LevelDistribution, ParticleRule, RmlmcError};
use crate::rng::StreamSeed;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pmmh(#[from] PmmhError),
    #[error(transparent)]
    Rmlmc(#[from] RmlmcError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::pmmh::checkpoint::CheckpointError),
}

impl ExperimentError {
    /// 2 for configuration problems, 3 for numerical or runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// A configured model with its data.
#[derive(Clone, Debug)]
pub enum ProblemInstance {
    Ou(OuProblem),
    Gbm(GbmProblem),
    Pearson(PearsonProblem),
}

macro_rules! with_problem {
    ($inst:expr, $p:ident => $body:expr) => {
        match $inst {
            ProblemInstance::Ou($p) => $body,
            ProblemInstance::Gbm($p) => $body,
            ProblemInstance::Pearson($p) => $body,
        }
    };
}

fn design(model: &ModelSpec, horizon: usize, observe_initial: bool) -> ObservationDesign {
    let observed = (0..=horizon).map(|t| t > 0 || observe_initial).collect();
    match model {
        ModelSpec::Ou { .. } => {
            ObservationDesign { observed, link: Link::Identity, noise: NoiseVariance::Fixed(OU_OBS_VAR) }
        }
        ModelSpec::Gbm => ObservationDesign { observed, link: Link::Log, noise: NoiseVariance::Fixed(GBM_OBS_VAR) },
        ModelSpec::Pearson { .. } => ObservationDesign {
            observed,
            link: Link::Identity,
            noise: NoiseVariance::Parameter { first: crate::models::pearson::PEARSON_NOISE_INDEX },
        },
    }
}

/// Observations `y_{0:n}` described by the config.
pub fn load_observations(cfg: &RunConfig) -> Result<Vec<Option<Vec<f64>>>, ExperimentError> {
    let dim = cfg.model.state_dim();
    Ok(match &cfg.data {
        DataSpec::Values { y } => y.clone(),
        DataSpec::Csv { path } => {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
            parse_observation_csv(&text, dim)?
        }
        DataSpec::Simulate { theta, level, horizon, observe_initial, seed } => {
            let d = design(&cfg.model, *horizon, *observe_initial);
            let mut rng = StreamSeed::new(*seed).child("data").rng();
            let (obs, _) = match &cfg.model {
                ModelSpec::Ou { x0 } => simulate_data(&OuDiffusion, theta, &[*x0], *level, &d, &mut rng)?,
                ModelSpec::Gbm => simulate_data(&GbmDiffusion, theta, &[1.0], *level, &d, &mut rng)?,
                ModelSpec::Pearson { x0, level_offset } => {
                    simulate_data(&PearsonDiffusion { level_offset: *level_offset }, theta, x0, *level, &d, &mut rng)?
                }
            };
            obs.values
        }
    })
}

pub fn build_problem(cfg: &RunConfig) -> Result<ProblemInstance, ExperimentError> {
    let values = load_observations(cfg)?;
    let scalar = || values.iter().map(|v| v.as_ref().map(|v| v[0])).collect();
    Ok(match &cfg.model {
        ModelSpec::Ou { x0 } => ProblemInstance::Ou(ou_problem(scalar(), *x0)),
        ModelSpec::Gbm => ProblemInstance::Gbm(gbm_problem(scalar())),
        ModelSpec::Pearson { x0, level_offset } => {
            ProblemInstance::Pearson(pearson_problem(values.clone(), *x0, *level_offset))
        }
    })
}

/// Iteration counts `1, 2, 4, ...` up to `total`, always ending at `total`.
pub fn checkpoint_grid(total: u64) -> Vec<u64> {
    let mut grid: Vec<u64> = (0..64).map(|k| 1u64 << k).take_while(|c| *c <= total).collect();
    if grid.last() != Some(&total) && total > 0 {
        grid.push(total);
    }
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointRow {
    /// Chain iterations after burn-in, counted before thinning.
    pub iters: u64,
    pub cost_s: f64,
    pub cost_model: f64,
    pub estimate: Vec<f64>,
    /// Holding-time weighted mean of `θ` from the coarse chain alone.
    pub pmmh: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub theta0: Vec<f64>,
    pub rows: Vec<CheckpointRow>,
    pub acceptance_rate: f64,
    /// Batch-means standard error of the final estimate per coordinate.
    pub std_error: Vec<f64>,
    pub levels: Vec<u32>,
    pub level_seconds: Vec<f64>,
}

impl ReplicateOutcome {
    pub fn final_estimate(&self) -> &[f64] {
        &self.rows.last().expect("at least one checkpoint").estimate
    }

    pub fn final_pmmh(&self) -> &[f64] {
        &self.rows.last().expect("at least one checkpoint").pmmh
    }
}

fn theta_identity(theta: &[f64], _: &Path<'_>, out: &mut [f64]) {
    out.copy_from_slice(theta);
}

/// Estimates of `E[θ | y]` at each checkpoint from unit-holding contributions.
pub fn checkpoint_rows(
    chain: &JumpChain,
    records: &[CorrectionRecord],
    thin: usize,
    n0: usize,
    p1_seconds_per_iter: f64,
) -> Result<Vec<CheckpointRow>, PmmhError> {
    let d = chain.states.first().map_or(0, |s| s.theta.len());
    let units = records.iter().map(|r| r.contribution(1, d, theta_identity)).collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for c in checkpoint_grid(chain.iterations()) {
        let holdings = chain.truncated_holdings(c);
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        let mut pm = vec![0.0; d];
        let iters = c * thin as u64;
        let mut cost_s = p1_seconds_per_iter * iters as f64;
        let mut cost_model = (iters * n0 as u64) as f64;
        for ((h, (un, ud)), (r, s)) in holdings.iter().zip(&units).zip(records.iter().zip(&chain.states)) {
            if *h == 0 {
                continue;
            }
            let hf = *h as f64;
            for j in 0..d {
                num[j] += hf * un[j];
                pm[j] += hf * s.theta[j];
            }
            den += hf * ud;
            cost_s += r.cost_seconds;
            cost_model += r.cost_model;
        }
        rows.push(CheckpointRow {
            iters,
            cost_s,
            cost_model,
            estimate: num.iter().map(|x| x / den).collect(),
            pmmh: pm.iter().map(|x| x / c as f64).collect(),
        });
    }
    Ok(rows)
}

/// Batch-means standard error of the self-normalised estimate, with records
/// split into at most `batches` contiguous groups.
pub fn batch_std_error(records: &[CorrectionRecord], batches: usize) -> Result<Vec<f64>, PmmhError> {
    let d = records.first().map_or(0, |r| r.theta.len());
    let b = batches.min(records.len());
    if b < 2 {
        return Ok(vec![f64::NAN; d]);
    }
    let mut sums = vec![(vec![0.0; d], 0.0); b];
    for (k, r) in records.iter().enumerate() {
        let (n, den) = r.contribution(r.holding, d, theta_identity)?;
        let slot = &mut sums[k * b / records.len()];
        slot.0.iter_mut().zip(&n).for_each(|(a, x)| *a += x);
        slot.1 += den;
    }
    Ok((0..d)
        .map(|j| {
            let pairs: Vec<(f64, f64)> = sums.iter().map(|(n, den)| (n[j], *den)).collect();
            ratio_estimator(&pairs).map_or(f64::NAN, |e| e.std_error)
        })
        .collect())
}

/// One full pipeline: coarse chain, thinning, corrections, checkpoints.
pub fn run_replicate<P: InferenceProblem>(
    problem: &P,
    cfg: &RunConfig,
    dist: &LevelDistribution,
    theta0: &[f64],
    index: usize,
    stream: StreamSeed,
    out_dir: Option<&FsPath>,
) -> Result<ReplicateOutcome, ExperimentError> {
    let d = theta0.len();
    let start_cov = AdaptiveRandomWalk::isotropic(cfg.proposal.scale, d);
    let mut proposal = match cfg.proposal.adapt {
        Some(a) => AdaptiveRandomWalk::adaptive(&start_cov, d, a),
        None => AdaptiveRandomWalk::fixed(&start_cov, d),
    }
    .map_err(PmmhError::from)?;
    let settings = PmmhSettings {
        n0: cfg.n0,
        epsilon: cfg.epsilon,
        burn_in: cfg.burn_in(),
        iterations: cfg.iterations,
        scheme: cfg.scheme,
    };
    let out = run_pmmh(problem, &settings, &mut proposal, theta0, &mut stream.child("p1").rng())?;
    let chain = out.chain.thin(cfg.thin);
    let corr = CorrectionSettings {
        rule: ParticleRule { n_base: cfg.n_base, rho: cfg.rho },
        scheme: cfg.scheme,
        potential: cfg.potential,
        workers: 0,
        seed: stream,
    };
    let records = run_corrections(&chain, problem, dist, &corr)?;
    if let Some(dir) = out_dir {
        let mut w = BufWriter::new(fs::File::create(dir.join(format!("chain_{index}.jsonl")))?);
        write_checkpoint(&mut w, &chain, Some(&records))?;
    }
    let per_iter = out.seconds / cfg.iterations as f64;
    let rows = checkpoint_rows(&chain, &records, cfg.thin, cfg.n0, per_iter)?;
    Ok(ReplicateOutcome {
        index,
        theta0: theta0.to_vec(),
        rows,
        acceptance_rate: out.acceptance_rate(),
        std_error: batch_std_error(&records, 20)?,
        levels: records.iter().map(|r| r.level).collect(),
        level_seconds: records.iter().map(|r| r.cost_seconds).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Truth {
    pub value: Vec<f64>,
    pub std_error: Option<Vec<f64>>,
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcmc: Option<McmcSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesRow {
    pub checkpoint: usize,
    pub iters: u64,
    pub cost_s: f64,
    pub cost_model: f64,
    pub mse: f64,
    /// MSE of the uncorrected coarse-chain estimate.
    pub mse_pmmh: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelRow {
    pub level: u32,
    pub mass: f64,
    pub count: usize,
    pub cost_s: f64,
    pub cost_model: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub config: RunConfig,
    pub truth: Truth,
    pub replicates: Vec<ReplicateOutcome>,
    pub series: Vec<SeriesRow>,
    pub levels: Vec<LevelRow>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `(1/R) Σ_i ‖E^(i) - truth‖²` at each checkpoint.
pub fn mse_series(replicates: &[ReplicateOutcome], truth: &[f64]) -> Vec<SeriesRow> {
    let Some(first) = replicates.first() else {
        return Vec::new();
    };
    let r = replicates.len() as f64;
    (0..first.rows.len())
        .map(|j| {
            let mean =
                |g: &dyn Fn(&CheckpointRow) -> f64| replicates.iter().map(|rep| g(&rep.rows[j])).sum::<f64>() / r;
            SeriesRow {
                checkpoint: j,
                iters: first.rows[j].iters,
                cost_s: mean(&|row| row.cost_s),
                cost_model: mean(&|row| row.cost_model),
                mse: mean(&|row| squared_distance(&row.estimate, truth)),
                mse_pmmh: mean(&|row| squared_distance(&row.pmmh, truth)),
            }
        })
        .collect()
}

fn compute_truth(cfg: &RunConfig, problem: &ProblemInstance, replicates: &[ReplicateOutcome]) -> Truth {
    match (&cfg.truth, problem) {
        (TruthSpec::Fixed { value }, _) => {
            Truth { value: value.clone(), std_error: None, source: "fixed".into(), mcmc: None }
        }
        (TruthSpec::ExactMcmc { steps, burn_in, level, seed }, ProblemInstance::Ou(p)) => {
            let y = p.observations.scalar();
            let x0 = p.x0[0];
            let s = exact_mcmc(
                |t| ou_log_posterior(t, &y, x0, *level),
                &[0.0, 0.0],
                *steps,
                burn_in.unwrap_or(steps / 10),
                cfg.proposal.scale,
                &mut StreamSeed::new(*seed).child("truth").rng(),
            )
            .expect("isotropic start is positive definite");
            Truth {
                value: s.mean.clone(),
                std_error: Some(s.std_error.clone()),
                source: "exact_mcmc".into(),
                mcmc: Some(s),
            }
        }
        (TruthSpec::ExactMcmc { steps, burn_in, seed, .. }, ProblemInstance::Gbm(p)) => {
            let y = p.observations.scalar();
            let s = exact_mcmc(
                |t| gbm_log_posterior(t, &y),
                &[0.0],
                *steps,
                burn_in.unwrap_or(steps / 10),
                cfg.proposal.scale,
                &mut StreamSeed::new(*seed).child("truth").rng(),
            )
            .expect("isotropic start is positive definite");
            Truth {
                value: s.mean.clone(),
                std_error: Some(s.std_error.clone()),
                source: "exact_mcmc".into(),
                mcmc: Some(s),
            }
        }
        _ => {
            let d = replicates.first().map_or(0, |r| r.final_estimate().len());
            let r = replicates.len() as f64;
            let value: Vec<f64> =
                (0..d).map(|j| replicates.iter().map(|rep| rep.final_estimate()[j]).sum::<f64>() / r).collect();
            let std_error = (replicates.len() > 1).then(|| {
                (0..d)
                    .map(|j| {
                        let v = replicates.iter().map(|rep| (rep.final_estimate()[j] - value[j]).powi(2)).sum::<f64>()
                            / (r - 1.0);
                        (v / r).sqrt()
                    })
                    .collect()
            });
            Truth { value, std_error, source: "replicate_mean".into(), mcmc: None }
        }
    }
}

fn level_rows(cfg: &RunConfig, dist: &LevelDistribution, replicates: &[ReplicateOutcome]) -> Vec<LevelRow> {
    let rule = ParticleRule { n_base: cfg.n_base, rho: cfg.rho };
    (1..=dist.l_max())
        .map(|level| {
            let mut count = 0;
            let mut cost_s = 0.0;
            for rep in replicates {
                for (l, s) in rep.levels.iter().zip(&rep.level_seconds) {
                    if *l == level {
                        count += 1;
                        cost_s += s;
                    }
                }
            }
            LevelRow {
                level,
                mass: dist.mass(level),
                count,
                cost_s,
                cost_model: crate::pmmh::correction::delta_cost_model(level, rule.particles(level)),
            }
        })
        .collect()
}

fn thread_count(workers: usize) -> usize {
    if workers > 0 {
        workers
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

/// Run all replicates, compute the truth and write the outputs when `write` is set.
pub fn run_experiment(cfg: &RunConfig, write: bool) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    let dist = LevelDistribution::new(cfg.levels, cfg.l_max)?;
    if write {
        fs::create_dir_all(&cfg.output)?;
    }
    let chain_dir = (write && cfg.save_chains).then_some(cfg.output.as_path());
    let root = StreamSeed::new(cfg.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cfg.workers))
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let replicates: Vec<ReplicateOutcome> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|i| {
                let stream = root.index(i as u64);
                with_problem!(&problem, p => {
                    let theta0 = match &cfg.init {
                        InitSpec::Fixed { theta } => theta.clone(),
                        InitSpec::PriorSample => p.prior.sample(&mut stream.child("init").rng()),
                        InitSpec::PriorSearch { draws } => {
                            prior_search(p, &p.prior, *draws, cfg.n0, cfg.scheme, stream.child("init"))?
                        }
                    };
                    run_replicate(p, cfg, &dist, &theta0, i, stream, chain_dir)
                })
            })
            .collect::<Result<_, _>>()
    })?;
    let truth = compute_truth(cfg, &problem, &replicates);
    let series = mse_series(&replicates, &truth.value);
    let levels = level_rows(cfg, &dist, &replicates);
    let report = ExperimentReport { config: cfg.clone(), truth, replicates, series, levels };
    if write {
        write_outputs(&report, &cfg.output)?;
    }
    Ok(report)
}

/// Shortest round-trip text for `x`, in exponent form outside `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn write_outputs(report: &ExperimentReport, dir: &FsPath) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;
    let mut s = String::from("checkpoint,iters,cost_s,cost_model,mse\n");
    for r in &report.series {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.checkpoint,
            r.iters,
            fmt_f64(r.cost_s),
            fmt_f64(r.cost_model),
            fmt_f64(r.mse)
        );
    }
    fs::write(dir.join("series.csv"), s)?;

    for rep in &report.replicates {
        let d = rep.theta0.len();
        let mut s = String::from("checkpoint,iters,cost_s,cost_model");
        (0..d).for_each(|j| {
            let _ = write!(s, ",est_{j}");
        });
        (0..d).for_each(|j| {
            let _ = write!(s, ",pmmh_{j}");
        });
        s.push('\n');
        for (k, row) in rep.rows.iter().enumerate() {
            let _ = write!(s, "{k},{},{},{}", row.iters, fmt_f64(row.cost_s), fmt_f64(row.cost_model));
            for v in row.estimate.iter().chain(&row.pmmh) {
                let _ = write!(s, ",{}", fmt_f64(*v));
            }
            s.push('\n');
        }
        fs::write(dir.join(format!("replicate_{}.csv", rep.index)), s)?;
    }

    let mut s = String::from("level,mass,count,cost_s,cost_model\n");
    for r in &report.levels {
        let _ =
            writeln!(s, "{},{},{},{},{}", r.level, fmt_f64(r.mass), r.count, fmt_f64(r.cost_s), fmt_f64(r.cost_model));
    }
    fs::write(dir.join("levels.csv"), s)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&report.config)?)?;
    fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&report.truth)?)?;
    Ok(())
}

/// Starting parameter: the best of `draws` prior samples, each scored by the
/// log prior plus one level-0 log-likelihood estimate with `n0` particles.
pub fn prior_search<P: InferenceProblem, Q: Prior>(
    problem: &P,
    prior: &Q,
    draws: usize,
    n0: usize,
    scheme: ResamplingScheme,
    stream: StreamSeed,
) -> Result<Vec<f64>, ExperimentError> {
    let mut rng = stream.rng();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..draws {
        let theta = prior.sample(&mut rng);
        let lp = problem.log_prior(&theta);
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let model = problem.level_model(&theta, 0).map_err(PmmhError::from)?;
        let score = lp + run_pf(&model, n0, scheme, &mut rng).map_err(PmmhError::from)?.log_total();
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, theta));
        }
    }
    // Every draw scoring -inf still leaves a prior sample to start from.
    Ok(best.map_or_else(|| prior.sample(&mut rng), |(_, t)| t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_powers_of_two_then_total() {
        assert_eq!(checkpoint_grid(1), vec![1]);
        assert_eq!(checkpoint_grid(8), vec![1, 2, 4, 8]);
        assert_eq!(checkpoint_grid(10), vec![1, 2, 4, 8, 10]);
        assert!(checkpoint_grid(0).is_empty());
    }

    fn outcome(estimates: &[f64]) -> ReplicateOutcome {
        ReplicateOutcome {
            index: 0,
            theta0: vec![0.0],
            rows: estimates
                .iter()
                .enumerate()
                .map(|(k, e)| CheckpointRow {
                    iters: 1 << k,
                    cost_s: 0.0,
                    cost_model: 1.0,
                    estimate: vec![*e],
                    pmmh: vec![0.0],
                })
                .collect(),
            acceptance_rate: 0.0,
            std_error: vec![0.0],
            levels: vec![],
            level_seconds: vec![],
        }
    }

    #[test]
    fn deterministic_estimator_mse_is_squared_bias() {
        let s = mse_series(&[outcome(&[1.5, 1.25])], &[1.0]);
        assert_eq!(s[0].mse, 0.25);
        assert_eq!(s[1].mse, 0.0625);
        assert_eq!(s[1].mse_pmmh, 1.0);
    }

    #[test]
    fn mse_averages_squared_norms() {
        let mut a = outcome(&[2.0]);
        a.rows[0].estimate = vec![1.0, 2.0];
        let mut b = outcome(&[0.0]);
        b.rows[0].estimate = vec![-1.0, 0.0];
        assert_eq!(mse_series(&[a, b], &[0.0, 0.0])[0].mse, (5.0 + 1.0) / 2.0);
    }

    #[test]
    fn number_format_round_trips() {
        for x in [0.0, 1.0, -2.5, 1e-7, 3.25e20, 0.1 + 0.2] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1e-7), "1e-7");
    }
}
