//! `udiff`: run experiments, rate diagnostics, the allocation planner and
//! exact-likelihood oracles from the command line.
//!
//! Exit status is 0 on success, 2 for configuration errors and 3 for
//! numerical or runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use unbiased_diffusion::harness::config::ModelSpec;
use unbiased_diffusion::harness::experiment::{build_problem, fmt_f64, ProblemInstance};
use unbiased_diffusion::harness::oracle::{exact_mcmc, gbm_log_posterior, ou_log_posterior};
use unbiased_diffusion::harness::{rate_diagnostics, run_experiment, RateSettings, RunConfig};
use unbiased_diffusion::models::kalman::{gbm_exact_loglik, kalman_level_likelihood, ou_exact_loglik};
use unbiased_diffusion::models::{GBM_OBS_VAR, OU_OBS_VAR};
use unbiased_diffusion::rmlmc::{plan_allocation_with, ParticleScaling};
use unbiased_diffusion::rng::StreamSeed;

#[derive(Parser)]
#[command(name = "udiff", version, about = "Unbiased inference for discretely observed diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scaling {
    Constant,
    Balanced,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated experiment and write CSV outputs.
    Run {
        config: PathBuf,
        /// Override a config field, e.g. `--set n0=50 --set levels.r=1.5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Moments of level differences and their fitted log₂ slopes.
    Rates {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Comma-separated parameter vector.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [2u32, 3, 4, 5, 6])]
        levels: Vec<u32>,
        #[arg(long, default_value_t = 20)]
        particles: usize,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Level distribution and particle growth from rates β, α, γ.
    Plan {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = Scaling::Constant)]
        scaling: Scaling,
        #[arg(long, default_value_t = 30)]
        l_max: u32,
    },
    /// Exact log-likelihood at `--theta`, or an exact-likelihood MCMC run.
    Oracle {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Option<Vec<f64>>,
        /// Euler level for the OU likelihood; exact transitions if absent.
        #[arg(long)]
        level: Option<u32>,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Config(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

fn load(config: &Path, overrides: &[String]) -> Result<RunConfig, Failure> {
    RunConfig::load(config, overrides).map_err(|e| Failure::Config(e.to_string()))
}

fn problem(cfg: &RunConfig) -> Result<ProblemInstance, Failure> {
    build_problem(cfg).map_err(|e| match e.exit_code() {
        2 => Failure::Config(e.to_string()),
        _ => Failure::Numeric(e.to_string()),
    })
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let report = run_experiment(&cfg, true).map_err(|e| match e.exit_code() {
                2 => Failure::Config(e.to_string()),
                _ => Failure::Numeric(e.to_string()),
            })?;
            let last = report.series.last();
            print_json(&json!({
                "output": cfg.output,
                "truth": report.truth.value,
                "final_mse": last.map(|r| r.mse),
                "final_mse_pmmh": last.map(|r| r.mse_pmmh),
                "replicates": report.replicates.iter().map(|r| json!({
                    "acceptance_rate": r.acceptance_rate,
                    "estimate": r.final_estimate(),
                    "pmmh": r.final_pmmh(),
                    "std_error": r.std_error,
                })).collect::<Vec<_>>(),
            }));
        }
        Command::Rates { config, overrides, theta, levels, particles, replicates, seed } => {
            let cfg = load(&config, &overrides)?;
            if theta.len() != cfg.model.theta_dim() {
                return Err(Failure::Config(format!("--theta needs {} values", cfg.model.theta_dim())));
            }
            if levels.len() < 3 || levels.contains(&0) {
                return Err(Failure::Config("--levels needs at least 3 levels, all >= 1".into()));
            }
            let settings = RateSettings {
                particles,
                replicates,
                scheme: cfg.scheme,
                potential: cfg.potential,
                seed: StreamSeed::new(seed),
            };
            let table = match problem(&cfg)? {
                ProblemInstance::Ou(p) => rate_diagnostics(&p, &theta, &levels, &settings),
                ProblemInstance::Gbm(p) => rate_diagnostics(&p, &theta, &levels, &settings),
                ProblemInstance::Pearson(p) => rate_diagnostics(&p, &theta, &levels, &settings),
            }
            .map_err(|e| Failure::Numeric(e.to_string()))?;
            println!("level,mean,second_moment,variance,zero");
            for r in &table.rows {
                println!(
                    "{},{},{},{},{}",
                    r.level,
                    fmt_f64(r.mean),
                    fmt_f64(r.second_moment),
                    fmt_f64(r.variance),
                    r.zero
                );
            }
            let slope = |f: &Option<unbiased_diffusion::numeric::LinearFit>| f.map(|f| (f.slope, f.slope_se));
            eprintln!(
                "slopes (value, s.e.): mean {:?}, second moment {:?}, variance {:?}",
                slope(&table.mean_slope),
                slope(&table.second_moment_slope),
                slope(&table.variance_slope)
            );
            if table.degenerate() {
                eprintln!("all level differences are exactly zero; slopes undefined");
            }
        }
        Command::Plan { beta, alpha, gamma, scaling, l_max } => {
            let scaling = match scaling {
                Scaling::Constant => ParticleScaling::Constant,
                Scaling::Balanced => ParticleScaling::Balanced,
            };
            let plan = plan_allocation_with(beta, alpha, gamma, scaling).map_err(|e| Failure::Config(e.to_string()))?;
            let dist = plan.distribution(l_max).map_err(|e| Failure::Config(e.to_string()))?;
            print_json(&json!({
                "plan": plan,
                "cost_exponent": plan.form.cost_exponent(gamma, plan.rho),
                "masses": dist.masses(),
            }));
        }
        Command::Oracle { config, overrides, theta, level, steps, seed } => {
            let cfg = load(&config, &overrides)?;
            let p = problem(&cfg)?;
            let (y, x0) = match &p {
                ProblemInstance::Ou(p) => (p.observations.scalar(), p.x0[0]),
                ProblemInstance::Gbm(p) => (p.observations.scalar(), 0.0),
                ProblemInstance::Pearson(_) => {
                    return Err(Failure::Config("no exact likelihood for this model".into()));
                }
            };
            let is_ou = matches!(cfg.model, ModelSpec::Ou { .. });
            if !is_ou && level.is_some() {
                return Err(Failure::Config("--level applies to the OU model only".into()));
            }
            match theta {
                Some(theta) => {
                    if theta.len() != cfg.model.theta_dim() {
                        return Err(Failure::Config(format!("--theta needs {} values", cfg.model.theta_dim())));
                    }
                    let ll = if is_ou {
                        match level {
                            None => ou_exact_loglik(&theta, &y, x0, OU_OBS_VAR),
                            Some(l) => kalman_level_likelihood(&theta, l, &y, x0, OU_OBS_VAR),
                        }
                        .map(|s| s.log_likelihood)
                    } else {
                        gbm_exact_loglik(theta[0], &y, GBM_OBS_VAR, 0.0)
                    }
                    .map_err(|e| Failure::Numeric(e.to_string()))?;
                    print_json(&json!({ "theta": theta, "level": level, "log_likelihood": ll }));
                }
                None => {
                    let mut rng = StreamSeed::new(seed).child("truth").rng();
                    let d = cfg.model.theta_dim();
                    let s = if is_ou {
                        exact_mcmc(
                            |t| ou_log_posterior(t, &y, x0, level),
                            &vec![0.0; d],
                            steps,
                            steps / 10,
                            cfg.proposal.scale,
                            &mut rng,
                        )
                    } else {
                        exact_mcmc(
                            |t| gbm_log_posterior(t, &y),
                            &vec![0.0; d],
                            steps,
                            steps / 10,
                            cfg.proposal.scale,
                            &mut rng,
                        )
                    }
                    .map_err(|e| Failure::Numeric(e.to_string()))?;
                    print_json(&s);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("configuration error: {m}"),
                Failure::Numeric(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
