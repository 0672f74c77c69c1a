//! Randomised multilevel debiasing.
//!
//! A level `L` is drawn from a mass function `p` on `1..=L_max`; the level
//! difference `Δ_L` from a delta particle filter is weighted by `1/p_L` and
//! added to a level-0 particle estimate. With finite support the telescoping
//! sum is exact, so the result is unbiased for the level-`L_max` model.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delta_pf::{run_delta_pf, CoupledPotential, DeltaOutput, DeltaPfError};
use crate::fk::{FkError, Path, WeightedCloud};
use crate::hmm::InferenceProblem;
use crate::numeric::log_sum_exp;
use crate::pf::{run_pf, PfError, ResamplingScheme};
use crate::sde::SdeError;

pub const DEFAULT_L_MAX: u32 = 30;
pub const DEFAULT_ETA: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmlmcError {
    #[error("level support must be 1..=L_max with L_max >= 1")]
    EmptySupport,
    #[error("level distribution parameter {name} = {value} is not finite")]
    BadParameter { name: &'static str, value: f64 },
    #[error("level mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("rates need beta, alpha, gamma > 0 and beta <= 2 alpha; got beta={beta}, alpha={alpha}, gamma={gamma}")]
    InvalidRates { beta: f64, alpha: f64, gamma: f64 },
    #[error("no admissible r: need gamma(1+rho) = {lower} < min(beta+rho, 2 alpha) = {upper}")]
    EmptyInterval { lower: f64, upper: f64 },
    #[error("ratio estimator needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("normaliser sum is zero")]
    DegenerateNormaliser,
    #[error(transparent)]
    Integrand(#[from] FkError),
    #[error(transparent)]
    Level(#[from] SdeError),
    #[error(transparent)]
    Filter(#[from] PfError),
    #[error(transparent)]
    Delta(#[from] DeltaPfError),
}

/// Shape of `p_ℓ` before normalisation over `1..=L_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevelForm {
    /// `p_ℓ ∝ 2^{-rℓ}`.
    Geometric { r: f64 },
    /// `p_ℓ ∝ 2^{-2bℓ} ℓ (log₂(ℓ+1))^η`.
    LogAdjusted {
        b: f64,
        #[serde(default = "default_eta")]
        eta: f64,
    },
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

impl LevelForm {
    fn log2_weight(&self, level: u32) -> f64 {
        let l = f64::from(level);
        match *self {
            LevelForm::Geometric { r } => -r * l,
            LevelForm::LogAdjusted { b, eta } => -2.0 * b * l + l.log2() + eta * (l + 1.0).log2().log2(),
        }
    }

    fn validate(&self) -> Result<(), RmlmcError> {
        let check = |name, value: f64| {
            if value.is_finite() {
                Ok(())
            } else {
                Err(RmlmcError::BadParameter { name, value })
            }
        };
        match *self {
            LevelForm::Geometric { r } => check("r", r),
            LevelForm::LogAdjusted { b, eta } => check("b", b).and(check("eta", eta)),
        }
    }

    /// Exponent `e` with `p_ℓ 2^{γℓ(1+ρ)} ≈ 2^{eℓ}` up to polynomial factors;
    /// the expected per-sample cost is finite on unbounded support iff `e < 0`.
    pub fn cost_exponent(&self, gamma: f64, rho: f64) -> f64 {
        let decay = match *self {
            LevelForm::Geometric { r } => r,
            LevelForm::LogAdjusted { b, .. } => 2.0 * b,
        };
        gamma * (1.0 + rho) - decay
    }
}

/// Normalised mass function on `1..=L_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelDistribution {
    form: LevelForm,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
}

impl LevelDistribution {
    pub fn new(form: LevelForm, l_max: u32) -> Result<Self, RmlmcError> {
        if l_max == 0 {
            return Err(RmlmcError::EmptySupport);
        }
        form.validate()?;
        let logs: Vec<f64> = (1..=l_max).map(|l| form.log2_weight(l) * std::f64::consts::LN_2).collect();
        let z = log_sum_exp(&logs);
        let masses: Vec<f64> = logs.iter().map(|l| (l - z).exp()).collect();
        if let Some(&m) = masses.iter().find(|m| !(**m > 0.0)) {
            return Err(RmlmcError::NonPositiveMass(m));
        }
        let mut cumulative = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            acc += m;
            cumulative.push(acc);
        }
        *cumulative.last_mut().expect("nonempty support") = 1.0;
        Ok(LevelDistribution { form, masses, cumulative })
    }

    pub fn form(&self) -> LevelForm {
        self.form
    }

    pub fn l_max(&self) -> u32 {
        self.masses.len() as u32
    }

    /// `p_ℓ`; zero outside the support.
    pub fn mass(&self, level: u32) -> f64 {
        if level == 0 {
            return 0.0;
        }
        self.masses.get(level as usize - 1).copied().unwrap_or(0.0)
    }

    /// Masses for `ℓ = 1..=L_max`.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, f64) {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|c| *c <= u).min(self.masses.len() - 1);
        (i as u32 + 1, self.masses[i])
    }
}

/// `L ~ p`, returned with `p_L`.
pub fn sample_level<R: Rng + ?Sized>(dist: &LevelDistribution, rng: &mut R) -> (u32, f64) {
    dist.sample(rng)
}

/// Particles per level: `N_ℓ = N_base ⌈2^{ρℓ}⌉`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleRule {
    pub n_base: usize,
    #[serde(default)]
    pub rho: f64,
}

impl ParticleRule {
    pub fn constant(n_base: usize) -> Self {
        ParticleRule { n_base, rho: 0.0 }
    }

    pub fn particles(&self, level: u32) -> usize {
        self.n_base * (self.rho * f64::from(level)).exp2().ceil() as usize
    }
}

/// How particle numbers grow with level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleScaling {
    /// `ρ = 0`.
    #[default]
    Constant,
    /// `ρ = 2α - β`.
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub form: LevelForm,
}

impl AllocationPlan {
    pub fn distribution(&self, l_max: u32) -> Result<LevelDistribution, RmlmcError> {
        LevelDistribution::new(self.form, l_max)
    }

    pub fn particle_rule(&self, n_base: usize) -> ParticleRule {
        ParticleRule { n_base, rho: self.rho }
    }
}

/// Level distribution and particle growth for strong rate `β`, weak rate
/// `α` and cost rate `γ`, with constant particle numbers.
pub fn plan_allocation(beta: f64, alpha: f64, gamma: f64) -> Result<AllocationPlan, RmlmcError> {
    plan_allocation_with(beta, alpha, gamma, ParticleScaling::Constant)
}

/// As [`plan_allocation`] with a choice of particle growth.
///
/// For `β > 1`, `p_ℓ ∝ 2^{-rℓ}` with `r` the midpoint of
/// `(γ(1+ρ), min(β+ρ, 2α))`. For `β <= 1` no geometric choice has both
/// finite cost and variance; `p_ℓ ∝ 2^{-2αℓ} ℓ (log₂(ℓ+1))²`.
pub fn plan_allocation_with(
    beta: f64,
    alpha: f64,
    gamma: f64,
    scaling: ParticleScaling,
) -> Result<AllocationPlan, RmlmcError> {
    let finite_positive = |v: f64| v.is_finite() && v > 0.0;
    if !(finite_positive(beta) && finite_positive(alpha) && finite_positive(gamma)) || beta > 2.0 * alpha {
        return Err(RmlmcError::InvalidRates { beta, alpha, gamma });
    }
    let rho = match scaling {
        ParticleScaling::Constant => 0.0,
        ParticleScaling::Balanced => 2.0 * alpha - beta,
    };
    let form = if beta > 1.0 {
        let lower = gamma * (1.0 + rho);
        let upper = (beta + rho).min(2.0 * alpha);
        if lower >= upper {
            return Err(RmlmcError::EmptyInterval { lower, upper });
        }
        LevelForm::Geometric { r: 0.5 * (lower + upper) }
    } else {
        LevelForm::LogAdjusted { b: alpha, eta: DEFAULT_ETA }
    };
    Ok(AllocationPlan { beta, alpha, gamma, rho, form })
}

/// `ζ(g) = Σ_i V'^(i) g(X'^(i)) + Δ_L(g) / p_L`.
pub fn zeta_estimate<F>(base: &WeightedCloud, delta: &WeightedCloud, p_level: f64, g: F) -> Result<f64, RmlmcError>
where
    F: Fn(&Path<'_>) -> f64,
{
    if !(p_level > 0.0) {
        return Err(RmlmcError::NonPositiveMass(p_level));
    }
    Ok(base.estimate(&g)? + delta.estimate(&g)? / p_level)
}

/// Filter settings shared by the level-0 and delta runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorSettings {
    /// Particles in the level-0 filter.
    pub n0: usize,
    pub rule: ParticleRule,
    pub scheme: ResamplingScheme,
    pub potential: CoupledPotential,
}

/// One draw of the single-term estimator at fixed `θ`.
#[derive(Clone, Debug)]
pub struct UnbiasedRun {
    pub base: WeightedCloud,
    pub level: u32,
    pub mass: f64,
    pub delta: DeltaOutput,
}

impl UnbiasedRun {
    pub fn zeta<F: Fn(&Path<'_>) -> f64>(&self, g: F) -> Result<f64, RmlmcError> {
        zeta_estimate(&self.base, &self.delta.cloud, self.mass, g)
    }
}

/// Level-0 particle filter, then `L ~ p` and a delta filter at `(L, L-1)`.
pub fn run_unbiased_estimator<P, R>(
    problem: &P,
    theta: &[f64],
    dist: &LevelDistribution,
    settings: &EstimatorSettings,
    rng: &mut R,
) -> Result<UnbiasedRun, RmlmcError>
where
    P: InferenceProblem,
    R: Rng + ?Sized,
{
    let base = run_pf(&problem.level_model(theta, 0)?, settings.n0, settings.scheme, rng)?;
    let (level, mass) = dist.sample(rng);
    let coupled = problem.coupled_model(theta, level)?;
    let delta = run_delta_pf(&coupled, settings.rule.particles(level), settings.scheme, settings.potential, rng)?;
    Ok(UnbiasedRun { base, level, mass, delta })
}

/// Self-normalised estimate with its delta-method variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioEstimate {
    pub estimate: f64,
    /// Plug-in asymptotic variance `σ̂²`.
    pub variance: f64,
    /// `√(σ̂² / M)`.
    pub std_error: f64,
}

/// `Σ ζ_k(φ) / Σ ζ_k(1)` from pairs `(ζ_k(φ), ζ_k(1))`, with
/// `σ̂² = mean((ζ_k(φ) - E ζ_k(1))²) / mean(ζ_k(1))²`.
pub fn ratio_estimator(pairs: &[(f64, f64)]) -> Result<RatioEstimate, RmlmcError> {
    let m = pairs.len();
    if m < 2 {
        return Err(RmlmcError::TooFewSamples(m));
    }
    let num: f64 = pairs.iter().map(|p| p.0).sum();
    let den: f64 = pairs.iter().map(|p| p.1).sum();
    if den == 0.0 {
        return Err(RmlmcError::DegenerateNormaliser);
    }
    let estimate = num / den;
    let mf = m as f64;
    let centred = pairs.iter().map(|(a, b)| (a - estimate * b).powi(2)).sum::<f64>() / mf;
    let variance = centred / (den / mf).powi(2);
    Ok(RatioEstimate { estimate, variance, std_error: (variance / mf).sqrt() })
}
