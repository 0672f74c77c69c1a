//! Run configuration: one JSON document, with `key=value` overrides applied
//! before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::delta_pf::CoupledPotential;
use crate::pf::ResamplingScheme;
use crate::pmmh::AdaptationSettings;
use crate::rmlmc::LevelForm;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("override `{0}` must have the form key=value")]
    Override(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Ou {
        #[serde(default)]
        x0: f64,
    },
    Gbm,
    Pearson {
        #[serde(default = "pearson_x0")]
        x0: [f64; 2],
        /// Level `ℓ` takes steps of `2^-(level_offset + ℓ)`.
        #[serde(default)]
        level_offset: u32,
    },
}

fn pearson_x0() -> [f64; 2] {
    [1.0, 2.0]
}

impl ModelSpec {
    pub fn state_dim(&self) -> usize {
        match self {
            ModelSpec::Pearson { .. } => 2,
            _ => 1,
        }
    }

    pub fn theta_dim(&self) -> usize {
        match self {
            ModelSpec::Ou { .. } => 2,
            ModelSpec::Gbm => 1,
            ModelSpec::Pearson { .. } => 10,
        }
    }

    pub fn level_offset(&self) -> u32 {
        match self {
            ModelSpec::Gbm => crate::models::GBM_LEVEL_OFFSET,
            ModelSpec::Pearson { level_offset, .. } => *level_offset,
            ModelSpec::Ou { .. } => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// `y[t]` for `t = 0..=n`; `null` marks an unobserved time.
    Values { y: Vec<Option<Vec<f64>>> },
    /// Rows `t,y_1,...,y_d` with an empty field for a missing value.
    Csv { path: PathBuf },
    /// Forward simulation at a fine level.
    Simulate {
        theta: Vec<f64>,
        level: u32,
        /// Last observation time `n`.
        horizon: usize,
        #[serde(default)]
        observe_initial: bool,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSpec {
    /// Random-walk MCMC on the exact likelihood; `level` selects the Euler
    /// model at that level instead of the exact transition (OU only).
    ExactMcmc {
        steps: usize,
        #[serde(default)]
        burn_in: Option<usize>,
        #[serde(default)]
        level: Option<u32>,
        #[serde(default)]
        seed: u64,
    },
    Fixed {
        value: Vec<f64>,
    },
    /// Mean of the final corrected estimates over replicates.
    #[default]
    ReplicateMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSpec {
    /// Initial random-walk standard deviation per coordinate.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_adapt")]
    pub adapt: Option<AdaptationSettings>,
}

fn default_scale() -> f64 {
    0.1
}

fn default_adapt() -> Option<AdaptationSettings> {
    Some(AdaptationSettings::default())
}

impl Default for ProposalSpec {
    fn default() -> Self {
        ProposalSpec { scale: default_scale(), adapt: default_adapt() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// Independent prior draw per replicate.
    #[default]
    PriorSample,
    /// Best of `draws` prior samples by one level-0 likelihood estimate each.
    PriorSearch {
        draws: usize,
    },
    Fixed {
        theta: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub truth: TruthSpec,
    /// Particles in the level-0 filter of the chain.
    #[serde(default = "default_n0")]
    pub n0: usize,
    /// `N_ℓ = n_base ⌈2^{ρℓ}⌉`.
    #[serde(default = "default_n_base")]
    pub n_base: usize,
    #[serde(default)]
    pub rho: f64,
    pub levels: LevelForm,
    #[serde(default = "default_l_max")]
    pub l_max: u32,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Kept chain iterations `I`.
    pub iterations: usize,
    /// Discarded iterations before the kept ones; defaults to `iterations`.
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub proposal: ProposalSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses all available cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub scheme: ResamplingScheme,
    #[serde(default)]
    pub potential: CoupledPotential,
    /// Write each replicate's jump chain and corrections as `chain_<i>.jsonl`.
    #[serde(default)]
    pub save_chains: bool,
}

fn default_n0() -> usize {
    200
}

fn default_n_base() -> usize {
    20
}

fn default_l_max() -> u32 {
    crate::rmlmc::DEFAULT_L_MAX
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_thin() -> usize {
    10
}

fn one() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations)
    }

    /// Parse from JSON text, reporting the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse { path: ".".into(), message: e.to_string() })?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_path_to_error::deserialize(value)
            .map_err(|e| ConfigError::Parse { path: e.path().to_string(), message: e.inner().to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load `path` and apply `overrides` of the form `a.b.c=value`.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: ".".into(), message: e.to_string() })?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("n0", self.n0),
            ("n_base", self.n_base),
            ("iterations", self.iterations),
            ("thin", self.thin),
            ("replications", self.replications),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", "must be finite and nonnegative"));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(invalid("rho", "must be finite and nonnegative"));
        }
        if self.l_max == 0 {
            return Err(invalid("l_max", "must be at least 1"));
        }
        if self.l_max + self.model.level_offset() > crate::sde::MAX_LOG2_STEPS {
            return Err(invalid("l_max", "finest step size is below double precision"));
        }
        if !(self.proposal.scale > 0.0 && self.proposal.scale.is_finite()) {
            return Err(invalid("proposal.scale", "must be positive"));
        }
        if let Some(a) = self.proposal.adapt {
            if a.every == 0 {
                return Err(invalid("proposal.adapt.every", "must be at least 1"));
            }
            if !(a.lambda >= 0.0) {
                return Err(invalid("proposal.adapt.lambda", "must be nonnegative"));
            }
            if !(0.0..=1.0).contains(&a.mix) {
                return Err(invalid("proposal.adapt.mix", "must lie in [0, 1]"));
            }
        }
        let d = self.model.theta_dim();
        match &self.data {
            DataSpec::Simulate { theta, .. } if theta.len() != d => {
                return Err(invalid("data.theta", format!("expected {d} values, got {}", theta.len())));
            }
            DataSpec::Values { y } => {
                let dim = self.model.state_dim();
                if y.len() < 2 {
                    return Err(invalid("data.y", "need observations at times 0..=n with n >= 1"));
                }
                if let Some(t) = y.iter().position(|v| v.as_ref().is_some_and(|v| v.len() != dim)) {
                    return Err(invalid(&format!("data.y[{t}]"), format!("expected {dim} values")));
                }
            }
            _ => {}
        }
        if let InitSpec::PriorSearch { draws: 0 } = self.init {
            return Err(invalid("init.draws", "must be at least 1"));
        }
        if let InitSpec::Fixed { theta } = &self.init {
            if theta.len() != d {
                return Err(invalid("init.theta", format!("expected {d} values, got {}", theta.len())));
            }
        }
        match &self.truth {
            TruthSpec::Fixed { value } if value.len() != d => {
                return Err(invalid("truth.value", format!("expected {d} values, got {}", value.len())));
            }
            TruthSpec::ExactMcmc { steps, level, .. } => {
                if *steps < 2 {
                    return Err(invalid("truth.steps", "must be at least 2"));
                }
                match (&self.model, level) {
                    (ModelSpec::Ou { .. }, _) | (ModelSpec::Gbm, None) => {}
                    (ModelSpec::Gbm, Some(_)) => {
                        return Err(invalid("truth.level", "the Euler GBM likelihood has no closed form"));
                    }
                    (ModelSpec::Pearson { .. }, _) => {
                        return Err(invalid("truth", "no exact likelihood for this model"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Set `a.b.c` in `root` to `value`, parsed as JSON if possible and as a
/// string otherwise. Missing objects along the path are created.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    if key.is_empty() {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(ConfigError::Override(spec.to_string()));
        }
        node = node
            .as_object_mut()
            .expect("checked object")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parse observation rows `t,y_1,...,y_d`; times must run `0, 1, ...`.
pub fn parse_observation_csv(text: &str, dim: usize) -> Result<Vec<Option<Vec<f64>>>, ConfigError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let field = format!("data.csv line {}", n + 1);
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != dim + 1 {
            return Err(invalid(&field, format!("expected {} columns", dim + 1)));
        }
        let t: usize = cells[0].parse().map_err(|_| invalid(&field, "time index is not an integer"))?;
        if t != out.len() {
            return Err(invalid(&field, format!("expected time {}", out.len())));
        }
        if cells[1..].iter().all(|c| c.is_empty()) {
            out.push(None);
            continue;
        }
        let ys = cells[1..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| invalid(&field, format!("`{c}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Some(ys));
    }
    if out.len() < 2 {
        return Err(invalid("data.csv", "need observations at times 0..=n with n >= 1"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"kind": "ou"},
        "data": {"source": "values", "y": [null, [0.1], [0.2]]},
        "levels": {"form": "geometric", "r": 1.5},
        "iterations": 100
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.n0, 200);
        assert_eq!(cfg.thin, 10);
        assert_eq!(cfg.burn_in(), 100);
        assert_eq!(cfg.epsilon, 1e-6);
        assert_eq!(cfg.truth, TruthSpec::ReplicateMean);
    }

    #[test]
    fn unknown_field_reports_path() {
        let text = MINIMAL.replace("\"r\": 1.5", "\"r\": 1.5, \"q\": 2");
        match RunConfig::from_json(&text) {
            Err(ConfigError::Parse { path, .. }) => assert_eq!(path, "levels"),
            other => panic!("unexpected {other:?}"),
        }
        let text = MINIMAL.replace("\"iterations\": 100", "\"iterations\": -1");
        match RunConfig::from_json(&text) {
            Err(ConfigError::Parse { path, .. }) => assert_eq!(path, "iterations"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overrides_apply_before_validation() {
        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_override(&mut v, "n0=7").unwrap();
        apply_override(&mut v, "levels.r=2.5").unwrap();
        apply_override(&mut v, "output=runs/a").unwrap();
        let cfg = RunConfig::from_value(v.clone()).unwrap();
        assert_eq!(cfg.n0, 7);
        assert_eq!(cfg.levels, LevelForm::Geometric { r: 2.5 });
        assert_eq!(cfg.output, PathBuf::from("runs/a"));
        apply_override(&mut v, "replications=0").unwrap();
        assert!(matches!(RunConfig::from_value(v), Err(ConfigError::Invalid { .. })));
        assert!(apply_override(&mut Value::Null, "novalue").is_err());
    }

    #[test]
    fn csv_rows() {
        let y = parse_observation_csv("t,y\n0,\n1,0.5\n2,-1\n", 1).unwrap();
        assert_eq!(y, vec![None, Some(vec![0.5]), Some(vec![-1.0])]);
        assert!(parse_observation_csv("0,1\n2,3\n", 1).is_err());
        assert!(parse_observation_csv("0,1,2\n1,3,x\n", 2).is_err());
    }

    #[test]
    fn model_specific_checks() {
        let text = MINIMAL.replace(r#"{"kind": "ou"}"#, r#"{"kind": "gbm"}"#).replace(
            "\"iterations\": 100",
            "\"iterations\": 100, \"truth\": {\"kind\": \"exact_mcmc\", \"steps\": 10, \"level\": 3}",
        );
        assert!(matches!(RunConfig::from_json(&text), Err(ConfigError::Invalid { .. })));
    }
}
