//! Line-delimited JSON checkpoints: one object per accepted state, with the
//! correction attached when it has been computed.
//!
//! Non-finite numbers are written as `null`. A `null` log-weight reads back
//! as `-inf`, a `null` state value as `NaN`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::correction::CorrectionRecord;
use super::{ChainState, JumpChain};
use crate::delta_pf::DeltaOutput;
use crate::fk::{FkError, WeightedCloud};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Cloud { line: usize, source: FkError },
    #[error("line {line}: expected index {expected}, found {found}")]
    OutOfOrder { line: usize, expected: usize, found: usize },
    #[error("serialisation: {0}")]
    Serialise(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct CloudLine {
    dim: usize,
    log_abs: Vec<Option<f64>>,
    negative: Vec<bool>,
    paths: Vec<Vec<Option<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct CorrectionLine {
    level: u32,
    mass: f64,
    cost_seconds: f64,
    cost_model: f64,
    coupled_log_weights: Vec<Option<f64>>,
    log_w_fine: Vec<Option<f64>>,
    log_w_coarse: Vec<Option<f64>>,
    cloud: CloudLine,
}

#[derive(Serialize, Deserialize)]
struct StateLine {
    index: usize,
    theta: Vec<f64>,
    holding: u64,
    log_norm: f64,
    epsilon: f64,
    cloud: CloudLine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    correction: Option<CorrectionLine>,
}

fn opt(xs: &[f64]) -> Vec<Option<f64>> {
    xs.iter().map(|x| x.is_finite().then_some(*x)).collect()
}

fn log_weights(xs: &[Option<f64>]) -> Vec<f64> {
    xs.iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect()
}

impl CloudLine {
    fn from_cloud(c: &WeightedCloud) -> Self {
        CloudLine {
            dim: c.dim(),
            log_abs: opt(c.log_abs_weights()),
            negative: c.negative_flags().to_vec(),
            paths: (0..c.len()).map(|i| opt(&c.path(i).to_vec())).collect(),
        }
    }

    fn into_cloud(self) -> Result<WeightedCloud, FkError> {
        let paths: Vec<Vec<f64>> =
            self.paths.iter().map(|p| p.iter().map(|x| x.unwrap_or(f64::NAN)).collect()).collect();
        WeightedCloud::from_log_paths(log_weights(&self.log_abs), self.negative, &paths, self.dim)
    }
}

/// Write the chain, with `records[k]` attached to state `k` when given.
pub fn write_checkpoint<W: Write>(
    out: &mut W,
    chain: &JumpChain,
    records: Option<&[CorrectionRecord]>,
) -> Result<(), CheckpointError> {
    for (k, s) in chain.states.iter().enumerate() {
        let correction = records.and_then(|r| r.get(k)).map(|r| CorrectionLine {
            level: r.level,
            mass: r.mass,
            cost_seconds: r.cost_seconds,
            cost_model: r.cost_model,
            coupled_log_weights: opt(&r.delta.coupled_log_weights),
            log_w_fine: opt(&r.delta.log_w_fine),
            log_w_coarse: opt(&r.delta.log_w_coarse),
            cloud: CloudLine::from_cloud(&r.delta.cloud),
        });
        let line = StateLine {
            index: k,
            theta: s.theta.clone(),
            holding: s.holding,
            log_norm: s.log_norm,
            epsilon: chain.epsilon,
            cloud: CloudLine::from_cloud(&s.cloud),
            correction,
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a checkpoint. Records are returned only if every state carries one.
pub fn read_checkpoint<R: BufRead>(input: R) -> Result<(JumpChain, Option<Vec<CorrectionRecord>>), CheckpointError> {
    let mut states = Vec::new();
    let mut records = Vec::new();
    let mut epsilon = 0.0;
    let mut complete = true;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ln = n + 1;
        let s: StateLine = serde_json::from_str(&line).map_err(|source| CheckpointError::Parse { line: ln, source })?;
        if s.index != states.len() {
            return Err(CheckpointError::OutOfOrder { line: ln, expected: states.len(), found: s.index });
        }
        epsilon = s.epsilon;
        let cloud = Arc::new(s.cloud.into_cloud().map_err(|source| CheckpointError::Cloud { line: ln, source })?);
        match s.correction {
            Some(c) if complete => {
                let delta = DeltaOutput {
                    cloud: c.cloud.into_cloud().map_err(|source| CheckpointError::Cloud { line: ln, source })?,
                    coupled_log_weights: log_weights(&c.coupled_log_weights),
                    log_w_fine: log_weights(&c.log_w_fine),
                    log_w_coarse: log_weights(&c.log_w_coarse),
                };
                records.push(CorrectionRecord {
                    index: s.index,
                    theta: s.theta.clone(),
                    holding: s.holding,
                    level: c.level,
                    mass: c.mass,
                    log_norm: s.log_norm,
                    base: Arc::clone(&cloud),
                    delta,
                    cost_seconds: c.cost_seconds,
                    cost_model: c.cost_model,
                });
            }
            _ => complete = false,
        }
        states.push(ChainState { theta: s.theta, cloud, log_norm: s.log_norm, holding: s.holding });
    }
    let records = (complete && !states.is_empty()).then_some(records);
    Ok((JumpChain { states, epsilon }, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delta_pf::CoupledPotential;
    use crate::models::ou_problem;
    use crate::pf::ResamplingScheme;
    use crate::pmmh::correction::{is_estimate, run_corrections, CorrectionSettings};
    use crate::rmlmc::{LevelDistribution, LevelForm, ParticleRule};
    use crate::rng::StreamSeed;

    fn state(theta: f64, holding: u64, log_w: Vec<f64>) -> ChainState {
        let paths: Vec<Vec<f64>> = (0..log_w.len()).map(|i| vec![0.0, i as f64 + theta]).collect();
        let flags = vec![false; log_w.len()];
        let cloud = WeightedCloud::from_log_paths(log_w, flags, &paths, 1).unwrap();
        ChainState { theta: vec![theta], cloud: Arc::new(cloud), log_norm: -0.5, holding }
    }

    fn round_trip(
        chain: &JumpChain,
        records: Option<&[CorrectionRecord]>,
    ) -> (JumpChain, Option<Vec<CorrectionRecord>>) {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, chain, records).unwrap();
        read_checkpoint(buf.as_slice()).unwrap()
    }

    #[test]
    fn chain_round_trips_with_infinite_weights() {
        let chain = JumpChain {
            states: vec![state(0.5, 2, vec![-1.0, f64::NEG_INFINITY]), state(-1.25, 1, vec![0.0, -3.0])],
            epsilon: 1e-6,
        };
        let (back, records) = round_trip(&chain, None);
        assert!(records.is_none());
        assert_eq!(back.epsilon, 1e-6);
        assert_eq!(back.len(), 2);
        for (a, b) in chain.states.iter().zip(&back.states) {
            assert_eq!((&a.theta, a.holding, a.log_norm), (&b.theta, b.holding, b.log_norm));
            assert_eq!(a.cloud.log_abs_weights(), b.cloud.log_abs_weights());
            assert_eq!(a.cloud.path(1).to_vec(), b.cloud.path(1).to_vec());
        }
    }

    #[test]
    fn corrections_round_trip_to_the_same_estimate() {
        let problem = ou_problem(vec![Some(0.2), Some(-0.1)], 0.0);
        let chain = JumpChain {
            states: vec![state(0.1, 3, vec![-0.2, -0.7, -1.1]), state(-0.3, 1, vec![-0.4, -0.1, -2.0])]
                .into_iter()
                .map(|mut s| {
                    s.theta = vec![s.theta[0], 0.2];
                    s
                })
                .collect(),
            epsilon: 0.0,
        };
        let settings = CorrectionSettings {
            rule: ParticleRule::constant(4),
            scheme: ResamplingScheme::Systematic,
            potential: CoupledPotential::Average,
            workers: 0,
            seed: StreamSeed::new(2),
        };
        let dist = LevelDistribution::new(LevelForm::Geometric { r: 1.5 }, 3).unwrap();
        let records = run_corrections(&chain, &problem, &dist, &settings).unwrap();
        let (_, back) = round_trip(&chain, Some(&records));
        let back = back.expect("every state had a correction");
        let f = |theta: &[f64], _: &crate::fk::Path<'_>| theta[0];
        assert_eq!(is_estimate(&records, f).unwrap(), is_estimate(&back, f).unwrap());
        assert_eq!(
            back.iter().map(|r| r.level).collect::<Vec<_>>(),
            records.iter().map(|r| r.level).collect::<Vec<_>>()
        );
    }

    #[test]
    fn partial_corrections_are_dropped() {
        let chain = JumpChain { states: vec![state(0.0, 1, vec![0.0])], epsilon: 0.0 };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &chain, Some(&[])).unwrap();
        let (back, records) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        assert!(records.is_none());
    }

    #[test]
    fn out_of_order_lines_are_rejected() {
        let chain = JumpChain { states: vec![state(0.0, 1, vec![0.0]), state(1.0, 1, vec![0.0])], epsilon: 0.0 };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &chain, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let swapped: String = text.lines().rev().map(|l| format!("{l}\n")).collect();
        let err = read_checkpoint(swapped.as_bytes()).unwrap_err();
        assert!(matches!(err, CheckpointError::OutOfOrder { line: 1, expected: 0, found: 1 }));
        assert!(matches!(read_checkpoint("{".as_bytes()), Err(CheckpointError::Parse { line: 1, .. })));
    }
}
