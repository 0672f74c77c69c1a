//! Empirical strong and weak rates of the level differences `Δ_ℓ(1)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::delta_pf::{run_delta_pf, CoupledPotential};
use crate::hmm::InferenceProblem;
use crate::numeric::{least_squares, LinearFit};
use crate::pf::ResamplingScheme;
use crate::pmmh::PmmhError;
use crate::rng::StreamSeed;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub level: u32,
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    /// Every sample was exactly zero.
    pub zero: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub replicates: usize,
    /// Slopes of `log₂|mean|`, `log₂ E[Δ²]` and `log₂ Var` against `ℓ`;
    /// `None` when fewer than two rows are nonzero.
    pub mean_slope: Option<LinearFit>,
    pub second_moment_slope: Option<LinearFit>,
    pub variance_slope: Option<LinearFit>,
}

impl RateTable {
    /// All slopes undefined because every row is zero.
    pub fn degenerate(&self) -> bool {
        self.rows.iter().all(|r| r.zero)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RateSettings {
    pub particles: usize,
    pub replicates: usize,
    pub scheme: ResamplingScheme,
    pub potential: CoupledPotential,
    pub seed: StreamSeed,
}

/// `Δ_ℓ(1)` from `replicates` independent delta filters at each level.
/// Replicate `r` at level `ℓ` uses the stream `seed / "rates" / ℓ / r`.
pub fn level_difference_samples<P: InferenceProblem>(
    problem: &P,
    theta: &[f64],
    level: u32,
    settings: &RateSettings,
) -> Result<Vec<f64>, PmmhError> {
    let model = problem.coupled_model(theta, level)?;
    let stream = settings.seed.child("rates").index(u64::from(level));
    (0..settings.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.index(r as u64).rng();
            let out = run_delta_pf(&model, settings.particles, settings.scheme, settings.potential, &mut rng)?;
            Ok(out.cloud.estimate(|_| 1.0)?)
        })
        .collect()
}

fn fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    let finite: Vec<&(f64, f64)> = points.iter().filter(|p| p.1.is_finite()).collect();
    if finite.len() < 2 {
        return None;
    }
    let x: Vec<f64> = finite.iter().map(|p| p.0).collect();
    let y: Vec<f64> = finite.iter().map(|p| p.1).collect();
    least_squares(&x, &y)
}

/// Moments of `Δ_ℓ(1)` over `levels` with log₂ slope fits.
pub fn rate_diagnostics<P: InferenceProblem>(
    problem: &P,
    theta: &[f64],
    levels: &[u32],
    settings: &RateSettings,
) -> Result<RateTable, PmmhError> {
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let xs = level_difference_samples(problem, theta, level, settings)?;
        rows.push(row_from_samples(level, &xs));
    }
    Ok(table_from_rows(rows, settings.replicates))
}

pub fn row_from_samples(level: u32, xs: &[f64]) -> RateRow {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let second_moment = xs.iter().map(|x| x * x).sum::<f64>() / n;
    let variance = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    RateRow { level, mean, second_moment, variance, zero: xs.iter().all(|x| *x == 0.0) }
}

pub fn table_from_rows(rows: Vec<RateRow>, replicates: usize) -> RateTable {
    let pts = |g: fn(&RateRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().filter(|r| !r.zero).map(|r| (f64::from(r.level), g(r).log2())).collect()
    };
    RateTable {
        mean_slope: fit(&pts(|r| r.mean.abs())),
        second_moment_slope: fit(&pts(|r| r.second_moment)),
        variance_slope: fit(&pts(|r| r.variance)),
        rows,
        replicates,
    }
}
