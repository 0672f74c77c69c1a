//! Per-level cost accounting for the corrections.

use serde::Serialize;

use crate::pmmh::CorrectionRecord;
use crate::rmlmc::{LevelDistribution, ParticleRule};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub level: u32,
    pub mass: f64,
    pub count: usize,
    pub seconds: f64,
    /// `N_ℓ (2^ℓ + 2^{ℓ-1})`.
    pub model_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    /// Mean modelled cost per record.
    pub empirical_mean: f64,
    /// `Σ_ℓ p_ℓ N_ℓ (2^ℓ + 2^{ℓ-1})` over the truncated support.
    pub expected_truncated: f64,
    /// Whether `Σ_ℓ p_ℓ 2^{γℓ(1+ρ)}` converges for the untruncated form.
    pub finite_mean: bool,
}

/// Cost table over `1..=L_max` with the tail test for the configured form.
pub fn cost_model_report(
    records: &[CorrectionRecord],
    dist: &LevelDistribution,
    rule: &ParticleRule,
    gamma: f64,
) -> CostReport {
    let mut rows: Vec<CostRow> = (1..=dist.l_max())
        .map(|level| CostRow {
            level,
            mass: dist.mass(level),
            count: 0,
            seconds: 0.0,
            model_cost: crate::pmmh::correction::delta_cost_model(level, rule.particles(level)),
        })
        .collect();
    for r in records {
        let row = &mut rows[r.level as usize - 1];
        row.count += 1;
        row.seconds += r.cost_seconds;
    }
    let empirical_mean = records.iter().map(|r| r.cost_model).sum::<f64>() / records.len().max(1) as f64;
    let expected_truncated = rows.iter().map(|r| r.mass * r.model_cost).sum();
    CostReport {
        rows,
        empirical_mean,
        expected_truncated,
        finite_mean: dist.form().cost_exponent(gamma, rule.rho) < 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmlmc::LevelForm;

    #[test]
    fn single_level_and_tail_flags() {
        let rule = ParticleRule::constant(20);
        let one = LevelDistribution::new(LevelForm::Geometric { r: 1.5 }, 1).unwrap();
        let report = cost_model_report(&[], &one, &rule, 1.0);
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].model_cost, 20.0 * 3.0);
        assert!(report.finite_mean);
        let boundary = LevelDistribution::new(LevelForm::Geometric { r: 1.0 }, 8).unwrap();
        assert!(!cost_model_report(&[], &boundary, &rule, 1.0).finite_mean);
    }
}
