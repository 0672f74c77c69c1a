//! Delta particle filter: a particle filter on coupled fine/coarse pairs
//! whose signed output estimates the difference of the two unnormalised
//! smoothers.
//!
//! The filter runs on pairs with potential `Ǧ_t`. Entry `i <= N` of the
//! output carries `+V̌^(i) w^F` with the fine path and entry `N + i` carries
//! `-V̌^(i) w^C` with the coarse path, where
//! `w^F = ∏_t G^F_t / Ǧ_t` and `w^C = ∏_t G^C_t / Ǧ_t`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use thiserror::Error;

use crate::fk::{FeynmanKacModel, FkError, Path, WeightedCloud};
use crate::hmm::{potential_or_zero, ObservationModel};
use crate::numeric::log_add_exp;
use crate::pf::{run_pf_raw, PfError, ResamplingScheme};
use crate::sde::{coupled_euler_transition, DiffusionSpec, LevelGrid, SdeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeltaPfError {
    #[error(transparent)]
    Level(#[from] SdeError),
    #[error(transparent)]
    Filter(#[from] PfError),
}

/// Pair of Feynman–Kac models on a common space with a coupled kernel.
///
/// Both legs have states of `leg_dim` values; each marginal of the coupled
/// kernel must equal the corresponding single-leg kernel.
pub trait CoupledFeynmanKac: Sync {
    fn leg_dim(&self) -> usize;

    fn horizon(&self) -> usize;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R, fine: &mut [f64], coarse: &mut [f64]);

    #[allow(clippy::too_many_arguments)]
    fn sample_transition<R: Rng + ?Sized>(
        &self,
        t: usize,
        prev_fine: &[f64],
        prev_coarse: &[f64],
        rng: &mut R,
        fine: &mut [f64],
        coarse: &mut [f64],
    );

    fn log_potential_fine(&self, t: usize, x: &[f64]) -> f64;

    fn log_potential_coarse(&self, t: usize, x: &[f64]) -> f64;
}

/// Choice of `Ǧ_t` from `G^F_t` and `G^C_t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoupledPotential {
    /// `(G^F + G^C) / 2`; keeps `w^F, w^C <= 2` per step.
    #[default]
    Average,
    /// `max(G^F, G^C)`; keeps `w^F, w^C <= 1` per step.
    Max,
}

impl CoupledPotential {
    pub fn combine(self, log_fine: f64, log_coarse: f64) -> f64 {
        match self {
            CoupledPotential::Average if log_fine == log_coarse => log_fine,
            CoupledPotential::Average => log_add_exp(log_fine, log_coarse) - LN_2,
            CoupledPotential::Max => log_fine.max(log_coarse),
        }
    }
}

/// The coupled model seen as one Feynman–Kac model on stacked pairs
/// `(x^F, x^C)` with potential `Ǧ_t`.
pub struct PairModel<'a, C> {
    pub inner: &'a C,
    pub potential: CoupledPotential,
}

impl<C: CoupledFeynmanKac> FeynmanKacModel for PairModel<'_, C> {
    fn state_dim(&self) -> usize {
        2 * self.inner.leg_dim()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let (f, c) = out.split_at_mut(self.inner.leg_dim());
        self.inner.sample_initial(rng, f, c);
    }

    fn sample_transition<R: Rng + ?Sized>(&self, t: usize, prev: &[f64], rng: &mut R, out: &mut [f64]) {
        let d = self.inner.leg_dim();
        let (pf, pc) = prev.split_at(d);
        let (f, c) = out.split_at_mut(d);
        self.inner.sample_transition(t, pf, pc, rng, f, c);
    }

    fn log_potential(&self, t: usize, x: &[f64]) -> f64 {
        let (f, c) = x.split_at(self.inner.leg_dim());
        self.potential.combine(self.inner.log_potential_fine(t, f), self.inner.log_potential_coarse(t, c))
    }
}

/// Signed `2N` cloud plus the pair-filter weights `V̌^(1:N)`.
#[derive(Clone, Debug)]
pub struct DeltaOutput {
    pub cloud: WeightedCloud,
    /// `log V̌^(i)`, the pair filter's own weights.
    pub coupled_log_weights: Vec<f64>,
    /// `log w^F` and `log w^C` per pair; `-inf` where `V̌^(i) = 0`.
    pub log_w_fine: Vec<f64>,
    pub log_w_coarse: Vec<f64>,
}

impl DeltaOutput {
    pub fn n_pairs(&self) -> usize {
        self.coupled_log_weights.len()
    }
}

/// Run the delta particle filter with `n` pairs.
pub fn run_delta_pf<C, R>(
    model: &C,
    n: usize,
    scheme: ResamplingScheme,
    potential: CoupledPotential,
    rng: &mut R,
) -> Result<DeltaOutput, DeltaPfError>
where
    C: CoupledFeynmanKac,
    R: Rng + ?Sized,
{
    let pair = PairModel { inner: model, potential };
    let (log_v, store) = run_pf_raw(&pair, n, scheme, rng)?;
    let d = model.leg_dim();
    let mut log_w_fine = vec![f64::NEG_INFINITY; n];
    let mut log_w_coarse = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        if log_v[i] == f64::NEG_INFINITY {
            continue;
        }
        let (mut wf, mut wc) = (0.0, 0.0);
        for (t, &k) in store.lineage(i).iter().enumerate() {
            let x = &store.generation(t)[k as usize * 2 * d..(k as usize + 1) * 2 * d];
            let (xf, xc) = x.split_at(d);
            let gf = model.log_potential_fine(t, xf);
            let gc = model.log_potential_coarse(t, xc);
            let g = potential.combine(gf, gc);
            wf += gf - g;
            wc += gc - g;
        }
        log_w_fine[i] = wf;
        log_w_coarse[i] = wc;
    }
    let mut log_abs = Vec::with_capacity(2 * n);
    log_abs.extend(log_v.iter().zip(&log_w_fine).map(|(v, w)| v + w));
    log_abs.extend(log_v.iter().zip(&log_w_coarse).map(|(v, w)| v + w));
    let negative = (0..2 * n).map(|i| i >= n).collect();
    let leaves = (0..n as u32).chain(0..n as u32).collect();
    let offsets = std::iter::repeat_n(0, n).chain(std::iter::repeat_n(d as u32, n)).collect();
    let cloud = WeightedCloud::from_store(log_abs, negative, store, leaves, offsets, d);
    Ok(DeltaOutput { cloud, coupled_log_weights: log_v, log_w_fine, log_w_coarse })
}

/// `Δ_ℓ(φ) = Σ_{i=1}^{2N} V^(i) φ(X^(i))`.
pub fn delta_estimate<F>(out: &DeltaOutput, phi: F) -> Result<f64, FkError>
where
    F: Fn(&Path<'_>) -> f64,
{
    out.cloud.estimate(phi)
}

/// Euler models at levels `ℓ` and `ℓ - 1` driven by shared Brownian
/// increments from a common start, with identical observation potentials.
pub struct CoupledDiffusionModel<'a, D: DiffusionSpec, O: ObservationModel> {
    diffusion: &'a D,
    params: D::Params,
    observations: &'a O,
    obs_params: O::Params,
    grid: LevelGrid,
    x0: &'a [f64],
}

impl<'a, D: DiffusionSpec, O: ObservationModel> CoupledDiffusionModel<'a, D, O> {
    /// Fails for `level = 0`.
    pub fn new(
        diffusion: &'a D,
        observations: &'a O,
        x0: &'a [f64],
        theta: &[f64],
        level: u32,
    ) -> Result<Self, SdeError> {
        let grid = LevelGrid::for_spec(diffusion, level)?;
        grid.coarser()?;
        Ok(CoupledDiffusionModel {
            diffusion,
            params: diffusion.params(theta),
            observations,
            obs_params: observations.params(theta),
            grid,
            x0,
        })
    }

    pub fn fine_grid(&self) -> LevelGrid {
        self.grid
    }
}

/// Bind a diffusion, parameter and level into a coupled model.
pub fn build_coupled_model<'a, D: DiffusionSpec, O: ObservationModel>(
    diffusion: &'a D,
    theta: &[f64],
    level: u32,
    observations: &'a O,
    x0: &'a [f64],
) -> Result<CoupledDiffusionModel<'a, D, O>, SdeError> {
    CoupledDiffusionModel::new(diffusion, observations, x0, theta, level)
}

impl<D: DiffusionSpec, O: ObservationModel> CoupledFeynmanKac for CoupledDiffusionModel<'_, D, O>
where
    D::Params: Sync,
    O::Params: Sync,
{
    fn leg_dim(&self) -> usize {
        self.diffusion.dim()
    }

    fn horizon(&self) -> usize {
        self.observations.horizon()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, _rng: &mut R, fine: &mut [f64], coarse: &mut [f64]) {
        fine.copy_from_slice(self.x0);
        coarse.copy_from_slice(self.x0);
    }

    fn sample_transition<R: Rng + ?Sized>(
        &self,
        _t: usize,
        prev_fine: &[f64],
        prev_coarse: &[f64],
        rng: &mut R,
        fine: &mut [f64],
        coarse: &mut [f64],
    ) {
        // Diverged legs come back as NaN and get zero potential.
        let moved = coupled_euler_transition(
            self.diffusion,
            &self.params,
            self.grid,
            prev_fine,
            prev_coarse,
            rng,
            fine,
            coarse,
        );
        if moved.is_err() {
            fine.fill(f64::NAN);
            coarse.fill(f64::NAN);
        }
    }

    fn log_potential_fine(&self, t: usize, x: &[f64]) -> f64 {
        potential_or_zero(self.observations, &self.obs_params, t, x)
    }

    fn log_potential_coarse(&self, t: usize, x: &[f64]) -> f64 {
        potential_or_zero(self.observations, &self.obs_params, t, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;
    use rand_distr::StandardNormal;

    /// Both legs follow the same random walk; potentials may differ by a constant factor.
    struct Twin {
        n: usize,
        log_ratio: f64,
    }

    impl CoupledFeynmanKac for Twin {
        fn leg_dim(&self) -> usize {
            1
        }
        fn horizon(&self) -> usize {
            self.n
        }
        fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R, f: &mut [f64], c: &mut [f64]) {
            f[0] = rng.sample(StandardNormal);
            c[0] = f[0];
        }
        fn sample_transition<R: Rng + ?Sized>(
            &self,
            _t: usize,
            pf: &[f64],
            pc: &[f64],
            rng: &mut R,
            f: &mut [f64],
            c: &mut [f64],
        ) {
            let z: f64 = rng.sample(StandardNormal);
            f[0] = pf[0] + z;
            c[0] = pc[0] + z;
        }
        fn log_potential_fine(&self, _t: usize, x: &[f64]) -> f64 {
            -0.5 * x[0] * x[0]
        }
        fn log_potential_coarse(&self, t: usize, x: &[f64]) -> f64 {
            self.log_potential_fine(t, x) + self.log_ratio
        }
    }

    #[test]
    fn identical_coupling_cancels_exactly() {
        let m = Twin { n: 6, log_ratio: 0.0 };
        for seed in 0..20 {
            let out = run_delta_pf(
                &m,
                15,
                ResamplingScheme::Multinomial,
                CoupledPotential::Average,
                &mut StreamSeed::new(seed).rng(),
            )
            .unwrap();
            assert_eq!(delta_estimate(&out, |p| p.terminal()[0].cos()).unwrap(), 0.0);
            assert_eq!(delta_estimate(&out, |_| 0.0).unwrap(), 0.0);
            assert!(out.log_w_fine.iter().all(|w| *w == 0.0));
            for i in 0..15 {
                assert_eq!(out.cloud.path(i).to_vec(), out.cloud.path(15 + i).to_vec());
            }
        }
    }

    #[test]
    fn average_and_max_combine() {
        let avg = CoupledPotential::Average.combine(2f64.ln(), 4f64.ln()).exp();
        assert!((avg - 3.0).abs() < 1e-14);
        let same = CoupledPotential::Average.combine(-1.25, -1.25);
        assert!((same + 1.25).abs() < 1e-15);
        assert_eq!(CoupledPotential::Max.combine(2f64.ln(), 4f64.ln()), 4f64.ln());
        assert_eq!(CoupledPotential::Average.combine(f64::NEG_INFINITY, 0.0), -LN_2);
    }

    #[test]
    fn correction_weights_are_bounded() {
        // Constant ratio 8 between legs pushes w^F towards its bound.
        let n = 4;
        let m = Twin { n, log_ratio: 8f64.ln() };
        let bound = ((n + 1) as f64) * LN_2;
        for potential in [CoupledPotential::Average, CoupledPotential::Max] {
            let out =
                run_delta_pf(&m, 10, ResamplingScheme::Systematic, potential, &mut StreamSeed::new(2).rng()).unwrap();
            for i in 0..10 {
                assert!(out.log_w_fine[i] <= bound + 1e-12);
                assert!(out.log_w_coarse[i] <= bound + 1e-12);
            }
        }
        // With G^C = 8 G^F each step, w^C = (16/9)^(n+1) exactly under the average.
        let out = run_delta_pf(
            &m,
            3,
            ResamplingScheme::Multinomial,
            CoupledPotential::Average,
            &mut StreamSeed::new(3).rng(),
        )
        .unwrap();
        let expected = (n + 1) as f64 * (16.0f64 / 9.0).ln();
        assert!((out.log_w_coarse[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn sign_layout() {
        let m = Twin { n: 2, log_ratio: 0.3 };
        let out = run_delta_pf(
            &m,
            5,
            ResamplingScheme::Multinomial,
            CoupledPotential::Average,
            &mut StreamSeed::new(4).rng(),
        )
        .unwrap();
        assert_eq!(out.cloud.len(), 10);
        assert!(out.cloud.weights()[..5].iter().all(|w| *w >= 0.0));
        assert!(out.cloud.weights()[5..].iter().all(|w| *w <= 0.0));
    }
}
