//! Feynman–Kac models and the weighted samples produced by particle filters.
//!
//! A model supplies an initial law, transition samplers and potential
//! functions over a fixed horizon `n`. Filters report a [`WeightedCloud`]:
//! signed weights paired with trajectories `x_{0:n}`, whose weighted sum
//! estimates the unnormalised smoother.
//!
//! Trajectories are kept as an ancestor tree (one index per particle per
//! step) inside a [`PathStore`] and materialised on demand.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FkError {
    #[error("integrand is not finite on trajectory {index}")]
    NonFiniteIntegrand { index: usize },
    #[error("weights ({weights}) and trajectories ({paths}) differ in length")]
    LengthMismatch { weights: usize, paths: usize },
    #[error("trajectory {index} has {len} values, expected {expected}")]
    BadTrajectory { index: usize, len: usize, expected: usize },
}

/// Transition kernels `M_t` and potentials `G_t`, `t = 0..=n`.
///
/// Kernels are Markov in the current state; path-dependent models augment
/// the state instead. Potentials are returned on the log scale, with
/// `-inf` standing for a zero potential.
pub trait FeynmanKacModel: Sync {
    fn state_dim(&self) -> usize;

    /// Time horizon `n`; states are indexed `0..=n`.
    fn horizon(&self) -> usize;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]);

    /// Draw `x_t` given `x_{t-1}`, for `t >= 1`.
    fn sample_transition<R: Rng + ?Sized>(&self, t: usize, prev: &[f64], rng: &mut R, out: &mut [f64]);

    fn log_potential(&self, t: usize, x: &[f64]) -> f64;
}

/// Per-time particle arrays plus ancestor links.
#[derive(Clone, Debug)]
pub struct PathStore {
    dim: usize,
    width: usize,
    states: Vec<Vec<f64>>,
    ancestors: Vec<Vec<u32>>,
}

impl PathStore {
    pub fn new(dim: usize, width: usize) -> Self {
        PathStore { dim, width, states: Vec::new(), ancestors: Vec::new() }
    }

    /// Append generation `t`. `ancestors[i]` indexes the parent of particle
    /// `i` in generation `t - 1` and must be `None` only for `t = 0`.
    pub fn push(&mut self, states: Vec<f64>, ancestors: Option<Vec<u32>>) {
        debug_assert_eq!(states.len(), self.dim * self.width);
        match ancestors {
            Some(a) => {
                debug_assert!(!self.states.is_empty());
                debug_assert_eq!(a.len(), self.width);
                self.ancestors.push(a);
            }
            None => debug_assert!(self.states.is_empty()),
        }
        self.states.push(states);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of stored generations (`n + 1` for a complete run).
    pub fn generations(&self) -> usize {
        self.states.len()
    }

    pub fn generation(&self, t: usize) -> &[f64] {
        &self.states[t]
    }

    /// Particle indices along the ancestry of `leaf`, from time 0 to the last generation.
    pub fn lineage(&self, leaf: usize) -> Vec<u32> {
        let len = self.states.len();
        let mut idx = vec![0u32; len];
        if len == 0 {
            return idx;
        }
        let mut cur = leaf as u32;
        idx[len - 1] = cur;
        for t in (1..len).rev() {
            cur = self.ancestors[t - 1][cur as usize];
            idx[t - 1] = cur;
        }
        idx
    }
}

/// A materialised view of one trajectory.
#[derive(Clone, Debug)]
pub struct Path<'a> {
    store: &'a PathStore,
    lineage: Vec<u32>,
    offset: usize,
    dim: usize,
}

impl<'a> Path<'a> {
    /// Number of states, `n + 1`.
    pub fn len(&self) -> usize {
        self.lineage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lineage.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, t: usize) -> &'a [f64] {
        let start = self.lineage[t] as usize * self.store.dim + self.offset;
        &self.store.states[t][start..start + self.dim]
    }

    pub fn terminal(&self) -> &'a [f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &'a [f64]> + '_ {
        (0..self.len()).map(move |t| self.state(t))
    }

    /// Flattened copy, `(n + 1) * dim` values.
    pub fn to_vec(&self) -> Vec<f64> {
        self.states().flat_map(|s| s.iter().copied()).collect()
    }
}

/// Signed weights `V^(1:K)` with trajectories `X^(1:K)`.
///
/// Weights are held as `log|V|` plus a sign; a zero weight has `log|V| = -inf`.
#[derive(Clone, Debug)]
pub struct WeightedCloud {
    log_abs: Vec<f64>,
    negative: Vec<bool>,
    store: PathStore,
    leaves: Vec<u32>,
    offsets: Vec<u32>,
    dim: usize,
}

impl WeightedCloud {
    /// Assemble from filter output. `offsets[i]` selects the component block
    /// of width `dim` inside the stored state that entry `i` refers to.
    pub(crate) fn from_store(
        log_abs: Vec<f64>,
        negative: Vec<bool>,
        store: PathStore,
        leaves: Vec<u32>,
        offsets: Vec<u32>,
        dim: usize,
    ) -> Self {
        debug_assert_eq!(log_abs.len(), negative.len());
        debug_assert_eq!(log_abs.len(), leaves.len());
        debug_assert_eq!(log_abs.len(), offsets.len());
        WeightedCloud { log_abs, negative, store, leaves, offsets, dim }
    }

    /// Build a cloud from explicit linear weights and flattened trajectories
    /// of `(n + 1) * dim` values each.
    pub fn from_paths(weights: &[f64], paths: &[Vec<f64>], dim: usize) -> Result<Self, FkError> {
        let log_abs = weights.iter().map(|w| w.abs().ln()).collect();
        let negative = weights.iter().map(|w| *w < 0.0).collect();
        Self::from_log_paths(log_abs, negative, paths, dim)
    }

    /// As [`WeightedCloud::from_paths`] with weights given as `log|V|` and sign.
    pub fn from_log_paths(
        log_abs: Vec<f64>,
        negative: Vec<bool>,
        paths: &[Vec<f64>],
        dim: usize,
    ) -> Result<Self, FkError> {
        if log_abs.len() != paths.len() || negative.len() != paths.len() {
            return Err(FkError::LengthMismatch { weights: log_abs.len(), paths: paths.len() });
        }
        let k = paths.len();
        let len = paths.first().map_or(0, |p| p.len());
        if dim == 0 || !len.is_multiple_of(dim) {
            return Err(FkError::BadTrajectory { index: 0, len, expected: dim });
        }
        for (i, p) in paths.iter().enumerate() {
            if p.len() != len {
                return Err(FkError::BadTrajectory { index: i, len: p.len(), expected: len });
            }
        }
        let steps = len / dim;
        let mut store = PathStore::new(dim, k);
        let identity: Vec<u32> = (0..k as u32).collect();
        for t in 0..steps {
            let mut gen = Vec::with_capacity(k * dim);
            for p in paths {
                gen.extend_from_slice(&p[t * dim..(t + 1) * dim]);
            }
            store.push(gen, (t > 0).then(|| identity.clone()));
        }
        Ok(WeightedCloud { log_abs, negative, store, leaves: identity, offsets: vec![0; k], dim })
    }

    pub fn len(&self) -> usize {
        self.log_abs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_abs.is_empty()
    }

    /// Dimension of each trajectory state.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `V^(i)` on the linear scale.
    pub fn weight(&self, i: usize) -> f64 {
        let w = self.log_abs[i].exp();
        if self.negative[i] {
            -w
        } else {
            w
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    pub fn log_abs_weight(&self, i: usize) -> f64 {
        self.log_abs[i]
    }

    pub fn log_abs_weights(&self) -> &[f64] {
        &self.log_abs
    }

    pub fn is_negative(&self, i: usize) -> bool {
        self.negative[i]
    }

    pub fn negative_flags(&self) -> &[bool] {
        &self.negative
    }

    /// True if every weight is zero (e.g. a terminated filter).
    pub fn is_zero(&self) -> bool {
        self.log_abs.iter().all(|l| *l == f64::NEG_INFINITY)
    }

    pub fn path(&self, i: usize) -> Path<'_> {
        Path {
            store: &self.store,
            lineage: self.store.lineage(self.leaves[i] as usize),
            offset: self.offsets[i] as usize,
            dim: self.dim,
        }
    }

    /// `sum_i V^(i) phi(X^(i))`.
    ///
    /// Zero-weight entries are skipped, so `phi` is never evaluated on the
    /// arbitrary trajectories of a terminated filter.
    pub fn estimate<F>(&self, phi: F) -> Result<f64, FkError>
    where
        F: Fn(&Path<'_>) -> f64,
    {
        Ok(self.estimate_vec_scaled(1, 0.0, |p, out| out[0] = phi(p))?[0])
    }

    /// `e^{-log_scale} sum_i V^(i) phi(X^(i))` for vector-valued `phi` of
    /// length `dim`, computed without forming `V^(i)` on the linear scale.
    pub fn estimate_vec_scaled<F>(&self, dim: usize, log_scale: f64, phi: F) -> Result<Vec<f64>, FkError>
    where
        F: Fn(&Path<'_>, &mut [f64]),
    {
        let scale = self.max_log_abs();
        if scale == f64::NEG_INFINITY {
            return Ok(vec![0.0; dim]);
        }
        // Positive and negative weights are summed apart so that mirrored
        // halves of a signed cloud cancel exactly.
        let mut pos = vec![0.0; dim];
        let mut neg = vec![0.0; dim];
        let mut v = vec![0.0; dim];
        for i in 0..self.len() {
            if self.log_abs[i] == f64::NEG_INFINITY {
                continue;
            }
            phi(&self.path(i), &mut v);
            if !v.iter().all(|x| x.is_finite()) {
                return Err(FkError::NonFiniteIntegrand { index: i });
            }
            let w = (self.log_abs[i] - scale).exp();
            let acc = if self.negative[i] { &mut neg } else { &mut pos };
            for (a, x) in acc.iter_mut().zip(&v) {
                *a += w * x;
            }
        }
        let factor = (scale - log_scale).exp();
        Ok(pos.iter().zip(&neg).map(|(p, n)| (p - n) * factor).collect())
    }

    /// `sum_i V^(i)`.
    pub fn total(&self) -> f64 {
        self.estimate(|_| 1.0).unwrap_or(f64::NAN)
    }

    /// `log sum_i V^(i)` for clouds with nonnegative weights.
    pub fn log_total(&self) -> f64 {
        debug_assert!(self.negative.iter().zip(&self.log_abs).all(|(n, l)| !n || *l == f64::NEG_INFINITY));
        crate::numeric::log_sum_exp(&self.log_abs)
    }

    pub(crate) fn max_log_abs(&self) -> f64 {
        self.log_abs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `sum_i V^(i) phi(X^(i))` over a cloud.
pub fn unnormalised_smoother_estimate<F>(cloud: &WeightedCloud, phi: F) -> Result<f64, FkError>
where
    F: Fn(&Path<'_>) -> f64,
{
    cloud.estimate(phi)
}
