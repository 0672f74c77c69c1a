//! Diffusions `dX = a_θ(X) dt + b_θ(X) dW`, their Euler–Maruyama
//! discretisation at level `ℓ`, and the fine/coarse coupling that shares
//! Brownian increments between consecutive levels.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use smallvec::SmallVec;
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SdeError {
    #[error("path diverged at Euler step {step}")]
    Diverged { step: usize },
    #[error("level {level} has no coarser level")]
    NoCoarserLevel { level: u32 },
    #[error("level {level} with offset {offset} exceeds the supported resolution")]
    LevelTooFine { level: u32, offset: u32 },
}

/// Drift and diffusion coefficients of an Itô diffusion.
///
/// `params` binds a parameter vector once so per-step evaluation does not
/// repeat transcendental work.
pub trait DiffusionSpec: Sync {
    type Params: Send + Sync;

    fn dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    /// Step size at level `ℓ` is `2^-(offset + ℓ)`.
    fn level_offset(&self) -> u32 {
        0
    }

    fn params(&self, theta: &[f64]) -> Self::Params;

    fn drift(&self, p: &Self::Params, x: &[f64], out: &mut [f64]);

    /// Row-major `dim x noise_dim` matrix.
    fn diffusion(&self, p: &Self::Params, x: &[f64], out: &mut [f64]);
}

/// Discretisation level: `h = 2^-(offset + ℓ)` and `1/h` steps per unit time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelGrid {
    level: u32,
    offset: u32,
}

/// Largest `level + offset`; finer steps fall below double precision.
pub const MAX_LOG2_STEPS: u32 = 52;

impl LevelGrid {
    pub fn new(level: u32, offset: u32) -> Result<Self, SdeError> {
        if level + offset > MAX_LOG2_STEPS {
            return Err(SdeError::LevelTooFine { level, offset });
        }
        Ok(LevelGrid { level, offset })
    }

    pub fn for_spec<D: DiffusionSpec + ?Sized>(spec: &D, level: u32) -> Result<Self, SdeError> {
        Self::new(level, spec.level_offset())
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn offset(&self) -> u32 {
        self.offset
    }

    pub fn step_size(&self) -> f64 {
        (-f64::from(self.level + self.offset)).exp2()
    }

    pub fn steps_per_unit(&self) -> u64 {
        1u64 << (self.level + self.offset)
    }

    /// The grid one level down, sharing this grid's offset.
    pub fn coarser(&self) -> Result<Self, SdeError> {
        if self.level == 0 {
            return Err(SdeError::NoCoarserLevel { level: 0 });
        }
        Ok(LevelGrid { level: self.level - 1, offset: self.offset })
    }
}

type Buf = SmallVec<[f64; 8]>;

struct Scratch {
    drift: Buf,
    diff: Buf,
}

impl Scratch {
    fn new(d: usize, m: usize) -> Self {
        Scratch { drift: SmallVec::from_elem(0.0, d), diff: SmallVec::from_elem(0.0, d * m) }
    }
}

#[inline]
fn euler_step<D: DiffusionSpec + ?Sized>(
    spec: &D,
    p: &D::Params,
    h: f64,
    dw: &[f64],
    x: &mut [f64],
    s: &mut Scratch,
) -> bool {
    let m = dw.len();
    spec.drift(p, x, &mut s.drift);
    spec.diffusion(p, x, &mut s.diff);
    let mut finite = true;
    for (i, xi) in x.iter_mut().enumerate() {
        let row = &s.diff[i * m..(i + 1) * m];
        let noise: f64 = row.iter().zip(dw).map(|(b, w)| b * w).sum();
        *xi += s.drift[i] * h + noise;
        finite &= xi.is_finite();
    }
    finite
}

/// Advance `x` over one unit observation interval with `1/h` Euler steps.
pub fn euler_transition<D, R>(
    spec: &D,
    params: &D::Params,
    grid: LevelGrid,
    x: &[f64],
    rng: &mut R,
    out: &mut [f64],
) -> Result<(), SdeError>
where
    D: DiffusionSpec + ?Sized,
    R: Rng + ?Sized,
{
    let m = spec.noise_dim();
    let h = grid.step_size();
    let sqrt_h = h.sqrt();
    let mut s = Scratch::new(spec.dim(), m);
    let mut dw: Buf = SmallVec::from_elem(0.0, m);
    out.copy_from_slice(x);
    for step in 0..grid.steps_per_unit() {
        for w in dw.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = sqrt_h * z;
        }
        if !euler_step(spec, params, h, &dw, out, &mut s) {
            out.fill(f64::NAN);
            return Err(SdeError::Diverged { step: step as usize });
        }
    }
    Ok(())
}

/// Outcome of a coupled transition, reported per leg.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoupledOutcome {
    pub fine: Result<(), SdeError>,
    pub coarse: Result<(), SdeError>,
}

/// Advance a fine chain at `fine_grid` and a coarse chain one level down
/// over one unit interval, driving the coarse chain with sums of pairs of
/// fine increments. A leg that diverges is filled with `NaN` while the other
/// continues on the same increments.
#[allow(clippy::too_many_arguments)]
pub fn coupled_euler_transition<D, R>(
    spec: &D,
    params: &D::Params,
    fine_grid: LevelGrid,
    x_fine: &[f64],
    x_coarse: &[f64],
    rng: &mut R,
    out_fine: &mut [f64],
    out_coarse: &mut [f64],
) -> Result<CoupledOutcome, SdeError>
where
    D: DiffusionSpec + ?Sized,
    R: Rng + ?Sized,
{
    let coarse_grid = fine_grid.coarser()?;
    let m = spec.noise_dim();
    let d = spec.dim();
    let h = fine_grid.step_size();
    let hc = coarse_grid.step_size();
    let sqrt_h = h.sqrt();
    let mut sf = Scratch::new(d, m);
    let mut sc = Scratch::new(d, m);
    let mut dw1: Buf = SmallVec::from_elem(0.0, m);
    let mut dw2: Buf = SmallVec::from_elem(0.0, m);
    let mut dwc: Buf = SmallVec::from_elem(0.0, m);
    out_fine.copy_from_slice(x_fine);
    out_coarse.copy_from_slice(x_coarse);
    let mut fine: Result<(), SdeError> = Ok(());
    let mut coarse: Result<(), SdeError> = Ok(());
    for j in 0..coarse_grid.steps_per_unit() as usize {
        for w in dw1.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = sqrt_h * z;
        }
        for w in dw2.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = sqrt_h * z;
        }
        if fine.is_ok() {
            if !euler_step(spec, params, h, &dw1, out_fine, &mut sf) {
                fine = Err(SdeError::Diverged { step: 2 * j });
            } else if !euler_step(spec, params, h, &dw2, out_fine, &mut sf) {
                fine = Err(SdeError::Diverged { step: 2 * j + 1 });
            }
            if fine.is_err() {
                out_fine.fill(f64::NAN);
            }
        }
        if coarse.is_ok() {
            for ((c, a), b) in dwc.iter_mut().zip(&dw1).zip(&dw2) {
                *c = a + b;
            }
            if !euler_step(spec, params, hc, &dwc, out_coarse, &mut sc) {
                coarse = Err(SdeError::Diverged { step: j });
                out_coarse.fill(f64::NAN);
            }
        }
    }
    Ok(CoupledOutcome { fine, coarse })
}

/// Diffusion built from closures; convenient for stubs and experiments.
pub struct FnDiffusion<A, B> {
    pub dim: usize,
    pub noise_dim: usize,
    pub level_offset: u32,
    pub drift: A,
    pub diffusion: B,
}

impl<A, B> DiffusionSpec for FnDiffusion<A, B>
where
    A: Fn(&[f64], &[f64], &mut [f64]) + Sync,
    B: Fn(&[f64], &[f64], &mut [f64]) + Sync,
{
    type Params = Vec<f64>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn level_offset(&self) -> u32 {
        self.level_offset
    }

    fn params(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn drift(&self, p: &Vec<f64>, x: &[f64], out: &mut [f64]) {
        (self.drift)(p, x, out)
    }

    fn diffusion(&self, p: &Vec<f64>, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(p, x, out)
    }
}
