//! Browser bindings for three small views of the inference machinery on the
//! Ornstein–Uhlenbeck model `dX = -a X dt + b dW`:
//!
//! - [`coupled_paths`]: a fine and a coarse Euler chain driven by shared noise;
//! - [`level_masses`]: the level distribution chosen from convergence rates;
//! - [`likelihood_estimates`]: particle-filter likelihood estimates against
//!   the Kalman value of the same discretised model.
//!
//! Each binding wraps a plain Rust function so the numerics can be tested
//! natively.

use wasm_bindgen::prelude::*;

use unbiased_diffusion::models::kalman::kalman_level_likelihood;
use unbiased_diffusion::models::{
    ou_problem, simulate_data, Link, NoiseVariance, ObservationDesign, OuDiffusion, OU_OBS_VAR,
};
use unbiased_diffusion::pf::{run_pf, ResamplingScheme};
use unbiased_diffusion::rmlmc::plan_allocation;
use unbiased_diffusion::rng::StreamSeed;
use unbiased_diffusion::sde::{coupled_euler_transition, DiffusionSpec, LevelGrid};

/// Observation times of the demo data set.
pub const DATA_HORIZON: usize = 20;
/// Finest level the demo accepts.
pub const MAX_LEVEL: u32 = 12;

fn check_level(level: u32, min: u32) -> Result<(), String> {
    if (min..=MAX_LEVEL).contains(&level) {
        Ok(())
    } else {
        Err(format!("level must lie in {min}..={MAX_LEVEL}, got {level}"))
    }
}

/// Fine and coarse states at integer times `0..=horizon`, concatenated.
pub fn coupled_paths_impl(a: f64, b: f64, level: u32, horizon: usize, seed: u64) -> Result<Vec<f64>, String> {
    check_level(level, 1)?;
    if !(a > 0.0 && b > 0.0) {
        return Err("a and b must be positive".into());
    }
    let params = OuDiffusion.params(&[a.ln(), b.ln()]);
    let grid = LevelGrid::new(level, 0).map_err(|e| e.to_string())?;
    let mut rng = StreamSeed::new(seed).rng();
    let (mut fine, mut coarse) = (vec![0.0], vec![0.0]);
    for _ in 0..horizon {
        let (mut f, mut c) = ([0.0], [0.0]);
        let last = (fine[fine.len() - 1], coarse[coarse.len() - 1]);
        coupled_euler_transition(&OuDiffusion, &params, grid, &[last.0], &[last.1], &mut rng, &mut f, &mut c)
            .map_err(|e| e.to_string())?;
        fine.push(f[0]);
        coarse.push(c[0]);
    }
    fine.extend(coarse);
    Ok(fine)
}

/// Level masses `p_1, ..., p_{l_max}` for strong rate `beta` and weak rate `alpha`.
pub fn level_masses_impl(beta: f64, alpha: f64, l_max: u32) -> Result<Vec<f64>, String> {
    let plan = plan_allocation(beta, alpha, 1.0).map_err(|e| e.to_string())?;
    Ok(plan.distribution(l_max).map_err(|e| e.to_string())?.masses().to_vec())
}

/// `[log Z_ℓ, log Ẑ_1, ..., log Ẑ_reps]` on a fixed data set simulated at
/// `a = b = 1`, evaluated at `(a, b)`.
pub fn likelihood_estimates_impl(
    a: f64,
    b: f64,
    level: u32,
    particles: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    check_level(level, 0)?;
    if particles == 0 {
        return Err("need at least one particle".into());
    }
    if !(a > 0.0 && b > 0.0) {
        return Err("a and b must be positive".into());
    }
    let y = demo_data();
    let theta = [a.ln(), b.ln()];
    let exact = kalman_level_likelihood(&theta, level, &y, 0.0, OU_OBS_VAR).map_err(|e| e.to_string())?;
    let problem = ou_problem(y, 0.0);
    let model = problem.level_model(&theta, level).map_err(|e| e.to_string())?;
    let root = StreamSeed::new(seed);
    let mut out = Vec::with_capacity(reps + 1);
    out.push(exact.log_likelihood);
    for r in 0..reps {
        let cloud = run_pf(&model, particles, ResamplingScheme::Systematic, &mut root.index(r as u64).rng())
            .map_err(|e| e.to_string())?;
        out.push(cloud.log_total());
    }
    Ok(out)
}

/// Observations `y_0, ..., y_20` of the OU model at `a = b = 1`, simulated on a fine grid.
pub fn demo_data() -> Vec<Option<f64>> {
    let design = ObservationDesign {
        observed: vec![true; DATA_HORIZON + 1],
        link: Link::Identity,
        noise: NoiseVariance::Fixed(OU_OBS_VAR),
    };
    let (obs, _) = simulate_data(&OuDiffusion, &[0.0, 0.0], &[0.0], 10, &design, &mut StreamSeed::new(1).rng())
        .expect("fixed design is valid");
    obs.scalar()
}

#[wasm_bindgen]
pub fn coupled_paths(a: f64, b: f64, level: u32, horizon: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    coupled_paths_impl(a, b, level, horizon, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn level_masses(beta: f64, alpha: f64, l_max: u32) -> Result<Vec<f64>, JsError> {
    level_masses_impl(beta, alpha, l_max).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn likelihood_estimates(
    a: f64,
    b: f64,
    level: u32,
    particles: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    likelihood_estimates_impl(a, b, level, particles, reps, seed).map_err(|e| JsError::new(&e))
}
