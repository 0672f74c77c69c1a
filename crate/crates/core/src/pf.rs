//! Bootstrap particle filter with resampling at every step.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fk::{FeynmanKacModel, PathStore, WeightedCloud};
use crate::numeric::log_sum_exp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error("particle count must be at least 1")]
    NoParticles,
    #[error("resampling weight {index} is {value}; weights must be finite and nonnegative")]
    InvalidWeight { index: usize, value: f64 },
    #[error("resampling weights sum to {sum}, expected 1")]
    Unnormalised { sum: f64 },
    #[error("potential at time {t} for particle {particle} is {value}")]
    InvalidPotential { t: usize, particle: usize, value: f64 },
}

/// Ancestor selection rule. All three satisfy
/// `E[#{j : A_j = k}] = N w_k`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    #[default]
    Multinomial,
    Systematic,
    Stratified,
}

/// Draw `N = weights.len()` ancestor indices (0-based) from normalised weights.
pub fn resample<R: Rng + ?Sized>(
    weights: &[f64],
    scheme: ResamplingScheme,
    rng: &mut R,
) -> Result<Vec<usize>, PfError> {
    let mut out = Vec::with_capacity(weights.len());
    resample_into(weights, scheme, rng, &mut out)?;
    Ok(out.into_iter().map(|a| a as usize).collect())
}

const SUM_TOLERANCE: f64 = 1e-9;

pub(crate) fn resample_into<R: Rng + ?Sized>(
    weights: &[f64],
    scheme: ResamplingScheme,
    rng: &mut R,
    out: &mut Vec<u32>,
) -> Result<(), PfError> {
    let n = weights.len();
    if n == 0 {
        return Err(PfError::NoParticles);
    }
    let mut total = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(PfError::InvalidWeight { index: i, value: w });
        }
        if w > 0.0 {
            last_positive = i;
        }
        total += w;
    }
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(PfError::Unnormalised { sum: total });
    }
    out.clear();
    let nf = n as f64;
    // Sorted points in [0, total); index k is chosen while c_{k-1} <= u < c_k.
    let mut k = 0;
    let mut cum = weights[0];
    let mut push = |u: f64, out: &mut Vec<u32>| {
        while k < last_positive && u >= cum {
            k += 1;
            cum += weights[k];
        }
        out.push(k as u32);
    };
    match scheme {
        ResamplingScheme::Multinomial => {
            // Normalised partial sums of N + 1 exponentials are sorted uniforms.
            let mut spacings = Vec::with_capacity(n + 1);
            let mut s = 0.0;
            for _ in 0..=n {
                let e: f64 = Exp1.sample(rng);
                s += e;
                spacings.push(s);
            }
            let scale = total / s;
            for &si in &spacings[..n] {
                push(si * scale, out);
            }
        }
        ResamplingScheme::Systematic => {
            let u0: f64 = rng.random();
            for i in 0..n {
                push((i as f64 + u0) / nf * total, out);
            }
        }
        ResamplingScheme::Stratified => {
            for i in 0..n {
                let ui: f64 = rng.random();
                push((i as f64 + ui) / nf * total, out);
            }
        }
    }
    Ok(())
}

/// Run the particle filter with `n_particles` particles.
///
/// Returns `V^(i) = w̄_n^(i) ∏_t (ω_t*/N)` with the ancestral trajectories.
/// If some `ω_t* = 0` the run stops: every weight is zero and later
/// generations repeat the last one.
pub fn run_pf<M, R>(
    model: &M,
    n_particles: usize,
    scheme: ResamplingScheme,
    rng: &mut R,
) -> Result<WeightedCloud, PfError>
where
    M: FeynmanKacModel,
    R: Rng + ?Sized,
{
    let (log_w, store) = run_pf_raw(model, n_particles, scheme, rng)?;
    let n = n_particles;
    let leaves = (0..n as u32).collect();
    Ok(WeightedCloud::from_store(log_w, vec![false; n], store, leaves, vec![0; n], model.state_dim()))
}

/// Filter core: log weights `log V^(i)` and the path store.
pub(crate) fn run_pf_raw<M, R>(
    model: &M,
    n: usize,
    scheme: ResamplingScheme,
    rng: &mut R,
) -> Result<(Vec<f64>, PathStore), PfError>
where
    M: FeynmanKacModel,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(PfError::NoParticles);
    }
    let d = model.state_dim();
    let horizon = model.horizon();
    let log_n = (n as f64).ln();
    let mut store = PathStore::new(d, n);
    let mut gen = vec![0.0; n * d];
    for x in gen.chunks_exact_mut(d) {
        model.sample_initial(rng, x);
    }
    let mut ancestors: Option<Vec<u32>> = None;
    let mut log_w = vec![0.0; n];
    let mut w_bar = vec![0.0; n];
    let mut idx = Vec::with_capacity(n);
    // Σ_{s<t} (log ω_s* − log N)
    let mut log_norm = 0.0;
    for t in 0..=horizon {
        for (i, x) in gen.chunks_exact(d).enumerate() {
            let lw = model.log_potential(t, x);
            if lw.is_nan() || lw == f64::INFINITY {
                return Err(PfError::InvalidPotential { t, particle: i, value: lw.exp() });
            }
            log_w[i] = lw;
        }
        let lse = log_sum_exp(&log_w);
        store.push(gen, ancestors.take());
        if lse == f64::NEG_INFINITY {
            let identity: Vec<u32> = (0..n as u32).collect();
            for _ in t..horizon {
                let last = store.generation(store.generations() - 1).to_vec();
                store.push(last, Some(identity.clone()));
            }
            return Ok((vec![f64::NEG_INFINITY; n], store));
        }
        if t == horizon {
            for lw in log_w.iter_mut() {
                *lw += log_norm - log_n;
            }
            break;
        }
        log_norm += lse - log_n;
        for (wb, lw) in w_bar.iter_mut().zip(&log_w) {
            *wb = (lw - lse).exp();
        }
        resample_into(&w_bar, scheme, rng, &mut idx)?;
        let prev = store.generation(t);
        let mut next = vec![0.0; n * d];
        for (x, &a) in next.chunks_exact_mut(d).zip(&idx) {
            let a = a as usize;
            model.sample_transition(t + 1, &prev[a * d..(a + 1) * d], rng, x);
        }
        gen = next;
        ancestors = Some(idx.clone());
    }
    Ok((log_w, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;
    use rand_distr::StandardNormal;

    /// Gaussian random walk with potential `G_t(x) = exp(f(t, x))`.
    pub(crate) struct Walk<F> {
        pub n: usize,
        pub log_g: F,
    }

    impl<F: Fn(usize, f64) -> f64 + Sync> FeynmanKacModel for Walk<F> {
        fn state_dim(&self) -> usize {
            1
        }
        fn horizon(&self) -> usize {
            self.n
        }
        fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
            out[0] = rng.sample(StandardNormal);
        }
        fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, prev: &[f64], rng: &mut R, out: &mut [f64]) {
            let z: f64 = rng.sample(StandardNormal);
            out[0] = prev[0] + z;
        }
        fn log_potential(&self, t: usize, x: &[f64]) -> f64 {
            (self.log_g)(t, x[0])
        }
    }

    const SCHEMES: [ResamplingScheme; 3] =
        [ResamplingScheme::Multinomial, ResamplingScheme::Systematic, ResamplingScheme::Stratified];

    #[test]
    fn constant_potentials_are_exact() {
        let c: f64 = 0.7;
        let model = Walk { n: 4, log_g: move |_, _| c.ln() };
        for scheme in SCHEMES {
            let cloud = run_pf(&model, 13, scheme, &mut StreamSeed::new(5).rng()).unwrap();
            assert!((cloud.total() - c.powi(5)).abs() < 1e-14);
            assert_eq!(cloud.path(3).len(), 5);
        }
    }

    #[test]
    fn single_particle_gives_importance_weight() {
        let model = Walk { n: 3, log_g: |t, x: f64| -0.5 * (x - t as f64).powi(2) };
        let cloud = run_pf(&model, 1, ResamplingScheme::Multinomial, &mut StreamSeed::new(8).rng()).unwrap();
        let path = cloud.path(0);
        let expected: f64 = path.states().enumerate().map(|(t, x)| -0.5 * (x[0] - t as f64).powi(2)).sum();
        assert!((cloud.log_abs_weight(0) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_potential_terminates() {
        let model = Walk { n: 5, log_g: |t, _| if t == 2 { f64::NEG_INFINITY } else { 0.0 } };
        let cloud = run_pf(&model, 4, ResamplingScheme::Systematic, &mut StreamSeed::new(1).rng()).unwrap();
        assert!(cloud.is_zero());
        assert_eq!(cloud.path(0).len(), 6);
        assert_eq!(cloud.estimate(|p| p.terminal()[0]).unwrap(), 0.0);
    }

    #[test]
    fn nan_potential_is_an_error() {
        let model = Walk { n: 1, log_g: |_, _| f64::NAN };
        let err = run_pf(&model, 2, ResamplingScheme::Multinomial, &mut StreamSeed::new(1).rng()).unwrap_err();
        assert!(matches!(err, PfError::InvalidPotential { t: 0, particle: 0, .. }));
        assert_eq!(
            run_pf(&model, 0, ResamplingScheme::Multinomial, &mut StreamSeed::new(1).rng()).unwrap_err(),
            PfError::NoParticles
        );
    }

    #[test]
    fn point_mass_selects_first() {
        let mut w = vec![0.0; 7];
        w[0] = 1.0;
        let mut rng = StreamSeed::new(2).rng();
        for scheme in SCHEMES {
            assert_eq!(resample(&w, scheme, &mut rng).unwrap(), vec![0; 7]);
        }
        let mut w = vec![0.0; 7];
        w[6] = 1.0;
        for scheme in SCHEMES {
            assert_eq!(resample(&w, scheme, &mut rng).unwrap(), vec![6; 7]);
        }
    }

    #[test]
    fn systematic_uniform_is_a_permutation() {
        let w = vec![0.1; 10];
        let a = resample(&w, ResamplingScheme::Systematic, &mut StreamSeed::new(3).rng()).unwrap();
        assert_eq!(a, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_weights() {
        let mut rng = StreamSeed::new(4).rng();
        assert!(matches!(
            resample(&[1.5, -0.5], ResamplingScheme::Multinomial, &mut rng),
            Err(PfError::InvalidWeight { index: 1, .. })
        ));
        assert!(matches!(
            resample(&[0.5, 0.4], ResamplingScheme::Multinomial, &mut rng),
            Err(PfError::Unnormalised { .. })
        ));
        assert!(matches!(resample(&[], ResamplingScheme::Multinomial, &mut rng), Err(PfError::NoParticles)));
    }

    #[test]
    fn multinomial_two_point_frequency() {
        let reps = 100_000;
        let mut rng = StreamSeed::new(6).rng();
        let mut count = 0usize;
        for _ in 0..reps {
            let a = resample(&[0.25, 0.75], ResamplingScheme::Multinomial, &mut rng).unwrap();
            count += a.iter().filter(|&&k| k == 1).count();
        }
        let mean = count as f64 / reps as f64;
        let se = (2.0 * 0.75 * 0.25 / reps as f64).sqrt();
        assert!((mean - 1.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn counts_are_unbiased_per_scheme() {
        let w = [0.05, 0.3, 0.0, 0.15, 0.4, 0.1];
        let reps = 40_000;
        for (s, scheme) in SCHEMES.into_iter().enumerate() {
            let mut rng = StreamSeed::new(100 + s as u64).rng();
            let mut sums = [0.0; 6];
            let mut sq = [0.0; 6];
            for _ in 0..reps {
                let mut c = [0.0; 6];
                for a in resample(&w, scheme, &mut rng).unwrap() {
                    c[a] += 1.0;
                }
                for k in 0..6 {
                    sums[k] += c[k];
                    sq[k] += c[k] * c[k];
                }
            }
            for k in 0..6 {
                let m = sums[k] / reps as f64;
                let v = (sq[k] / reps as f64 - m * m).max(0.0);
                let se = (v / reps as f64).sqrt().max(1e-9);
                let target = 6.0 * w[k];
                assert!((m - target).abs() <= 4.0 * se + 1e-12, "{scheme:?} k={k}: {m} vs {target}");
            }
        }
    }
}
