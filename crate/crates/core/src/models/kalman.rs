//! Scalar Kalman filtering for the linear-Gaussian reference models.
//!
//! Every transition here has the form `x' = f x + s + N(0, q)`: the exact
//! OU transition over unit time, a level-`ℓ` Euler OU skeleton, and the
//! log-GBM random walk.

use thiserror::Error;

use crate::numeric::normal_log_pdf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("{what} must be positive, got {value}")]
    NonPositiveVariance { what: &'static str, value: f64 },
    #[error("{what} must be nonnegative and finite, got {value}")]
    InvalidVariance { what: &'static str, value: f64 },
}

/// Affine-Gaussian transition `x' = f x + shift + N(0, q)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransition {
    pub f: f64,
    pub shift: f64,
    pub q: f64,
}

impl AffineTransition {
    /// Exact OU transition over unit time for `dX = -a X dt + b dW`.
    pub fn ou_exact(a: f64, b: f64) -> Self {
        // (1 - e^{-2a}) / (2a), continuous at a = 0.
        let ratio = if a == 0.0 { 1.0 } else { -(-2.0 * a).exp_m1() / (2.0 * a) };
        AffineTransition { f: (-a).exp(), shift: 0.0, q: b * b * ratio }
    }

    /// `2^k` Euler steps of size `h` for the OU process, composed by repeated squaring.
    pub fn ou_euler(a: f64, b: f64, log2_steps: u32) -> Self {
        let h = (-f64::from(log2_steps)).exp2();
        let (mut f, mut q) = (1.0 - a * h, b * b * h);
        for _ in 0..log2_steps {
            q += f * f * q;
            f *= f;
        }
        AffineTransition { f, shift: 0.0, q }
    }

    /// Unit-time step of `Z = log X` for `dX = a X dW`.
    pub fn log_gbm(a: f64) -> Self {
        AffineTransition { f: 1.0, shift: -0.5 * a * a, q: a * a }
    }
}

/// One predict/update cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanStep {
    pub pred_mean: f64,
    pub pred_var: f64,
    pub mean: f64,
    pub var: f64,
    /// `log p(y_k | y_{1:k-1})`.
    pub log_increment: f64,
}

/// Predict through `tr` from `(m, c)` and condition on `y ~ N(x, obs_var)`.
pub fn kalman_update(
    m_prev: f64,
    c_prev: f64,
    y: Option<f64>,
    tr: AffineTransition,
    obs_var: f64,
) -> Result<KalmanStep, KalmanError> {
    if !(c_prev >= 0.0 && c_prev.is_finite()) {
        return Err(KalmanError::InvalidVariance { what: "filter variance", value: c_prev });
    }
    let pred_mean = tr.f * m_prev + tr.shift;
    let pred_var = tr.f * tr.f * c_prev + tr.q;
    condition(pred_mean, pred_var, y, obs_var)
}

fn condition(pred_mean: f64, pred_var: f64, y: Option<f64>, obs_var: f64) -> Result<KalmanStep, KalmanError> {
    let Some(y) = y else {
        return Ok(KalmanStep { pred_mean, pred_var, mean: pred_mean, var: pred_var, log_increment: 0.0 });
    };
    if !(obs_var > 0.0) {
        return Err(KalmanError::NonPositiveVariance { what: "observation variance", value: obs_var });
    }
    if !(pred_var >= 0.0 && pred_var.is_finite()) {
        return Err(KalmanError::InvalidVariance { what: "predictive variance", value: pred_var });
    }
    let s = pred_var + obs_var;
    let gain = pred_var / s;
    Ok(KalmanStep {
        pred_mean,
        pred_var,
        mean: pred_mean + gain * (y - pred_mean),
        var: pred_var * obs_var / s,
        log_increment: normal_log_pdf(y, pred_mean, s),
    })
}

/// The OU recursion with exact unit-time transitions:
/// `m̂ = e^{-a} m`, `ĉ = e^{-2a} c + b²(1 - e^{-2a})/(2a)`,
/// `c_k = (γ^{-2} + ĉ^{-1})^{-1}`, `m_k = c_k (y/γ² + m̂/ĉ)`.
pub fn kalman_step(m_prev: f64, c_prev: f64, y: f64, a: f64, b: f64, gamma2: f64) -> Result<KalmanStep, KalmanError> {
    if !(a >= 0.0) {
        return Err(KalmanError::NonPositiveVariance { what: "mean reversion a", value: a });
    }
    kalman_update(m_prev, c_prev, Some(y), AffineTransition::ou_exact(a, b), gamma2)
}

/// Filter summary over `t = 0..=n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanSummary {
    pub log_likelihood: f64,
    /// Filtering mean and variance of `x_n`.
    pub mean: f64,
    pub var: f64,
}

/// Run the filter from `x_0 ~ N(m0, c0)`; `y[t]` observes `x_t`.
pub fn kalman_filter(
    y: &[Option<f64>],
    m0: f64,
    c0: f64,
    tr: AffineTransition,
    obs_var: f64,
) -> Result<KalmanSummary, KalmanError> {
    let mut log_likelihood = 0.0;
    let (mut m, mut c) = (m0, c0);
    for (t, yt) in y.iter().enumerate() {
        let step = if t == 0 { condition(m, c, *yt, obs_var)? } else { kalman_update(m, c, *yt, tr, obs_var)? };
        log_likelihood += step.log_increment;
        m = step.mean;
        c = step.var;
    }
    Ok(KalmanSummary { log_likelihood, mean: m, var: c })
}

/// Exact OU log-likelihood for `θ = (log a, log b)` from fixed `x_0`.
pub fn ou_exact_loglik(theta: &[f64], y: &[Option<f64>], x0: f64, gamma2: f64) -> Result<KalmanSummary, KalmanError> {
    let tr = AffineTransition::ou_exact(theta[0].exp(), theta[1].exp());
    kalman_filter(y, x0, 0.0, tr, gamma2)
}

/// Exact log-likelihood of the level-`ℓ` Euler OU model (`2^{offset+ℓ}` steps per unit).
pub fn kalman_level_likelihood(
    theta: &[f64],
    log2_steps: u32,
    y: &[Option<f64>],
    x0: f64,
    gamma2: f64,
) -> Result<KalmanSummary, KalmanError> {
    let tr = AffineTransition::ou_euler(theta[0].exp(), theta[1].exp(), log2_steps);
    kalman_filter(y, x0, 0.0, tr, gamma2)
}

/// Exact GBM log-likelihood for log-scale observations `y_k = log X_k + ξ_k`.
pub fn gbm_exact_loglik(theta: f64, y: &[Option<f64>], gamma2: f64, z0: f64) -> Result<f64, KalmanError> {
    Ok(kalman_filter(y, z0, 0.0, AffineTransition::log_gbm(theta.exp()), gamma2)?.log_likelihood)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn unit_prior_and_noise_halve_variance() {
        let s = condition(0.3, 1.0, Some(1.0), 1.0).unwrap();
        assert_eq!(s.var, 0.5);
    }

    #[test]
    fn matches_displayed_recursion() {
        let (m, c, y, a, b, g2) = (0.4, 0.7, -0.9, 1.3, 0.8, 1.0);
        let s = kalman_step(m, c, y, a, b, g2).unwrap();
        let m_hat = (-a).exp() * m;
        let c_hat = (-2.0 * a).exp() * c + b * b / (2.0 * a) * (1.0 - (-2.0 * a).exp());
        let ck = 1.0 / (1.0 / g2 + 1.0 / c_hat);
        let mk = ck * (y / g2 + m_hat / c_hat);
        let inc = (ck / (2.0 * std::f64::consts::PI * c_hat * g2)).sqrt()
            * (-0.5 * (y * y / g2 + m_hat * m_hat / c_hat - ck * (y / g2 + m_hat / c_hat).powi(2))).exp();
        assert!((s.mean - mk).abs() < 1e-14);
        assert!((s.var - ck).abs() < 1e-14);
        assert!((s.log_increment - inc.ln()).abs() < 1e-12);
    }

    #[test]
    fn uninformative_observation_keeps_prediction() {
        let s = kalman_step(0.5, 0.2, 0.0, 1.0, 1.0, 1e12).unwrap();
        assert!((s.mean / s.pred_mean - 1.0).abs() < 1e-6);
        assert!((s.var / s.pred_var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn increment_matches_quadrature() {
        for (m, c, y, a, b, g2) in
            [(0.0, 0.0, 0.3, 1.0, 1.0, 1.0), (1.2, 0.4, -0.5, 0.3, 2.0, 0.5), (-2.0, 1.5, 3.0, 2.5, 0.2, 3.0)]
        {
            let s = kalman_step(m, c, y, a, b, g2).unwrap();
            let (pm, pv) = (s.pred_mean, s.pred_var);
            let sd = pv.sqrt();
            let integrand = |x: f64| normal_log_pdf(y, x, g2).exp() * normal_log_pdf(x, pm, pv).exp();
            let q = simpson(integrand, pm - 12.0 * sd, pm + 12.0 * sd, 20_000);
            assert!((q / s.log_increment.exp() - 1.0).abs() < 1e-8, "{q} vs {}", s.log_increment.exp());
        }
    }

    #[test]
    fn rejects_bad_variances() {
        assert!(kalman_step(0.0, -1.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(kalman_step(0.0, 1.0, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn euler_composition_matches_direct_iteration() {
        let (a, b, k) = (0.7, 1.3, 4);
        let tr = AffineTransition::ou_euler(a, b, k);
        let h = 1.0 / 16.0;
        let (mut f, mut q) = (1.0, 0.0);
        for _ in 0..16 {
            f *= 1.0 - a * h;
            q = (1.0 - a * h).powi(2) * q + b * b * h;
        }
        assert!((tr.f - f).abs() < 1e-14);
        assert!((tr.q - q).abs() < 1e-14);
    }

    #[test]
    fn level_likelihood_refines_towards_exact() {
        let y = [None, Some(0.3), Some(-0.4), Some(1.1), Some(0.2), Some(-0.7)];
        let theta = [0.2, -0.1];
        let exact = ou_exact_loglik(&theta, &y, 0.0, 1.0).unwrap().log_likelihood;
        let d6 = (kalman_level_likelihood(&theta, 6, &y, 0.0, 1.0).unwrap().log_likelihood - exact).abs();
        let d12 = (kalman_level_likelihood(&theta, 12, &y, 0.0, 1.0).unwrap().log_likelihood - exact).abs();
        assert!(d12 < d6);
        // Zero drift: every level is exact.
        let free = [f64::NEG_INFINITY, 0.0];
        let l0 = kalman_level_likelihood(&free, 0, &y, 0.0, 1.0).unwrap().log_likelihood;
        for k in 1..8 {
            let lk = kalman_level_likelihood(&free, k, &y, 0.0, 1.0).unwrap().log_likelihood;
            assert!((lk - l0).abs() < 1e-12);
        }
    }

    #[test]
    fn gbm_single_step_closed_form() {
        let (theta, g2, y1) = (0.3f64, 0.8, -0.2);
        let a = theta.exp();
        let ll = gbm_exact_loglik(theta, &[None, Some(y1)], g2, 0.0).unwrap();
        assert!((ll - normal_log_pdf(y1, -a * a / 2.0, a * a + g2)).abs() < 1e-13);
    }

    #[test]
    fn gbm_degenerate_dynamics() {
        let y = [None, Some(0.4), Some(-1.0), Some(0.1)];
        let ll = gbm_exact_loglik(1e-8f64.ln(), &y, 0.5, 0.0).unwrap();
        let iid: f64 = y.iter().flatten().map(|v| normal_log_pdf(*v, 0.0, 0.5)).sum();
        assert!((ll - iid).abs() < 1e-6);
    }

    #[test]
    fn gbm_translation_covariance() {
        let y = [None, Some(0.4), Some(-1.0), Some(0.1), Some(0.9)];
        let c = 2.75;
        let shifted: Vec<Option<f64>> = y.iter().map(|v| v.map(|v| v + c)).collect();
        let l1 = gbm_exact_loglik(-0.3, &y, 0.7, 0.0).unwrap();
        let l2 = gbm_exact_loglik(-0.3, &shifted, 0.7, c).unwrap();
        assert!((l1 - l2).abs() < 1e-10);
    }

    #[test]
    fn gbm_two_step_quadrature() {
        let (theta, g2) = (-0.2f64, 0.6);
        let (y1, y2) = (0.3, -0.5);
        let a = theta.exp();
        let ll = gbm_exact_loglik(theta, &[None, Some(y1), Some(y2)], g2, 0.0).unwrap();
        let (mu, v) = (-a * a / 2.0, a * a);
        let sd = v.sqrt();
        let inner = |z1: f64| {
            simpson(
                |z2| normal_log_pdf(z2, z1 + mu, v).exp() * normal_log_pdf(y2, z2, g2).exp(),
                z1 + mu - 12.0 * sd,
                z1 + mu + 12.0 * sd,
                2000,
            )
        };
        let outer = simpson(
            |z1| normal_log_pdf(z1, mu, v).exp() * normal_log_pdf(y1, z1, g2).exp() * inner(z1),
            mu - 12.0 * sd,
            mu + 12.0 * sd,
            2000,
        );
        assert!((outer.ln() - ll).abs() < 1e-8, "{} vs {ll}", outer.ln());
    }
}
