//! Exact risk calculus for thresholding on the log scale.
//!
//! Loss is squared error in `log(mu)`. The Bayes risk of a hard threshold
//! splits into a bias proxy `b(t, mu) = log^2(mu) (1 - e^{-t/mu})` (signal
//! censored below the threshold) and a variance proxy
//! `v(t, mu) = int_{t/mu}^inf log^2(x) e^{-x} dx` (observations passing it).
//! The module also evaluates the two-point Bayes risk through both of its
//! integral forms, composes the ideal FDR risk, and provides the closed
//! asymptotic formulas (minimax threshold, rate, least-favorable means).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdr::{fdr_functional, FdrConfig};
use crate::mixtures::{ExpScaleMixture, MixingDistribution, SparsityBall};
use crate::quad::integrate;

const REL_TOL: f64 = 1e-10;
const ABS_TOL: f64 = 1e-14;

/// Additive decomposition of a thresholding risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdown {
    pub bias: f64,
    pub variance: f64,
    pub total: f64,
}

impl RiskBreakdown {
    fn new(bias: f64, variance: f64) -> Self {
        Self {
            bias,
            variance,
            total: bias + variance,
        }
    }
}

/// Bias proxy `b(t, mu) = log^2(mu) (1 - e^{-t/mu})`, in `[0, log^2 mu]`.
pub fn bias_proxy(t: f64, mu: f64) -> f64 {
    assert!(t >= 0.0 && mu >= 1.0, "bias proxy needs t >= 0, mu >= 1");
    if mu == 1.0 {
        return 0.0;
    }
    let l = mu.ln();
    l * l * (-(-t / mu).exp_m1())
}

/// Tail integral `int_a^inf log^2(x) e^{-x} dx`.
///
/// Split at `x = 1` so the integrable `log^2` singularity sits alone on one
/// panel, with the tail cut where `x^2 e^{-x}` envelopes below 1e-16.
pub(crate) fn log_sq_exp_tail(a: f64) -> f64 {
    let f = |x: f64| {
        let l = x.ln();
        l * l * (-x).exp()
    };
    let cut = a.max(1.0) + 45.0;
    if a < 1.0 {
        integrate(&f, a, 1.0, REL_TOL, ABS_TOL) + integrate(&f, 1.0, cut, REL_TOL, ABS_TOL)
    } else {
        integrate(&f, a, cut, REL_TOL, ABS_TOL)
    }
}

/// Variance proxy `v(t, mu) = int_{t/mu}^inf log^2(x) e^{-x} dx`.
/// Satisfies the scale identity `v(t, mu) = v(t/mu, 1)`; decreasing in `t`,
/// increasing in `mu`.
pub fn variance_proxy(t: f64, mu: f64) -> f64 {
    assert!(t >= 0.0 && mu >= 1.0, "variance proxy needs t >= 0, mu >= 1");
    log_sq_exp_tail(t / mu)
}

/// Threshold Bayes risk `rho_T(t, F)`: mixture averages of the two proxies.
pub fn threshold_bayes_risk(t: f64, f: &MixingDistribution) -> RiskBreakdown {
    let bias = f
        .support()
        .iter()
        .zip(f.weights())
        .map(|(&mu, &w)| w * bias_proxy(t, mu))
        .sum();
    let variance = f
        .support()
        .iter()
        .zip(f.weights())
        .map(|(&mu, &w)| w * variance_proxy(t, mu))
        .sum();
    RiskBreakdown::new(bias, variance)
}

/// Bayes rule for the two-point prior, on the log scale: posterior weight of
/// the signal component times `log mu`. The weight is computed through
/// `1 / (1 + exp(log((1-eps) mu / eps) - x (1 - 1/mu)))`, which cannot
/// overflow for large `x`.
pub fn bayes_rule_log(x: f64, eps: f64, mu: f64) -> f64 {
    assert!(x >= 0.0, "bayes rule needs x >= 0");
    assert!(eps > 0.0 && eps < 1.0, "bayes rule needs eps in (0, 1)");
    assert!(mu > 1.0, "bayes rule needs mu > 1");
    let logit = ((1.0 - eps) * mu / eps).ln() - x * (1.0 - 1.0 / mu);
    let weight = 1.0 / (1.0 + logit.exp());
    weight * mu.ln()
}

/// Two-point Bayes risk, evaluated through the normalized form
/// `(eps log^2(mu) / mu) int_0^1 (eps/((1-eps) mu) + y^{1-1/mu})^{-1} dy`.
/// The integrand is bounded (value `(1-eps) mu / eps` at `y = 0`).
pub fn two_point_bayes_risk(eps: f64, mu: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::domain(format!(
            "two-point Bayes risk needs eps in [0, 1), got {eps}"
        )));
    }
    if mu < 1.0 {
        return Err(Error::domain(format!("mu = {mu} must be >= 1")));
    }
    if eps == 0.0 || mu == 1.0 {
        return Ok(0.0);
    }
    let a = eps / ((1.0 - eps) * mu);
    let b = 1.0 - 1.0 / mu;
    let integrand = |y: f64| 1.0 / (a + y.powf(b));
    let l = mu.ln();
    Ok(eps * l * l / mu * integrate(&integrand, 0.0, 1.0, REL_TOL, ABS_TOL))
}

/// Two-point Bayes risk through the direct integral over the observation
/// scale:
/// `log^2(mu) int_0^inf (1-eps) e^{-x} (eps/mu) e^{-x/mu} / ((1-eps) e^{-x} +
/// (eps/mu) e^{-x/mu}) dx`. Cross-check route for [`two_point_bayes_risk`].
pub fn two_point_bayes_risk_alt(eps: f64, mu: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::domain(format!(
            "two-point Bayes risk needs eps in [0, 1), got {eps}"
        )));
    }
    if mu < 1.0 {
        return Err(Error::domain(format!("mu = {mu} must be >= 1")));
    }
    if eps == 0.0 || mu == 1.0 {
        return Ok(0.0);
    }
    let w0 = 1.0 - eps;
    let w1 = eps / mu;
    let integrand = |x: f64| {
        let n0 = w0 * (-x).exp();
        let n1 = w1 * (-x / mu).exp();
        n0 * n1 / (n0 + n1)
    };
    // Beyond the likelihood crossover the integrand is dominated by
    // (1-eps) e^{-x}; 45 more units put the remainder below 1e-19.
    let crossover = (w0 / w1).ln() * mu / (mu - 1.0);
    let cut = crossover.max(0.0) + 45.0;
    let l = mu.ln();
    let split = crossover.clamp(0.0, cut);
    let value = integrate(&integrand, 0.0, split, REL_TOL, ABS_TOL)
        + integrate(&integrand, split, cut, REL_TOL, ABS_TOL);
    Ok(l * l * value)
}

/// Normalized posterior-weight integral
/// `int_0^1 ((a/d) + y^{1-1/d})^{-1} dy`, which tends to `d` as `a -> 0`.
/// Decreasing in `a` for fixed `d`.
pub fn two_point_risk_integral(a: f64, d: f64) -> f64 {
    assert!(a > 0.0 && d > 1.0, "integral needs a > 0, d > 1");
    let c = a / d;
    let b = 1.0 - 1.0 / d;
    integrate(&|y: f64| 1.0 / (c + y.powf(b)), 0.0, 1.0, REL_TOL, ABS_TOL)
}

/// Ideal FDR risk: the threshold Bayes risk at the population threshold
/// `T_q(G)`.
pub fn ideal_fdr_risk(f: &MixingDistribution, cfg: FdrConfig) -> Result<RiskBreakdown> {
    let g = ExpScaleMixture::new(f.clone());
    let t = fdr_functional(&g, cfg)?;
    Ok(threshold_bayes_risk(t, f))
}

fn check_eta(ball: &SparsityBall) -> Result<f64> {
    let eta = ball.eta();
    let cap = (-std::f64::consts::E).exp();
    if eta >= cap {
        return Err(Error::domain(format!(
            "eta = {eta} must be below e^-e = {cap:.6} for the asymptotic formulas"
        )));
    }
    Ok(eta)
}

/// Near-minimax fixed threshold
/// `t0(p, eta) = p log(1/eta) + p loglog(1/eta) + sqrt(loglog(1/eta))`.
pub fn minimax_threshold(ball: &SparsityBall) -> Result<f64> {
    let eta = check_eta(ball)?;
    let l = (1.0 / eta).ln();
    let ll = l.ln();
    Ok(ball.p() * l + ball.p() * ll + ll.sqrt())
}

/// Asymptotic minimax risk `eta^p (loglog(1/eta))^{2-p}`.
pub fn asymptotic_minimax_risk(ball: &SparsityBall) -> Result<f64> {
    let eta = check_eta(ball)?;
    let ll = (1.0 / eta).ln().ln();
    Ok(ball.budget() * ll.powf(2.0 - ball.p()))
}

/// Least-favorable means: bias-worst `log(1/eta)/loglog(1/eta)` and
/// variance-worst `log(1/eta) loglog(1/eta)`.
pub fn least_favorable_mus(ball: &SparsityBall) -> Result<(f64, f64)> {
    let eta = check_eta(ball)?;
    let l = (1.0 / eta).ln();
    let ll = l.ln();
    Ok((l / ll, l * ll))
}

/// Per-coordinate squared log-scale error `(1/n) sum (log mu_hat - log mu)^2`.
pub fn log_mse_loss(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::domain(format!(
            "length mismatch: estimate {} vs truth {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::domain("empty loss vectors"));
    }
    let n = estimate.len() as f64;
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(&e, &t)| {
            let d = e.ln() - t.ln();
            d * d
        })
        .sum::<f64>()
        / n)
}

/// Asymptotic summary at one `(p, eta, q)` point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AsymptoticPoint {
    pub t0: f64,
    pub tq_star: f64,
    pub rate: f64,
    pub mu_b_star: f64,
    pub mu_v_star: f64,
}
