//! The FDR step-up threshold and the population FDR functional.
//!
//! The step-up rule sorts observations descending, compares them with the
//! exponential quantile boundaries `t_k = -log(q k / n)` and rejects the top
//! `k_FDR` observations, where `k_FDR` is the largest rank clearing its
//! boundary. Its population counterpart `T_q(G)` is the unique crossing of
//! the mixture survival function with `exp(-t)/q`; on the no-crossing event
//! the empirical threshold is capped at `log(n/q)`, which never changes the
//! discovery set.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mixtures::{ExpScaleMixture, SampleBatch};
use crate::solve::bisect_upcrossing;

/// FDR control parameter `q` in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdrConfig {
    q: f64,
}

impl FdrConfig {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::domain(format!("q = {q} not in (0, 1)")));
        }
        Ok(Self { q })
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// A threshold value. The no-crossing case is a tagged sentinel, not a
/// floating `inf`; only comparisons ever touch it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Finite(f64),
    Infinite,
}

impl Threshold {
    pub fn is_finite(&self) -> bool {
        matches!(self, Threshold::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Threshold::Finite(t) => Some(t),
            Threshold::Infinite => None,
        }
    }

    /// `x >= t`, with nothing exceeding the infinite sentinel.
    pub fn exceeded_by(&self, x: f64) -> bool {
        match *self {
            Threshold::Finite(t) => x >= t,
            Threshold::Infinite => false,
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Threshold::Finite(t) => serializer.serialize_f64(t),
            Threshold::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(t) => Ok(Threshold::Finite(t)),
            Raw::Tag(s) if s == "inf" => Ok(Threshold::Infinite),
            Raw::Tag(s) => Err(D::Error::custom(format!("invalid threshold tag `{s}`"))),
        }
    }
}

/// Outcome of a thresholding rule on a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub k_fdr: usize,
    pub threshold: Threshold,
    pub capped: bool,
    /// Indices (ascending) of observations at or above the threshold.
    pub discoveries: Vec<usize>,
    /// `mu_hat_i = X_i` on discoveries, 1 elsewhere. Not part of the wire
    /// format; reproducible from the threshold.
    #[serde(skip)]
    pub estimate: Vec<f64>,
}

impl ThresholdResult {
    fn from_threshold(batch: &SampleBatch, k_fdr: usize, threshold: Threshold, capped: bool) -> Self {
        let mut discoveries = Vec::new();
        let estimate = batch
            .x()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if threshold.exceeded_by(x) {
                    discoveries.push(i);
                    x
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            k_fdr,
            threshold,
            capped,
            discoveries,
            estimate,
        }
    }
}

/// Boundary `t_k = -log(q k / n)`.
fn boundary(q: f64, k: usize, n: usize) -> f64 {
    -(q * k as f64 / n as f64).ln()
}

/// Indices sorted by descending observation value, ties by original index.
fn descending_order(x: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[j].partial_cmp(&x[i]).unwrap().then(i.cmp(&j)));
    order
}

/// The step-up rule: largest `k` with `X_(k) >= t_k` (inclusive comparison);
/// threshold is the boundary `t_k` for that `k`, or the infinite sentinel
/// when no rank clears its boundary.
pub fn step_up_threshold(batch: &SampleBatch, cfg: FdrConfig) -> ThresholdResult {
    let n = batch.len();
    let order = descending_order(batch.x());
    let mut k_fdr = 0;
    for k in (1..=n).rev() {
        if batch.x()[order[k - 1]] >= boundary(cfg.q(), k, n) {
            k_fdr = k;
            break;
        }
    }
    if k_fdr == 0 {
        ThresholdResult::from_threshold(batch, 0, Threshold::Infinite, false)
    } else {
        let t = boundary(cfg.q(), k_fdr, n);
        ThresholdResult::from_threshold(batch, k_fdr, Threshold::Finite(t), false)
    }
}

/// The population FDR functional `T_q(G)`: the unique `t` with
/// `Gbar(t) = exp(-t)/q`, located by bisection on the bracket guaranteed by
/// the Kolmogorov-distance bounds, then one Newton polish.
pub fn fdr_functional(g: &ExpScaleMixture, cfg: FdrConfig) -> Result<f64> {
    if g.mixing().is_unit_point() {
        return Err(Error::degenerate(
            "T_q is undefined at the pure exponential (no finite crossing)",
        ));
    }
    let q = cfg.q();
    let ks = g.mixing().ks_distance_to_exp();
    if !(ks > 0.0) {
        return Err(Error::degenerate("mixture indistinguishable from Exp(1)"));
    }
    let s = |t: f64| g.sf(t) - (-t).exp() / q;
    let mut hi = (1.0 - q) / q / ks + 1.0;
    // The upper bound is certified but loose; expand if rounding ever leaves
    // s(hi) negative.
    for _ in 0..8 {
        if s(hi) >= 0.0 {
            break;
        }
        hi *= 2.0;
    }
    let root = bisect_upcrossing(&s, 0.0, hi, 1e-13)?;
    // Newton polish: s'(t) = e^{-t}/q - sum w/mu e^{-t/mu}.
    let ds = |t: f64| {
        let mix = g.mixing();
        let drop: f64 = mix
            .support()
            .iter()
            .zip(mix.weights())
            .map(|(&mu, &w)| w / mu * (-t / mu).exp())
            .sum();
        (-t).exp() / q - drop
    };
    let mut t = root;
    let d = ds(t);
    if d != 0.0 {
        let step = s(t) / d;
        if step.is_finite() && step.abs() < 1e-6 {
            t -= step;
        }
    }
    if s(t).abs() > 1e-12 {
        return Err(Error::numerical(format!(
            "FDR functional residual {} above tolerance at t = {t}",
            s(t)
        )));
    }
    Ok(t)
}

/// Empirical FDR functional `T_q(G_n) = inf { t : Gbar_n(t) >= exp(-t)/q }`,
/// computed exactly over the step structure of `Gbar_n`.
///
/// On the interval where `Gbar_n = k/n` the crossing candidate is the
/// boundary `t_k`; scanning intervals upward in `t` (k = n down to 1), the
/// first rank whose boundary falls at or below `X_(k)` realizes the infimum.
/// Returns the infinite sentinel when no interval is feasible.
pub fn fdr_functional_empirical(batch: &SampleBatch, cfg: FdrConfig) -> Threshold {
    let n = batch.len();
    let order = descending_order(batch.x());
    for k in (1..=n).rev() {
        let t_k = boundary(cfg.q(), k, n);
        if t_k <= batch.x()[order[k - 1]] {
            return Threshold::Finite(t_k);
        }
    }
    Threshold::Infinite
}

/// The capped threshold: `T_q(G_n)` when finite, else `log(n/q)` with
/// `capped = true`. Thresholding at it reproduces the step-up discovery set
/// exactly, and the value never exceeds `log(n/q)`.
pub fn capped_threshold(batch: &SampleBatch, cfg: FdrConfig) -> ThresholdResult {
    match fdr_functional_empirical(batch, cfg) {
        Threshold::Finite(t) => {
            let k = batch.x().iter().filter(|&&x| x >= t).count();
            ThresholdResult::from_threshold(batch, k, Threshold::Finite(t), false)
        }
        Threshold::Infinite => {
            let cap = (batch.len() as f64 / cfg.q()).ln();
            ThresholdResult::from_threshold(batch, 0, Threshold::Finite(cap), true)
        }
    }
}

/// Kolmogorov-distance sandwich for `T_q(G)`:
/// `-log(q/(1-q) ||G-E||) <= T_q(G) <= ((1-q)/q) / ||G-E||`.
pub fn functional_bounds(g: &ExpScaleMixture, cfg: FdrConfig) -> Result<(f64, f64)> {
    if g.mixing().is_unit_point() {
        return Err(Error::degenerate("bounds undefined at the pure exponential"));
    }
    let ks = g.mixing().ks_distance_to_exp();
    if !(ks > 0.0) {
        return Err(Error::degenerate("mixture indistinguishable from Exp(1)"));
    }
    let q = cfg.q();
    let lower = -(q / (1.0 - q) * ks).ln();
    let upper = (1.0 - q) / q / ks;
    Ok((lower, upper))
}

/// Survival function of the steepest mixture with `T_q(G) = t0`:
/// `exp(-t/mu*)` with `mu* = 1/(1 + log(q)/t0)`. Every mixture with the same
/// functional value is below it before `t0` and above it after.
pub fn extremal_cdf_survival(t0: f64, cfg: FdrConfig, t: f64) -> Result<f64> {
    let q = cfg.q();
    if !(t0 > (1.0 / q).ln()) {
        return Err(Error::domain(format!(
            "extremal survival needs t0 > log(1/q) = {}, got {t0}",
            (1.0 / q).ln()
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::domain(format!("t = {t} must be >= 0")));
    }
    let mu_star = 1.0 / (1.0 + q.ln() / t0);
    Ok((-t / mu_star).exp())
}

/// Leading-order continuity modulus of `T_q` at `t0`:
/// `(q / log(1/q)) t0 e^{t0} eps`. Used as a perturbation budget in tests.
pub fn modulus_bound(t0: f64, cfg: FdrConfig, eps: f64) -> f64 {
    let q = cfg.q();
    assert!(t0 > (1.0 / q).ln(), "modulus bound needs t0 > log(1/q)");
    assert!(eps >= 0.0, "modulus bound needs eps >= 0");
    q / (1.0 / q).ln() * t0 * t0.exp() * eps
}

/// Closed-form `T_q` for a two-point mixture `(1-eps) d_1 + eps d_mu`:
/// `(mu/(mu-1)) log((1/q - 1 + eps)/eps)`. An independent algebraic route to
/// the root-found value, used by tests and scans.
pub fn two_point_functional(eps: f64, mu: f64, cfg: FdrConfig) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) || mu <= 1.0 {
        return Err(Error::degenerate(format!(
            "two-point functional needs eps in (0,1] and mu > 1, got eps = {eps}, mu = {mu}"
        )));
    }
    let q = cfg.q();
    Ok(mu / (mu - 1.0) * ((1.0 / q - 1.0 + eps) / eps).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixtures::{MixingDistribution, SampleBatch};
    use proptest::prelude::*;

    fn batch(x: Vec<f64>) -> SampleBatch {
        let n = x.len();
        SampleBatch::new(x, vec![1.0; n], 0).unwrap()
    }

    fn cfg(q: f64) -> FdrConfig {
        FdrConfig::new(q).unwrap()
    }

    #[test]
    fn config_rejects_out_of_range() {
        assert!(FdrConfig::new(0.0).is_err());
        assert!(FdrConfig::new(1.0).is_err());
        assert!(FdrConfig::new(0.5).is_ok());
    }

    #[test]
    fn step_up_hand_example() {
        let b = batch(vec![3.0, 1.0, 0.5, 0.2]);
        let r = step_up_threshold(&b, cfg(0.5));
        assert_eq!(r.k_fdr, 1);
        assert!((r.threshold.value().unwrap() - 8f64.ln()).abs() < 1e-12);
        assert_eq!(r.discoveries, vec![0]);
        assert_eq!(r.estimate, vec![3.0, 1.0, 1.0, 1.0]);
        assert!(!r.capped);
    }

    #[test]
    fn step_up_no_exceedance() {
        let b = batch(vec![0.1, 0.2]);
        let r = step_up_threshold(&b, cfg(0.5));
        assert_eq!(r.k_fdr, 0);
        assert_eq!(r.threshold, Threshold::Infinite);
        assert_eq!(r.estimate, vec![1.0, 1.0]);
        assert!(r.discoveries.is_empty());
    }

    #[test]
    fn step_up_all_discoveries() {
        // Smallest observation above t_n = log(1/q): everything is rejected.
        let q = 0.5;
        let t_n = (1.0f64 / q).ln();
        let b = batch(vec![t_n + 0.1, t_n + 1.0, t_n + 2.0]);
        let r = step_up_threshold(&b, cfg(q));
        assert_eq!(r.k_fdr, 3);
        assert!((r.threshold.value().unwrap() - t_n).abs() < 1e-12);
        assert_eq!(r.discoveries, vec![0, 1, 2]);
    }

    #[test]
    fn functional_two_point_closed_form() {
        let f = MixingDistribution::two_point(0.01, 10.0).unwrap();
        let g = ExpScaleMixture::new(f);
        let t = fdr_functional(&g, cfg(0.5)).unwrap();
        let expect = 10.0 / 9.0 * 101f64.ln();
        assert!((t - expect).abs() < 1e-9, "t = {t}, closed form {expect}");
        assert!((expect - 5.12791).abs() < 1e-5);
    }

    #[test]
    fn functional_point_mass_closed_form() {
        for &(mu, q) in &[(2.0, 0.5), (5.0, 0.25), (1.5, 0.9)] {
            let g = ExpScaleMixture::new(MixingDistribution::point_mass(mu).unwrap());
            let t = fdr_functional(&g, cfg(q)).unwrap();
            let expect = (1.0 / q).ln() * mu / (mu - 1.0);
            assert!((t - expect).abs() < 1e-10, "mu={mu}, q={q}: {t} vs {expect}");
        }
    }

    #[test]
    fn functional_above_image_floor() {
        let f = MixingDistribution::two_point(0.3, 3.0).unwrap();
        let g = ExpScaleMixture::new(f);
        for &q in &[0.1, 0.5, 0.9] {
            let t = fdr_functional(&g, cfg(q)).unwrap();
            assert!(t > (1.0 / q).ln());
        }
    }

    #[test]
    fn functional_degenerate_is_error() {
        let g = ExpScaleMixture::new(MixingDistribution::point_mass(1.0).unwrap());
        assert!(matches!(
            fdr_functional(&g, cfg(0.5)),
            Err(Error::DegenerateMixture(_))
        ));
    }

    #[test]
    fn empirical_functional_matches_step_up_discoveries() {
        let b = batch(vec![3.0, 1.0, 0.5, 0.2]);
        let c = cfg(0.5);
        let t = fdr_functional_empirical(&b, c);
        let t = t.value().expect("finite");
        let selected: Vec<usize> = b
            .x()
            .iter()
            .enumerate()
            .filter(|&(_, &x)| x >= t)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(selected, vec![0]);
        assert_eq!(step_up_threshold(&b, c).discoveries, selected);
    }

    #[test]
    fn empirical_functional_no_crossing() {
        let b = batch(vec![0.01, 0.02, 0.005]);
        assert_eq!(fdr_functional_empirical(&b, cfg(0.5)), Threshold::Infinite);
    }

    #[test]
    fn capped_threshold_cap_value() {
        let x: Vec<f64> = (0..100).map(|i| 1e-3 * (i as f64 + 1.0)).collect();
        let b = batch(x);
        let r = capped_threshold(&b, cfg(0.5));
        assert!(r.capped);
        assert!((r.threshold.value().unwrap() - 200f64.ln()).abs() < 1e-12);
        assert_eq!(r.k_fdr, 0);
        assert!(r.discoveries.is_empty());
    }

    #[test]
    fn capped_threshold_single_observation() {
        let q = 0.5;
        let b = batch(vec![(1.0f64 / q).ln() + 0.5]);
        let r = capped_threshold(&b, cfg(q));
        assert!(!r.capped);
        assert_eq!(r.discoveries, vec![0]);

        let b = batch(vec![0.05]);
        let r = capped_threshold(&b, cfg(q));
        assert!(r.capped);
        assert!((r.threshold.value().unwrap() - (1.0f64 / q).ln()).abs() < 1e-12);
        assert!(r.discoveries.is_empty());
    }

    #[test]
    fn bounds_sandwich_two_point() {
        let f = MixingDistribution::two_point(0.01, 10.0).unwrap();
        let g = ExpScaleMixture::new(f);
        let c = cfg(0.5);
        let (lo, hi) = functional_bounds(&g, c).unwrap();
        let t = fdr_functional(&g, c).unwrap();
        assert!(lo <= t && t <= hi, "{lo} <= {t} <= {hi}");
        assert!((lo - 4.966).abs() < 1e-2);
        assert!((hi - 143.5).abs() < 0.5);

        // Heavy mixture: the distance approaches 1 and the lower bound 0.
        let heavy = ExpScaleMixture::new(MixingDistribution::point_mass(1e6).unwrap());
        let (lo, _) = functional_bounds(&heavy, c).unwrap();
        assert!(lo.abs() < 1e-3, "lower bound {lo} should vanish");
    }

    #[test]
    fn extremal_survival_identity() {
        let c = cfg(0.5);
        let t0 = 2.0 * 2f64.ln();
        // mu* = 2 and the crossing identity holds exactly at t0.
        let at_t0 = extremal_cdf_survival(t0, c, t0).unwrap();
        assert!((at_t0 - (-t0).exp() / 0.5).abs() < 1e-15);
        assert!((at_t0 - 0.5).abs() < 1e-15);
        assert_eq!(extremal_cdf_survival(t0, c, 0.0).unwrap(), 1.0);
        assert!(extremal_cdf_survival(0.5, c, 1.0).is_err());
    }

    #[test]
    fn modulus_examples() {
        let c = cfg(0.5);
        let v = modulus_bound(5.0, c, 1e-3);
        assert!((v - 0.5 / 2f64.ln() * 5.0 * 5f64.exp() * 1e-3).abs() < 1e-12);
        assert!((v - 0.5353).abs() < 1e-3);
        assert_eq!(modulus_bound(5.0, c, 0.0), 0.0);
        assert!((modulus_bound(5.0, c, 2e-3) - 2.0 * v).abs() < 1e-15);
    }

    #[test]
    fn threshold_result_json() {
        let b = batch(vec![3.0, 0.1]);
        let r = step_up_threshold(&b, cfg(0.5));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"k_fdr\":1"));
        assert!(json.contains("\"capped\":false"));
        let back: ThresholdResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.threshold, r.threshold);

        let r = step_up_threshold(&batch(vec![0.01, 0.02]), cfg(0.5));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"threshold\":\"inf\""));
        let back: ThresholdResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.threshold, Threshold::Infinite);
    }

    #[test]
    fn monotone_in_q() {
        let f = MixingDistribution::two_point(0.05, 8.0).unwrap();
        let g = ExpScaleMixture::new(f);
        let mut last = f64::INFINITY;
        for i in 1..=19 {
            let q = 0.05 * i as f64;
            let t = fdr_functional(&g, cfg(q)).unwrap();
            assert!(t < last, "T_q must strictly decrease in q");
            last = t;
        }
    }

    #[test]
    fn stochastic_ordering_in_mu_and_eps() {
        let c = cfg(0.3);
        let t = |eps: f64, mu: f64| {
            let f = MixingDistribution::two_point(eps, mu).unwrap();
            fdr_functional(&ExpScaleMixture::new(f), c).unwrap()
        };
        // Raising mu or eps raises the survival function pointwise, which
        // can only lower the functional.
        assert!(t(0.01, 5.0) >= t(0.01, 10.0));
        assert!(t(0.01, 10.0) >= t(0.05, 10.0));
    }

    proptest! {
        // Step-up and the capped empirical functional realize the same
        // discovery set on arbitrary batches.
        #[test]
        fn step_up_equals_capped(
            xs in proptest::collection::vec(0.0..12.0f64, 1..60),
            qi in 1..19usize,
        ) {
            let b = batch(xs);
            let c = cfg(0.05 * qi as f64);
            let su = step_up_threshold(&b, c);
            let cap = capped_threshold(&b, c);
            prop_assert_eq!(su.discoveries, cap.discoveries);
            prop_assert_eq!(su.estimate, cap.estimate);
        }
    }
}
