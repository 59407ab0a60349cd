//! Finite scale mixtures of exponentials.
//!
//! A mixing distribution `F` is a finite discrete probability measure on
//! means `mu >= 1`; the induced observation law `G` has survival function
//! `sum_j w_j exp(-t / mu_j)`. Extremal and least-favorable mixtures in this
//! problem are supported on at most two points, so finite support loses
//! nothing and keeps every evaluation an exact sum.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::seeded_rng;
use crate::solve::golden_max;

/// Upper cap on mean values. The model itself does not bound `mu`, but
/// unbounded input invites overflow in `exp(-t/mu)` bookkeeping; anything
/// above this cap is rejected at construction.
pub const MU_CAP: f64 = 1e12;

/// Weights must sum to one within this slack.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Discrete mixing distribution on `[1, MU_CAP]`.
///
/// Invariants (enforced at construction): support strictly increasing with
/// no duplicates, all weights nonnegative and summing to one, zero-weight
/// atoms removed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingDistribution {
    support: Vec<f64>,
    weights: Vec<f64>,
}

impl MixingDistribution {
    pub fn new(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::domain(format!(
                "support/weights length mismatch: {} vs {}",
                support.len(),
                weights.len()
            )));
        }
        if support.is_empty() {
            return Err(Error::domain("mixing distribution needs at least one atom"));
        }
        for &mu in &support {
            if !mu.is_finite() || mu < 1.0 {
                return Err(Error::domain(format!("support point {mu} not in [1, inf)")));
            }
            if mu > MU_CAP {
                return Err(Error::domain(format!("support point {mu} exceeds cap {MU_CAP}")));
            }
        }
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::domain(format!("weight {w} not in [0, 1]")));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::domain(format!("weights sum to {sum}, expected 1")));
        }

        let mut atoms: Vec<(f64, f64)> = support.into_iter().zip(weights).collect();
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (mu, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == mu => last.1 += w,
                _ => merged.push((mu, w)),
            }
        }
        merged.retain(|&(_, w)| w > 0.0);
        if merged.is_empty() {
            return Err(Error::domain("all weights are zero"));
        }
        Ok(Self {
            support: merged.iter().map(|&(mu, _)| mu).collect(),
            weights: merged.iter().map(|&(_, w)| w).collect(),
        })
    }

    /// Point mass at `mu`.
    pub fn point_mass(mu: f64) -> Result<Self> {
        Self::new(vec![mu], vec![1.0])
    }

    /// Two-point prior `(1 - eps) d_1 + eps d_mu`. Collapses to a single
    /// point mass when `eps` is 0 or 1 or `mu == 1`.
    pub fn two_point(eps: f64, mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::domain(format!("eps {eps} not in [0, 1]")));
        }
        if !mu.is_finite() || mu < 1.0 {
            return Err(Error::domain(format!("mu {mu} not in [1, inf)")));
        }
        Self::new(vec![1.0, mu], vec![1.0 - eps, eps])
    }

    /// Two-point prior on the boundary of the moment ball:
    /// `eps = eta^p / log^p(mu)`, so that `log_moment(., p) == eta^p`.
    pub fn calibrated_two_point(ball: &SparsityBall, mu: f64) -> Result<Self> {
        if !mu.is_finite() || mu <= 1.0 {
            return Err(Error::domain(format!("calibration needs mu > 1, got {mu}")));
        }
        let eps = (ball.eta() / mu.ln()).powf(ball.p());
        if eps > 1.0 {
            return Err(Error::domain(format!(
                "calibrated eps = {eps} > 1: mu = {mu} too close to 1 for eta = {}, p = {}",
                ball.eta(),
                ball.p()
            )));
        }
        Self::two_point(eps, mu)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_atoms(&self) -> usize {
        self.support.len()
    }

    pub fn max_mu(&self) -> f64 {
        *self.support.last().unwrap()
    }

    /// True iff `F = d_1`, i.e. the mixture is the pure standard exponential.
    pub fn is_unit_point(&self) -> bool {
        self.support.len() == 1 && self.support[0] == 1.0
    }

    /// `sum_j w_j log^p(mu_j)`.
    pub fn log_moment(&self, p: f64) -> f64 {
        assert!(p > 0.0, "log_moment needs p > 0");
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(&mu, &w)| w * mu.ln().powf(p))
            .sum()
    }

    /// Kolmogorov distance `sup_t (Gbar(t) - Ebar(t))` to the standard
    /// exponential. Zero iff `F = d_1`.
    ///
    /// With a single non-unit atom the maximizer is the closed form
    /// `t = mu log(mu) / (mu - 1)`; otherwise a multi-start golden-section
    /// search over `[0, 50 mu_max]` is seeded at the closed-form argmax of
    /// the dominant non-unit component.
    pub fn ks_distance_to_exp(&self) -> f64 {
        if self.is_unit_point() {
            return 0.0;
        }
        let gap = |t: f64| {
            self.support
                .iter()
                .zip(&self.weights)
                .map(|(&mu, &w)| w * ((-t / mu).exp() - (-t).exp()))
                .sum::<f64>()
        };
        let non_unit: Vec<(f64, f64)> = self
            .support
            .iter()
            .zip(&self.weights)
            .filter(|&(&mu, _)| mu > 1.0)
            .map(|(&mu, &w)| (mu, w))
            .collect();
        if non_unit.is_empty() {
            return 0.0;
        }
        let two_point_argmax = |mu: f64| mu * mu.ln() / (mu - 1.0);
        if non_unit.len() == 1 {
            return gap(two_point_argmax(non_unit[0].0));
        }
        let dominant = non_unit
            .iter()
            .cloned()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let hi = 50.0 * self.max_mu();
        let seed = two_point_argmax(dominant.0);
        let mut best = 0.0f64;
        let mut windows = vec![(0.0f64, (8.0 * seed).min(hi))];
        // Four additional geometric windows covering [1e-2, hi].
        let lo = 1e-2f64;
        let ratio = (hi / lo).powf(0.25);
        for i in 0..4 {
            let a = lo * ratio.powi(i);
            windows.push((a, a * ratio));
        }
        for (a, b) in windows {
            let (_, v) = golden_max(&gap, a, b, 1e-10);
            if v > best {
                best = v;
            }
        }
        best
    }

    /// Draw `n` pairs `(mu_i, X_i)` with `mu_i ~ F` and `X_i | mu_i ~
    /// Exp(mu_i)`, deterministically in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::domain("sample size must be at least 1"));
        }
        let mut cum = Vec::with_capacity(self.weights.len());
        let mut acc = 0.0;
        for &w in &self.weights {
            acc += w;
            cum.push(acc);
        }
        let mut rng = seeded_rng(seed);
        let mut x = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let j = cum
                .iter()
                .position(|&c| u < c)
                .unwrap_or(self.support.len() - 1);
            let m = self.support[j];
            let e: f64 = rng.gen();
            x.push(-m * (-e).ln_1p());
            mu.push(m);
        }
        SampleBatch::new(x, mu, seed)
    }
}

impl<'de> Deserialize<'de> for MixingDistribution {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            support: Vec<f64>,
            weights: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        MixingDistribution::new(raw.support, raw.weights).map_err(serde::de::Error::custom)
    }
}

/// Scale mixture of exponentials `G = E # F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpScaleMixture {
    mixing: MixingDistribution,
}

impl ExpScaleMixture {
    pub fn new(mixing: MixingDistribution) -> Self {
        Self { mixing }
    }

    pub fn mixing(&self) -> &MixingDistribution {
        &self.mixing
    }

    /// Unchecked survival function; assumes `t >= 0`.
    pub(crate) fn sf(&self, t: f64) -> f64 {
        self.mixing
            .support
            .iter()
            .zip(&self.mixing.weights)
            .map(|(&mu, &w)| w * (-t / mu).exp())
            .sum()
    }

    /// `Gbar(t) = sum_j w_j exp(-t/mu_j)`, in `[exp(-t), 1]`.
    pub fn survival(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("survival needs t >= 0, got {t}")));
        }
        Ok(self.sf(t))
    }

    pub fn cdf(&self, t: f64) -> Result<f64> {
        Ok(1.0 - self.survival(t)?)
    }

    /// Mixture density `sum_j w_j (1/mu_j) exp(-x/mu_j)` for `x > 0`.
    pub fn density(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::domain(format!("density needs x > 0, got {x}")));
        }
        Ok(self
            .mixing
            .support
            .iter()
            .zip(&self.mixing.weights)
            .map(|(&mu, &w)| w / mu * (-x / mu).exp())
            .sum())
    }
}

impl From<MixingDistribution> for ExpScaleMixture {
    fn from(mixing: MixingDistribution) -> Self {
        Self::new(mixing)
    }
}

/// Moment ball: mixing distributions with `int log^p(mu) dF <= eta^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityBall {
    p: f64,
    eta: f64,
}

impl SparsityBall {
    pub fn new(p: f64, eta: f64) -> Result<Self> {
        if !(p > 0.0 && p < 2.0) {
            return Err(Error::domain(format!("p = {p} not in (0, 2)")));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::domain(format!("eta = {eta} not positive")));
        }
        Ok(Self { p, eta })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Moment budget `eta^p`.
    pub fn budget(&self) -> f64 {
        self.eta.powf(self.p)
    }
}

/// Parallel arrays of observations and true means, plus the seed that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    x: Vec<f64>,
    mu: Vec<f64>,
    seed: u64,
}

impl SampleBatch {
    pub fn new(x: Vec<f64>, mu: Vec<f64>, seed: u64) -> Result<Self> {
        if x.len() != mu.len() {
            return Err(Error::domain(format!(
                "x/mu length mismatch: {} vs {}",
                x.len(),
                mu.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        if x.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::domain("observations must be finite and >= 0"));
        }
        if mu.iter().any(|&v| !v.is_finite() || v < 1.0) {
            return Err(Error::domain("means must be finite and >= 1"));
        }
        Ok(Self { x, mu, seed })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `Gbar_n(t) = #{X_i >= t} / n`. The inclusive comparison fixes the
    /// convention at sample points (ties have probability zero).
    pub fn empirical_survival(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("empirical survival needs t >= 0, got {t}")));
        }
        Ok(self.x.iter().filter(|&&v| v >= t).count() as f64 / self.x.len() as f64)
    }

    /// Kolmogorov statistic `sup_t |Gbar_n(t) - Gbar(t)|` against a mixture.
    pub fn ks_statistic(&self, g: &ExpScaleMixture) -> f64 {
        let mut sorted = self.x.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len() as f64;
        let mut d = 0.0f64;
        for (i, &v) in sorted.iter().enumerate() {
            let cdf = 1.0 - g.sf(v);
            d = d.max((cdf - i as f64 / n).abs());
            d = d.max((cdf - (i as f64 + 1.0) / n).abs());
        }
        d
    }

    /// CSV with header `x,mu`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,mu\n");
        for (x, mu) in self.x.iter().zip(&self.mu) {
            out.push_str(&format!("{x},{mu}\n"));
        }
        out
    }

    /// Parse CSV with header `x` or `x,mu`; a missing `mu` column defaults
    /// to 1. The seed token is not stored in CSV and is set to 0.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::domain("empty CSV"))?;
        let cols: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
        let x_idx = cols
            .iter()
            .position(|&c| c == "x")
            .ok_or_else(|| Error::domain("CSV header must contain column `x`"))?;
        let mu_idx = cols.iter().position(|&c| c == "mu");
        let mut x = Vec::new();
        let mut mu = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
            let parse = |idx: usize| -> Result<f64> {
                fields
                    .get(idx)
                    .ok_or_else(|| Error::domain(format!("row {}: missing column {idx}", lineno + 2)))?
                    .parse::<f64>()
                    .map_err(|e| Error::domain(format!("row {}: {e}", lineno + 2)))
            };
            x.push(parse(x_idx)?);
            mu.push(match mu_idx {
                Some(idx) => parse(idx)?,
                None => 1.0,
            });
        }
        Self::new(x, mu, 0)
    }
}
