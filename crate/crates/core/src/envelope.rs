//! Maximization of linear functionals over moment-constrained mixing
//! classes.
//!
//! For `psi >= 0` with `psi(1) = 0` and strictly increasing `phi` with
//! `phi(1) = 0`, the envelope `Psi(z) = sup { int psi dF : int phi dF <= z }`
//! is attained by mixtures of at most two point masses. Two regimes differ in
//! the behavior of `psi/phi` near `mu = 1`:
//!
//! - ratio finite: `Psi(z) = z sup(psi/phi)`, attained by point masses at 1
//!   and the ratio argmax;
//! - ratio infinite: below the tangency budget the optimum is a single point
//!   mass at `phi^{-1}(z)`; above it the envelope is linear along the common
//!   tangent through the pair `(mu_lower, mu_star)`.
//!
//! These envelopes power the worst-case bias/variance of a fixed threshold,
//! the minimal FDR threshold over the class, and the worst-case ideal-risk
//! scan.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fdr::FdrConfig;
use crate::mixtures::{MixingDistribution, SparsityBall};
use crate::risk::{bias_proxy, threshold_bayes_risk, variance_proxy};
use crate::solve::{golden_max, golden_min};

type Oracle = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Behavior of `psi/phi` as `mu -> 1+`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    #[serde(rename = "ratio-finite")]
    RatioFinite,
    #[serde(rename = "ratio-infinite")]
    RatioInfinite,
}

/// An envelope maximization problem. `psi` and `phi` are value oracles on
/// `[1, inf)` with optional derivative oracles (central differences
/// otherwise). The regime is declared by the caller and checked numerically.
pub struct EnvelopeProblem {
    psi: Oracle,
    psi_deriv: Option<Oracle>,
    phi: Oracle,
    phi_deriv: Option<Oracle>,
    regime: Regime,
    z: f64,
    mu_bar: Option<f64>,
    search_hi: f64,
}

impl EnvelopeProblem {
    pub fn new(psi: Oracle, phi: Oracle, regime: Regime, z: f64) -> Self {
        Self {
            psi,
            psi_deriv: None,
            phi,
            phi_deriv: None,
            regime,
            z,
            mu_bar: None,
            search_hi: 1e8,
        }
    }

    pub fn with_derivs(mut self, psi_deriv: Oracle, phi_deriv: Oracle) -> Self {
        self.psi_deriv = Some(psi_deriv);
        self.phi_deriv = Some(phi_deriv);
        self
    }

    /// End of the concave stretch for the ratio-infinite regime, when known
    /// analytically. Located numerically otherwise.
    pub fn with_mu_bar(mut self, mu_bar: f64) -> Self {
        self.mu_bar = Some(mu_bar);
        self
    }

    pub fn with_search_hi(mut self, hi: f64) -> Self {
        self.search_hi = hi.max(8.0);
        self
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn psi(&self, mu: f64) -> f64 {
        (self.psi)(mu)
    }

    pub fn phi(&self, mu: f64) -> f64 {
        (self.phi)(mu)
    }

    fn dpsi(&self, mu: f64) -> f64 {
        match &self.psi_deriv {
            Some(d) => d(mu),
            None => central_diff(&self.psi, mu),
        }
    }

    fn dphi(&self, mu: f64) -> f64 {
        match &self.phi_deriv {
            Some(d) => d(mu),
            None => central_diff(&self.phi, mu),
        }
    }
}

fn central_diff(f: &Oracle, mu: f64) -> f64 {
    let h = 1e-6 * mu.abs().max(1.0);
    (f(mu + h) - f((mu - h).max(1.0 + 1e-14))) / (mu + h - (mu - h).max(1.0 + 1e-14))
}

/// Solution of an envelope problem.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeResult {
    pub value: f64,
    /// Upper support point of the attaining mixture.
    pub mu_star: f64,
    /// Lower support point (ratio-infinite regime only).
    pub mu_lower: Option<f64>,
    /// Slope of the linear stretch (`Psi*` or `Psi**(mu_lower)`).
    pub slope: f64,
    pub attaining: MixingDistribution,
    pub regime: Regime,
}

/// Grid of `n` points with `mu - 1` log-spaced over `[lo_off, hi - 1]`.
/// Resolves both the near-1 region (where ratio-infinite extremal points
/// live) and the large-`mu` tail.
fn log1p_grid(lo_off: f64, hi: f64, n: usize) -> Vec<f64> {
    let u_lo = lo_off.ln();
    let u_hi = (hi - 1.0).ln();
    (0..n)
        .map(|i| 1.0 + (u_lo + (u_hi - u_lo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

const SEED_POINTS: usize = 2048;

/// Maximize `f(mu)` over the seed grid, then golden-refine around the last
/// near-maximal seed (so plateaus resolve to their largest maximizer).
fn scan_max(f: &dyn Fn(f64) -> f64, lo_off: f64, hi: f64, n: usize) -> (f64, f64) {
    let grid = log1p_grid(lo_off, hi, n);
    let vals: Vec<f64> = grid.iter().map(|&m| f(m)).collect();
    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut idx = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v >= best - 1e-12 * best.abs().max(1e-300) {
            idx = i;
        }
    }
    let a = grid[idx.saturating_sub(1)];
    let b = grid[(idx + 1).min(grid.len() - 1)];
    // Refine in u = ln(mu - 1) coordinates.
    let g = |u: f64| f(1.0 + u.exp());
    let (u, v) = golden_max(&g, (a - 1.0).ln(), (b - 1.0).ln(), 1e-10);
    if v >= best {
        (1.0 + u.exp(), v)
    } else {
        (grid[idx], best)
    }
}

/// Invert a strictly increasing `phi` with `phi(1) = 0`: smallest `mu` with
/// `phi(mu) >= z`.
fn invert_phi(prob: &EnvelopeProblem, z: f64, hi: f64) -> Result<f64> {
    if z <= 0.0 {
        return Ok(1.0);
    }
    if prob.phi(hi) < z {
        return Err(Error::numerical(format!(
            "phi({hi}) = {} below budget {z}; cannot invert",
            prob.phi(hi)
        )));
    }
    let g = |u: f64| prob.phi(1.0 + u.exp()) - z;
    let u = crate::solve::bisect_upcrossing(&g, (1e-15f64).ln(), (hi - 1.0).ln(), 1e-12)?;
    Ok(1.0 + u.exp())
}

fn degenerate_result(regime: Regime) -> EnvelopeResult {
    EnvelopeResult {
        value: 0.0,
        mu_star: 1.0,
        mu_lower: None,
        slope: 0.0,
        attaining: MixingDistribution::point_mass(1.0).expect("unit point mass"),
        regime,
    }
}

/// Spot-check problem invariants; returns true when `psi` is identically
/// zero on the check grid (degenerate problem with zero envelope).
fn validate(prob: &EnvelopeProblem) -> Result<bool> {
    let grid = log1p_grid(1e-8, prob.search_hi, 64);
    let mut all_zero = true;
    let mut prev_phi = 0.0;
    for &mu in &grid {
        let psi = prob.psi(mu);
        if psi < -1e-9 {
            return Err(Error::domain(format!("psi({mu}) = {psi} negative")));
        }
        if psi.abs() > 0.0 {
            all_zero = false;
        }
        let phi = prob.phi(mu);
        if phi <= prev_phi {
            return Err(Error::domain(format!(
                "phi not strictly increasing at mu = {mu}"
            )));
        }
        prev_phi = phi;
    }
    if all_zero {
        return Ok(true);
    }
    // Declared regime must match the numeric ratio trend at mu = 1 + 10^-k.
    let r = |k: i32| {
        let mu = 1.0 + 10f64.powi(-k);
        prob.psi(mu) / prob.phi(mu)
    };
    let (r4, r8) = (r(4), r(8));
    let looks_infinite = r8 > 3.0 * r4;
    match prob.regime {
        Regime::RatioInfinite if !looks_infinite => Err(Error::domain(format!(
            "declared ratio-infinite but psi/phi is {r4} at 1+1e-4 vs {r8} at 1+1e-8"
        ))),
        Regime::RatioFinite if looks_infinite => Err(Error::domain(format!(
            "declared ratio-finite but psi/phi grows from {r4} to {r8} near 1"
        ))),
        _ => Ok(false),
    }
}

/// Locate the end of the initial stretch where `psi'/phi'` decreases: walk
/// the grid until the derivative ratio turns upward, then polish with a
/// golden minimization.
fn locate_mu_bar(prob: &EnvelopeProblem) -> Result<f64> {
    if let Some(m) = prob.mu_bar {
        return Ok(m);
    }
    let grid = log1p_grid(1e-10, prob.search_hi, 1024);
    let ratio = |mu: f64| prob.dpsi(mu) / prob.dphi(mu);
    let mut prev = ratio(grid[0]);
    for i in 1..grid.len() {
        let cur = ratio(grid[i]);
        if cur > prev {
            let a = grid[i.saturating_sub(2)];
            let b = grid[i];
            let g = |u: f64| ratio(1.0 + u.exp());
            let (u, _) = golden_min(&g, (a - 1.0).ln(), (b - 1.0).ln(), 1e-10);
            return Ok(1.0 + u.exp());
        }
        prev = cur;
    }
    Err(Error::numerical(
        "psi'/phi' never turns upward: no concave stretch end found",
    ))
}

/// `Psi**(mu) = sup_{mu' > mu_bar} (psi(mu') - psi(mu)) / (phi(mu') - phi(mu))`,
/// with cached seed values; returns `(argmax, slope)`.
struct SlopeMaximizer<'a> {
    prob: &'a EnvelopeProblem,
    mus: Vec<f64>,
    psis: Vec<f64>,
    phis: Vec<f64>,
}

impl<'a> SlopeMaximizer<'a> {
    fn new(prob: &'a EnvelopeProblem, mu_bar: f64) -> Self {
        let mus = log1p_grid(mu_bar - 1.0 + 1e-12, prob.search_hi, 512);
        let psis = mus.iter().map(|&m| prob.psi(m)).collect();
        let phis = mus.iter().map(|&m| prob.phi(m)).collect();
        Self {
            prob,
            mus,
            psis,
            phis,
        }
    }

    fn sup(&self, mu: f64) -> (f64, f64) {
        let psi0 = self.prob.psi(mu);
        let phi0 = self.prob.phi(mu);
        let mut best_i = 0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.mus.len() {
            let d = self.phis[i] - phi0;
            if d <= 0.0 {
                continue;
            }
            let s = (self.psis[i] - psi0) / d;
            if s > best {
                best = s;
                best_i = i;
            }
        }
        let a = self.mus[best_i.saturating_sub(1)].max(mu * (1.0 + 1e-12));
        let b = self.mus[(best_i + 1).min(self.mus.len() - 1)];
        let slope = |m: f64| (self.prob.psi(m) - psi0) / (self.prob.phi(m) - phi0);
        let g = |u: f64| slope(1.0 + u.exp());
        let (u, v) = golden_max(&g, (a - 1.0).ln(), (b - 1.0).ln(), 1e-10);
        if v > best {
            (1.0 + u.exp(), v)
        } else {
            (self.mus[best_i], best)
        }
    }
}

/// Compute the envelope `Psi(z)` with its attaining mixture.
///
/// Ratio-finite regime: `Psi(z) = z sup(psi/phi)` for `z <= phi(mu*)`; the
/// case `z > phi(mu*)` is out of range. Ratio-infinite regime: a single
/// point mass at `phi^{-1}(z)` below the tangency budget, the common-tangent
/// two-point mixture `(mu_lower, mu_star)` above it.
pub fn envelope_value(prob: &EnvelopeProblem) -> Result<EnvelopeResult> {
    if !(prob.z >= 0.0) || !prob.z.is_finite() {
        return Err(Error::domain(format!("budget z = {} invalid", prob.z)));
    }
    if validate(prob)? {
        return Ok(degenerate_result(prob.regime));
    }
    if prob.z == 0.0 {
        return Ok(degenerate_result(prob.regime));
    }
    match prob.regime {
        Regime::RatioFinite => {
            let ratio = |mu: f64| {
                let phi = prob.phi(mu);
                if phi <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    prob.psi(mu) / phi
                }
            };
            let (mu_star, slope) = scan_max(&ratio, 1e-8, prob.search_hi, SEED_POINTS);
            // When the ratio supremum sits at the mu -> 1+ edge (no interior
            // maximizer), the graph of psi against phi is concave from the
            // origin and the optimum is the single point mass spending the
            // whole budget.
            if mu_star <= 1.0 + 1e-7 {
                let mu_z = invert_phi(prob, prob.z, prob.search_hi)?;
                let value = prob.psi(mu_z);
                return Ok(EnvelopeResult {
                    value,
                    mu_star: mu_z,
                    mu_lower: None,
                    slope: value / prob.z,
                    attaining: MixingDistribution::point_mass(mu_z)?,
                    regime: Regime::RatioFinite,
                });
            }
            let cap = prob.phi(mu_star);
            if prob.z > cap {
                return Err(Error::domain(format!(
                    "budget z = {} beyond phi(mu*) = {cap}: envelope undefined there",
                    prob.z
                )));
            }
            let eps = prob.z / cap;
            Ok(EnvelopeResult {
                value: slope * prob.z,
                mu_star,
                mu_lower: None,
                slope,
                attaining: MixingDistribution::two_point(eps, mu_star)?,
                regime: Regime::RatioFinite,
            })
        }
        Regime::RatioInfinite => {
            let mu_bar = locate_mu_bar(prob)?;
            let slopes = SlopeMaximizer::new(prob, mu_bar);
            let deriv_ratio = |mu: f64| prob.dpsi(mu) / prob.dphi(mu);
            if deriv_ratio(mu_bar) >= slopes.sup(mu_bar).1 {
                return Err(Error::numerical(format!(
                    "psi'/phi' at mu_bar = {mu_bar} does not drop below the chord slope"
                )));
            }
            // Tangency point mu_lower: psi'/phi' = Psi**(mu) on (1, mu_bar].
            let gap = |u: f64| {
                let mu = 1.0 + u.exp();
                slopes.sup(mu).1 - deriv_ratio(mu)
            };
            let u_star = crate::solve::bisect_upcrossing(
                &gap,
                (1e-13f64).ln(),
                (mu_bar - 1.0).ln(),
                1e-12,
            )?;
            let mu_lower = 1.0 + u_star.exp();
            let (mu_star, slope) = slopes.sup(mu_lower);
            let phi_lower = prob.phi(mu_lower);
            if prob.z <= phi_lower {
                // Budget binds before the tangency: single point mass.
                let mu_z = invert_phi(prob, prob.z, mu_lower)?;
                Ok(EnvelopeResult {
                    value: prob.psi(mu_z),
                    mu_star: mu_z,
                    mu_lower: Some(mu_lower),
                    slope,
                    attaining: MixingDistribution::point_mass(mu_z)?,
                    regime: Regime::RatioInfinite,
                })
            } else if prob.z <= prob.phi(mu_star) {
                let eps = (prob.z - phi_lower) / (prob.phi(mu_star) - phi_lower);
                let attaining =
                    MixingDistribution::new(vec![mu_lower, mu_star], vec![1.0 - eps, eps])?;
                Ok(EnvelopeResult {
                    value: prob.psi(mu_lower) + slope * (prob.z - phi_lower),
                    mu_star,
                    mu_lower: Some(mu_lower),
                    slope,
                    attaining,
                    regime: Regime::RatioInfinite,
                })
            } else {
                Err(Error::domain(format!(
                    "budget z = {} beyond phi(mu*) = {}: envelope undefined there",
                    prob.z,
                    prob.phi(mu_star)
                )))
            }
        }
    }
}

fn van_der_corput(mut i: u64) -> f64 {
    let mut f = 0.5;
    let mut r = 0.0;
    while i > 0 {
        if i & 1 == 1 {
            r += f;
        }
        f *= 0.5;
        i >>= 1;
    }
    r
}

/// Independent grid oracle: exhaustive search over two-point mixtures
/// `(1-eps) d_{mu1} + eps d_{mu2}` with `eps` solving the budget with
/// equality (single feasible points are the `eps = 1` members). Justified as
/// an oracle because the attaining mixtures have at most two support points.
///
/// The grid is the first `grid_size` points of a bit-reversal sequence over
/// `log(mu - 1)`, so grids for growing `grid_size` are nested and the result
/// never decreases.
pub fn envelope_bruteforce(prob: &EnvelopeProblem, grid_size: usize) -> f64 {
    assert!(grid_size >= 100, "brute force needs at least 100 grid points");
    let z = prob.z;
    if z <= 0.0 {
        return 0.0;
    }
    let hi = prob.search_hi;
    let (u_lo, u_hi) = ((1e-12f64).ln(), (hi - 1.0).ln());
    let mut mus: Vec<f64> = (0..grid_size as u64)
        .map(|i| 1.0 + (u_lo + van_der_corput(i) * (u_hi - u_lo)).exp())
        .collect();
    mus.push(1.0);
    mus.push(hi);
    // The eps = 1 member with exact budget equality.
    if let Ok(mu_z) = invert_phi(prob, z, hi) {
        mus.push(mu_z);
    }
    mus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mus.dedup();
    let psis: Vec<f64> = mus.iter().map(|&m| prob.psi(m)).collect();
    let phis: Vec<f64> = mus.iter().map(|&m| prob.phi(m)).collect();

    let mut best = 0.0f64;
    // Single points inside the budget.
    for i in 0..mus.len() {
        if phis[i] <= z {
            best = best.max(psis[i]);
        }
    }
    // Two-point combinations straddling the budget.
    let split = phis.partition_point(|&p| p <= z);
    for i in 0..split {
        for j in split..mus.len() {
            let denom = phis[j] - phis[i];
            if denom <= 0.0 {
                continue;
            }
            let eps = (z - phis[i]) / denom;
            let v = psis[i] + eps * (psis[j] - psis[i]);
            best = best.max(v);
        }
    }
    best
}

fn powf_ln(p: f64) -> impl Fn(f64) -> f64 + Send + Sync + Copy {
    move |mu: f64| mu.ln().powf(p)
}

fn dphi_ln(p: f64) -> impl Fn(f64) -> f64 + Send + Sync + Copy {
    move |mu: f64| p * mu.ln().powf(p - 1.0) / mu
}

/// Worst-bias problem: `psi(mu) = log^2(mu)(1 - e^{-t/mu})`,
/// `phi = log^p`, budget `eta^p`. The ratio vanishes at `mu -> 1+` for every
/// `p` in (0, 2).
pub fn bias_problem(ball: &SparsityBall, t: f64) -> EnvelopeProblem {
    let p = ball.p();
    let psi = move |mu: f64| bias_proxy(t, mu);
    let dpsi = move |mu: f64| {
        // d/dmu [l^2 (1 - e^{-t/mu})] = 2l/mu (1 - e^{-t/mu}) - l^2 e^{-t/mu} t/mu^2
        let l = mu.ln();
        let e = (-t / mu).exp();
        2.0 * l / mu * (1.0 - e) - l * l * e * t / (mu * mu)
    };
    EnvelopeProblem::new(
        Box::new(psi),
        Box::new(powf_ln(p)),
        Regime::RatioFinite,
        ball.budget(),
    )
    .with_derivs(Box::new(dpsi), Box::new(dphi_ln(p)))
    .with_search_hi(1e4 * t.max(1.0 / ball.eta()))
}

/// Worst-variance problem: `psi(mu) = v(t, mu) - v(t, 1)`, `phi = log^p`.
/// Ratio-finite for `p <= 1`, ratio-infinite for `p > 1` (with the analytic
/// concave-stretch end from `(t/mu) log(mu) = p - 1`).
pub fn variance_problem(ball: &SparsityBall, t: f64) -> Result<EnvelopeProblem> {
    if !(t > 0.0) {
        return Err(Error::domain(format!("variance problem needs t > 0, got {t}")));
    }
    let p = ball.p();
    let v_t1 = variance_proxy(t, 1.0);
    let psi = move |mu: f64| (variance_proxy(t, mu) - v_t1).max(0.0);
    let dpsi = move |mu: f64| {
        let a = t / mu;
        let l = a.ln();
        l * l * (-a).exp() * t / (mu * mu)
    };
    let regime = if p <= 1.0 {
        Regime::RatioFinite
    } else {
        Regime::RatioInfinite
    };
    let mut prob = EnvelopeProblem::new(
        Box::new(psi),
        Box::new(powf_ln(p)),
        regime,
        ball.budget(),
    )
    .with_derivs(Box::new(dpsi), Box::new(dphi_ln(p)))
    .with_search_hi(1e4 * t.max(1.0 / ball.eta()));
    if p > 1.0 {
        // Smaller root of (t/mu) log(mu) = p - 1, inside (1, e).
        let g = |mu: f64| t * mu.ln() / mu - (p - 1.0);
        if g(std::f64::consts::E) <= 0.0 {
            return Err(Error::numerical(format!(
                "t = {t} too small to define the concave stretch for p = {p}"
            )));
        }
        let mu_bar =
            crate::solve::bisect_upcrossing(&g, 1.0 + 1e-15, std::f64::consts::E, 1e-13)?;
        prob = prob.with_mu_bar(mu_bar);
    }
    Ok(prob)
}

/// Survival-ratio problem behind the minimal FDR threshold:
/// `psi_t(mu) = e^{(1 - 1/mu) t} - 1`, `phi = log^p`. Ratio-finite for
/// `p <= 1`, ratio-infinite for `p > 1`.
pub fn survival_excess_problem(ball: &SparsityBall, t: f64) -> Result<EnvelopeProblem> {
    if !(t > 0.0) {
        return Err(Error::domain(format!(
            "survival excess problem needs t > 0, got {t}"
        )));
    }
    let p = ball.p();
    let psi = move |mu: f64| ((1.0 - 1.0 / mu) * t).exp_m1();
    let dpsi = move |mu: f64| ((1.0 - 1.0 / mu) * t).exp() * t / (mu * mu);
    let regime = if p <= 1.0 {
        Regime::RatioFinite
    } else {
        Regime::RatioInfinite
    };
    Ok(EnvelopeProblem::new(
        Box::new(psi),
        Box::new(powf_ln(p)),
        regime,
        ball.budget(),
    )
    .with_derivs(Box::new(dpsi), Box::new(dphi_ln(p)))
    .with_search_hi(1e4 * t.max(1.0 / ball.eta())))
}

/// Worst-case bias of thresholding at `t` over the moment ball.
pub fn worst_bias(ball: &SparsityBall, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("worst bias needs t >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(envelope_value(&bias_problem(ball, t))?.value)
}

/// Worst-case variance of thresholding at `t` over the moment ball:
/// `Psi(eta^p) + v(t, 1)`.
pub fn worst_variance(ball: &SparsityBall, t: f64) -> Result<f64> {
    let prob = variance_problem(ball, t)?;
    Ok(envelope_value(&prob)?.value + variance_proxy(t, 1.0))
}

/// Worst survival-ratio excess `sup { Gbar(t)/Ebar(t) - 1 }` over the moment
/// ball; strictly increasing in `t`.
pub fn survival_ratio_excess(t: f64, ball: &SparsityBall) -> Result<f64> {
    let prob = survival_excess_problem(ball, t)?;
    Ok(envelope_value(&prob)?.value)
}

/// Minimal FDR threshold over the class: numeric crossing of the worst
/// survival-ratio excess with `(1-q)/q`, together with its printed
/// asymptotic formula (agreement is asymptotic only; the gap is reported by
/// returning both).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MinFdrThreshold {
    pub numeric: f64,
    pub formula: f64,
}

pub fn min_fdr_threshold(ball: &SparsityBall, cfg: FdrConfig) -> Result<MinFdrThreshold> {
    let q = cfg.q();
    let target = (1.0 - q) / q;
    let excess = |t: f64| survival_ratio_excess(t, ball);
    let lo = (1.0 / q).ln();
    let mut hi = 3.0 * ball.p() * (1.0 / ball.eta()).ln() + 20.0;
    if excess(lo)? >= target {
        return Err(Error::numerical(format!(
            "survival excess already above (1-q)/q at the image floor t = {lo}"
        )));
    }
    let mut expansions = 0;
    while excess(hi)? < target {
        hi *= 1.5;
        expansions += 1;
        if expansions > 6 {
            return Err(Error::numerical(
                "no crossing of (1-q)/q found after bracket expansion",
            ));
        }
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        if b - a <= 1e-10 * b.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (a + b);
        if excess(mid)? < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    let numeric = 0.5 * (a + b);
    let l = (1.0 / ball.eta()).ln();
    let formula = ball.p() * (l + l.ln().ln()) + target.ln();
    Ok(MinFdrThreshold { numeric, formula })
}

/// One row of a worst-ideal-risk scan.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScanPoint {
    pub mu: f64,
    pub eps: f64,
    pub threshold: f64,
    pub bias: f64,
    pub variance: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    pub max: f64,
    pub argmax_mu: f64,
    pub points: Vec<ScanPoint>,
}

/// Evaluate the ideal FDR risk over calibrated two-point mixtures on a
/// `mu` grid. Calibration failures yield NaN rows rather than aborting the
/// sweep.
pub fn worst_ideal_risk_scan(ball: &SparsityBall, cfg: FdrConfig, mu_grid: &[f64]) -> ScanResult {
    let mut points = Vec::with_capacity(mu_grid.len());
    let mut max = f64::NAN;
    let mut argmax_mu = f64::NAN;
    for &mu in mu_grid {
        let point = MixingDistribution::calibrated_two_point(ball, mu)
            .and_then(|f| {
                let eps = f.weights().last().copied().unwrap_or(0.0);
                let g = crate::mixtures::ExpScaleMixture::new(f.clone());
                let t = crate::fdr::fdr_functional(&g, cfg)?;
                let rb = threshold_bayes_risk(t, &f);
                Ok(ScanPoint {
                    mu,
                    eps,
                    threshold: t,
                    bias: rb.bias,
                    variance: rb.variance,
                    total: rb.total,
                })
            })
            .unwrap_or(ScanPoint {
                mu,
                eps: f64::NAN,
                threshold: f64::NAN,
                bias: f64::NAN,
                variance: f64::NAN,
                total: f64::NAN,
            });
        if point.total.is_finite() && !(point.total <= max) {
            max = point.total;
            argmax_mu = mu;
        }
        points.push(point);
    }
    ScanResult {
        max,
        argmax_mu,
        points,
    }
}

/// CSV for scan curves, header `mu,eps,threshold,bias,variance,total`.
pub fn scan_csv(res: &ScanResult) -> String {
    let mut out = String::from("mu,eps,threshold,bias,variance,total\n");
    for p in &res.points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.mu, p.eps, p.threshold, p.bias, p.variance, p.total
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(p: f64, eta: f64) -> SparsityBall {
        SparsityBall::new(p, eta).unwrap()
    }

    /// Toy problem: phi = log mu, psi = min(log mu, 1). The ratio plateaus
    /// at 1 on (1, e], so Psi(z) = z for z <= 1.
    fn toy_problem(z: f64) -> EnvelopeProblem {
        EnvelopeProblem::new(
            Box::new(|mu: f64| mu.ln().min(1.0)),
            Box::new(|mu: f64| mu.ln()),
            Regime::RatioFinite,
            z,
        )
        .with_search_hi(1e4)
    }

    #[test]
    fn toy_envelope_is_identity() {
        let r = envelope_value(&toy_problem(0.5)).unwrap();
        assert!((r.value - 0.5).abs() < 1e-9, "value {}", r.value);
        assert!((r.slope - 1.0).abs() < 1e-9);
        // Largest maximizer of the plateau is near e.
        assert!(r.mu_star > 2.0 && r.mu_star < std::f64::consts::E * 1.01);
    }

    #[test]
    fn toy_bruteforce_agrees() {
        let prob = toy_problem(0.5);
        let bf = envelope_bruteforce(&prob, 1000);
        let env = envelope_value(&prob).unwrap().value;
        assert!(env >= bf - 1e-9);
        assert!(env <= bf + 1e-3 * env.abs());
    }

    #[test]
    fn zero_budget_gives_zero() {
        let r = envelope_value(&toy_problem(0.0)).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.attaining.is_unit_point());
        assert_eq!(envelope_bruteforce(&toy_problem(0.0), 500), 0.0);
    }

    #[test]
    fn bruteforce_monotone_in_grid_size() {
        let prob = toy_problem(0.37);
        let a = envelope_bruteforce(&prob, 200);
        let b = envelope_bruteforce(&prob, 400);
        let c = envelope_bruteforce(&prob, 1600);
        assert!(b >= a);
        assert!(c >= b);
    }

    #[test]
    fn out_of_range_budget_is_error() {
        // psi = min(log mu, 1) has phi(mu*) = 1 at the plateau end; z = 2 is
        // beyond it.
        assert!(matches!(
            envelope_value(&toy_problem(2.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn regime_misdeclaration_detected() {
        // Variance-style psi with p = 1.5 is ratio-infinite; declaring it
        // finite must fail the consistency check.
        let t = 10.0;
        let v1 = variance_proxy(t, 1.0);
        let prob = EnvelopeProblem::new(
            Box::new(move |mu: f64| (variance_proxy(t, mu) - v1).max(0.0)),
            Box::new(powf_ln(1.5)),
            Regime::RatioFinite,
            1e-3,
        )
        .with_search_hi(1e5);
        assert!(envelope_value(&prob).is_err());
    }

    #[test]
    fn worst_bias_examples() {
        let ball1 = ball(1.0, 1e-3);
        assert_eq!(worst_bias(&ball1, 0.0).unwrap(), 0.0);
        let t0 = crate::risk::minimax_threshold(&ball1).unwrap();
        let v = worst_bias(&ball1, t0).unwrap();
        let ratio = v / 1e-3;
        // Pre-asymptotic: within 25% of loglog(1/eta) = 1.9326.
        assert!(
            (ratio - 1.9326).abs() < 0.25 * 1.9326,
            "worst bias ratio {ratio}"
        );
        // Against the grid oracle.
        let prob = bias_problem(&ball1, t0);
        let bf = envelope_bruteforce(&prob, 2000);
        assert!(v >= bf - 1e-9);
        assert!(v <= bf + 1e-3 * v);
    }

    #[test]
    fn worst_variance_small_p() {
        let b = ball(0.5, 1e-3);
        let t0 = crate::risk::minimax_threshold(&b).unwrap();
        let v = worst_variance(&b, t0).unwrap();
        let prob = variance_problem(&b, t0).unwrap();
        let bf = envelope_bruteforce(&prob, 2000) + variance_proxy(t0, 1.0);
        assert!(v >= bf - 1e-9, "{v} vs {bf}");
        assert!(v <= bf + 1e-3 * v);
        // Vanishes as t grows.
        assert!(worst_variance(&b, 200.0).unwrap() < v);
    }

    #[test]
    fn worst_variance_kinked_branch() {
        let b = ball(1.5, 1e-3);
        let t0 = crate::risk::minimax_threshold(&b).unwrap();
        let prob = variance_problem(&b, t0).unwrap();
        let r = envelope_value(&prob).unwrap();
        assert_eq!(r.regime, Regime::RatioInfinite);
        assert!(r.mu_lower.is_some());
        let bf = envelope_bruteforce(&prob, 4000);
        assert!(r.value >= bf - 1e-9, "{} vs {bf}", r.value);
        assert!(r.value <= bf + 1e-3 * r.value.abs().max(1e-300));
    }

    #[test]
    fn survival_excess_monotone_and_oracle() {
        let b = ball(1.0, 1e-3);
        let mut last = 0.0;
        for i in 1..=8 {
            let t = i as f64;
            let v = survival_ratio_excess(t, &b).unwrap();
            assert!(v > last, "h* must increase in t");
            last = v;
        }
        let prob = survival_excess_problem(&b, 7.0).unwrap();
        let v = envelope_value(&prob).unwrap().value;
        let bf = envelope_bruteforce(&prob, 2000);
        assert!(v >= bf - 1e-9);
        assert!(v <= bf + 1e-3 * v);
        // t -> 0+ gives a vanishing excess.
        assert!(survival_ratio_excess(1e-6, &b).unwrap() < 1e-3);
    }

    #[test]
    fn attaining_mixture_is_feasible_and_reproduces_value() {
        for &(p, eta) in &[(0.5, 1e-3), (1.0, 1e-3), (1.5, 1e-3)] {
            let b = ball(p, eta);
            let t0 = crate::risk::minimax_threshold(&b).unwrap();
            let prob = variance_problem(&b, t0).unwrap();
            let r = envelope_value(&prob).unwrap();
            let lm = r.attaining.log_moment(p);
            assert!(lm <= b.budget() + 1e-9, "budget violated: {lm}");
            let replay: f64 = r
                .attaining
                .support()
                .iter()
                .zip(r.attaining.weights())
                .map(|(&mu, &w)| w * prob.psi(mu))
                .sum();
            assert!(
                (replay - r.value).abs() <= 1e-9 * r.value.abs().max(1e-12),
                "p={p}: replay {replay} vs {}",
                r.value
            );
        }
    }

    #[test]
    fn envelope_concave_in_budget() {
        // Three-point concavity check on z for the h* problem.
        let b = ball(1.0, 1e-3);
        let t = 7.0;
        let value = |z: f64| {
            let mut prob = survival_excess_problem(&b, t).unwrap();
            prob.z = z;
            envelope_value(&prob).unwrap().value
        };
        let (z1, z2, z3) = (5e-4, 1e-3, 1.5e-3);
        let (v1, v2, v3) = (value(z1), value(z2), value(z3));
        assert!(v2 >= 0.5 * (v1 + v3) - 1e-9, "concavity violated");
        assert!(v1 <= v2 && v2 <= v3, "monotone in budget");
    }

    #[test]
    fn min_threshold_example() {
        let b = ball(1.0, 1e-3);
        let cfg = FdrConfig::new(0.5).unwrap();
        let r = min_fdr_threshold(&b, cfg).unwrap();
        let expect_formula = (1e3f64).ln() + (1e3f64).ln().ln().ln();
        assert!((r.formula - expect_formula).abs() < 1e-12);
        assert!((r.formula - 7.5668).abs() < 1e-3, "formula {}", r.formula);
        // Numeric sits near, not on, the asymptotic formula.
        assert!((r.numeric - r.formula).abs() < 1.0);

        // q up decreases both outputs.
        let r2 = min_fdr_threshold(&b, FdrConfig::new(0.75).unwrap()).unwrap();
        assert!(r2.numeric < r.numeric);
        assert!(r2.formula < r.formula);
    }

    #[test]
    fn min_threshold_is_lower_bound_over_two_point_family() {
        let b = ball(1.0, 1e-3);
        let cfg = FdrConfig::new(0.5).unwrap();
        let r = min_fdr_threshold(&b, cfg).unwrap();
        for i in 0..40 {
            let mu = 1.5 * (200.0f64 / 1.5).powf(i as f64 / 39.0);
            if let Ok(f) = MixingDistribution::calibrated_two_point(&b, mu) {
                let eps = *f.weights().last().unwrap();
                let t = crate::fdr::two_point_functional(eps, mu, cfg).unwrap();
                assert!(
                    r.numeric <= t + 1e-6,
                    "infimum property violated at mu = {mu}: {} > {t}",
                    r.numeric
                );
            }
        }
    }

    #[test]
    fn scan_finds_interior_peaks() {
        // Each proxy peaks near its least-favorable mean in the regime where
        // it dominates: bias for q < 1/2, variance for q > 1/2.
        let b = ball(1.0, 1e-6);
        let grid: Vec<f64> = (0..80)
            .map(|i| 1.5 * (200.0f64 / 1.5).powf(i as f64 / 79.0))
            .collect();
        let (mu_b, mu_v) = crate::risk::least_favorable_mus(&b).unwrap();

        let scan = worst_ideal_risk_scan(&b, FdrConfig::new(0.25).unwrap(), &grid);
        assert!(scan.max.is_finite());
        let bias_peak = scan
            .points
            .iter()
            .filter(|p| p.bias.is_finite())
            .max_by(|a, b| a.bias.partial_cmp(&b.bias).unwrap())
            .unwrap()
            .mu;
        assert!(
            bias_peak > mu_b / 3.0 && bias_peak < mu_b * 3.0,
            "bias peak {bias_peak} vs mu_b* {mu_b}"
        );

        let scan = worst_ideal_risk_scan(&b, FdrConfig::new(0.75).unwrap(), &grid);
        let var_peak = scan
            .points
            .iter()
            .filter(|p| p.variance.is_finite())
            .max_by(|a, b| a.variance.partial_cmp(&b.variance).unwrap())
            .unwrap()
            .mu;
        assert!(
            var_peak > mu_v / 3.0 && var_peak < mu_v * 3.0,
            "variance peak {var_peak} vs mu_v* {mu_v}"
        );
    }

    #[test]
    fn scan_handles_uncalibratable_points() {
        let b = ball(1.0, 1e-2);
        let cfg = FdrConfig::new(0.25).unwrap();
        // mu = 1 + 1e-9 cannot be calibrated (eps > 1).
        let scan = worst_ideal_risk_scan(&b, cfg, &[1.0 + 1e-9, 5.0]);
        assert!(scan.points[0].total.is_nan());
        assert!(scan.points[1].total.is_finite());
        assert_eq!(scan.argmax_mu, 5.0);
        let csv = scan_csv(&scan);
        assert!(csv.starts_with("mu,eps,threshold,bias,variance,total\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
