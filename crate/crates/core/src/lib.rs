//! False discovery rate thresholding for sparse exponential means.
//!
//! Observations are `X_i ~ Exp(mu_i)` with `mu_i >= 1`, most means equal to 1
//! and a small fraction larger. This crate implements the estimation toolkit
//! around the FDR step-up rule in that model:
//!
//! - [`mixtures`]: finite scale mixtures of exponentials (construction,
//!   evaluation, seeded sampling, Kolmogorov distance to the pure
//!   exponential).
//! - [`fdr`]: the step-up threshold on samples, the population FDR functional
//!   `T_q(G)`, its empirical counterpart, and the capped threshold
//!   `log(n/q)`.
//! - [`risk`]: bias/variance proxies, exact threshold Bayes risk, two-point
//!   Bayes risk, ideal FDR risk, and the asymptotic minimax formulas.
//! - [`envelope`]: maximization of linear functionals over moment-constrained
//!   mixing classes (worst-case bias/variance, minimal FDR threshold,
//!   worst-case ideal-risk scans).
//! - [`mc`]: a seeded, reproducible Monte Carlo harness for risk curves and
//!   threshold-convergence experiments.

// Negated comparisons like `!(t >= 0.0)` are domain guards that must also
// reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envelope;
pub mod error;
pub mod fdr;
pub mod mc;
pub mod mixtures;
pub mod risk;
pub mod seeding;

mod quad;
mod solve;

pub use error::{Error, Result};
