//! Seeded Monte Carlo harness.
//!
//! Trials are independent work units whose randomness depends only on the
//! master seed and the trial index, so sweeps can run in any order or in
//! parallel and still aggregate to bit-identical results. Desk-scale
//! defaults (n = 1e5, 16 repetitions with standard-error bars) replace
//! single large-n runs; the estimand is unchanged and the noise is
//! quantified.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fdr::{capped_threshold, fdr_functional, FdrConfig};
use crate::mixtures::{ExpScaleMixture, MixingDistribution, SampleBatch, SparsityBall};
use crate::risk::log_mse_loss;
use crate::seeding::{derive_seed, seeded_rng};

/// Outcome of one thresholding trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialReport {
    pub loss: f64,
    /// Realized threshold (the capped value on the no-crossing event).
    pub threshold: f64,
    pub k_fdr: usize,
    /// False-discovery proportion; 0 when there are no discoveries.
    pub fdp: f64,
    pub capped: bool,
    pub seed: u64,
}

fn report_from_batch(batch: &SampleBatch, cfg: FdrConfig, seed: u64) -> TrialReport {
    let res = capped_threshold(batch, cfg);
    let loss = log_mse_loss(&res.estimate, batch.mu()).expect("parallel arrays");
    let false_discoveries = res
        .discoveries
        .iter()
        .filter(|&&i| batch.mu()[i] == 1.0)
        .count();
    let fdp = if res.discoveries.is_empty() {
        0.0
    } else {
        false_discoveries as f64 / res.discoveries.len() as f64
    };
    TrialReport {
        loss,
        threshold: res.threshold.value().expect("capped threshold is finite"),
        k_fdr: res.discoveries.len(),
        fdp,
        capped: res.capped,
        seed,
    }
}

/// One Bayesian-model trial: sample `(mu_i, X_i)` pairs from `F`, apply the
/// capped FDR threshold, and score the log-scale loss and FDP.
pub fn run_trial(f: &MixingDistribution, n: usize, cfg: FdrConfig, seed: u64) -> TrialReport {
    let batch = f.sample(n, seed).expect("n >= 1");
    report_from_batch(&batch, cfg, seed)
}

/// One frequentist-model trial: `X_i ~ Exp(mu_i)` for a fixed mean vector.
pub fn frequentist_trial(mu_vector: &[f64], cfg: FdrConfig, seed: u64) -> Result<TrialReport> {
    if mu_vector.is_empty() {
        return Err(Error::domain("empty mean vector"));
    }
    if mu_vector.iter().any(|&m| !m.is_finite() || m < 1.0) {
        return Err(Error::domain("means must be finite and >= 1"));
    }
    let mut rng = seeded_rng(seed);
    let x: Vec<f64> = mu_vector
        .iter()
        .map(|&m| {
            let e: f64 = rng.gen();
            -m * (-e).ln_1p()
        })
        .collect();
    let batch = SampleBatch::new(x, mu_vector.to_vec(), seed)?;
    Ok(report_from_batch(&batch, cfg, seed))
}

/// Aggregated trials at one `(q, mu)` cell.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvePoint {
    pub mu: f64,
    pub eps: f64,
    pub mean_loss: f64,
    pub se_loss: f64,
    pub mean_fdp: f64,
    pub reps: usize,
}

/// Risk curve for one `q`.
#[derive(Debug, Clone, Serialize)]
pub struct RiskCurve {
    pub q: f64,
    pub n: usize,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Risk curves over a `mu` grid for each `q`: `eps` by moment calibration,
/// `reps` independent trials per cell. The trial substream index is the
/// global cell-by-rep position, so results do not depend on scheduling.
/// Cells whose calibration fails produce NaN statistics instead of aborting.
pub fn risk_curve(
    ball: &SparsityBall,
    qs: &[f64],
    mu_grid: &[f64],
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<RiskCurve>> {
    if reps == 0 {
        return Err(Error::domain("reps must be at least 1"));
    }
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    let mut curves = Vec::with_capacity(qs.len());
    for (qi, &q) in qs.iter().enumerate() {
        let cfg = FdrConfig::new(q)?;
        let points: Vec<CurvePoint> = mu_grid
            .par_iter()
            .enumerate()
            .map(|(mi, &mu)| {
                let f = match MixingDistribution::calibrated_two_point(ball, mu) {
                    Ok(f) => f,
                    Err(_) => {
                        return CurvePoint {
                            mu,
                            eps: f64::NAN,
                            mean_loss: f64::NAN,
                            se_loss: f64::NAN,
                            mean_fdp: f64::NAN,
                            reps,
                        }
                    }
                };
                let eps = *f.weights().last().unwrap();
                let cell = (qi * mu_grid.len() + mi) as u64;
                let reports: Vec<TrialReport> = (0..reps)
                    .map(|r| {
                        let task = cell * reps as u64 + r as u64;
                        run_trial(&f, n, cfg, derive_seed(seed, task))
                    })
                    .collect();
                let losses: Vec<f64> = reports.iter().map(|r| r.loss).collect();
                let (mean_loss, se_loss) = mean_and_se(&losses);
                let mean_fdp =
                    reports.iter().map(|r| r.fdp).sum::<f64>() / reports.len() as f64;
                CurvePoint {
                    mu,
                    eps,
                    mean_loss,
                    se_loss,
                    mean_fdp,
                    reps,
                }
            })
            .collect();
        curves.push(RiskCurve {
            q,
            n,
            seed,
            points,
        });
    }
    Ok(curves)
}

/// CSV rows `q,mu,eps,mean_loss,se_loss,mean_fdp,reps,n,seed`.
pub fn risk_curve_csv(curve: &RiskCurve) -> String {
    let mut out = String::from("q,mu,eps,mean_loss,se_loss,mean_fdp,reps,n,seed\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            curve.q, p.mu, p.eps, p.mean_loss, p.se_loss, p.mean_fdp, p.reps, curve.n, curve.seed
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub median_abs_dev: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceResult {
    /// Least-squares slope of log(median deviation) against log(n).
    pub slope: f64,
    pub rows: Vec<ConvergenceRow>,
    pub seed: u64,
    /// Population threshold the empirical functional is tracking.
    pub t_population: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Track `|T_q(G_n) - T_q(G)|` over growing `n` (medians over `reps`
/// independent batches per size, capped values included) and fit the
/// log-log slope; root-n convergence shows up as a slope near -1/2.
pub fn convergence_experiment(
    f: &MixingDistribution,
    cfg: FdrConfig,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<ConvergenceResult> {
    if f.is_unit_point() {
        return Err(Error::degenerate(
            "convergence experiment needs a nontrivial mixture",
        ));
    }
    if n_list.len() < 3 {
        return Err(Error::domain("need at least 3 sample sizes"));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("sample sizes must be strictly increasing"));
    }
    if reps == 0 {
        return Err(Error::domain("reps must be at least 1"));
    }
    let g = ExpScaleMixture::new(f.clone());
    let t_population = fdr_functional(&g, cfg)?;
    let rows: Vec<ConvergenceRow> = n_list
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            let mut devs: Vec<f64> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let task = (ni * reps + r) as u64;
                    let trial = run_trial(f, n, cfg, derive_seed(seed, task));
                    (trial.threshold - t_population).abs()
                })
                .collect();
            ConvergenceRow {
                n,
                median_abs_dev: median(&mut devs),
                reps,
            }
        })
        .collect();
    // Least squares on (log n, log median).
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n as f64).ln(), r.median_abs_dev.ln()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(ConvergenceResult {
        slope: sxy / sxx,
        rows,
        seed,
        t_population,
    })
}

/// CSV rows `n,median_abs_dev,reps,seed,slope_overall`.
pub fn convergence_csv(res: &ConvergenceResult) -> String {
    let mut out = String::from("n,median_abs_dev,reps,seed,slope_overall\n");
    for r in &res.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n, r.median_abs_dev, r.reps, res.seed, res.slope
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdr::two_point_functional;

    fn cfg(q: f64) -> FdrConfig {
        FdrConfig::new(q).unwrap()
    }

    #[test]
    fn trial_deterministic() {
        let f = MixingDistribution::two_point(0.01, 10.0).unwrap();
        let a = run_trial(&f, 500, cfg(0.25), 99);
        let b = run_trial(&f, 500, cfg(0.25), 99);
        assert_eq!(a, b);
    }

    #[test]
    fn pure_signal_has_zero_fdp() {
        let f = MixingDistribution::two_point(1.0, std::f64::consts::E).unwrap();
        for s in 0..20 {
            let r = run_trial(&f, 200, cfg(0.25), s);
            assert_eq!(r.fdp, 0.0, "no nulls, no false discoveries");
        }
    }

    #[test]
    fn null_trials_control_discovery_rate() {
        // Under the pure null, mean FDP over seeds is the rejection
        // probability, which step-up control keeps at q.
        let f = MixingDistribution::point_mass(1.0).unwrap();
        let q = 0.25;
        let reps = 200;
        let mean_fdp: f64 = (0..reps)
            .map(|s| run_trial(&f, 10_000, cfg(q), derive_seed(5, s)).fdp)
            .sum::<f64>()
            / reps as f64;
        let se = (q * (1.0 - q) / reps as f64).sqrt();
        assert!(
            mean_fdp <= q + 3.0 * se,
            "null FDP {mean_fdp} above q + 3se = {}",
            q + 3.0 * se
        );
    }

    #[test]
    fn risk_curve_minimal_configuration() {
        // Degenerate but valid: one rep of ten samples still emits finite
        // statistics (with zero standard error).
        let ball = SparsityBall::new(1.0, 1e-3).unwrap();
        let curves = risk_curve(&ball, &[0.25], &[5.0], 10, 1, 1).unwrap();
        let p = &curves[0].points[0];
        assert!(p.mean_loss.is_finite());
        assert_eq!(p.se_loss, 0.0);
        assert!(p.mean_fdp.is_finite());
    }

    #[test]
    fn risk_curve_smoke_and_determinism() {
        let ball = SparsityBall::new(1.0, 1e-3).unwrap();
        let curves = risk_curve(&ball, &[0.25], &[2.0, 10.0], 100, 2, 7).unwrap();
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].points.len(), 2);
        for p in &curves[0].points {
            assert!(p.mean_loss.is_finite());
            assert!(p.se_loss >= 0.0);
        }
        let again = risk_curve(&ball, &[0.25], &[2.0, 10.0], 100, 2, 7).unwrap();
        assert_eq!(risk_curve_csv(&curves[0]), risk_curve_csv(&again[0]));
    }

    #[test]
    fn risk_curve_serial_parallel_identical() {
        let ball = SparsityBall::new(1.0, 1e-3).unwrap();
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| risk_curve(&ball, &[0.25, 0.5], &[2.0, 5.0, 9.0], 200, 3, 11).unwrap());
        let parallel = risk_curve(&ball, &[0.25, 0.5], &[2.0, 5.0, 9.0], 200, 3, 11).unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(risk_curve_csv(a), risk_curve_csv(b));
        }
    }

    #[test]
    fn risk_curve_flags_uncalibratable_cells() {
        let ball = SparsityBall::new(1.0, 1e-2).unwrap();
        let curves = risk_curve(&ball, &[0.25], &[1.0 + 1e-9, 4.0], 50, 2, 3).unwrap();
        assert!(curves[0].points[0].mean_loss.is_nan());
        assert!(curves[0].points[1].mean_loss.is_finite());
    }

    #[test]
    fn convergence_input_validation() {
        let f = MixingDistribution::two_point(0.01, 10.0).unwrap();
        let c = cfg(0.5);
        assert!(convergence_experiment(&f, c, &[100, 1000], 10, 1).is_err());
        assert!(convergence_experiment(&f, c, &[100, 1000, 500], 10, 1).is_err());
        assert!(convergence_experiment(&f, c, &[100, 1000, 10_000], 0, 1).is_err());
        let delta1 = MixingDistribution::point_mass(1.0).unwrap();
        assert!(convergence_experiment(&delta1, c, &[100, 1000, 10_000], 5, 1).is_err());
    }

    #[test]
    fn convergence_medians_shrink() {
        let f = MixingDistribution::two_point(0.01, 10.0).unwrap();
        let r = convergence_experiment(&f, cfg(0.5), &[1000, 10_000, 100_000], 40, 21).unwrap();
        assert!(r.rows[0].median_abs_dev > r.rows[1].median_abs_dev);
        assert!(r.rows[1].median_abs_dev > r.rows[2].median_abs_dev);
        assert!(
            r.slope > -0.75 && r.slope < -0.25,
            "slope {} out of range",
            r.slope
        );
        let csv = convergence_csv(&r);
        assert!(csv.starts_with("n,median_abs_dev,reps,seed,slope_overall\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn frequentist_matches_model_identity() {
        // All-ones mean vector behaves as a pure-null trial.
        let r = frequentist_trial(&vec![1.0; 500], cfg(0.25), 3).unwrap();
        assert!(r.loss >= 0.0);
        let r2 = frequentist_trial(&vec![1.0; 500], cfg(0.25), 3).unwrap();
        assert_eq!(r, r2);
        assert!(frequentist_trial(&[], cfg(0.25), 3).is_err());
        assert!(frequentist_trial(&[0.5], cfg(0.25), 3).is_err());
    }

    #[test]
    fn frequentist_two_value_vector_tracks_bayesian_trials() {
        // mu with floor(eps n) entries at mu0 against Bayesian trials at the
        // matching two-point prior: mean losses within 3 combined SEs.
        let (eps, mu0, n, q) = (0.02, 8.0, 4000usize, 0.25);
        let k = (eps * n as f64).round() as usize;
        let mut mu_vec = vec![1.0; n];
        for m in mu_vec.iter_mut().take(k) {
            *m = mu0;
        }
        let f = MixingDistribution::two_point(eps, mu0).unwrap();
        let reps = 60;
        let freq: Vec<f64> = (0..reps)
            .map(|s| {
                frequentist_trial(&mu_vec, cfg(q), derive_seed(100, s))
                    .unwrap()
                    .loss
            })
            .collect();
        let bayes: Vec<f64> = (0..reps)
            .map(|s| run_trial(&f, n, cfg(q), derive_seed(200, s)).loss)
            .collect();
        let (mf, sf) = mean_and_se(&freq);
        let (mb, sb) = mean_and_se(&bayes);
        let gap = (mf - mb).abs();
        let budget = 3.0 * (sf * sf + sb * sb).sqrt();
        assert!(gap <= budget, "freq {mf} vs bayes {mb}, budget {budget}");
    }

    #[test]
    fn capped_trials_enter_medians() {
        // Tiny n with a weak mixture caps often; the experiment still runs.
        let f = MixingDistribution::two_point(0.01, 3.0).unwrap();
        let r = convergence_experiment(&f, cfg(0.1), &[5, 10, 20], 30, 9).unwrap();
        assert!(r.rows.iter().all(|row| row.median_abs_dev.is_finite()));
    }

    #[test]
    fn trial_threshold_consistent_with_functional() {
        // With a strong mixture and large n the realized threshold sits near
        // the population value.
        let f = MixingDistribution::two_point(0.05, 10.0).unwrap();
        let cfgq = cfg(0.5);
        let t_pop = two_point_functional(0.05, 10.0, cfgq).unwrap();
        let r = run_trial(&f, 100_000, cfgq, 31);
        assert!(!r.capped);
        assert!((r.threshold - t_pop).abs() < 0.2, "{} vs {t_pop}", r.threshold);
    }
}
