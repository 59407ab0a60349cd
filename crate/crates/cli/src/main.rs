//! Command-line front end: every computation as a subcommand with CSV/JSON
//! output suitable for plotting and regression testing.
//!
//! Exit codes: 0 success, 2 input/usage error, 3 domain or degenerate-mixture
//! error, 4 numerical failure. Seeded subcommands are byte-for-byte
//! reproducible; the seed comes from `--seed`, then a config-file `seed`,
//! then the `FDR_SEED` environment variable, then a fixed default.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fdrexp::envelope::{
    bias_problem, envelope_value, min_fdr_threshold, scan_csv, survival_excess_problem,
    variance_problem, worst_ideal_risk_scan,
};
use fdrexp::fdr::{fdr_functional, step_up_threshold, FdrConfig};
use fdrexp::mc::{convergence_csv, convergence_experiment, risk_curve, risk_curve_csv};
use fdrexp::mixtures::{ExpScaleMixture, MixingDistribution, SampleBatch, SparsityBall};
use fdrexp::risk::{asymptotic_minimax_risk, least_favorable_mus, minimax_threshold, AsymptoticPoint};
use fdrexp::seeding::GENERATOR_NAME;

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "fdrexp",
    version,
    about = "FDR thresholding for sparse exponential means",
    long_about = None
)]
struct Cli {
    /// Optional key=value config file; flags win over config entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Step-up FDR threshold on a CSV of samples (column `x`).
    Threshold(ThresholdArgs),
    /// Population FDR functional T_q(G) of a mixture.
    Functional(FunctionalArgs),
    /// Monte Carlo risk curves over a mu grid, one CSV per q.
    RiskCurve(RiskCurveArgs),
    /// Moment-constrained envelope problems (bias, variance, hstar).
    Envelope(EnvelopeArgs),
    /// Convergence of the empirical threshold to T_q(G).
    Convergence(ConvergenceArgs),
    /// Worst ideal-risk scan over calibrated two-point mixtures.
    Scan(ScanArgs),
    /// Asymptotic summary: t0, T_q*, rate, least-favorable means.
    Asymptotics(AsymptoticsArgs),
}

#[derive(Args)]
struct ThresholdArgs {
    /// CSV file with header containing column `x` (and optionally `mu`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args)]
struct FunctionalArgs {
    /// Signal fraction of a two-point mixture.
    #[arg(long)]
    eps: Option<f64>,
    /// Signal mean of a two-point mixture.
    #[arg(long)]
    mu: Option<f64>,
    /// JSON mixture file {"support":[...],"weights":[...]} (alternative to --eps/--mu).
    #[arg(long)]
    mixture: Option<PathBuf>,
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args)]
struct RiskCurveArgs {
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Comma-separated q values.
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    mu_min: Option<f64>,
    #[arg(long)]
    mu_max: Option<f64>,
    #[arg(long)]
    mu_steps: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the per-q CSV files and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnvelopeArgs {
    /// Problem tag: bias | variance | hstar.
    #[arg(long)]
    problem: String,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    /// Optional FDR parameter; with `hstar` reports whether the excess
    /// crosses (1-q)/q at this t.
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// Comma-separated, strictly increasing sample sizes (at least 3).
    #[arg(long)]
    n_list: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional CSV output path (stdout otherwise); a manifest is written
    /// alongside.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    mu_min: Option<f64>,
    #[arg(long)]
    mu_max: Option<f64>,
    #[arg(long)]
    mu_steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AsymptoticsArgs {
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
}

enum CliError {
    Input(String),
    Domain(String),
    Numerical(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Domain(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl From<fdrexp::Error> for CliError {
    fn from(e: fdrexp::Error) -> Self {
        match e {
            fdrexp::Error::Domain(m) => CliError::Domain(format!("domain error: {m}")),
            fdrexp::Error::DegenerateMixture(m) => {
                CliError::Domain(format!("degenerate mixture: {m}"))
            }
            fdrexp::Error::Numerical(m) => CliError::Numerical(format!("numerical failure: {m}")),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Plain-text key=value config; `#` starts a comment line.
struct Config(HashMap<String, String>);

impl Config {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read config {path:?}: {e}")))?;
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| CliError::Input(format!("bad config line `{line}`")))?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Input(format!("config key `{key}`: cannot parse `{raw}`"))),
        }
    }
}

/// Flag value if present, else config entry, else default.
fn pick<T: FromStr>(flag: Option<T>, cfg: &Config, key: &str, default: T) -> CliResult<T> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(cfg.get(key)?.unwrap_or(default)),
    }
}

fn pick_required<T: FromStr>(flag: Option<T>, cfg: &Config, key: &str) -> CliResult<T> {
    match flag {
        Some(v) => Ok(v),
        None => cfg
            .get(key)?
            .ok_or_else(|| CliError::Input(format!("missing required parameter `{key}`"))),
    }
}

fn pick_seed(flag: Option<u64>, cfg: &Config) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = cfg.get("seed")? {
        return Ok(s);
    }
    if let Ok(raw) = std::env::var("FDR_SEED") {
        return raw
            .parse()
            .map_err(|_| CliError::Input(format!("FDR_SEED: cannot parse `{raw}`")));
    }
    Ok(DEFAULT_SEED)
}

fn parse_f64_list(raw: &str, what: &str) -> CliResult<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Input(format!("{what}: cannot parse `{s}`")))
        })
        .collect()
}

fn fdr_config(q: f64) -> CliResult<FdrConfig> {
    FdrConfig::new(q).map_err(|e| CliError::Input(e.to_string()))
}

fn ball(p: f64, eta: f64) -> CliResult<SparsityBall> {
    SparsityBall::new(p, eta).map_err(|e| CliError::Input(e.to_string()))
}

/// 12 significant digits, locale independent.
fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

fn mu_grid(lo: f64, hi: f64, steps: usize) -> CliResult<Vec<f64>> {
    if steps == 0 || !(lo.is_finite() && hi.is_finite()) || lo <= 1.0 || hi < lo {
        return Err(CliError::Input(format!(
            "bad mu grid: [{lo}, {hi}] with {steps} steps"
        )));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect())
}

/// Run manifest paired with every file-producing command.
#[derive(Serialize)]
struct RunManifest {
    command_line: String,
    parameters: serde_json::Value,
    master_seed: Option<u64>,
    generator: &'static str,
    started_utc: String,
    finished_utc: String,
    library_version: &'static str,
    outputs: Vec<String>,
}

struct ManifestBuilder {
    started: chrono::DateTime<chrono::Utc>,
    parameters: serde_json::Value,
    master_seed: Option<u64>,
}

impl ManifestBuilder {
    fn new(parameters: serde_json::Value, master_seed: Option<u64>) -> Self {
        Self {
            started: chrono::Utc::now(),
            parameters,
            master_seed,
        }
    }

    fn write(self, path: &Path, outputs: Vec<String>) -> CliResult<()> {
        let manifest = RunManifest {
            command_line: std::env::args().collect::<Vec<_>>().join(" "),
            parameters: self.parameters,
            master_seed: self.master_seed,
            generator: GENERATOR_NAME,
            started_utc: self.started.to_rfc3339(),
            finished_utc: chrono::Utc::now().to_rfc3339(),
            library_version: env!("CARGO_PKG_VERSION"),
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Input(format!("manifest serialization: {e}")))?;
        fs::write(path, text)
            .map_err(|e| CliError::Input(format!("cannot write manifest {path:?}: {e}")))?;
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {path:?}: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Input(_) => ExitCode::from(2),
                CliError::Domain(_) => ExitCode::from(3),
                CliError::Numerical(_) => ExitCode::from(4),
            }
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Threshold(a) => cmd_threshold(a, &cfg),
        Cmd::Functional(a) => cmd_functional(a, &cfg),
        Cmd::RiskCurve(a) => cmd_risk_curve(a, &cfg),
        Cmd::Envelope(a) => cmd_envelope(a, &cfg),
        Cmd::Convergence(a) => cmd_convergence(a, &cfg),
        Cmd::Scan(a) => cmd_scan(a, &cfg),
        Cmd::Asymptotics(a) => cmd_asymptotics(a, &cfg),
    }
}

fn cmd_threshold(a: ThresholdArgs, cfg: &Config) -> CliResult<()> {
    let q = pick_required(a.q, cfg, "q")?;
    let c = fdr_config(q)?;
    let text = fs::read_to_string(&a.input)
        .map_err(|e| CliError::Input(format!("cannot read {:?}: {e}", a.input)))?;
    let batch = SampleBatch::from_csv(&text).map_err(|e| CliError::Input(e.to_string()))?;
    let result = step_up_threshold(&batch, c);
    let json = serde_json::to_string(&result)
        .map_err(|e| CliError::Input(format!("serialization: {e}")))?;
    println!("{json}");
    Ok(())
}

fn load_mixture(
    eps: Option<f64>,
    mu: Option<f64>,
    path: Option<&Path>,
    cfg: &Config,
) -> CliResult<MixingDistribution> {
    if let Some(path) = path {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {path:?}: {e}")))?;
        return serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("bad mixture JSON: {e}")));
    }
    let eps = pick_required(eps, cfg, "eps")?;
    let mu = pick_required(mu, cfg, "mu")?;
    MixingDistribution::two_point(eps, mu).map_err(CliError::from)
}

fn cmd_functional(a: FunctionalArgs, cfg: &Config) -> CliResult<()> {
    let q = pick_required(a.q, cfg, "q")?;
    let c = fdr_config(q)?;
    let f = load_mixture(a.eps, a.mu, a.mixture.as_deref(), cfg)?;
    let t = fdr_functional(&ExpScaleMixture::new(f), c)?;
    println!("{}", sig12(t));
    Ok(())
}

fn cmd_risk_curve(a: RiskCurveArgs, cfg: &Config) -> CliResult<()> {
    let p = pick(a.p, cfg, "p", 1.0)?;
    let eta = pick(a.eta, cfg, "eta", 1e-3)?;
    let qs_raw = pick(a.q, cfg, "q", "0.05,0.15,0.25,0.5".to_string())?;
    let qs = parse_f64_list(&qs_raw, "q list")?;
    let mu_min = pick(a.mu_min, cfg, "mu-min", 2.0)?;
    let mu_max = pick(a.mu_max, cfg, "mu-max", 30.0)?;
    let mu_steps = pick(a.mu_steps, cfg, "mu-steps", 29)?;
    let n = pick(a.n, cfg, "n", 100_000)?;
    let reps = pick(a.reps, cfg, "reps", 16)?;
    let seed = pick_seed(a.seed, cfg)?;
    let out = match a.out {
        Some(o) => o,
        None => PathBuf::from(cfg.get::<String>("out")?.unwrap_or_else(|| ".".into())),
    };
    if reps == 0 {
        return Err(CliError::Input("reps must be at least 1".into()));
    }
    for &q in &qs {
        fdr_config(q)?;
    }
    let b = ball(p, eta)?;
    let grid = mu_grid(mu_min, mu_max, mu_steps)?;
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Input(format!("cannot create {out:?}: {e}")))?;

    let manifest = ManifestBuilder::new(
        serde_json::json!({
            "p": p, "eta": eta, "q": qs, "mu_min": mu_min, "mu_max": mu_max,
            "mu_steps": mu_steps, "n": n, "reps": reps,
        }),
        Some(seed),
    );
    let curves = risk_curve(&b, &qs, &grid, n, reps, seed)?;
    let mut outputs = Vec::new();
    for curve in &curves {
        for pt in &curve.points {
            if pt.mean_loss.is_nan() {
                eprintln!(
                    "warning: q = {}, mu = {}: calibration failed, NaN row recorded",
                    curve.q, pt.mu
                );
            }
        }
        let path = out.join(format!("risk_curve_q{}.csv", curve.q));
        write_file(&path, &risk_curve_csv(curve))?;
        println!("wrote {}", path.display());
        outputs.push(path.display().to_string());
    }
    manifest.write(&out.join("manifest.json"), outputs)?;
    Ok(())
}

fn cmd_envelope(a: EnvelopeArgs, cfg: &Config) -> CliResult<()> {
    let p = pick(a.p, cfg, "p", 1.0)?;
    let eta = pick(a.eta, cfg, "eta", 1e-3)?;
    let b = ball(p, eta)?;
    let t = pick_required(a.t, cfg, "t")?;
    let prob = match a.problem.as_str() {
        "bias" => bias_problem(&b, t),
        "variance" => variance_problem(&b, t)?,
        "hstar" => survival_excess_problem(&b, t)?,
        other => {
            return Err(CliError::Input(format!(
                "unknown envelope problem `{other}` (expected bias, variance or hstar)"
            )))
        }
    };
    let result = envelope_value(&prob)?;
    let mut json = serde_json::to_value(&result)
        .map_err(|e| CliError::Input(format!("serialization: {e}")))?;
    json["problem"] = serde_json::Value::String(a.problem.clone());
    if a.problem == "hstar" {
        if let Some(q) = a.q {
            let c = fdr_config(q)?;
            let target = (1.0 - c.q()) / c.q();
            json["crossing_target"] = serde_json::json!(target);
            json["crosses"] = serde_json::json!(result.value >= target);
        }
    }
    println!(
        "{}",
        serde_json::to_string(&json).map_err(|e| CliError::Input(e.to_string()))?
    );
    Ok(())
}

fn cmd_convergence(a: ConvergenceArgs, cfg: &Config) -> CliResult<()> {
    let eps = pick(a.eps, cfg, "eps", 0.01)?;
    let mu = pick(a.mu, cfg, "mu", 10.0)?;
    let q = pick(a.q, cfg, "q", 0.5)?;
    let c = fdr_config(q)?;
    let n_raw = pick(a.n_list, cfg, "n-list", "1000,10000,100000".to_string())?;
    let n_list: Vec<usize> = n_raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Input(format!("n-list: cannot parse `{s}`")))
        })
        .collect::<CliResult<_>>()?;
    if n_list.len() < 3 {
        return Err(CliError::Input(
            "n-list needs at least 3 strictly increasing sizes".into(),
        ));
    }
    let reps = pick(a.reps, cfg, "reps", 200)?;
    if reps == 0 {
        return Err(CliError::Input("reps must be at least 1".into()));
    }
    let seed = pick_seed(a.seed, cfg)?;
    let f = MixingDistribution::two_point(eps, mu)?;
    let manifest = ManifestBuilder::new(
        serde_json::json!({
            "eps": eps, "mu": mu, "q": q, "n_list": n_list, "reps": reps,
        }),
        Some(seed),
    );
    let res = convergence_experiment(&f, c, &n_list, reps, seed)?;
    let csv = convergence_csv(&res);
    match &a.out {
        Some(path) => {
            write_file(path, &csv)?;
            let mpath = path.with_extension("manifest.json");
            manifest.write(&mpath, vec![path.display().to_string()])?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    println!("slope = {}", sig12(res.slope));
    Ok(())
}

fn cmd_scan(a: ScanArgs, cfg: &Config) -> CliResult<()> {
    let p = pick(a.p, cfg, "p", 1.0)?;
    let eta = pick(a.eta, cfg, "eta", 1e-3)?;
    let q = pick(a.q, cfg, "q", 0.25)?;
    let c = fdr_config(q)?;
    let b = ball(p, eta)?;
    let mu_min = pick(a.mu_min, cfg, "mu-min", 1.5)?;
    let mu_max = pick(a.mu_max, cfg, "mu-max", 200.0)?;
    let mu_steps = pick(a.mu_steps, cfg, "mu-steps", 60)?;
    if mu_min <= 1.0 || mu_max < mu_min || mu_steps == 0 {
        return Err(CliError::Input(format!(
            "bad mu grid: [{mu_min}, {mu_max}] with {mu_steps} steps"
        )));
    }
    // Log-spaced grid matches the curve geometry.
    let grid: Vec<f64> = (0..mu_steps)
        .map(|i| {
            if mu_steps == 1 {
                mu_min
            } else {
                mu_min * (mu_max / mu_min).powf(i as f64 / (mu_steps - 1) as f64)
            }
        })
        .collect();
    let manifest = ManifestBuilder::new(
        serde_json::json!({
            "p": p, "eta": eta, "q": q,
            "mu_min": mu_min, "mu_max": mu_max, "mu_steps": mu_steps,
        }),
        None,
    );
    let scan = worst_ideal_risk_scan(&b, c, &grid);
    let csv = scan_csv(&scan);
    match &a.out {
        Some(path) => {
            write_file(path, &csv)?;
            let mpath = path.with_extension("manifest.json");
            manifest.write(&mpath, vec![path.display().to_string()])?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    println!("max = {}", sig12(scan.max));
    println!("argmax_mu = {}", sig12(scan.argmax_mu));
    Ok(())
}

fn cmd_asymptotics(a: AsymptoticsArgs, cfg: &Config) -> CliResult<()> {
    let p = pick(a.p, cfg, "p", 1.0)?;
    let eta = pick(a.eta, cfg, "eta", 1e-3)?;
    let q = pick(a.q, cfg, "q", 0.5)?;
    let c = fdr_config(q)?;
    let b = ball(p, eta)?;
    let t0 = minimax_threshold(&b)?;
    let tq = min_fdr_threshold(&b, c)?;
    let rate = asymptotic_minimax_risk(&b)?;
    let (mu_b_star, mu_v_star) = least_favorable_mus(&b)?;
    let point = AsymptoticPoint {
        t0,
        tq_star: tq.numeric,
        rate,
        mu_b_star,
        mu_v_star,
    };
    let mut json =
        serde_json::to_value(point).map_err(|e| CliError::Input(e.to_string()))?;
    json["tq_star_formula"] = serde_json::json!(tq.formula);
    println!(
        "{}",
        serde_json::to_string(&json).map_err(|e| CliError::Input(e.to_string()))?
    );
    Ok(())
}
