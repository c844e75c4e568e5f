//! Config-driven front end: `validate`, `run` and `suite`.

pub mod config;
pub mod experiments;
pub mod output;
mod params;

use std::path::{Path, PathBuf};
use std::time::Instant;

use bpire_core::env_model::validate_assumptions;
use serde_json::{json, Value};

pub use config::{ExperimentConfig, SuiteConfig};
pub use output::VerdictRecord;

/// Environment variable consulted when neither `--out` nor the config
/// names an output directory.
pub const OUT_DIR_ENV: &str = "BPIRE_OUT_DIR";

/// Assumption-check defaults `(δ, p, q)`.
pub const DEFAULT_ASSUMPTIONS: (f64, f64, f64) = (0.35, 2.0, 4.0);

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, model file, parameters or flags.
    #[error("{0}")]
    Config(String),
    /// The estimator rejected its input or broke down.
    #[error("{0}")]
    Run(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Run(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
        }
    }
}

/// Command-line overrides shared by `run` and `suite`.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub force: bool,
}

/// Runs `f` on a pool of `workers` threads, or the global pool. Results do
/// not depend on the pool width.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("--workers must be at least 1".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Config(format!("cannot start {w} workers: {e}"))),
    }
}

/// Prints the assumption report and its JSON form. Returns the exit code.
pub fn cmd_validate(model_file: &Path, delta: f64, p: f64, q: f64) -> Result<i32, CliError> {
    let model = config::load_model(model_file)?;
    let report = validate_assumptions(&model, delta, p, q).map_err(|e| CliError::Config(e.to_string()))?;
    let mark = |b: bool| if b { "holds" } else { "FAILS" };
    println!("model {}", model_file.display());
    println!("  supercritical (mu = {:.6}): {}", report.mu, mark(report.supercritical));
    println!("  Assumption (A): {}", mark(report.a_holds));
    println!(
        "  Assumption (B), delta = {}: {} (max f(0) = {:.4})",
        report.delta,
        mark(report.b_holds),
        report.b_max_f0
    );
    println!("  Assumption (C), p = {}, q = {}: {}", report.p, report.q, mark(report.c_holds));
    println!(
        "  nonlattice plausible: {} ({} distinct atom log-means)",
        report.nonlattice_plausible, report.distinct_log_means
    );
    let failed = report.failed();
    if !failed.is_empty() {
        println!("  failed: {}", failed.join(", "));
    }
    println!("{}", serde_json::to_string(&report).map_err(|e| CliError::Io(e.to_string()))?);
    Ok(if report.required_hold() { 0 } else { 1 })
}

fn out_dir(overrides: &Overrides, cfg: &ExperimentConfig) -> PathBuf {
    overrides
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("bpire-out"))
}

fn assumption_params(cfg: &ExperimentConfig) -> Result<(f64, f64, f64), CliError> {
    let (d, p, q) = DEFAULT_ASSUMPTIONS;
    let get = |name: &str, default: f64| match cfg.parameters.get(name) {
        None => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| CliError::Config(format!("parameter `{name}` must be a number"))),
    };
    Ok((get("delta", d)?, get("p", p)?, get("q", q)?))
}

/// Loads, validates and runs one config, then writes
/// `<out_dir>/<stem>.csv` and `<out_dir>/<stem>.json`.
pub fn cmd_run(config_file: &Path, overrides: &Overrides) -> Result<VerdictRecord, CliError> {
    let mut cfg = ExperimentConfig::load(config_file)?;
    if let Some(m) = &overrides.model {
        cfg.model_file = m.clone();
    }
    let seed = overrides
        .seed
        .or(cfg.seed)
        .ok_or_else(|| CliError::Config(format!("{}: no seed in config and no --seed", config_file.display())))?;
    experiments::check(&cfg.experiment, &cfg.parameters)?;
    let model = config::load_model(&cfg.model_file)?;
    let (d, p, q) = assumption_params(&cfg)?;
    let report = validate_assumptions(&model, d, p, q).map_err(|e| CliError::Config(e.to_string()))?;
    if !report.required_hold() && !overrides.force {
        return Err(CliError::Config(format!(
            "model {} fails {}; rerun with --force to proceed",
            cfg.model_file.display(),
            report.failed().join(", ")
        )));
    }
    let model_json = serde_json::to_value(&model).map_err(|e| CliError::Io(e.to_string()))?;
    let hash = output::config_hash(&json!({
        "experiment": cfg.experiment,
        "model": model_json,
        "parameters": cfg.parameters,
        "seed": seed,
    }));
    let dir = out_dir(overrides, &cfg);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let stem = config_file.file_stem().map_or_else(|| cfg.experiment.clone(), |s| s.to_string_lossy().into_owned());
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));

    let start = Instant::now();
    let result = with_workers(overrides.workers, || experiments::run(&cfg.experiment, &model, &cfg.parameters, seed))?;
    let (rows, pass, mut metrics) = match result {
        Ok(o) => (o.rows, o.pass, o.metrics),
        Err(CliError::Run(msg)) => (Vec::new(), false, [("error".to_string(), Value::from(msg))].into()),
        Err(e) => return Err(e),
    };
    metrics.insert("seconds".into(), json!(start.elapsed().as_secs_f64()));
    metrics.insert("nonlattice_plausible".into(), json!(report.nonlattice_plausible));
    output::write_csv(&csv_path, &cfg.experiment, &rows, &hash)?;
    let verdict = VerdictRecord {
        experiment: cfg.experiment.clone(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        config_hash: hash,
        pass,
        metrics,
        artifacts: vec![csv_path, json_path.clone()],
    };
    output::write_verdict(&json_path, &verdict)?;
    Ok(verdict)
}

/// One line of the suite summary.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub config: PathBuf,
    pub experiment: String,
    pub pass: bool,
    pub seconds: f64,
    pub note: String,
}

/// Runs every config in order, continuing past failures.
pub fn cmd_suite(suite_file: &Path, overrides: &Overrides) -> Result<Vec<SuiteRow>, CliError> {
    let suite = SuiteConfig::load(suite_file)?;
    let mut rows = Vec::with_capacity(suite.configs.len());
    for config in &suite.configs {
        let start = Instant::now();
        let result = cmd_run(config, overrides);
        let seconds = start.elapsed().as_secs_f64();
        rows.push(match result {
            Ok(v) => SuiteRow {
                config: config.clone(),
                pass: v.pass,
                note: v.metrics.get("error").and_then(Value::as_str).unwrap_or("").to_string(),
                experiment: v.experiment,
                seconds,
            },
            Err(e) => {
                SuiteRow { config: config.clone(), experiment: "-".into(), pass: false, seconds, note: e.to_string() }
            }
        });
    }
    Ok(rows)
}

/// Number of failed rows, capped at 125.
pub fn suite_exit_code(rows: &[SuiteRow]) -> i32 {
    rows.iter().filter(|r| !r.pass).count().min(125) as i32
}

pub fn print_suite(rows: &[SuiteRow]) {
    println!("{:<40} {:<12} {:<6} {:>9}  note", "config", "experiment", "result", "seconds");
    for r in rows {
        let name =
            r.config.file_name().map_or_else(|| r.config.display().to_string(), |n| n.to_string_lossy().into_owned());
        println!(
            "{:<40} {:<12} {:<6} {:>9.1}  {}",
            name,
            r.experiment,
            if r.pass { "pass" } else { "FAIL" },
            r.seconds,
            r.note
        );
    }
}
