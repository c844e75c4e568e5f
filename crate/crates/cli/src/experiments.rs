//! The fixed experiment registry. Each entry checks its parameters, runs
//! the core estimator and returns CSV rows, a verdict and metrics.

use std::collections::BTreeMap;

use bpire_core::env_model::sample_env;
use bpire_core::pgf_engine::{quenched_law_dft, quenched_law_series, Estimate};
use bpire_core::rwalk::{minima_density_check, walk_stats, MinimaConfig};
use bpire_core::seed::{self, derive};
use bpire_core::simulator::delta_records;
use bpire_core::stats::{self, DecayFit, DecaySeries, HarmonicMethod, Z99};
use bpire_core::EnvironmentModel;
use serde_json::{json, Value};

use crate::params::Params;
use crate::CliError;

/// Parameters every experiment accepts: the assumption check `(δ, p, q)`.
pub const SHARED: [&str; 3] = ["delta", "p", "q"];

/// Experiment names in registry order.
pub const REGISTRY: [&str; 12] = [
    "decay",
    "extinction",
    "lowerdev",
    "harmonic",
    "logmoment",
    "clt",
    "edgeworth",
    "phi",
    "renewal",
    "delta",
    "minima",
    "exactlaw",
];

/// One CSV line.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub parameter: String,
    pub x: f64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub pass: bool,
    pub metrics: BTreeMap<String, Value>,
}

type Run = fn(&EnvironmentModel, &Params, u64) -> Result<Outcome, CliError>;

struct Entry {
    required: &'static [&'static str],
    optional: &'static [&'static str],
    run: Run,
}

fn entry(name: &str) -> Option<Entry> {
    let e = |required, optional, run| Some(Entry { required, optional, run });
    match name {
        "decay" => e(&["k", "n_list", "R"], &["j", "range"], decay),
        "extinction" => e(&["k", "n_list", "R"], &[], extinction),
        "lowerdev" => e(&["k", "n_list", "R"], &["theta", "exact_limit"], lowerdev),
        "harmonic" => e(&["k", "alpha", "n_list", "R"], &["K", "method", "floor"], harmonic),
        "logmoment" => e(&["k", "n_list", "R"], &["j"], logmoment),
        "clt" => e(&["k", "n_list", "R"], &["ks_max"], clt),
        "edgeworth" => e(&["k", "n_list", "R"], &["seeds", "oracle_n", "oracle_R"], edgeworth),
        "phi" => e(&["k", "s_list", "n_list", "R"], &["check_n", "check_R"], phi),
        "renewal" => e(&["k", "B", "C", "R"], &["y_list", "log_y_list", "n_max", "tolerance"], renewal),
        "delta" => e(&["k", "n_list", "R", "p"], &["r"], delta),
        "minima" => e(
            &["n_list", "R"],
            &["truncation", "drift", "drift_fraction", "density", "horizon_factor", "pilot_walks"],
            minima,
        ),
        "exactlaw" => e(&["k", "n"], &["K", "M"], exactlaw),
        _ => None,
    }
}

/// Validates the parameter names of `experiment` without running it.
pub fn check(experiment: &str, parameters: &BTreeMap<String, Value>) -> Result<(), CliError> {
    let e = entry(experiment).ok_or_else(|| unknown(experiment))?;
    Params::new(experiment, parameters, e.required, e.optional).map(|_| ())
}

fn unknown(experiment: &str) -> CliError {
    CliError::Config(format!("unknown experiment `{experiment}`; registry: {}", REGISTRY.join(", ")))
}

pub fn run(
    experiment: &str,
    model: &EnvironmentModel,
    parameters: &BTreeMap<String, Value>,
    seed: u64,
) -> Result<Outcome, CliError> {
    let e = entry(experiment).ok_or_else(|| unknown(experiment))?;
    let params = Params::new(experiment, parameters, e.required, e.optional)?;
    (e.run)(model, &params, seed)
}

fn core(e: bpire_core::Error) -> CliError {
    CliError::Run(e.to_string())
}

fn row(parameter: impl Into<String>, x: f64, estimate: f64, std_error: f64) -> Row {
    Row { parameter: parameter.into(), x, estimate, std_error }
}

fn series_rows(label: &str, estimates: &[(usize, Estimate)]) -> Vec<Row> {
    estimates.iter().map(|(n, e)| row(label, *n as f64, e.estimate, e.std_error)).collect()
}

fn fit_metrics(metrics: &mut BTreeMap<String, Value>, prefix: &str, fit: &DecayFit) {
    metrics.insert(format!("{prefix}.slope"), json!(fit.slope));
    metrics.insert(format!("{prefix}.slope_se"), json!(fit.slope_se));
    metrics.insert(format!("{prefix}.slope_upper99"), json!(fit.slope_upper(Z99)));
    metrics.insert(format!("{prefix}.r_squared"), json!(fit.r_squared));
    metrics.insert(format!("{prefix}.chi2"), json!(fit.chi2));
    metrics.insert(format!("{prefix}.dof"), json!(fit.dof));
}

fn single_k(p: &Params) -> Result<u64, CliError> {
    Ok(p.usize("k")? as u64)
}

fn decay_verdict(series: &DecaySeries, min_r2: f64) -> bool {
    series.fit.decays_at_99() && series.fit.r_squared >= min_r2
}

fn decay(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let ks = p.u64_list("k")?;
    let js = p.opt_usize_list("j")?.unwrap_or_else(|| vec![1]);
    let ns = p.usize_list("n_list")?;
    let levels = stats::ceil_log_levels(&ns);
    let range = p.bool_or("range", false)?;
    let table = stats::decay_rates(model, &ks, &js, &ns, range.then_some(levels.as_slice()), p.usize("R")?, seed)
        .map_err(core)?;
    let mut rows = Vec::new();
    let mut metrics = BTreeMap::new();
    let mut pass = true;
    for ((k, j), s) in &table.point {
        let label = format!("k={k};j={j}");
        rows.extend(series_rows(&label, &s.estimates));
        fit_metrics(&mut metrics, &label, &s.fit);
        pass &= decay_verdict(s, 0.98);
    }
    let mut agree = true;
    for (i, (_, a)) in table.point.iter().enumerate() {
        for (_, b) in &table.point[i + 1..] {
            agree &= a.fit.agrees_with(&b.fit, 3.0);
        }
    }
    metrics.insert("pairwise_agree".into(), json!(agree));
    pass &= agree;
    if let Some(r) = &table.range {
        rows.extend(series_rows("range", &r.estimates));
        fit_metrics(&mut metrics, "range", &r.fit);
        let ok = r.fit.agrees_with(&table.point[0].1.fit, 3.0);
        metrics.insert("range_agrees".into(), json!(ok));
        pass &= ok;
    }
    Ok(Outcome { rows, pass, metrics })
}

fn extinction(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let k = single_k(p)?;
    let s = stats::extinction_decay(model, k, &p.usize_list("n_list")?, p.usize("R")?, seed).map_err(core)?;
    let mut metrics = BTreeMap::new();
    fit_metrics(&mut metrics, "extinction", &s.fit);
    Ok(Outcome { rows: series_rows("P(Z_n=0)", &s.estimates), pass: decay_verdict(&s, 0.95), metrics })
}

fn lowerdev(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let k = single_k(p)?;
    let theta = p.f64_or("theta", walk_stats(model).mu / 2.0)?;
    let ld = stats::lower_deviation(
        model,
        k,
        theta,
        &p.usize_list("n_list")?,
        p.usize("R")?,
        p.usize_or("exact_limit", 512)?,
        seed,
    )
    .map_err(core)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("theta".into(), json!(theta));
    metrics.insert("mu".into(), json!(ld.mu));
    fit_metrics(&mut metrics, "lowerdev", &ld.series.fit);
    Ok(Outcome {
        rows: series_rows("P(1<=Z_n<=e^(theta n))", &ld.series.estimates),
        pass: decay_verdict(&ld.series, 0.95),
        metrics,
    })
}

fn harmonic(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let k = single_k(p)?;
    let method = match p.str_or("method", "bracket")? {
        "bracket" => HarmonicMethod::Bracket { max_cutoff: p.usize_or("K", 1024)? },
        "mellin" => HarmonicMethod::Mellin,
        "constrained" => HarmonicMethod::Constrained { floor: p.u64_or("floor", 1)? },
        other => {
            return Err(CliError::Config(format!("harmonic: method `{other}` must be bracket, mellin or constrained")))
        }
    };
    let ns = p.usize_list("n_list")?;
    let mut rows = Vec::new();
    let mut metrics = BTreeMap::new();
    let mut pass = true;
    for alpha in p.f64_list("alpha")? {
        let rep = stats::harmonic_moment(model, k, alpha, &ns, p.usize("R")?, seed, method).map_err(core)?;
        let label = format!("alpha={alpha}");
        rows.extend(series_rows(&label, &rep.estimates));
        fit_metrics(&mut metrics, &label, &rep.fit);
        pass &= rep.fit.slope < 0.0;
    }
    Ok(Outcome { rows, pass, metrics })
}

fn logmoment(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let j = p.usize_or("j", 1)? as i32;
    let rep =
        stats::log_moment_on_extinction_step(model, single_k(p)?, j, &p.usize_list("n_list")?, p.usize("R")?, seed)
            .map_err(core)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("decreases".into(), json!(rep.decreases));
    metrics.insert("steps".into(), json!(rep.steps));
    metrics.insert("sign_test_p".into(), json!(rep.p_value));
    Ok(Outcome { rows: series_rows(&format!("j={j}"), &rep.estimates), pass: rep.decreasing, metrics })
}

fn clt(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let rows = stats::clt_test(model, single_k(p)?, &p.usize_list("n_list")?, p.usize("R")?, seed).map_err(core)?;
    let first = rows.first().map_or(f64::NAN, |r| r.report.ks_stat);
    let last = rows.last().map_or(f64::NAN, |r| r.report.ks_stat);
    let mut pass = rows.len() >= 2 && last < first;
    let mut metrics = BTreeMap::new();
    if let Some(max) = p.opt_f64("ks_max")? {
        pass &= last < max;
        metrics.insert("ks_max".into(), json!(max));
    }
    metrics.insert("ks_first".into(), json!(first));
    metrics.insert("ks_last".into(), json!(last));
    metrics.insert("attempts".into(), json!(rows.first().map_or(0, |r| r.attempts)));
    let out = rows.iter().map(|r| row("ks", r.n as f64, r.report.ks_stat, 0.0)).collect();
    Ok(Outcome { rows: out, pass, metrics })
}

fn edgeworth(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let k = single_k(p)?;
    let n = *p.usize_list("n_list")?.last().ok_or_else(|| CliError::Config("edgeworth: empty n_list".into()))?;
    let (g3, phi, reports) =
        stats::edgeworth_medians(model, k, n, p.usize("R")?, p.usize_or("seeds", 5)?, seed).map_err(core)?;
    let mut rows = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        rows.push(row("sqrt_n_D_G3", i as f64, r.rows[0].scaled_g3(), 0.0));
        rows.push(row("sqrt_n_D_Phi", i as f64, r.rows[0].scaled_phi(), 0.0));
        rows.push(row("b_hat", i as f64, r.shift.b_hat, r.shift.std_error));
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("n".into(), json!(n));
    metrics.insert("median_sqrt_n_D_G3".into(), json!(g3));
    metrics.insert("median_sqrt_n_D_Phi".into(), json!(phi));
    if let Some(on) = p.opt_usize("oracle_n")? {
        let o =
            stats::edgeworth_exact_oracle(model, k, on, p.usize_or("oracle_R", 2000)?, reports[0].shift.b_hat, seed)
                .map_err(core)?;
        metrics.insert("oracle_n".into(), json!(on));
        metrics.insert("oracle_D_G3".into(), json!(o.d_g3));
        metrics.insert("oracle_D_Phi".into(), json!(o.d_phi));
    }
    Ok(Outcome { rows, pass: g3 < phi, metrics })
}

fn phi(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let k = single_k(p)?;
    let ns = p.usize_list("n_list")?;
    let check_n = p.opt_usize_list("check_n")?.unwrap_or_default();
    let mut s_list = p.f64_list("s_list")?;
    if !check_n.is_empty() && !s_list.contains(&0.0) {
        s_list.insert(0, 0.0);
    }
    let rep = stats::phi_convergence(model, k, &s_list, &ns, p.usize("R")?, seed).map_err(core)?;
    let mut rows = Vec::new();
    let mut metrics = BTreeMap::new();
    let mut pass = true;
    for s in &rep.series {
        for r in &s.rows {
            rows.push(row(format!("s={};abs_phi", s.s), r.n as f64, r.phi.norm(), r.std_error));
            rows.push(row(format!("s={};diff", s.s), r.n as f64, r.diff, 0.0));
        }
        if s.s != 0.0 {
            let slope = s.diff_fit.as_ref().map_or(f64::NAN, |f| f.slope);
            metrics.insert(format!("s={}.diff_slope", s.s), json!(slope));
            pass &= slope < 0.0;
        }
    }
    if !check_n.is_empty() {
        let zero = rep.series.iter().find(|s| s.s == 0.0).expect("s = 0 series");
        let ext = stats::extinction_decay(model, k, &check_n, p.usize_or("check_R", 10_000)?, seed).map_err(core)?;
        let mut worst: f64 = 0.0;
        for (n, e) in &ext.estimates {
            let r = zero
                .rows
                .iter()
                .find(|r| r.n == *n)
                .ok_or_else(|| CliError::Config(format!("phi: check_n entry {n} is not in n_list")))?;
            worst = worst.max((r.phi.re - (1.0 - e.estimate)).abs() / r.std_error.hypot(e.std_error));
        }
        metrics.insert("phi0_max_sigma".into(), json!(worst));
        pass &= worst <= 3.0;
    }
    Ok(Outcome { rows, pass, metrics })
}

fn renewal(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let log_y = match (p.opt_f64_list("y_list")?, p.opt_f64_list("log_y_list")?) {
        (Some(ys), None) => {
            if ys.iter().any(|y| y.is_nan() || *y <= 0.0) {
                return Err(CliError::Config("renewal: y_list entries must be positive".into()));
            }
            ys.iter().map(|y| y.ln()).collect::<Vec<f64>>()
        }
        (None, Some(ls)) => ls,
        _ => return Err(CliError::Config("renewal: give exactly one of y_list, log_y_list".into())),
    };
    let rep = stats::renewal_count(
        model,
        single_k(p)?,
        &log_y,
        p.f64("B")?,
        p.f64("C")?,
        p.opt_usize("n_max")?,
        p.usize("R")?,
        seed,
    )
    .map_err(core)?;
    let tol = p.f64_or("tolerance", 0.05)?;
    let worst = rep.rows.iter().map(|r| (r.visits.estimate - rep.target).abs() / rep.target).fold(0.0, f64::max);
    let mut metrics = BTreeMap::new();
    metrics.insert("target".into(), json!(rep.target));
    metrics.insert("n_max".into(), json!(rep.n_max));
    metrics.insert("traversal_n".into(), json!(rep.traversal_n));
    metrics.insert("oscillation".into(), json!(rep.oscillation()));
    metrics.insert("max_relative_error".into(), json!(worst));
    let rows = rep.rows.iter().map(|r| row("visits", r.log_y, r.visits.estimate, r.visits.std_error)).collect();
    Ok(Outcome { rows, pass: worst <= tol, metrics })
}

fn delta(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let k = single_k(p)?;
    let ns = p.usize_list("n_list")?;
    let rs = p.opt_f64_list("r")?.unwrap_or_else(|| vec![0.0]);
    let exponent = p.f64("p")?;
    let mut rows = Vec::new();
    let mut metrics = BTreeMap::new();
    let mut pass = ns.len() >= 2;
    for r in rs {
        let label = format!("r={r};p={exponent}");
        let mut est = Vec::new();
        for &n in &ns {
            let d = delta_records(model, k, n, p.usize("R")?, exponent, r, seed).map_err(core)?;
            rows.push(row(&label, n as f64, d.weighted_abs_dev.estimate, d.weighted_abs_dev.std_error));
            est.push(d.weighted_abs_dev.estimate);
        }
        let ok = est.len() >= 2 && est.last() < est.first();
        metrics.insert(format!("{label}.decreases"), json!(ok));
        pass &= ok;
    }
    Ok(Outcome { rows, pass, metrics })
}

fn minima(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let truncation = p.u64_or("truncation", 10)?;
    let truncated: f64 = model.atoms().iter().map(|a| a.weight * a.offspring.truncated_mean(truncation).ln()).sum();
    let drift = match (p.opt_f64("drift")?, p.opt_f64("drift_fraction")?) {
        (Some(_), Some(_)) => return Err(CliError::Config("minima: give at most one of drift, drift_fraction".into())),
        (Some(d), None) => Some(d),
        (None, Some(f)) => Some(f * truncated),
        (None, None) => None,
    };
    let cfg = MinimaConfig {
        truncation,
        drift,
        density: p.opt_f64("density")?,
        horizon_factor: p.usize_or("horizon_factor", 4)?,
        pilot_walks: p.usize_or("pilot_walks", 2000)?,
    };
    let mut rows = Vec::new();
    let mut probs = Vec::new();
    let mut metrics = BTreeMap::new();
    for n in p.usize_list("n_list")? {
        let d = minima_density_check(model, &cfg, n, p.usize("R")?, seed).map_err(core)?;
        rows.push(row("P(few minima)", n as f64, d.probability, d.std_error));
        rows.push(row("horizon_overcount", n as f64, d.horizon_overcount, 0.0));
        metrics.insert("drift".into(), json!(d.drift));
        metrics.insert("density".into(), json!(d.density));
        metrics.insert("truncated_mean".into(), json!(d.truncated_mean));
        probs.push(d.probability);
    }
    let pass = probs.len() >= 2 && probs.windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome { rows, pass, metrics })
}

fn exactlaw(model: &EnvironmentModel, p: &Params, seed: u64) -> Result<Outcome, CliError> {
    let k = single_k(p)?;
    let n = p.usize("n")?;
    let cutoff = p.usize_or("K", 64)?;
    let m = p.usize_or("M", 1024)?;
    let env = sample_env(model, n, derive(seed, seed::TAG_ENV, 0)).map_err(core)?;
    let series = quenched_law_series(&env, k, cutoff).map_err(core)?;
    let dft = quenched_law_dft(&env, k, m).map_err(core)?;
    let allowed = series.tail_mass + dft.tail_mass + 1e-9;
    let worst = series.coeffs.iter().zip(&dft.coeffs).map(|(a, b)| (a - b).abs() - allowed).fold(f64::MIN, f64::max);
    let mut rows: Vec<Row> = series.coeffs.iter().enumerate().map(|(j, c)| row("series", j as f64, *c, 0.0)).collect();
    rows.extend(dft.coeffs.iter().enumerate().map(|(j, c)| row("dft", j as f64, *c, dft.tail_mass)));
    let mut metrics = BTreeMap::new();
    metrics.insert("series_tail".into(), json!(series.tail_mass));
    metrics.insert("dft_tail_bound".into(), json!(dft.tail_mass));
    metrics.insert("max_excess".into(), json!(worst));
    Ok(Outcome { rows, pass: worst <= 0.0, metrics })
}
