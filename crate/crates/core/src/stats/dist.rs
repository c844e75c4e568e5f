//! Survival-conditioned laws of `log Z_n`: CLT, location shift and the
//! first Edgeworth correction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use super::decay::conditional_table;
use super::fit::{grid_distance, ks_report, KsReport, KsTarget};
use crate::env_model::EnvironmentModel;
use crate::error::{Error, Result};
use crate::pgf_engine::{quenched_law_adaptive, Bounded};
use crate::rwalk::{edgeworth_g3, std_normal, walk_stats, EdgeworthSpec, WalkStats};
use crate::seed;
use crate::simulator::simulate_annealed;

/// Surviving paths at each horizon: `(log Z_n, S_n)` of the first `target`
/// survivors in replication order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivorSample {
    pub n_list: Vec<usize>,
    pub values: Vec<Vec<(f64, f64)>>,
    /// Paths simulated to collect them.
    pub attempts: usize,
}

/// Simulates annealed paths `derive(seed, TAG_REPLICATION, r)` for
/// `r = 0, 1, ...` until every horizon has `target` survivors.
pub fn survivor_sample(
    model: &EnvironmentModel,
    k: u64,
    n_list: &[usize],
    target: usize,
    seed: u64,
) -> Result<SurvivorSample> {
    if n_list.is_empty() || target == 0 {
        return Err(Error::OutOfRange("need horizons and a positive survivor target".into()));
    }
    let n_max = *n_list.iter().max().unwrap();
    let max_attempts = 100 * target;
    let mut values: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(target); n_list.len()];
    let mut attempts = 0;
    while values.iter().any(|v| v.len() < target) {
        if attempts >= max_attempts {
            return Err(Error::Insufficient(format!("fewer than {target} survivors after {attempts} paths")));
        }
        let missing = values.iter().map(|v| target - v.len().min(target)).max().unwrap();
        let batch = missing.max(64);
        let rows: Vec<Vec<Option<(f64, f64)>>> = (attempts..attempts + batch)
            .into_par_iter()
            .map(|r| {
                let (env, path) =
                    simulate_annealed(model, k, n_max, seed::derive(seed, seed::TAG_REPLICATION, r as u64))?;
                let walk = env.walk();
                Ok(n_list.iter().map(|&n| path.survived_at[n].then(|| (path.log_z[n], walk[n]))).collect())
            })
            .collect::<Result<_>>()?;
        attempts += batch;
        for row in rows {
            for (slot, v) in values.iter_mut().zip(row) {
                if let Some(x) = v {
                    if slot.len() < target {
                        slot.push(x);
                    }
                }
            }
        }
    }
    Ok(SurvivorSample { n_list: n_list.to_vec(), values, attempts })
}

fn standardized(values: &[(f64, f64)], n: usize, stats: &WalkStats) -> Vec<f64> {
    let scale = (n as f64).sqrt() * stats.sigma();
    values.iter().map(|(lz, _)| (lz - n as f64 * stats.mu) / scale).collect()
}

fn nondegenerate(model: &EnvironmentModel) -> Result<WalkStats> {
    let stats = walk_stats(model);
    if !(stats.sigma2 > 0.0) {
        return Err(Error::Degenerate("Var(log m_1) = 0".into()));
    }
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub n: usize,
    pub report: KsReport,
    pub attempts: usize,
}

/// KS distance between `(log Z_n - nμ)/(√n σ)` on `R` survivors and `Φ`,
/// for each horizon, all from one set of paths.
pub fn clt_test(model: &EnvironmentModel, k: u64, n_list: &[usize], reps: usize, seed: u64) -> Result<Vec<CltRow>> {
    let stats = nondegenerate(model)?;
    let sample = survivor_sample(model, k, n_list, reps, seed)?;
    n_list
        .iter()
        .zip(&sample.values)
        .map(|(&n, v)| {
            Ok(CltRow {
                n,
                report: ks_report(standardized(v, n, &stats), KsTarget::NormalCdf, n)?,
                attempts: sample.attempts,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftEstimate {
    pub k: u64,
    pub b_hat: f64,
    pub std_error: f64,
    /// `(n, mean, std_error)` of `log Z_n - S_n` over survivors.
    pub per_n: Vec<(usize, f64, f64)>,
    /// Slope of the residual means over the fitted horizons.
    pub drift_slope: f64,
    pub drift_se: f64,
}

/// `b̂`, the limit of `Ê[log Z_n | Z_n > 0] - nμ`. Each path contributes
/// `log Z_n - S_n`, whose mean differs from `log Z_n - nμ` only through
/// `E[S_n - nμ | Z_n > 0]`, which vanishes as extinction becomes rare, while
/// its variance stays bounded in `n`. The constant is the weighted mean
/// over the larger half of the horizons.
pub fn estimate_shift(
    model: &EnvironmentModel,
    k: u64,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<ShiftEstimate> {
    if n_list.len() < 2 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::OutOfRange("need at least two increasing horizons".into()));
    }
    let sample = survivor_sample(model, k, n_list, reps, seed)?;
    let per_n: Vec<(usize, f64, f64)> = n_list
        .iter()
        .zip(&sample.values)
        .map(|(&n, v)| {
            let d: Vec<f64> = v.iter().map(|(lz, s)| lz - s).collect();
            let e = crate::pgf_engine::Estimate::from_values(&d, &[]);
            (n, e.estimate, e.std_error)
        })
        .collect();
    let tail = &per_n[per_n.len() / 2..];
    let tail = if tail.len() < 2 { &per_n[per_n.len() - 2..] } else { tail };
    let (b_hat, std_error) = weighted_mean(tail);
    let (drift_slope, drift_se) = weighted_slope(tail);
    if (drift_slope.abs() > 3.0 * drift_se) && drift_se > 0.0 || (drift_se == 0.0 && drift_slope.abs() > 1e-12) {
        return Err(Error::Degenerate(format!(
            "residual drift {drift_slope} +- {drift_se} per generation; shift has not converged"
        )));
    }
    Ok(ShiftEstimate { k, b_hat, std_error, per_n, drift_slope, drift_se })
}

fn weights(rows: &[(usize, f64, f64)]) -> Vec<f64> {
    if rows.iter().all(|r| r.2 == 0.0) {
        vec![1.0; rows.len()]
    } else {
        let floor = rows.iter().map(|r| r.2).filter(|e| *e > 0.0).fold(f64::INFINITY, f64::min);
        rows.iter().map(|r| r.2.max(floor).powi(-2)).collect()
    }
}

fn weighted_mean(rows: &[(usize, f64, f64)]) -> (f64, f64) {
    let w = weights(rows);
    let sw: f64 = w.iter().sum();
    let m = rows.iter().zip(&w).map(|(r, w)| w * r.1).sum::<f64>() / sw;
    let se = if rows.iter().all(|r| r.2 == 0.0) { 0.0 } else { sw.sqrt().recip() };
    (m, se)
}

fn weighted_slope(rows: &[(usize, f64, f64)]) -> (f64, f64) {
    let w = weights(rows);
    let sw: f64 = w.iter().sum();
    let xm = rows.iter().zip(&w).map(|(r, w)| w * r.0 as f64).sum::<f64>() / sw;
    let ym = rows.iter().zip(&w).map(|(r, w)| w * r.1).sum::<f64>() / sw;
    let sxx: f64 = rows.iter().zip(&w).map(|(r, w)| w * (r.0 as f64 - xm).powi(2)).sum();
    let sxy: f64 = rows.iter().zip(&w).map(|(r, w)| w * (r.0 as f64 - xm) * (r.1 - ym)).sum();
    let se = if rows.iter().all(|r| r.2 == 0.0) { 0.0 } else { sxx.sqrt().recip() };
    (sxy / sxx, se)
}

/// Grid used for the sup-norm distances.
pub const GRID: (f64, f64, f64) = (-4.0, 4.0, 0.01);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeworthRow {
    pub n: usize,
    pub survivors: usize,
    /// `sup_x |F̂_n - G_3|` on the grid.
    pub d_g3: f64,
    /// `sup_x |F̂_n - Φ|` on the grid.
    pub d_phi: f64,
}

impl EdgeworthRow {
    pub fn scaled_g3(&self) -> f64 {
        (self.n as f64).sqrt() * self.d_g3
    }

    pub fn scaled_phi(&self) -> f64 {
        (self.n as f64).sqrt() * self.d_phi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeworthReport {
    pub spec: EdgeworthSpec,
    pub shift: ShiftEstimate,
    pub rows: Vec<EdgeworthRow>,
}

/// Horizons used for `b̂` when testing at largest horizon `n`.
pub fn shift_horizons(n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = [n / 8, n / 4, n / 2, n].into_iter().filter(|&m| m >= 1).collect();
    v.dedup();
    if v.len() < 2 {
        v = vec![n, n + 1];
    }
    v
}

/// Sup-norm distances of the empirical law of the standardized `log Z_n`
/// to `G_3` and to `Φ`. `b̂` comes from [`estimate_shift`] on the stream
/// `derive(seed, TAG_SHIFT, 0)`.
pub fn edgeworth_test(
    model: &EnvironmentModel,
    k: u64,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<EdgeworthReport> {
    let stats = nondegenerate(model)?;
    let n_max = *n_list.iter().max().ok_or_else(|| Error::OutOfRange("empty n list".into()))?;
    let shift = estimate_shift(model, k, &shift_horizons(n_max), reps, seed::derive(seed, seed::TAG_SHIFT, 0))?;
    let spec = EdgeworthSpec::new(stats, shift.b_hat);
    let sample = survivor_sample(model, k, n_list, reps, seed)?;
    let normal = std_normal();
    let rows = n_list
        .iter()
        .zip(&sample.values)
        .map(|(&n, v)| {
            let mut z = standardized(v, n, &stats);
            z.sort_by(f64::total_cmp);
            let (lo, hi, step) = GRID;
            Ok(EdgeworthRow {
                n,
                survivors: z.len(),
                d_g3: grid_distance(&z, |x| edgeworth_g3(x, n, &spec).unwrap_or(f64::NAN), lo, hi, step),
                d_phi: grid_distance(&z, |x| normal.cdf(x), lo, hi, step),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EdgeworthReport { spec, shift, rows })
}

/// Median over `seeds` independent runs (root seeds
/// `derive(seed, TAG_SEED_SET, i)`) of `√n D_n` against `G_3` and `Φ` at `n`.
pub fn edgeworth_medians(
    model: &EnvironmentModel,
    k: u64,
    n: usize,
    reps: usize,
    seeds: usize,
    seed: u64,
) -> Result<(f64, f64, Vec<EdgeworthReport>)> {
    let reports = (0..seeds as u64)
        .map(|i| edgeworth_test(model, k, &[n], reps, seed::derive(seed, seed::TAG_SEED_SET, i)))
        .collect::<Result<Vec<_>>>()?;
    let g3: Vec<f64> = reports.iter().map(|r| r.rows[0].scaled_g3()).collect();
    let phi: Vec<f64> = reports.iter().map(|r| r.rows[0].scaled_phi()).collect();
    Ok((median(g3), median(phi), reports))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Exact small-`n` comparison: the annealed law of the standardized
/// `log Z_n` given survival, from exact quenched laws over `reps`
/// environments, against `G_3` and `Φ` on the grid.
pub fn edgeworth_exact_oracle(
    model: &EnvironmentModel,
    k: u64,
    n: usize,
    reps: usize,
    shift_b: f64,
    seed: u64,
) -> Result<EdgeworthRow> {
    let stats = nondegenerate(model)?;
    let spec = EdgeworthSpec::new(stats, shift_b);
    let (lo, hi, step) = GRID;
    let points = ((hi - lo) / step).round() as usize;
    let scale = (n as f64).sqrt() * stats.sigma();
    let thresholds: Vec<f64> =
        (0..=points).map(|g| (n as f64 * stats.mu + (lo + g as f64 * step) * scale).exp()).collect();
    let table = conditional_table(model, &[n], reps, seed, |env, _| {
        let law = quenched_law_adaptive(env, k)?;
        let survive = 1.0 - law.coeffs[0];
        let mut out = Vec::with_capacity(points + 2);
        out.push(Bounded { value: survive, bound: 0.0 });
        let mut cum = 0.0;
        let mut j = 1;
        for &t in &thresholds {
            while j < law.coeffs.len() && (j as f64) <= t {
                cum += law.coeffs[j];
                j += 1;
            }
            out.push(Bounded { value: cum, bound: law.tail_mass });
        }
        Ok(out)
    })?;
    let row = &table[0];
    let survive = row[0].estimate;
    let normal = std_normal();
    let mut d_g3: f64 = 0.0;
    let mut d_phi: f64 = 0.0;
    for g in 0..=points {
        let x = lo + g as f64 * step;
        let f = row[g + 1].estimate / survive;
        d_g3 = d_g3.max((f - edgeworth_g3(x, n, &spec)?).abs());
        d_phi = d_phi.max((f - normal.cdf(x)).abs());
    }
    Ok(EdgeworthRow { n, survivors: reps, d_g3, d_phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{EnvAtom, Law};

    fn spread() -> EnvironmentModel {
        EnvironmentModel::new(vec![
            EnvAtom { weight: 0.5, offspring: Law::Poisson { mean: 1.5 }, immigration: Law::Poisson { mean: 0.4 } },
            EnvAtom { weight: 0.5, offspring: Law::Poisson { mean: 3.0 }, immigration: Law::Poisson { mean: 0.4 } },
        ])
        .unwrap()
    }

    #[test]
    fn degenerate_sigma_is_rejected() {
        let m = EnvironmentModel::single(Law::Poisson { mean: 2.0 }, Law::Poisson { mean: 0.5 }).unwrap();
        assert!(matches!(clt_test(&m, 1, &[10], 100, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn deterministic_shift_is_zero() {
        let m = EnvironmentModel::single(Law::PointMass { count: 2 }, Law::PointMass { count: 0 }).unwrap();
        let s = estimate_shift(&m, 1, &[5, 10, 20, 40], 50, 1).unwrap();
        assert!(s.b_hat.abs() < 1e-12);
        assert_eq!(s.std_error, 0.0);
    }

    #[test]
    fn survivor_sample_is_deterministic() {
        let a = survivor_sample(&spread(), 1, &[5, 20], 300, 4).unwrap();
        let b = survivor_sample(&spread(), 1, &[5, 20], 300, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|v| v.len() == 300));
    }

    #[test]
    fn clt_improves_with_n() {
        let rows = clt_test(&spread(), 1, &[10, 200], 4000, 2).unwrap();
        assert!(rows[1].report.ks_stat < rows[0].report.ks_stat, "{rows:?}");
    }

    #[test]
    fn shift_is_stable_across_seed_sets() {
        let a = estimate_shift(&spread(), 1, &[50, 100, 150, 200], 3000, 10).unwrap();
        let b = estimate_shift(&spread(), 1, &[50, 100, 150, 200], 3000, 11).unwrap();
        assert!((a.b_hat - b.b_hat).abs() < 3.0 * a.std_error.hypot(b.std_error), "{a:?} {b:?}");
    }

    #[test]
    fn exact_oracle_runs() {
        let row = edgeworth_exact_oracle(&spread(), 1, 4, 50, 0.3, 1).unwrap();
        assert!(row.d_g3.is_finite() && row.d_phi.is_finite());
        assert!(row.d_g3 <= 1.0 && row.d_phi <= 1.0);
    }
}
