//! Exponential decay of small values, extinction and lower deviations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{decay_points, fit_decay_shared, DecayFit, MIN_FIT_N};
use crate::env_model::{sample_env, EnvPath, EnvironmentModel};
use crate::error::{Error, Result};
use crate::pgf_engine::{quenched_factors, Bounded, Estimate};
use crate::rwalk::walk_stats;
use crate::seed;
use crate::simulator::simulate_batch;

fn check_n_list(n_list: &[usize], min: usize) -> Result<usize> {
    if n_list.is_empty() {
        return Err(Error::OutOfRange("empty n list".into()));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::OutOfRange("n list must be strictly increasing".into()));
    }
    if n_list[0] < min {
        return Err(Error::OutOfRange(format!("smallest n must be >= {min}")));
    }
    Ok(*n_list.last().unwrap())
}

/// Per-replication outputs of [`conditional_replicates`]:
/// `rows[r][n_index][slot]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Replicates {
    pub rows: Vec<Vec<Vec<Bounded>>>,
}

impl Replicates {
    /// `table[n_index][slot]` averaged over replications.
    pub fn estimates(&self) -> Vec<Vec<Estimate>> {
        let horizons = self.rows.first().map_or(0, |r| r.len());
        (0..horizons)
            .map(|i| {
                let width = self.rows[0][i].len();
                (0..width)
                    .map(|c| {
                        let v: Vec<f64> = self.rows.iter().map(|row| row[i][c].value).collect();
                        let b: Vec<f64> = self.rows.iter().map(|row| row[i][c].bound).collect();
                        Estimate::from_values(&v, &b)
                    })
                    .collect()
            })
            .collect()
    }

    /// `values[r][n_index]` for one output slot.
    pub fn slot(&self, c: usize) -> Vec<Vec<f64>> {
        self.rows.iter().map(|row| row.iter().map(|v| v[c].value).collect()).collect()
    }
}

/// Conditional Monte Carlo over environments for several horizons at once.
/// Replication `r` draws one environment of the largest length with seed
/// `derive(seed, TAG_ENV, r)` and evaluates `f` on each prefix, so all
/// horizons share the environment draws.
pub fn conditional_replicates<F>(
    model: &EnvironmentModel,
    n_list: &[usize],
    reps: usize,
    seed: u64,
    f: F,
) -> Result<Replicates>
where
    F: Fn(&EnvPath, usize) -> Result<Vec<Bounded>> + Sync,
{
    if reps < 2 {
        return Err(Error::OutOfRange(format!("need at least 2 environment replications, got {reps}")));
    }
    let n_max = n_list.iter().copied().max().unwrap_or(0);
    let rows = (0..reps)
        .into_par_iter()
        .map(|r| {
            let env = sample_env(model, n_max, seed::derive(seed, seed::TAG_ENV, r as u64))?;
            n_list.iter().map(|&n| f(&env.prefix(n), n)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(Replicates { rows })
}

/// [`conditional_replicates`] reduced to `table[n_index][slot]`.
pub fn conditional_table<F>(
    model: &EnvironmentModel,
    n_list: &[usize],
    reps: usize,
    seed: u64,
    f: F,
) -> Result<Vec<Vec<Estimate>>>
where
    F: Fn(&EnvPath, usize) -> Result<Vec<Bounded>> + Sync,
{
    Ok(conditional_replicates(model, n_list, reps, seed, f)?.estimates())
}

fn checked_points(n_list: &[usize], est: impl Iterator<Item = Estimate>) -> Result<Vec<(usize, f64, f64)>> {
    n_list
        .iter()
        .zip(est)
        .map(|(&n, e)| {
            if e.bound > 0.0 && e.bound >= e.estimate {
                return Err(Error::Degenerate(format!(
                    "tail bound {} dominates estimate {} at n = {n}",
                    e.bound, e.estimate
                )));
            }
            Ok((n, e.estimate, e.std_error))
        })
        .collect()
}

/// Per-horizon estimates and the fit through them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub label: String,
    pub estimates: Vec<(usize, Estimate)>,
    pub fit: DecayFit,
}

fn series(
    label: String,
    n_list: &[usize],
    est: Vec<Estimate>,
    replicates: &[Vec<f64>],
    min_n: usize,
) -> Result<DecaySeries> {
    let rows = checked_points(n_list, est.iter().copied())?;
    let fit = fit_decay_shared(&decay_points(&rows)?, min_n, replicates)?;
    Ok(DecaySeries { label, estimates: n_list.iter().copied().zip(est).collect(), fit })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    /// One series per `(k, j)` for `P_k(Z_n = j)`.
    pub point: Vec<((u64, usize), DecaySeries)>,
    /// `P_1(1 <= Z_n <= k_n)` when levels were supplied.
    pub range: Option<DecaySeries>,
}

impl DecayTable {
    pub fn get(&self, k: u64, j: usize) -> Option<&DecaySeries> {
        self.point.iter().find(|(key, _)| *key == (k, j)).map(|(_, s)| s)
    }
}

/// `log P̂_k(Z_n = j)` against `n` for every `(k, j)` pair, from one backward
/// pass per environment and horizon. `range_levels[i]` is `k_n` for
/// `n_list[i]`.
pub fn decay_rates(
    model: &EnvironmentModel,
    ks: &[u64],
    js: &[usize],
    n_list: &[usize],
    range_levels: Option<&[usize]>,
    reps: usize,
    seed: u64,
) -> Result<DecayTable> {
    check_n_list(n_list, 2)?;
    if let Some(levels) = range_levels {
        if levels.len() != n_list.len() || levels.contains(&0) {
            return Err(Error::OutOfRange("range levels must be positive, one per n".into()));
        }
    }
    let cutoff = js.iter().copied().chain(range_levels.into_iter().flatten().copied()).max().unwrap_or(1).max(1);
    let pairs: Vec<(u64, usize)> = ks.iter().flat_map(|&k| js.iter().map(move |&j| (k, j))).collect();
    let reps_table = conditional_replicates(model, n_list, reps, seed, |env, n| {
        let factors = quenched_factors(env, cutoff)?;
        let mut out = Vec::with_capacity(pairs.len() + 1);
        let mut last_k = None;
        let mut law = None;
        for &(k, j) in &pairs {
            if last_k != Some(k) {
                law = Some(factors.law(k)?);
                last_k = Some(k);
            }
            out.push(Bounded { value: law.as_ref().unwrap().coeffs[j], bound: 0.0 });
        }
        if let Some(levels) = range_levels {
            let i = n_list.iter().position(|&m| m == n).unwrap();
            let one = factors.law(1)?;
            out.push(Bounded { value: one.coeffs[1..=levels[i]].iter().sum(), bound: 0.0 });
        }
        Ok(out)
    })?;
    let table = reps_table.estimates();
    let column = |c: usize| table.iter().map(|row| row[c]).collect::<Vec<_>>();
    let point = pairs
        .iter()
        .enumerate()
        .map(|(c, &(k, j))| {
            let s = series(format!("P_{k}(Z_n={j})"), n_list, column(c), &reps_table.slot(c), MIN_FIT_N)?;
            Ok(((k, j), s))
        })
        .collect::<Result<Vec<_>>>()?;
    let range = match range_levels {
        Some(_) => {
            let c = pairs.len();
            Some(series("P_1(1<=Z_n<=k_n)".into(), n_list, column(c), &reps_table.slot(c), MIN_FIT_N)?)
        }
        None => None,
    };
    Ok(DecayTable { point, range })
}

pub fn decay_rate(
    model: &EnvironmentModel,
    k: u64,
    j: usize,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<DecaySeries> {
    let t = decay_rates(model, &[k], &[j], n_list, None, reps, seed)?;
    Ok(t.point.into_iter().next().unwrap().1)
}

/// `⌈log n⌉` for each horizon, at least 1.
pub fn ceil_log_levels(n_list: &[usize]) -> Vec<usize> {
    n_list.iter().map(|&n| ((n as f64).ln().ceil() as usize).max(1)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperRow {
    pub n: usize,
    pub m: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub combined_se: f64,
    pub pass: bool,
}

/// Compares `P̂_1(Z_{n+m} = 1)` with `P̂_1(Z_n = 1) P̂_1(Z_m = 1)`.
pub fn supermultiplicativity_check(
    model: &EnvironmentModel,
    pairs: &[(usize, usize)],
    reps: usize,
    seed: u64,
) -> Result<Vec<SuperRow>> {
    let mut horizons: Vec<usize> = pairs.iter().flat_map(|&(n, m)| [n, m, n + m]).collect();
    horizons.sort_unstable();
    horizons.dedup();
    if horizons.first() == Some(&0) {
        return Err(Error::OutOfRange("horizons must be >= 1".into()));
    }
    let table = conditional_table(model, &horizons, reps, seed, |env, _| {
        let law = quenched_factors(env, 1)?.law(1)?;
        Ok(vec![Bounded { value: law.coeffs[1], bound: 0.0 }])
    })?;
    let at = |t: usize| table[horizons.binary_search(&t).unwrap()][0];
    pairs
        .iter()
        .map(|&(n, m)| {
            let (l, a, b) = (at(n + m), at(n), at(m));
            if !(a.estimate > 0.0 && b.estimate > 0.0) {
                return Err(Error::Degenerate(format!("zero estimate for ({n}, {m})")));
            }
            let rhs = a.estimate * b.estimate;
            let combined_se =
                (l.std_error.powi(2) + (b.estimate * a.std_error).powi(2) + (a.estimate * b.std_error).powi(2)).sqrt();
            Ok(SuperRow { n, m, lhs: l.estimate, rhs, combined_se, pass: l.estimate >= rhs - 3.0 * combined_se })
        })
        .collect()
}

/// `P̂_k(Z_n = 0)` against `n`.
pub fn extinction_decay(
    model: &EnvironmentModel,
    k: u64,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<DecaySeries> {
    check_n_list(n_list, 1)?;
    let table = conditional_replicates(model, n_list, reps, seed, |env, _| {
        let law = quenched_factors(env, 1)?.law(k)?;
        Ok(vec![Bounded { value: law.coeffs[0], bound: 0.0 }])
    })?;
    let est = table.estimates().into_iter().map(|r| r[0]).collect();
    series(format!("P_{k}(Z_n=0)"), n_list, est, &table.slot(0), MIN_FIT_N)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventMethod {
    /// Exact quenched law averaged over environments.
    Exact,
    /// Indicator averaged over simulated paths.
    Simulation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerDeviation {
    pub theta: f64,
    pub mu: f64,
    pub levels: Vec<usize>,
    pub methods: Vec<EventMethod>,
    pub series: DecaySeries,
}

/// `P̂_k(1 <= Z_n <= e^{θ n})` against `n`. Horizons whose level exceeds
/// `exact_limit` are estimated from `reps` simulated paths instead.
pub fn lower_deviation(
    model: &EnvironmentModel,
    k: u64,
    theta: f64,
    n_list: &[usize],
    reps: usize,
    exact_limit: usize,
    seed: u64,
) -> Result<LowerDeviation> {
    check_n_list(n_list, 1)?;
    let mu = walk_stats(model).mu;
    if !(theta > 0.0 && theta < mu) {
        return Err(Error::OutOfRange(format!("theta = {theta} must lie in (0, mu = {mu})")));
    }
    let levels: Vec<usize> = n_list.iter().map(|&n| (theta * n as f64).exp().floor() as usize).collect();
    let methods: Vec<EventMethod> =
        levels.iter().map(|&l| if l <= exact_limit { EventMethod::Exact } else { EventMethod::Simulation }).collect();
    let exact_ns: Vec<usize> =
        n_list.iter().zip(&methods).filter(|(_, m)| **m == EventMethod::Exact).map(|(n, _)| *n).collect();
    let level_of = |n: usize| levels[n_list.iter().position(|&m| m == n).unwrap()];
    let exact = if exact_ns.is_empty() {
        None
    } else {
        Some(conditional_replicates(model, &exact_ns, reps, seed, |env, n| {
            let level = level_of(n);
            let law = quenched_factors(env, level.max(1))?.law(k)?;
            Ok(vec![Bounded { value: law.coeffs[1..=level].iter().sum(), bound: 0.0 }])
        })?)
    };
    let exact_values = exact.as_ref().map(|t| t.slot(0));
    let exact_est = exact.as_ref().map(|t| t.estimates()).unwrap_or_default();
    // Simulated horizons use their own path streams; replication r of every
    // column still lines up so the slope error sees each path once.
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n_list.len());
    let mut est = Vec::with_capacity(n_list.len());
    let mut e = 0;
    for (&n, m) in n_list.iter().zip(&methods) {
        match m {
            EventMethod::Exact => {
                est.push(exact_est[e][0]);
                columns.push(exact_values.as_ref().unwrap().iter().map(|r| r[e]).collect());
                e += 1;
            }
            EventMethod::Simulation => {
                let ln_level = (level_of(n) as f64).ln();
                let hits = simulate_batch(model, k, n, reps, seed::derive(seed, seed::TAG_PATH, n as u64), |_, p| {
                    let lz = p.log_z[n];
                    (lz > f64::NEG_INFINITY && lz <= ln_level + 1e-12) as u8 as f64
                })?;
                est.push(Estimate::from_values(&hits, &[]));
                columns.push(hits);
            }
        }
    }
    let replicates: Vec<Vec<f64>> = (0..reps).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
    let series = series(format!("P_{k}(1<=Z_n<=e^(theta n))"), n_list, est, &replicates, MIN_FIT_N)?;
    Ok(LowerDeviation { theta, mu, levels, methods, series })
}
