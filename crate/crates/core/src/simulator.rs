//! Path simulation of the process with and without immigration.
//!
//! Given the environment, `Z_n` is the sum of `Z_{n-1}` i.i.d. draws from
//! `f_n` plus one draw from `h_n`. Sums of many offspring are drawn from
//! their exact aggregated law. Once a population exceeds the switch
//! threshold the path continues in log space with a one-step normal
//! approximation; only `log_z` is recorded from then on.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env_model::{sample_env, EnvPath, EnvironmentModel, Law};
use crate::error::{Error, Result};
use crate::pgf_engine::Estimate;
use crate::seed;

/// Populations above this are tracked as `log Z` only.
pub const DEFAULT_SWITCH: u64 = 1 << 50;
/// Below this many parents, offspring are drawn one by one.
const AGGREGATE_ABOVE: u64 = 16;

impl Law {
    /// One draw. Linear-fractional: 0 with probability `a`, else
    /// `1 + Geometric(b)` where `P(G = g) = (1-b) b^g`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            Law::PointMass { count } => *count,
            Law::Poisson { mean } => poisson(*mean, rng),
            Law::LinearFractional { a, b } => {
                if rng.random::<f64>() < *a {
                    0
                } else {
                    1 + geometric_failures(*b, rng)
                }
            }
            Law::Finite { probabilities } => {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                for (j, p) in probabilities.iter().enumerate() {
                    cum += p;
                    if u < cum {
                        return j as u64;
                    }
                }
                probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u64
            }
        }
    }

    /// Sum of `z` independent draws, from the exact law of the sum when `z`
    /// is large. Returns `None` on `u64` overflow.
    pub fn sample_sum<R: Rng + ?Sized>(&self, z: u64, rng: &mut R) -> Option<u64> {
        if z <= AGGREGATE_ABOVE {
            let mut acc: u64 = 0;
            for _ in 0..z {
                acc = acc.checked_add(self.sample(rng))?;
            }
            return Some(acc);
        }
        match self {
            Law::PointMass { count } => z.checked_mul(*count),
            Law::Poisson { mean } => Some(poisson(z as f64 * mean, rng)),
            Law::LinearFractional { a, b } => {
                let nonzero = binomial(z, 1.0 - a, rng);
                // Each nonzero draw is 1 + Geometric(b); the geometric part of
                // the sum is negative binomial, drawn as a gamma-Poisson mixture.
                if nonzero == 0 || *b == 0.0 {
                    return Some(nonzero);
                }
                let scale = b / (1.0 - b);
                let rate = Gamma::new(nonzero as f64, scale).ok()?.sample(rng);
                nonzero.checked_add(poisson(rate, rng))
            }
            Law::Finite { probabilities } => {
                let mut remaining = z;
                let mut mass_left = 1.0;
                let mut acc: u64 = 0;
                for (j, p) in probabilities.iter().enumerate() {
                    if remaining == 0 {
                        break;
                    }
                    let count = if mass_left <= *p || j + 1 == probabilities.len() {
                        remaining
                    } else {
                        binomial(remaining, (p / mass_left).clamp(0.0, 1.0), rng)
                    };
                    acc = acc.checked_add((j as u64).checked_mul(count)?)?;
                    remaining -= count;
                    mass_left -= p;
                }
                Some(acc)
            }
        }
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).map(|d| d.sample(rng)).unwrap_or(0)
}

fn geometric_failures<R: Rng + ?Sized>(b: f64, rng: &mut R) -> u64 {
    if b <= 0.0 {
        return 0;
    }
    // Inverse CDF: P(G >= g) = b^g.
    let u: f64 = 1.0 - rng.random::<f64>();
    (u.ln() / b.ln()).floor() as u64
}

/// One trajectory `Z_0, ..., Z_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    /// Exact counts for generations `0..z.len()`; shorter than `log_z` after
    /// a switch to log-space tracking.
    pub z: Vec<u64>,
    /// `log Z_i` for every generation (`-inf` when extinct).
    pub log_z: Vec<f64>,
    pub survived_at: Vec<bool>,
    /// First generation simulated in log space.
    pub switched_at: Option<usize>,
    pub env_seed: Option<u64>,
    pub path_seed: u64,
}

impl PathSample {
    pub fn generations(&self) -> usize {
        self.log_z.len() - 1
    }

    pub fn exact(&self, i: usize) -> Option<u64> {
        self.z.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub switch_threshold: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { switch_threshold: DEFAULT_SWITCH }
    }
}

pub fn simulate_quenched(env: &EnvPath, k: u64, seed: u64) -> PathSample {
    simulate_quenched_with(env, k, seed, &SimOptions::default())
}

/// Generation `g` draws from ChaCha stream `g` of the key derived from `seed`.
pub fn simulate_quenched_with(env: &EnvPath, k: u64, seed: u64, opts: &SimOptions) -> PathSample {
    let n = env.len();
    let base = seed::rng(seed);
    let mut z = Vec::with_capacity(n + 1);
    let mut log_z = Vec::with_capacity(n + 1);
    let mut survived_at = Vec::with_capacity(n + 1);
    z.push(k);
    log_z.push(ln_count(k));
    survived_at.push(k > 0);

    let mut current = Some(k);
    let mut current_log = ln_count(k);
    let mut switched_at = None;
    for (i, step) in env.steps.iter().enumerate() {
        let g = i + 1;
        let mut rng = seed::generation_rng(&base, g as u64);
        let next = current.filter(|&c| c <= opts.switch_threshold).and_then(|c| {
            let offspring = step.offspring.sample_sum(c, &mut rng)?;
            offspring.checked_add(step.immigration.sample(&mut rng))
        });
        match next {
            Some(v) => {
                z.push(v);
                current = Some(v);
                current_log = ln_count(v);
            }
            None => {
                switched_at.get_or_insert(g);
                current = None;
                current_log = log_step(current_log, &step.offspring, &step.immigration, &mut rng);
            }
        }
        log_z.push(current_log);
        survived_at.push(current_log > f64::NEG_INFINITY);
    }
    PathSample { z, log_z, survived_at, switched_at, env_seed: None, path_seed: seed }
}

fn ln_count(v: u64) -> f64 {
    if v == 0 {
        f64::NEG_INFINITY
    } else {
        (v as f64).ln()
    }
}

/// `log Z_n` from `log Z_{n-1}` under `Z_n ≈ N(Z m + λ, Z v_f + v_h)`.
fn log_step<R: Rng + ?Sized>(log_prev: f64, f: &Law, h: &Law, rng: &mut R) -> f64 {
    let m = f.mean();
    let lam = h.mean();
    let inv = (-log_prev).exp();
    let log_mean = log_prev + (m + lam * inv).ln();
    let rel_sd = ((f.variance() * inv + h.variance() * inv * inv).sqrt()) / (m + lam * inv);
    let eps: f64 = rng.sample(StandardNormal);
    log_mean + (rel_sd * eps).max(-0.5).ln_1p()
}

/// Samples an environment and then a path; the two use independent
/// streams derived from `seed`.
pub fn simulate_annealed(model: &EnvironmentModel, k: u64, n: usize, seed: u64) -> Result<(EnvPath, PathSample)> {
    let (env_seed, path_seed) = seed::split_env_path(seed);
    let env = sample_env(model, n, env_seed)?;
    let mut path = simulate_quenched(&env, k, path_seed);
    path.env_seed = Some(env_seed);
    Ok((env, path))
}

/// Runs `f` on `reps` annealed paths. Path `r` uses root seed
/// `derive(seed, TAG_REPLICATION, r)`; outputs come back in replication order.
pub fn simulate_batch<T, F>(model: &EnvironmentModel, k: u64, n: usize, reps: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&EnvPath, &PathSample) -> T + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let (env, path) = simulate_annealed(model, k, n, seed::derive(seed, seed::TAG_REPLICATION, r as u64))?;
            Ok(f(&env, &path))
        })
        .collect()
}

/// A path split into the founders' line and one line per immigrant cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposedSample {
    /// Classic process started from the `k` founders.
    pub z0: Vec<u64>,
    /// `lines[i-1][t-i]` is the size at generation `t >= i` of the line
    /// founded by the generation-`i` immigrants.
    pub lines: Vec<Vec<u64>>,
    /// Total population, `z[t] = z0[t] + sum_{i<=t} lines[i-1][t-i]`.
    pub z: Vec<u64>,
}

impl DecomposedSample {
    /// `Z^0_{i,t}` for `i = 1..=t`.
    pub fn immig_lines(&self, t: usize) -> Vec<u64> {
        self.lines.iter().take(t).enumerate().map(|(i, line)| line[t - (i + 1)]).collect()
    }
}

fn classic_line<R: Rng + ?Sized>(steps: &[crate::env_model::EnvStep], start: u64, rng: &mut R) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    let mut cur = start;
    out.push(cur);
    for step in steps {
        cur = step
            .offspring
            .sample_sum(cur, rng)
            .ok_or_else(|| Error::Numerical("population overflow in decomposed simulation".into()))?;
        out.push(cur);
    }
    Ok(out)
}

/// Simulates the founders' line and, for each generation `i`, the classic
/// subprocess of the `Y_i` immigrants in the shifted environment. Line `i`
/// uses stream `derive(seed, TAG_LINE, i)`.
pub fn simulate_decomposed(env: &EnvPath, k: u64, seed: u64) -> Result<DecomposedSample> {
    let n = env.len();
    let mut rng0 = seed::rng(seed::derive(seed, seed::TAG_LINE, 0));
    let z0 = classic_line(&env.steps, k, &mut rng0)?;
    let mut lines = Vec::with_capacity(n);
    for i in 1..=n {
        let mut rng = seed::rng(seed::derive(seed, seed::TAG_LINE, i as u64));
        let y = env.steps[i - 1].immigration.sample(&mut rng);
        lines.push(classic_line(&env.steps[i..], y, &mut rng)?);
    }
    let overflow = || Error::Numerical("population overflow in decomposed simulation".into());
    let mut z = Vec::with_capacity(n + 1);
    for t in 0..=n {
        let mut total = z0[t];
        for (i, line) in lines.iter().take(t).enumerate() {
            total = total.checked_add(line[t - (i + 1)]).ok_or_else(overflow)?;
        }
        z.push(total);
    }
    Ok(DecomposedSample { z0, lines, z })
}

/// The ratio `Δ_n = Z_{n+1} / (m_{n+1} Z_n)` on one path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub n: usize,
    pub delta: f64,
    pub log_m_z: f64,
    /// `Z_n > 0`; `delta` and `log_m_z` are NaN otherwise.
    pub valid: bool,
}

pub fn delta_record(env: &EnvPath, path: &PathSample, n: usize) -> DeltaRecord {
    let lz = path.log_z[n];
    if lz == f64::NEG_INFINITY {
        return DeltaRecord { n, delta: f64::NAN, log_m_z: f64::NAN, valid: false };
    }
    let log_m = env.steps[n].offspring.mean().ln();
    let log_m_z = log_m + lz;
    let delta = (path.log_z[n + 1] - log_m_z).exp();
    DeltaRecord { n, delta, log_m_z, valid: true }
}

/// Monte Carlo estimates around `Δ_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub n: usize,
    pub p: f64,
    pub r: f64,
    pub paths: usize,
    pub valid: usize,
    /// `E[|Δ_n - 1|^p; Z_n > 0]`.
    pub abs_dev: Estimate,
    /// `E[|log(m_{n+1} Z_n)|^r |Δ_n - 1|^p; Z_n > 0]`.
    pub weighted_abs_dev: Estimate,
    /// `E[|log Δ_n|; Z_{n+1} > 0, Z_n > 0]`.
    pub abs_log_delta: Estimate,
}

pub fn delta_records(
    model: &EnvironmentModel,
    k: u64,
    n: usize,
    reps: usize,
    p: f64,
    r: f64,
    seed: u64,
) -> Result<DeltaSummary> {
    if reps < 100 {
        return Err(Error::OutOfRange(format!("need at least 100 paths, got {reps}")));
    }
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::OutOfRange(format!("p = {p} must lie in (1,2]")));
    }
    if !(r >= 0.0) {
        return Err(Error::OutOfRange(format!("r = {r} must be >= 0")));
    }
    let rows = simulate_batch(model, k, n + 1, reps, seed, |env, path| {
        let rec = delta_record(env, path, n);
        if !rec.valid {
            return (false, 0.0, 0.0, 0.0);
        }
        let dev = (rec.delta - 1.0).abs().powf(p);
        let weighted = rec.log_m_z.abs().powf(r) * dev;
        let log_delta = if path.survived_at[n + 1] { rec.delta.ln().abs() } else { 0.0 };
        (true, dev, weighted, log_delta)
    })?;
    let valid = rows.iter().filter(|r| r.0).count();
    if valid == 0 {
        return Err(Error::Insufficient(format!("all {reps} paths extinct at generation {n}")));
    }
    let col = |f: fn(&(bool, f64, f64, f64)) -> f64| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        Estimate::from_values(&v, &[])
    };
    Ok(DeltaSummary {
        n,
        p,
        r,
        paths: reps,
        valid,
        abs_dev: col(|r| r.1),
        weighted_abs_dev: col(|r| r.2),
        abs_log_delta: col(|r| r.3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::EnvStep;

    fn pm(j: u64) -> Law {
        Law::PointMass { count: j }
    }

    #[test]
    fn deterministic_paths() {
        let env = EnvPath::constant(pm(1), pm(0), 6).unwrap();
        assert_eq!(simulate_quenched(&env, 7, 3).z, vec![7; 7]);
        let env = EnvPath::constant(pm(2), pm(0), 5).unwrap();
        assert_eq!(simulate_quenched(&env, 1, 3).z, vec![1, 2, 4, 8, 16, 32]);
        let env = EnvPath::constant(pm(1), pm(1), 4).unwrap();
        let path = simulate_quenched(&env, 1, 3);
        assert_eq!(path.z, vec![1, 2, 3, 4, 5]);
        assert!(path.survived_at.iter().all(|&s| s));
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let model = EnvironmentModel::single(Law::Poisson { mean: 1.5 }, Law::Poisson { mean: 0.5 }).unwrap();
        let a = simulate_annealed(&model, 1, 20, 9).unwrap();
        let b = simulate_annealed(&model, 1, 20, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_annealed(&model, 1, 20, 10).unwrap();
        assert_ne!(a.1.z, c.1.z);
    }

    #[test]
    fn aggregated_sums_have_right_moments() {
        let mut rng = seed::rng(5);
        for law in [
            Law::LinearFractional { a: 0.3, b: 0.55 },
            Law::Poisson { mean: 2.2 },
            Law::Finite { probabilities: vec![0.2, 0.5, 0.3] },
        ] {
            let z = 1000u64;
            let reps = 4000;
            let draws: Vec<f64> = (0..reps).map(|_| law.sample_sum(z, &mut rng).unwrap() as f64).collect();
            let mean = draws.iter().sum::<f64>() / reps as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let m = z as f64 * law.mean();
            let v = z as f64 * law.variance();
            assert!((mean - m).abs() < 4.0 * (v / reps as f64).sqrt(), "{law:?} mean {mean} vs {m}");
            assert!((var / v - 1.0).abs() < 0.1, "{law:?} var {var} vs {v}");
        }
    }

    #[test]
    fn single_lf_draws_match_masses() {
        let law = Law::LinearFractional { a: 0.2, b: 0.5 };
        let mut rng = seed::rng(8);
        let reps = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..reps {
            let v = law.sample(&mut rng) as usize;
            if v < 4 {
                counts[v] += 1;
            }
        }
        for (j, c) in counts.iter().enumerate() {
            let p = law.mass(j as u64);
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((*c as f64 / reps as f64 - p).abs() < 4.0 * se, "j={j}");
        }
    }

    #[test]
    fn log_space_switch() {
        let env = EnvPath::constant(Law::Poisson { mean: 3.0 }, Law::Poisson { mean: 0.4 }, 60).unwrap();
        let path = simulate_quenched_with(&env, 1, 2, &SimOptions { switch_threshold: 1 << 20 });
        let at = path.switched_at.expect("should switch");
        assert_eq!(path.z.len(), at);
        assert_eq!(path.log_z.len(), 61);
        // Growth in log space continues at rate log 3.
        let slope = (path.log_z[60] - path.log_z[at]) / (60 - at) as f64;
        assert!((slope - 3.0f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn decomposition_examples() {
        let env = EnvPath::constant(Law::Poisson { mean: 1.5 }, pm(0), 10).unwrap();
        let d = simulate_decomposed(&env, 3, 1).unwrap();
        assert_eq!(d.z, d.z0);
        assert!(d.immig_lines(10).iter().all(|&v| v == 0));
        let env = EnvPath::constant(pm(1), pm(1), 7).unwrap();
        let d = simulate_decomposed(&env, 0, 1).unwrap();
        assert_eq!(d.z[7], 7);
        assert_eq!(d.z, (0..=7).collect::<Vec<u64>>());
    }

    #[test]
    fn decomposition_identity_on_random_envs() {
        let model = EnvironmentModel::new(vec![
            crate::env_model::EnvAtom {
                weight: 0.5,
                offspring: Law::LinearFractional { a: 0.3, b: 0.55 },
                immigration: Law::Poisson { mean: 0.4 },
            },
            crate::env_model::EnvAtom {
                weight: 0.5,
                offspring: Law::Poisson { mean: 2.2 },
                immigration: Law::Poisson { mean: 0.4 },
            },
        ])
        .unwrap();
        for s in 0..1000u64 {
            let env = sample_env(&model, 12, s).unwrap();
            let d = simulate_decomposed(&env, 2, s).unwrap();
            for t in 0..=12 {
                let sum: u64 = d.z0[t] + d.immig_lines(t).iter().sum::<u64>();
                assert_eq!(sum, d.z[t]);
            }
        }
    }

    #[test]
    fn deterministic_delta_is_one() {
        let model = EnvironmentModel::single(pm(2), pm(0)).unwrap();
        let s = delta_records(&model, 1, 5, 200, 2.0, 1.0, 3).unwrap();
        assert_eq!(s.abs_dev.estimate, 0.0);
        assert_eq!(s.weighted_abs_dev.estimate, 0.0);
        assert_eq!(s.abs_log_delta.estimate, 0.0);
    }

    #[test]
    fn delta_clt_scale() {
        let model = EnvironmentModel::single(Law::Poisson { mean: 2.0 }, pm(0)).unwrap();
        let s = delta_records(&model, 10_000, 0, 2000, 2.0, 0.0, 4).unwrap();
        let expect = 2.0 / (4.0 * 1e4);
        assert!((s.abs_dev.estimate - expect).abs() < 3.0 * s.abs_dev.std_error, "{:?}", s.abs_dev);
        assert!(delta_records(&model, 1, 0, 50, 2.0, 0.0, 4).is_err());
    }

    #[test]
    fn delta_record_invalid_when_extinct() {
        let env =
            EnvPath::new(vec![
                EnvStep { offspring: Law::Finite { probabilities: vec![1.0, 0.0] }, immigration: pm(0) };
                1
            ]);
        assert!(env.is_err());
        let env = EnvPath::constant(Law::LinearFractional { a: 0.9, b: 0.5 }, pm(0), 3).unwrap();
        let path = simulate_quenched(&env, 0, 1);
        assert!(!delta_record(&env, &path, 1).valid);
    }
}
