//! The associated random walk `S_n = log m_1 + ... + log m_n`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::env_model::{sample_atom_indices, EnvironmentModel};
use crate::error::{Error, Result};
use crate::seed;

/// `E[m_1^{is}]`, summed exactly over the atoms.
pub fn lambda(model: &EnvironmentModel, s: f64) -> Complex64 {
    model.log_means().into_iter().map(|(w, x)| w * Complex64::from_polar(1.0, s * x)).sum()
}

/// Cumulants of `X = log m_1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkStats {
    pub mu: f64,
    pub sigma2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
}

impl WalkStats {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

pub fn walk_stats(model: &EnvironmentModel) -> WalkStats {
    let xs = model.log_means();
    let mu: f64 = xs.iter().map(|(w, x)| w * x).sum();
    // Central moments give the cumulants directly.
    let central = |p: i32| xs.iter().map(|(w, x)| w * (x - mu).powi(p)).sum::<f64>();
    let c2 = central(2).max(0.0);
    let c3 = central(3);
    let c4 = central(4);
    WalkStats { mu, sigma2: c2, kappa3: c3, kappa4: c4 - 3.0 * c2 * c2 }
}

/// Indices `ν(0) = 0 < ν(1) < ...` with `S_k > S_{ν(j)}` for every later
/// `k` in the sequence. The last index never qualifies except as `ν(0)`.
pub fn prospective_minima(walk: &[f64]) -> Vec<usize> {
    let len = walk.len();
    if len == 0 {
        return Vec::new();
    }
    let mut later_min = vec![f64::INFINITY; len];
    for i in (0..len - 1).rev() {
        later_min[i] = walk[i + 1].min(later_min[i + 1]);
    }
    let mut out = vec![0];
    out.extend((1..len.saturating_sub(1)).filter(|&i| later_min[i] > walk[i]));
    out
}

/// Tuning of [`minima_density_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimaConfig {
    /// Offspring laws are truncated at this level before taking means.
    pub truncation: u64,
    /// Subtracted drift `ε_drift`; half the truncated mean when absent.
    pub drift: Option<f64>,
    /// Density threshold `ε`; `0.75 / Ê[ν(1)]` from pilot walks when absent.
    pub density: Option<f64>,
    pub horizon_factor: usize,
    pub pilot_walks: usize,
}

impl Default for MinimaConfig {
    fn default() -> Self {
        Self { truncation: 10, drift: None, density: None, horizon_factor: 4, pilot_walks: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimaDensity {
    pub n: usize,
    pub walks: usize,
    pub truncated_mean: f64,
    pub drift: f64,
    pub density: f64,
    pub mean_first_minimum: Option<f64>,
    /// Empirical `P(#{j : ν(j) <= n} < ε n)`.
    pub probability: f64,
    pub std_error: f64,
    pub mean_count: f64,
    /// Mean number of counted minima that a horizon twice as long rejects.
    pub horizon_overcount: f64,
}

/// Log truncated means of the atoms.
fn truncated_increments(model: &EnvironmentModel, level: u64) -> Vec<f64> {
    model.atoms().iter().map(|a| a.offspring.truncated_mean(level).ln()).collect()
}

fn drifted_walk(model: &EnvironmentModel, incr: &[f64], drift: f64, len: usize, seed: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(len + 1);
    let mut s = 0.0;
    out.push(s);
    for a in sample_atom_indices(model, len, seed) {
        s += incr[a] - drift;
        out.push(s);
    }
    out
}

fn count_upto(minima: &[usize], n: usize) -> usize {
    minima.iter().take_while(|&&i| i <= n).count()
}

/// Simulates `S̆_i = S̄_i - ε_drift i` for the truncated walk and estimates
/// how often it has fewer than `ε n` prospective minima up to `n`. Minima
/// are located on a horizon of `horizon_factor * n` steps.
pub fn minima_density_check(
    model: &EnvironmentModel,
    cfg: &MinimaConfig,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<MinimaDensity> {
    if reps < 2 || n < 1 {
        return Err(Error::OutOfRange("need n >= 1 and at least 2 walks".into()));
    }
    let incr = truncated_increments(model, cfg.truncation);
    let truncated_mean: f64 = model.atoms().iter().zip(&incr).map(|(a, x)| a.weight * x).sum();
    let drift = cfg.drift.unwrap_or(0.5 * truncated_mean);
    if !(truncated_mean - drift > 0.0) || drift < 0.0 {
        return Err(Error::Degenerate(format!("drift after truncation {} is not positive", truncated_mean - drift)));
    }
    let horizon = cfg.horizon_factor.max(1) * n;
    let (density, mean_first_minimum) = match cfg.density {
        Some(e) => (e, None),
        None => {
            let firsts: Vec<f64> = (0..cfg.pilot_walks.max(2))
                .into_par_iter()
                .map(|r| {
                    let w = drifted_walk(model, &incr, drift, horizon, seed::derive(seed, seed::TAG_PILOT, r as u64));
                    prospective_minima(&w).get(1).copied().unwrap_or(horizon) as f64
                })
                .collect();
            let m = firsts.iter().sum::<f64>() / firsts.len() as f64;
            (0.75 / m, Some(m))
        }
    };
    let rows: Vec<(f64, f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let w = drifted_walk(model, &incr, drift, 2 * horizon, seed::derive(seed, seed::TAG_REPLICATION, r as u64));
            let count = count_upto(&prospective_minima(&w[..=horizon]), n);
            let long = count_upto(&prospective_minima(&w), n);
            let below = ((count as f64) < density * n as f64) as u8 as f64;
            (below, count as f64, (count - long) as f64)
        })
        .collect();
    let r = reps as f64;
    let probability = rows.iter().map(|x| x.0).sum::<f64>() / r;
    Ok(MinimaDensity {
        n,
        walks: reps,
        truncated_mean,
        drift,
        density,
        mean_first_minimum,
        probability,
        std_error: (probability * (1.0 - probability) / r).sqrt(),
        mean_count: rows.iter().map(|x| x.1).sum::<f64>() / r,
        horizon_overcount: rows.iter().map(|x| x.2).sum::<f64>() / r,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeworthSpec {
    pub order: u32,
    pub shift_b: f64,
    pub stats: WalkStats,
}

impl EdgeworthSpec {
    pub fn new(stats: WalkStats, shift_b: f64) -> Self {
        Self { order: 3, shift_b, stats }
    }

    fn check(&self) -> Result<f64> {
        if self.order != 3 {
            return Err(Error::OutOfRange(format!("Edgeworth order {} is not supported", self.order)));
        }
        if !(self.stats.sigma2 > 0.0) {
            return Err(Error::Degenerate("sigma2 = 0".into()));
        }
        Ok(self.stats.sigma())
    }

    /// `P_3(x) = κ3/(6σ³) (x² - 1) + b/σ`.
    pub fn p3(&self, x: f64) -> Result<f64> {
        let sigma = self.check()?;
        Ok(self.skew_coeff(sigma) * (x * x - 1.0) + self.shift_b / sigma)
    }

    fn skew_coeff(&self, sigma: f64) -> f64 {
        self.stats.kappa3 / (6.0 * sigma.powi(3))
    }

    /// `sup_x |φ(x) P_3(x)|` on `[-8, 8]`, so `|G_3 - Φ| <= n^{-1/2}` times this.
    pub fn correction_sup(&self) -> Result<f64> {
        let normal = std_normal();
        let mut best: f64 = 0.0;
        for i in 0..=16_000 {
            let x = -8.0 + i as f64 * 1e-3;
            best = best.max((normal.pdf(x) * self.p3(x)?).abs());
        }
        Ok(best)
    }

    /// Smallest `n` with `G_3` nondecreasing on `[lo, hi]`. Since
    /// `G_3'(x) = φ(x)(1 - n^{-1/2}(P_3'(x) - x P_3(x)))`, it is
    /// `ceil(max(P_3' - x P_3)^2)`.
    pub fn monotone_threshold(&self, lo: f64, hi: f64) -> Result<usize> {
        let sigma = self.check()?;
        let c = self.skew_coeff(sigma);
        let steps = 10_000;
        let mut worst: f64 = 0.0;
        for i in 0..=steps {
            let x = lo + (hi - lo) * i as f64 / steps as f64;
            worst = worst.max(2.0 * c * x - x * self.p3(x)?);
        }
        Ok((worst * worst).ceil().max(1.0) as usize)
    }
}

pub(crate) fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// `G_3(x) = Φ(x) - φ(x) n^{-1/2} P_3(x)`.
pub fn edgeworth_g3(x: f64, n: usize, spec: &EdgeworthSpec) -> Result<f64> {
    if n == 0 {
        return Err(Error::OutOfRange("n must be >= 1".into()));
    }
    let normal = std_normal();
    Ok(normal.cdf(x) - normal.pdf(x) * spec.p3(x)? / (n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CramerReport {
    pub sup_abs_lambda: f64,
    pub argsup: f64,
    pub flag: bool,
}

/// Grid maximum of `|λ(s)|` over `|s| ∈ [1, s_max]`; `grid` points are
/// spread evenly. `|λ(-s)| = |λ(s)|`, so only `s > 0` is scanned.
pub fn cramer_check(model: &EnvironmentModel, s_max: f64, grid: usize) -> Result<CramerReport> {
    if !(s_max >= 1.0) {
        return Err(Error::OutOfRange(format!("s_max = {s_max} must be >= 1")));
    }
    let points = grid.max(2);
    let mut best = (0.0, 1.0);
    for i in 0..points {
        let s = 1.0 + (s_max - 1.0) * i as f64 / (points - 1) as f64;
        let v = lambda(model, s).norm();
        if v > best.0 {
            best = (v, s);
        }
    }
    Ok(CramerReport { sup_abs_lambda: best.0, argsup: best.1, flag: best.0 <= 1.0 - 1e-3 })
}
