//! Expected number of generations spent in a window `[e^B y, e^C y]`.

use serde::{Deserialize, Serialize};

use crate::env_model::EnvironmentModel;
use crate::error::{Error, Result};
use crate::pgf_engine::Estimate;
use crate::rwalk::walk_stats;
use crate::simulator::simulate_batch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalRow {
    pub log_y: f64,
    pub visits: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalReport {
    pub b: f64,
    pub c: f64,
    pub n_max: usize,
    /// `(C - B) / μ`.
    pub target: f64,
    /// Smallest `n` with `log(e^C y_max) + 6σ√n < nμ`.
    pub traversal_n: usize,
    pub rows: Vec<RenewalRow>,
}

impl RenewalReport {
    /// Largest minus smallest per-`y` mean.
    pub fn oscillation(&self) -> f64 {
        let (lo, hi) = self.rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.visits.estimate), hi.max(r.visits.estimate))
        });
        hi - lo
    }
}

/// Smallest `n` with `c + log_y_max + 6σ√n < nμ`.
pub fn traversal_horizon(mu: f64, sigma: f64, reach: f64) -> Option<usize> {
    if !(mu > 0.0) {
        return None;
    }
    (1..=1_000_000).find(|&n| reach + 6.0 * sigma * (n as f64).sqrt() < n as f64 * mu)
}

/// Visits of `log Z_n` to `[B + log y, C + log y]` for `n = 0..=n_max`,
/// averaged over `R` paths and reported per `y`. Without `n_max` the horizon
/// is twice the traversal horizon; a supplied `n_max` below it is an error.
#[allow(clippy::too_many_arguments)]
pub fn renewal_count(
    model: &EnvironmentModel,
    k: u64,
    log_y_list: &[f64],
    b: f64,
    c: f64,
    n_max: Option<usize>,
    reps: usize,
    seed: u64,
) -> Result<RenewalReport> {
    if !(b >= 0.0 && b <= c) {
        return Err(Error::OutOfRange(format!("need 0 <= B <= C, got B = {b}, C = {c}")));
    }
    if log_y_list.is_empty() {
        return Err(Error::OutOfRange("empty y list".into()));
    }
    let stats = walk_stats(model);
    let reach = c + log_y_list.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let traversal_n = traversal_horizon(stats.mu, stats.sigma(), reach)
        .ok_or_else(|| Error::Degenerate("walk has no positive drift".into()))?;
    let n_max = match n_max {
        None => 2 * traversal_n,
        Some(n) if n >= traversal_n => n,
        Some(n) => {
            return Err(Error::OutOfRange(format!(
                "n_max = {n} does not traverse the window; need at least {traversal_n}"
            )))
        }
    };
    let counts = simulate_batch(model, k, n_max, reps, seed, |_, p| {
        log_y_list
            .iter()
            .map(|&ly| p.log_z.iter().filter(|&&lz| lz >= b + ly && lz <= c + ly).count() as f64)
            .collect::<Vec<f64>>()
    })?;
    let rows = log_y_list
        .iter()
        .enumerate()
        .map(|(i, &log_y)| RenewalRow {
            log_y,
            visits: Estimate::from_values(&counts.iter().map(|r| r[i]).collect::<Vec<_>>(), &[]),
        })
        .collect();
    Ok(RenewalReport { b, c, n_max, target: (c - b) / stats.mu, traversal_n, rows })
}
