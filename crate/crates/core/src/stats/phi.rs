//! Convergence of `φ_{k,n}(s) = E_k[Z_n^{is}; Z_n > 0] / λ(s)^n`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fit::{decay_points, fit_decay, DecayFit};
use crate::env_model::EnvironmentModel;
use crate::error::{Error, Result};
use crate::rwalk::lambda;
use crate::simulator::simulate_batch;

/// Smallest `|λ(s)|^n` accepted before the division amplifies noise too much.
pub const MIN_LAMBDA_POWER: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiRow {
    pub s: f64,
    pub n: usize,
    pub phi: Complex64,
    /// Standard error of `|φ̂|` from the per-path spread.
    pub std_error: f64,
    /// `|φ̂_{k,n+1}(s) - φ̂_{k,n}(s)|`.
    pub diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiSeries {
    pub s: f64,
    pub rows: Vec<PhiRow>,
    /// Log-linear fit of the nonzero successive differences; `None` when
    /// fewer than two are nonzero, as for `s = 0` once extinction stops.
    pub diff_fit: Option<DecayFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiReport {
    pub paths: usize,
    pub series: Vec<PhiSeries>,
}

/// `φ̂_{k,n}(s)` from per-path `log Z_n` values (`-inf` when extinct).
pub fn phi_hat(model: &EnvironmentModel, s: f64, n: usize, log_z: &[f64]) -> (Complex64, f64) {
    let lam = lambda(model, s).powi(n as i32);
    let terms: Vec<Complex64> =
        log_z
            .iter()
            .map(|&lz| {
                if lz > f64::NEG_INFINITY {
                    Complex64::from_polar(1.0, s * lz) / lam
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
    let r = terms.len() as f64;
    let mean = terms.iter().sum::<Complex64>() / r;
    let var = terms.iter().map(|t| (t - mean).norm_sqr()).sum::<f64>() / (r - 1.0).max(1.0);
    (mean, (var / r).sqrt())
}

/// Simulates `R` paths to `max(n_list) + 1` and tabulates `φ̂_{k,n}(s)` and
/// `|φ̂_{k,n+1}(s) - φ̂_{k,n}(s)|` on the same paths.
pub fn phi_convergence(
    model: &EnvironmentModel,
    k: u64,
    s_list: &[f64],
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<PhiReport> {
    if n_list.len() < 2 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::OutOfRange("need at least two increasing horizons".into()));
    }
    let n_max = *n_list.last().unwrap() + 1;
    for &s in s_list {
        let lp = lambda(model, s).norm().powi(n_max as i32);
        if lp < MIN_LAMBDA_POWER {
            return Err(Error::OutOfRange(format!("|λ({s})|^{n_max} = {lp} is too small")));
        }
    }
    let paths = simulate_batch(model, k, n_max, reps, seed, |_, p| p.log_z.clone())?;
    let column = |n: usize| paths.iter().map(|p| p[n]).collect::<Vec<f64>>();
    let series = s_list
        .iter()
        .map(|&s| {
            let rows: Vec<PhiRow> = n_list
                .iter()
                .map(|&n| {
                    let (phi, std_error) = phi_hat(model, s, n, &column(n));
                    let (next, _) = phi_hat(model, s, n + 1, &column(n + 1));
                    PhiRow { s, n, phi, std_error, diff: (next - phi).norm() }
                })
                .collect();
            let pts: Vec<(usize, f64, f64)> =
                rows.iter().filter(|r| r.diff > 0.0).map(|r| (r.n, r.diff, 0.0)).collect();
            let diff_fit = if pts.len() >= 2 { Some(fit_decay(&decay_points(&pts)?, 0)?) } else { None };
            Ok(PhiSeries { s, rows, diff_fit })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhiReport { paths: reps, series })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{EnvAtom, Law};

    fn reference() -> EnvironmentModel {
        EnvironmentModel::new(vec![
            EnvAtom {
                weight: 0.5,
                offspring: Law::LinearFractional { a: 0.3, b: 0.55 },
                immigration: Law::Poisson { mean: 0.4 },
            },
            EnvAtom { weight: 0.5, offspring: Law::Poisson { mean: 2.2 }, immigration: Law::Poisson { mean: 0.4 } },
        ])
        .unwrap()
    }

    #[test]
    fn phi_at_zero_is_survival_fraction() {
        let lz = [1.0, f64::NEG_INFINITY, 2.0, 0.0];
        let (p, _) = phi_hat(&reference(), 0.0, 7, &lz);
        assert_eq!(p, Complex64::new(0.75, 0.0));
    }

    #[test]
    fn conjugate_symmetry_is_exact() {
        let lz = [1.3, f64::NEG_INFINITY, 2.7, 0.1, 12.5];
        for n in [1, 5, 40] {
            let (a, _) = phi_hat(&reference(), 0.1, n, &lz);
            let (b, _) = phi_hat(&reference(), -0.1, n, &lz);
            assert_eq!(a, b.conj());
        }
    }

    #[test]
    fn differences_shrink() {
        let ns: Vec<usize> = (5..=25).collect();
        let r = phi_convergence(&reference(), 1, &[0.1], &ns, 20_000, 3).unwrap();
        assert!(r.series[0].diff_fit.as_ref().unwrap().slope < 0.0, "{:?}", r.series[0].diff_fit);
        assert!(phi_convergence(&reference(), 1, &[9.0], &ns, 10, 3).is_err());
    }
}
