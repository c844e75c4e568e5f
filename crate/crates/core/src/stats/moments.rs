//! Harmonic moments and log-moments on the extinction step.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::decay::conditional_table;
use super::fit::{decay_points, fit_decay, DecayFit, MIN_FIT_N};
use crate::env_model::{EnvPath, EnvironmentModel};
use crate::error::{Error, Result};
use crate::pgf_engine::{quenched_eval_real, quenched_factors, quenched_log_laplace, Bounded, Estimate, QuenchedLaw};
use crate::seed;
use crate::simulator::simulate_batch;

/// `E[Z^{-α}; Z > 0]` from retained coefficients: the first `K` terms plus
/// half of the bracket `[0, (K+1)^{-α} * tail]` for the rest.
pub fn harmonic_from_law(law: &QuenchedLaw, alpha: f64) -> Bounded {
    let head: f64 = law.coeffs.iter().enumerate().skip(1).map(|(j, p)| p * (j as f64).powf(-alpha)).sum();
    let width = ((law.cutoff() + 1) as f64).powf(-alpha) * law.tail_mass;
    let eb = law.coeff_bound() * law.cutoff() as f64;
    Bounded { value: head + 0.5 * width, bound: 0.5 * width + eb }
}

/// Step of the trapezoid rule in `log t`.
const MELLIN_STEP: f64 = 0.125;

/// `E[Z_n^{-α}; Z_n > 0 | ξ]` from
/// `Γ(α)^{-1} ∫ t^α (g_n(k, e^{-t}) - g_n(k, 0)) d log t`.
/// The bound is the gap between step `h` and step `2h`.
pub fn harmonic_mellin(env: &EnvPath, k: u64, alpha: f64) -> Bounded {
    let g0 = quenched_eval_real(env, k, 0.0);
    let growth: f64 = env.steps.iter().map(|s| s.offspring.mean().ln().max(0.0)).sum();
    let lo = (1e-18f64).ln() / alpha - growth - 10.0;
    let hi = 64f64.ln();
    let points = ((hi - lo) / MELLIN_STEP).ceil() as usize;
    let mut fine = 0.0;
    let mut coarse = 0.0;
    for i in 0..=points {
        let v = lo + i as f64 * MELLIN_STEP;
        let t = v.exp();
        let f = (alpha * v).exp() * (quenched_log_laplace(env, k, t).exp() - g0).max(0.0);
        fine += f;
        if i % 2 == 0 {
            coarse += f;
        }
    }
    let scale = 1.0 / gamma(alpha);
    fine *= MELLIN_STEP * scale;
    coarse *= 2.0 * MELLIN_STEP * scale;
    Bounded { value: fine, bound: (fine - coarse).abs() }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HarmonicMethod {
    /// Series law with cutoff doubled from 128 up to `max_cutoff` until the
    /// bracket half-width is below 5% of the estimate.
    Bracket { max_cutoff: usize },
    /// Laplace-transform integral of the quenched p.g.f.
    Mellin,
    /// Paths with `Z_1, ..., Z_n >= floor`.
    Constrained { floor: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicReport {
    pub alpha: f64,
    pub method: HarmonicMethod,
    pub estimates: Vec<(usize, Estimate)>,
    pub fit: DecayFit,
}

fn bracket(env: &EnvPath, k: u64, alpha: f64, max_cutoff: usize) -> Result<Bounded> {
    let mut cutoff = 128.min(max_cutoff).max(1);
    loop {
        let b = harmonic_from_law(&quenched_factors(env, cutoff)?.law(k)?, alpha);
        if b.bound <= 0.05 * b.value || cutoff >= max_cutoff {
            return Ok(b);
        }
        cutoff = (2 * cutoff).min(max_cutoff);
    }
}

/// `Ê_k[Z_n^{-α}; Z_n > 0]` against `n`. The exact methods average a
/// quenched value over environments; the constrained one averages
/// `Z_n^{-α} 1{Z_1, ..., Z_n >= floor}` over simulated paths.
pub fn harmonic_moment(
    model: &EnvironmentModel,
    k: u64,
    alpha: f64,
    n_list: &[usize],
    reps: usize,
    seed: u64,
    method: HarmonicMethod,
) -> Result<HarmonicReport> {
    if !(alpha > 0.0) {
        return Err(Error::OutOfRange(format!("alpha = {alpha} must be > 0")));
    }
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::OutOfRange("n list must be nonempty and strictly increasing".into()));
    }
    let est: Vec<Estimate> = match method {
        HarmonicMethod::Bracket { max_cutoff } => {
            conditional_table(model, n_list, reps, seed, |env, _| Ok(vec![bracket(env, k, alpha, max_cutoff)?]))?
                .into_iter()
                .map(|r| r[0])
                .collect()
        }
        HarmonicMethod::Mellin => {
            conditional_table(model, n_list, reps, seed, |env, _| Ok(vec![harmonic_mellin(env, k, alpha)]))?
                .into_iter()
                .map(|r| r[0])
                .collect()
        }
        HarmonicMethod::Constrained { floor } => {
            let n_max = *n_list.last().unwrap();
            let rows = simulate_batch(model, k, n_max, reps, seed::derive(seed, seed::TAG_PATH, 0), |_, p| {
                let mut out = Vec::with_capacity(n_list.len());
                let floor_log = if floor == 0 { f64::NEG_INFINITY } else { (floor as f64).ln() };
                let mut ok = true;
                let mut idx = 0;
                for g in 1..=n_max {
                    ok &= p.log_z[g] >= floor_log - 1e-12 && p.log_z[g] > f64::NEG_INFINITY;
                    if idx < n_list.len() && n_list[idx] == g {
                        out.push(if ok { (-alpha * p.log_z[g]).exp() } else { 0.0 });
                        idx += 1;
                    }
                }
                out
            })?;
            (0..n_list.len())
                .map(|i| Estimate::from_values(&rows.iter().map(|r| r[i]).collect::<Vec<_>>(), &[]))
                .collect()
        }
    };
    let points = n_list
        .iter()
        .zip(&est)
        .map(|(&n, e)| {
            if e.bound >= e.estimate && e.bound > 0.0 {
                return Err(Error::Degenerate(format!(
                    "bracket half-width {} dominates estimate {} at n = {n}",
                    e.bound, e.estimate
                )));
            }
            Ok((n, e.estimate, e.std_error.hypot(e.bound)))
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_decay(&decay_points(&points)?, MIN_FIT_N.min(n_list[n_list.len().saturating_sub(2)]))?;
    Ok(HarmonicReport { alpha, method, estimates: n_list.iter().copied().zip(est).collect(), fit })
}

/// `E[(log Z_n)^j; Z_{n+1} = 0, Z_n > 0 | ξ]`: the exact law of `Z_n` up to
/// `cutoff` weighted by `P(Z_{n+1} = 0 | Z_n = z, ξ) = f_{n+1}(0)^z h_{n+1}(0)`.
/// `env` has `n + 1` steps.
pub fn log_moment_quenched(env: &EnvPath, k: u64, j_power: i32, cutoff: usize) -> Result<Bounded> {
    let n = env.len() - 1;
    let law = quenched_factors(&env.prefix(n), cutoff)?.law(k)?;
    let last = &env.steps[n];
    let q = last.offspring.mass(0);
    let h0 = last.immigration.mass(0);
    let term = |z: usize| (z as f64).ln().powi(j_power) * q.powi(z as i32);
    let value: f64 = law.coeffs.iter().enumerate().skip(1).map(|(z, p)| p * term(z)).sum::<f64>() * h0;
    let sup_tail = (cutoff + 1..cutoff + 10_000).map(term).fold(0.0, f64::max);
    Ok(Bounded { value, bound: law.tail_mass * sup_tail * h0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogMomentReport {
    pub j_power: i32,
    pub estimates: Vec<(usize, Estimate)>,
    /// Number of strict decreases between consecutive horizons.
    pub decreases: usize,
    pub steps: usize,
    /// One-sided sign-test p-value `P(Bin(steps, 1/2) >= decreases)`.
    pub p_value: f64,
    pub decreasing: bool,
}

pub const LOG_MOMENT_CUTOFF: usize = 64;

/// Exact-quenched estimates of `E_k[(log Z_n)^j; Z_{n+1} = 0, Z_n > 0]` and a
/// sign test for a decreasing trend at level 0.01.
pub fn log_moment_on_extinction_step(
    model: &EnvironmentModel,
    k: u64,
    j_power: i32,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<LogMomentReport> {
    if j_power < 0 {
        return Err(Error::OutOfRange("j must be >= 0".into()));
    }
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::OutOfRange("n list must be nonempty and strictly increasing".into()));
    }
    let horizons: Vec<usize> = n_list.iter().map(|n| n + 1).collect();
    let table = conditional_table(model, &horizons, reps, seed, |env, _| {
        Ok(vec![log_moment_quenched(env, k, j_power, LOG_MOMENT_CUTOFF)?])
    })?;
    let estimates: Vec<(usize, Estimate)> = n_list.iter().copied().zip(table.into_iter().map(|r| r[0])).collect();
    let steps = estimates.len().saturating_sub(1);
    let decreases = estimates.windows(2).filter(|w| w[1].1.estimate < w[0].1.estimate).count();
    let p_value = sign_test_upper(decreases, steps);
    Ok(LogMomentReport { j_power, estimates, decreases, steps, p_value, decreasing: steps > 0 && p_value <= 0.01 })
}

/// `P(Bin(n, 1/2) >= d)`.
pub fn sign_test_upper(d: usize, n: usize) -> f64 {
    let mut c = 1.0f64;
    let mut total = 0.0;
    for i in 0..=n {
        if i >= d {
            total += c;
        }
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    total / 2f64.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{sample_env, EnvAtom, Law};
    use crate::pgf_engine::{quenched_law_series, LawMethod};

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
    fn harmonic_point_mass() {
        let law = QuenchedLaw {
            n: 1,
            k: 1,
            coeffs: vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            tail_mass: 0.0,
            method: LawMethod::SeriesComposition,
        };
        let b = harmonic_from_law(&law, 1.0);
        assert!((b.value - 0.2).abs() < 1e-15 && b.bound == 0.0);
        let env = EnvPath::constant(Law::PointMass { count: 1 }, Law::PointMass { count: 1 }, 4).unwrap();
        let m = harmonic_mellin(&env, 1, 1.0);
        assert!((m.value - 0.2).abs() < 1e-12, "{m:?}");
    }

    #[test]
    fn harmonic_poisson_series_oracle() {
        let mut brute = 0.0;
        let mut term = (-1.5f64).exp();
        for j in 1..200 {
            term *= 1.5 / j as f64;
            brute += term / j as f64;
        }
        let env = EnvPath::constant(Law::Poisson { mean: 1.0 }, Law::Poisson { mean: 0.5 }, 1).unwrap();
        let law = quenched_law_series(&env, 1, 200).unwrap();
        let b = harmonic_from_law(&law, 1.0);
        assert!((b.value - brute).abs() < 1e-10);
        let m = harmonic_mellin(&env, 1, 1.0);
        assert!((m.value - brute).abs() < 1e-10, "{} vs {brute}", m.value);
    }

    #[test]
    fn mellin_inside_bracket() {
        let model = reference();
        for s in 0..20 {
            let env = sample_env(&model, 6, s).unwrap();
            for alpha in [0.5, 1.0] {
                let b = harmonic_from_law(&quenched_law_series(&env, 1, 1024).unwrap(), alpha);
                let m = harmonic_mellin(&env, 1, alpha);
                assert!((m.value - b.value).abs() <= b.bound + 1e-10, "{m:?} {b:?}");
            }
        }
    }

    #[test]
    fn harmonic_decays() {
        let ns: Vec<usize> = (2..=8).collect();
        for method in [HarmonicMethod::Bracket { max_cutoff: 512 }, HarmonicMethod::Mellin] {
            let r = harmonic_moment(&reference(), 1, 1.0, &ns, 40, 1, method).unwrap();
            assert!(r.fit.slope < 0.0, "{method:?}");
        }
        let r = harmonic_moment(&reference(), 1, 0.5, &ns, 2000, 1, HarmonicMethod::Constrained { floor: 1 }).unwrap();
        assert!(r.fit.slope < 0.0);
        assert!(harmonic_moment(&reference(), 1, 0.0, &ns, 10, 1, HarmonicMethod::Mellin).is_err());
    }

    #[test]
    fn log_moment_examples() {
        let forced = EnvironmentModel::single(Law::Poisson { mean: 2.0 }, Law::PointMass { count: 1 }).unwrap();
        let r = log_moment_on_extinction_step(&forced, 1, 1, &[3, 4, 5], 5, 1).unwrap();
        assert!(r.estimates.iter().all(|(_, e)| e.estimate == 0.0));
        let model = reference();
        let ns: Vec<usize> = (3..=12).collect();
        let r = log_moment_on_extinction_step(&model, 1, 1, &ns, 300, 2).unwrap();
        assert!(r.decreasing, "{r:?}");
        let zero = log_moment_on_extinction_step(&model, 1, 0, &[4], 300, 2).unwrap();
        let table = conditional_table(&model, &[5], 300, 2, |env, _| {
            Ok(vec![Bounded { value: quenched_eval_real(env, 1, 0.0), bound: 0.0 }])
        })
        .unwrap();
        assert!(zero.estimates[0].1.estimate <= table[0][0].estimate);
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test_upper(9, 9) - 1.0 / 512.0).abs() < 1e-15);
        assert_eq!(sign_test_upper(0, 5), 1.0);
    }
}
