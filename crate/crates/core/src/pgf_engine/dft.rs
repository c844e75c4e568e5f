use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{quenched_eval_unchecked, LawMethod, QuenchedLaw};
use crate::env_model::{EnvPath, Law};
use crate::error::{Error, Result};

const CHERNOFF_POINTS: usize = 64;

/// Extracts the quenched law from `M` evaluations on the unit circle.
///
/// `coeffs[j]` carries the aliased mass `sum_l P(Z_n = j + lM | xi)`, and
/// `tail_mass` bounds `P(Z_n >= M | xi)` (see [`chernoff_tail`]), which
/// bounds the aliasing of every coefficient.
pub fn quenched_law_dft(env: &EnvPath, k: u64, m: usize) -> Result<QuenchedLaw> {
    if m < 2 || !m.is_power_of_two() {
        return Err(Error::OutOfRange(format!("sample count M = {m} must be a power of two >= 2")));
    }
    let mut buf: Vec<Complex64> = (0..m)
        .map(|t| {
            let w = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * t as f64 / m as f64);
            quenched_eval_unchecked(env, k, w)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let scale = 1.0 / m as f64;
    let mut coeffs: Vec<f64> = buf.iter().map(|c| c.re * scale).collect();
    super::series::sanitize(&mut coeffs)?;
    Ok(QuenchedLaw { n: env.len(), k, coeffs, tail_mass: chernoff_tail(env, k, m), method: LawMethod::DftExtraction })
}

/// Bound on `P(Z_n >= M | xi)`: the smaller of Markov's `E[Z_n | xi] / M`
/// and the Chernoff bound `inf_{s > 1} g_n(k,s) s^{-M}`, with `log s`
/// log-spaced over `[1e-10, 10]`.
pub fn chernoff_tail(env: &EnvPath, k: u64, m: usize) -> f64 {
    let (lo, hi) = (1e-10f64.ln(), 10f64.ln());
    let markov = (quenched_mean(env, k) / m as f64).ln();
    let mut best = markov.min(0.0);
    for i in 0..CHERNOFF_POINTS {
        let tau = (lo + (hi - lo) * i as f64 / (CHERNOFF_POINTS - 1) as f64).exp();
        if let Some(log_g) = log_pgf_above_one(env, k, tau) {
            best = best.min(log_g - m as f64 * tau);
        }
    }
    best.exp()
}

/// `E[Z_n | xi]` from the forward mean recursion.
fn quenched_mean(env: &EnvPath, k: u64) -> f64 {
    env.steps.iter().fold(k as f64, |z, step| z * step.offspring.mean() + step.immigration.mean())
}

/// `log g_n(k, e^tau)`, or `None` where some factor diverges. Carries
/// `1 - s` through the recursion as in the Laplace evaluation.
fn log_pgf_above_one(env: &EnvPath, k: u64, tau: f64) -> Option<f64> {
    let finite_at = |law: &Law, u: f64| match law {
        Law::LinearFractional { b, .. } => 1.0 - b + b * u > 0.0,
        _ => true,
    };
    let mut u = -tau.exp_m1();
    let mut acc = 0.0;
    for step in env.steps.iter().rev() {
        if !finite_at(&step.immigration, u) || !finite_at(&step.offspring, u) {
            return None;
        }
        acc += step.immigration.log_pgf_complement(u);
        u = step.offspring.pgf_complement(u);
        if !u.is_finite() || !acc.is_finite() {
            return None;
        }
    }
    let out = acc + k as f64 * (-u).ln_1p();
    out.is_finite().then_some(out)
}
