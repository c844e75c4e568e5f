//! Truncated power series over nonnegative coefficients.
//!
//! Every routine keeps coefficients `0..=K` only. Because all inputs have
//! nonnegative coefficients, coefficient `j <= K` of a product or of a
//! composition `outer(inner)` depends on inner coefficients `<= j` only, so
//! truncation never perturbs the retained part.

use crate::env_model::Law;
use crate::error::{Error, Result};

/// Coefficients below this are flushed to zero to keep the O(K^2) loops off
/// the subnormal path.
const FLUSH: f64 = 1e-150;
const NEG_TOL: f64 = 1e-12;

/// A finite coefficient sequence with explicit tail-mass accounting.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedPgf {
    pub coeffs: Vec<f64>,
    pub tail_mass: f64,
}

impl TruncatedPgf {
    pub fn from_coeffs(mut coeffs: Vec<f64>) -> Result<Self> {
        sanitize(&mut coeffs)?;
        let total: f64 = coeffs.iter().sum();
        Ok(Self { coeffs, tail_mass: (1.0 - total).max(0.0) })
    }

    pub fn cutoff(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Horner evaluation of the retained part.
    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }
}

/// Clamps tiny negatives, flushes tiny positives, rejects real breakdown.
pub(crate) fn sanitize(c: &mut [f64]) -> Result<()> {
    for (j, v) in c.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite series coefficient at j={j}")));
        }
        if *v < 0.0 {
            if *v < -NEG_TOL {
                return Err(Error::Numerical(format!("series coefficient {v} at j={j} is negative")));
            }
            *v = 0.0;
        } else if *v < FLUSH {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Index of the last nonzero coefficient (0 for the zero series).
#[inline]
fn support(c: &[f64]) -> usize {
    c.iter().rposition(|&v| v != 0.0).unwrap_or(0)
}

/// `sum_i a[i] * b[i]` with four independent lanes so the loop vectorises.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Truncated product `a * b` keeping `0..=k`.
pub fn mul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let len = k + 1;
    let sa = support(a).min(k);
    let sb = support(b).min(k);
    let mut rev_b = vec![0.0; len];
    for j in 0..=sb {
        rev_b[k - j] = b[j];
    }
    let mut out = vec![0.0; len];
    for (m, o) in out.iter_mut().enumerate().take((sa + sb).min(k) + 1) {
        // sum_{i} a_i b_{m-i} over i in [m - sb, min(m, sa)]
        let lo = m.saturating_sub(sb);
        let hi = m.min(sa);
        if lo > hi {
            continue;
        }
        *o = dot(&a[lo..=hi], &rev_b[k - m + lo..=k - m + hi]);
    }
    out
}

/// `a^e` by binary powering.
pub fn pow(a: &[f64], e: u64, k: usize) -> Vec<f64> {
    let mut result = vec![0.0; k + 1];
    result[0] = 1.0;
    if e == 0 {
        return result;
    }
    let mut base: Vec<f64> = a.iter().copied().take(k + 1).collect();
    base.resize(k + 1, 0.0);
    let mut e = e;
    let mut first = true;
    loop {
        if e & 1 == 1 {
            result = if first { base.clone() } else { mul(&result, &base, k) };
            first = false;
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        base = mul(&base, &base, k);
    }
    result
}

/// `exp(u)` for a series with `u_j >= 0` for `j >= 1`, by the recurrence
/// `j E_j = sum_{i=1}^{j} i u_i E_{j-i}`.
pub fn exp(u: &[f64], k: usize) -> Vec<f64> {
    let len = k + 1;
    let su = support(u).min(k);
    let mut out = vec![0.0; len];
    out[0] = u[0].exp();
    if su == 0 {
        return out;
    }
    // rev_iu[k - i] = i * u_i
    let mut rev_iu = vec![0.0; len];
    for i in 1..=su {
        rev_iu[k - i] = i as f64 * u[i];
    }
    for j in 1..len {
        // sum over i in [1, min(j, su)] of i u_i E_{j-i}; index m = j - i in [j - hi, j - 1]
        let hi = j.min(su);
        let lo_m = j - hi;
        let s = dot(&out[lo_m..j], &rev_iu[k - j + lo_m..k]);
        out[j] = s / j as f64;
    }
    out
}

/// Coefficients of `g / (1 - b g)` via `Q_j (1 - b g_0) = g_j + b sum_{i>=1} g_i Q_{j-i}`.
fn geometric_ratio(g: &[f64], b: f64, k: usize) -> Vec<f64> {
    let len = k + 1;
    let sg = support(g).min(k);
    let denom = 1.0 - b * g[0];
    let mut q = vec![0.0; len];
    let mut rev_g = vec![0.0; len];
    for i in 1..=sg {
        rev_g[k - i] = g[i];
    }
    q[0] = g[0] / denom;
    for j in 1..len {
        let hi = j.min(sg);
        let lo_m = j - hi;
        let conv = if hi == 0 { 0.0 } else { dot(&q[lo_m..j], &rev_g[k - j + lo_m..k]) };
        let gj = if j <= sg { g[j] } else { 0.0 };
        q[j] = (gj + b * conv) / denom;
    }
    q
}

/// Coefficients `0..=k` of `outer(inner(s))` for an analytic outer p.g.f.
pub fn compose(outer: &Law, inner: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut out = match outer {
        Law::PointMass { count } => pow(inner, *count, k),
        Law::Poisson { mean } => {
            let mut u: Vec<f64> = inner.iter().take(k + 1).map(|c| mean * c).collect();
            u.resize(k + 1, 0.0);
            u[0] -= mean;
            exp(&u, k)
        }
        Law::LinearFractional { a, b } => {
            let c = (1.0 - a) * (1.0 - b);
            let mut q = geometric_ratio(inner, *b, k);
            for v in q.iter_mut() {
                *v *= c;
            }
            q[0] += a;
            q
        }
        Law::Finite { probabilities } => {
            let mut acc = vec![0.0; k + 1];
            for p in probabilities.iter().rev() {
                acc = mul(&acc, inner, k);
                acc[0] += p;
            }
            acc
        }
    };
    sanitize(&mut out)?;
    Ok(out)
}
