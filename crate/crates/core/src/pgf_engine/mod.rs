//! Exact quenched law of `Z_n` given the environment.
//!
//! The quenched p.g.f. is
//! `g_n(k, s) = f_{0,n}(s)^k * prod_{i=1}^{n} h_i(f_{i,n}(s))` with
//! `f_{i,n} = f_{i+1} ∘ ... ∘ f_n` and `f_{n,n}(s) = s`. Three routes compute
//! it: scalar backward evaluation ([`quenched_eval`]), truncated series
//! composition ([`quenched_law_series`]) and inverse DFT of circle samples
//! ([`quenched_law_dft`]). [`lf_closed_form`] is a matrix-product oracle for
//! linear-fractional environments.

mod dft;
mod mobius;
pub mod series;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env_model::{sample_env, EnvPath, EnvironmentModel, Law};
use crate::error::{Error, Result};
use crate::seed;

pub use dft::{chernoff_tail, quenched_law_dft};
pub use mobius::{composed_matrix, lf_closed_form};
pub use series::TruncatedPgf;

pub const DEFAULT_CUTOFF: usize = 1024;
pub const MAX_CUTOFF: usize = 1 << 16;
pub const ADAPTIVE_TAIL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LawMethod {
    SeriesComposition,
    DftExtraction,
}

impl LawMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            LawMethod::SeriesComposition => "series",
            LawMethod::DftExtraction => "dft",
        }
    }
}

/// `P_k(Z_n = j | xi)` for `j = 0..=K` plus an upper bound on the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct QuenchedLaw {
    pub n: usize,
    pub k: u64,
    pub coeffs: Vec<f64>,
    pub tail_mass: f64,
    pub method: LawMethod,
}

impl QuenchedLaw {
    pub fn cutoff(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Error bar attached to a single coefficient. Series coefficients are
    /// exact up to rounding; DFT coefficients may carry aliased mass.
    pub fn coeff_bound(&self) -> f64 {
        match self.method {
            LawMethod::SeriesComposition => 0.0,
            LawMethod::DftExtraction => self.tail_mass,
        }
    }

    /// Horner evaluation of the retained coefficients.
    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }
}

fn check_disc(s: Complex64) -> Result<()> {
    if s.norm() > 1.0 + 1e-12 {
        Err(Error::OutOfRange(format!("|s| = {} exceeds 1", s.norm())))
    } else {
        Ok(())
    }
}

/// Scalar evaluation of `g_n(k, s)` by the backward recursion
/// `t_n = s`, `t_{i-1} = f_i(t_i)`.
pub fn quenched_eval(env: &EnvPath, k: u64, s: Complex64) -> Result<Complex64> {
    check_disc(s)?;
    Ok(quenched_eval_unchecked(env, k, s))
}

pub(crate) fn quenched_eval_unchecked(env: &EnvPath, k: u64, s: Complex64) -> Complex64 {
    let mut t = s;
    let mut prod = Complex64::new(1.0, 0.0);
    for step in env.steps.iter().rev() {
        prod *= step.immigration.pgf_unchecked(t);
        t = step.offspring.pgf_unchecked(t);
    }
    prod * t.powu(k as u32)
}

/// Real-argument evaluation, `s` in `[0, 1]`.
pub fn quenched_eval_real(env: &EnvPath, k: u64, s: f64) -> f64 {
    let mut t = s;
    let mut prod = 1.0;
    for step in env.steps.iter().rev() {
        prod *= step.immigration.pgf_real(t);
        t = step.offspring.pgf_real(t);
    }
    prod * t.powi(k as i32)
}

/// `log g_n(k, e^{-t})` for `t >= 0`, carrying `1 - t_i` through the
/// backward recursion so that arguments near 1 keep full precision.
pub fn quenched_log_laplace(env: &EnvPath, k: u64, t: f64) -> f64 {
    let mut u = -(-t).exp_m1();
    let mut acc = 0.0;
    for step in env.steps.iter().rev() {
        acc += step.immigration.log_pgf_complement(u);
        u = step.offspring.pgf_complement(u);
    }
    if k == 0 {
        acc
    } else {
        acc + k as f64 * (-u).ln_1p()
    }
}

/// Truncated series of `f_{0,n}` and of `prod_i h_i(f_{i,n})` for one
/// environment. The law for any initial count `k` follows by one power and
/// one product.
#[derive(Clone, Debug)]
pub struct QuenchedFactors {
    pub n: usize,
    pub f0n: Vec<f64>,
    pub immigration: Vec<f64>,
}

impl QuenchedFactors {
    pub fn cutoff(&self) -> usize {
        self.f0n.len() - 1
    }

    pub fn law(&self, k: u64) -> Result<QuenchedLaw> {
        let cutoff = self.cutoff();
        let mut coeffs = if k == 0 {
            self.immigration.clone()
        } else {
            series::mul(&series::pow(&self.f0n, k, cutoff), &self.immigration, cutoff)
        };
        series::sanitize(&mut coeffs)?;
        let total: f64 = coeffs.iter().sum();
        Ok(QuenchedLaw {
            n: self.n,
            k,
            coeffs,
            tail_mass: (1.0 - total).max(0.0),
            method: LawMethod::SeriesComposition,
        })
    }
}

/// Backward pass over the environment keeping coefficients `0..=cutoff`.
pub fn quenched_factors(env: &EnvPath, cutoff: usize) -> Result<QuenchedFactors> {
    if cutoff < 1 {
        return Err(Error::OutOfRange("series cutoff K must be >= 1".into()));
    }
    let len = cutoff + 1;
    let mut t = vec![0.0; len];
    t[1] = 1.0;
    // Poisson immigration factors multiply into exp(sum_i lambda_i (t_i - 1)).
    let mut exponent = vec![0.0; len];
    let mut product: Option<Vec<f64>> = None;
    for step in env.steps.iter().rev() {
        match &step.immigration {
            Law::PointMass { count: 0 } => {}
            Law::Poisson { mean } => {
                if *mean > 0.0 {
                    exponent[0] += mean * (t[0] - 1.0);
                    for (e, c) in exponent.iter_mut().zip(&t).skip(1) {
                        *e += mean * c;
                    }
                }
            }
            other => {
                let factor = series::compose(other, &t, cutoff)?;
                product = Some(match product {
                    None => factor,
                    Some(p) => {
                        let mut q = series::mul(&p, &factor, cutoff);
                        series::sanitize(&mut q)?;
                        q
                    }
                });
            }
        }
        t = series::compose(&step.offspring, &t, cutoff)?;
    }
    let mut immigration = series::exp(&exponent, cutoff);
    if let Some(p) = product {
        immigration = series::mul(&immigration, &p, cutoff);
    }
    series::sanitize(&mut immigration)?;
    Ok(QuenchedFactors { n: env.len(), f0n: t, immigration })
}

/// Exact coefficients `0..=cutoff` of `g_n(k, ·)` by series composition.
pub fn quenched_law_series(env: &EnvPath, k: u64, cutoff: usize) -> Result<QuenchedLaw> {
    quenched_factors(env, cutoff)?.law(k)
}

/// Series law with the cutoff doubled from 1024 until the tail mass drops
/// below 1e-8 or the cutoff reaches 2^16.
pub fn quenched_law_adaptive(env: &EnvPath, k: u64) -> Result<QuenchedLaw> {
    let mut cutoff = DEFAULT_CUTOFF;
    loop {
        let law = quenched_law_series(env, k, cutoff)?;
        if law.tail_mass < ADAPTIVE_TAIL || cutoff >= MAX_CUTOFF {
            return Ok(law);
        }
        cutoff *= 2;
    }
}

/// A value with an additive error bar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounded {
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawQueries {
    pub p_zero: Bounded,
    pub p_at: Vec<(usize, Bounded)>,
    /// `P(1 <= Z_n <= t)`.
    pub p_range: Bounded,
    pub p_survive: Bounded,
}

pub fn law_queries(law: &QuenchedLaw, j_list: &[usize], t: usize) -> Result<LawQueries> {
    let cutoff = law.cutoff();
    if let Some(&j) = j_list.iter().chain(std::iter::once(&t)).find(|&&j| j > cutoff) {
        return Err(Error::BeyondCutoff { j, cutoff });
    }
    let eb = law.coeff_bound();
    let p_zero = Bounded { value: law.coeffs[0], bound: eb };
    Ok(LawQueries {
        p_zero,
        p_at: j_list.iter().map(|&j| (j, Bounded { value: law.coeffs[j], bound: eb })).collect(),
        p_range: Bounded { value: law.coeffs[1..=t].iter().sum(), bound: eb * t as f64 },
        p_survive: Bounded { value: 1.0 - p_zero.value, bound: eb },
    })
}

/// Quenched events served by the annealed estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Query {
    Zero,
    At(usize),
    /// `lo <= Z_n <= hi`.
    Range {
        lo: usize,
        hi: usize,
    },
    Survive,
}

impl Query {
    /// Largest coefficient index the query reads.
    pub fn max_index(&self) -> usize {
        match self {
            Query::Zero | Query::Survive => 0,
            Query::At(j) => *j,
            Query::Range { hi, .. } => *hi,
        }
    }

    pub fn evaluate(&self, law: &QuenchedLaw) -> Result<Bounded> {
        let cutoff = law.cutoff();
        if self.max_index() > cutoff {
            return Err(Error::BeyondCutoff { j: self.max_index(), cutoff });
        }
        let eb = law.coeff_bound();
        Ok(match *self {
            Query::Zero => Bounded { value: law.coeffs[0], bound: eb },
            Query::Survive => Bounded { value: 1.0 - law.coeffs[0], bound: eb },
            Query::At(j) => Bounded { value: law.coeffs[j], bound: eb },
            Query::Range { lo, hi } => {
                let value = if lo > hi { 0.0 } else { law.coeffs[lo..=hi].iter().sum() };
                Bounded { value, bound: eb * (hi + 1).saturating_sub(lo) as f64 }
            }
        })
    }
}

/// Monte Carlo mean over environments with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
    pub replications: usize,
    /// Mean of the per-environment deterministic error bars.
    pub bound: f64,
}

impl Estimate {
    pub fn from_values(values: &[f64], bounds: &[f64]) -> Self {
        let r = values.len();
        let mean = values.iter().sum::<f64>() / r as f64;
        let var = if r > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64 } else { 0.0 };
        let bound = if bounds.is_empty() { 0.0 } else { bounds.iter().sum::<f64>() / bounds.len() as f64 };
        Self { estimate: mean, std_error: (var / r as f64).sqrt(), replications: r, bound }
    }
}

/// Runs `f` on `reps` environments of length `n` and averages each output
/// slot. Replication `r` uses environment seed `derive(seed, TAG_ENV, r)`;
/// values are reduced in replication order, so the result does not depend
/// on the worker count.
pub fn annealed_batch<F>(model: &EnvironmentModel, n: usize, reps: usize, seed: u64, f: F) -> Result<Vec<Estimate>>
where
    F: Fn(&EnvPath) -> Result<Vec<Bounded>> + Sync,
{
    if reps < 2 {
        return Err(Error::OutOfRange(format!("need at least 2 environment replications, got {reps}")));
    }
    let rows: Vec<Vec<Bounded>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let env = sample_env(model, n, seed::derive(seed, seed::TAG_ENV, r as u64))?;
            f(&env)
        })
        .collect::<Result<_>>()?;
    let width = rows[0].len();
    Ok((0..width)
        .map(|c| {
            let values: Vec<f64> = rows.iter().map(|row| row[c].value).collect();
            let bounds: Vec<f64> = rows.iter().map(|row| row[c].bound).collect();
            Estimate::from_values(&values, &bounds)
        })
        .collect())
}

/// Conditional Monte Carlo estimate of an annealed probability: the exact
/// quenched probability averaged over `reps` sampled environments.
pub fn annealed_prob(
    model: &EnvironmentModel,
    k: u64,
    n: usize,
    query: Query,
    reps: usize,
    cutoff: usize,
    seed: u64,
) -> Result<Estimate> {
    if query.max_index() > cutoff {
        return Err(Error::BeyondCutoff { j: query.max_index(), cutoff });
    }
    let est = annealed_batch(model, n, reps, seed, |env| {
        let law = quenched_law_series(env, k, cutoff)?;
        Ok(vec![query.evaluate(&law)?])
    })?[0];
    if est.bound > est.estimate.abs() && est.estimate > 0.0 {
        return Err(Error::Degenerate(format!("tail bound {} dominates estimate {}", est.bound, est.estimate)));
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{EnvAtom, EnvStep};

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn pm(j: u64) -> Law {
        Law::PointMass { count: j }
    }

    #[test]
    fn eval_deterministic_paths() {
        let env = EnvPath::constant(pm(1), pm(0), 6).unwrap();
        let s = Complex64::new(0.3, 0.4);
        assert!((quenched_eval(&env, 3, s).unwrap() - s.powu(3)).norm() < 1e-15);
        let env = EnvPath::constant(pm(1), pm(1), 4).unwrap();
        assert!((quenched_eval(&env, 1, s).unwrap() - s.powu(5)).norm() < 1e-15);
        assert!(quenched_eval(&env, 1, c(1.1)).is_err());
    }

    #[test]
    fn eval_one_step_poisson() {
        let env = EnvPath::constant(Law::Poisson { mean: 1.0 }, Law::Poisson { mean: 0.5 }, 1).unwrap();
        let v = quenched_eval(&env, 1, c(0.0)).unwrap();
        assert!((v.re - (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn series_point_mass_at_five() {
        let env = EnvPath::constant(pm(1), pm(1), 4).unwrap();
        let law = quenched_law_series(&env, 1, 8).unwrap();
        for (j, p) in law.coeffs.iter().enumerate() {
            assert_eq!(*p, if j == 5 { 1.0 } else { 0.0 });
        }
        assert_eq!(law.tail_mass, 0.0);
        let q = law_queries(&law, &[5], 3).unwrap();
        assert_eq!(q.p_zero.value, 0.0);
        assert_eq!(q.p_at[0].1.value, 1.0);
    }

    #[test]
    fn series_one_step_poisson() {
        let env = EnvPath::constant(Law::Poisson { mean: 1.0 }, Law::Poisson { mean: 0.5 }, 1).unwrap();
        let law = quenched_law_series(&env, 1, 64).unwrap();
        let exact = Law::Poisson { mean: 1.5 }.masses(65);
        for (j, (a, b)) in law.coeffs.iter().zip(exact).enumerate() {
            assert!((a - b).abs() < 1e-12, "j={j}");
        }
        let q = law_queries(&law, &[], 2).unwrap();
        assert!((q.p_range.value - (-1.5f64).exp() * (1.5 + 1.125)).abs() < 1e-12);
        assert!((q.p_zero.value + q.p_survive.value - 1.0).abs() < 1e-12);
        assert!(matches!(law_queries(&law, &[65], 2), Err(Error::BeyondCutoff { .. })));
    }

    #[test]
    fn series_cutoff_validation() {
        let env = EnvPath::constant(pm(1), pm(0), 1).unwrap();
        assert!(quenched_law_series(&env, 1, 0).is_err());
    }

    #[test]
    fn dft_point_mass_and_poisson() {
        let env = EnvPath::constant(pm(1), pm(1), 4).unwrap();
        let law = quenched_law_dft(&env, 1, 16).unwrap();
        for (j, p) in law.coeffs.iter().enumerate() {
            let expect = if j == 5 { 1.0 } else { 0.0 };
            assert!((p - expect).abs() < 1e-12);
        }
        let env = EnvPath::constant(Law::Poisson { mean: 1.0 }, Law::Poisson { mean: 0.5 }, 1).unwrap();
        let law = quenched_law_dft(&env, 1, 64).unwrap();
        let exact = Law::Poisson { mean: 1.5 }.masses(64);
        for (a, b) in law.coeffs.iter().zip(exact) {
            assert!((a - b).abs() <= 1e-12 + law.tail_mass);
        }
        assert!(law.tail_mass < 1e-40);
        assert!(quenched_law_dft(&env, 1, 48).is_err());
        assert!(quenched_law_dft(&env, 1, 1).is_err());
    }

    #[test]
    fn tail_bound_dominates_exact_tail() {
        let env = EnvPath::constant(Law::Poisson { mean: 1.3 }, Law::Poisson { mean: 0.4 }, 3).unwrap();
        let law = quenched_law_series(&env, 2, 400).unwrap();
        for m in [2usize, 4, 8, 16, 32, 64] {
            let exact: f64 = 1.0 - law.coeffs[..m].iter().sum::<f64>();
            let bound = chernoff_tail(&env, 2, m);
            assert!(bound >= exact - 1e-15 && bound <= 1.0, "M = {m}: {bound} < {exact}");
        }
        assert!(chernoff_tail(&env, 2, 64) < 1e-6);
        let lf = EnvPath::constant(Law::LinearFractional { a: 0.2, b: 0.5 }, pm(0), 2).unwrap();
        let law = quenched_law_series(&lf, 1, 400).unwrap();
        for m in [4usize, 16, 64] {
            let exact: f64 = 1.0 - law.coeffs[..m].iter().sum::<f64>();
            assert!(chernoff_tail(&lf, 1, m) >= exact - 1e-15);
        }
    }

    #[test]
    fn lf_closed_form_examples() {
        let lf = Law::LinearFractional { a: 0.2, b: 0.5 };
        let one = EnvPath::constant(lf.clone(), pm(0), 1).unwrap();
        let s = Complex64::new(0.3, -0.2);
        assert!((lf_closed_form(&one, 1, s).unwrap() - lf.pgf(s).unwrap()).norm() < 1e-15);
        let ten = EnvPath::constant(lf.clone(), pm(0), 10).unwrap();
        let a = lf_closed_form(&ten, 1, c(0.3)).unwrap();
        let b = quenched_eval(&ten, 1, c(0.3)).unwrap();
        assert!((a - b).norm() < 1e-12);
        assert!((lf_closed_form(&ten, 3, c(1.0)).unwrap() - c(1.0)).norm() < 1e-12);
        let mixed = EnvPath::new(vec![
            EnvStep { offspring: lf, immigration: pm(0) },
            EnvStep { offspring: Law::Poisson { mean: 2.0 }, immigration: pm(0) },
        ])
        .unwrap();
        assert!(lf_closed_form(&mixed, 1, c(0.5)).is_err());
    }

    #[test]
    fn annealed_single_atom_has_zero_error() {
        let model =
            EnvironmentModel::single(Law::LinearFractional { a: 0.3, b: 0.4 }, Law::Poisson { mean: 0.5 }).unwrap();
        let est = annealed_prob(&model, 1, 3, Query::Zero, 10, 8, 1).unwrap();
        let env = sample_env(&model, 3, 0).unwrap();
        let exact = quenched_eval(&env, 1, c(0.0)).unwrap().re;
        assert!((est.estimate - exact).abs() < 1e-14);
        assert!(est.std_error < 1e-14);
        assert!(annealed_prob(&model, 1, 3, Query::At(9), 10, 8, 1).is_err());
        assert!(annealed_prob(&model, 1, 3, Query::Zero, 1, 8, 1).is_err());
    }

    #[test]
    fn annealed_two_atoms_matches_enumeration() {
        let atoms = vec![
            EnvAtom {
                weight: 0.5,
                offspring: Law::LinearFractional { a: 0.3, b: 0.55 },
                immigration: Law::Poisson { mean: 0.4 },
            },
            EnvAtom { weight: 0.5, offspring: Law::Poisson { mean: 2.2 }, immigration: Law::Poisson { mean: 0.4 } },
        ];
        let model = EnvironmentModel::new(atoms.clone()).unwrap();
        let exact: f64 = atoms
            .iter()
            .map(|a| {
                let env = EnvPath::constant(a.offspring.clone(), a.immigration.clone(), 1).unwrap();
                a.weight * quenched_eval(&env, 2, c(0.0)).unwrap().re
            })
            .sum();
        let est = annealed_prob(&model, 2, 1, Query::Zero, 4000, 4, 77).unwrap();
        assert!((est.estimate - exact).abs() < 3.0 * est.std_error, "{est:?} vs {exact}");
    }
}
