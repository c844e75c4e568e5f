//! Parametric environment families.
//!
//! An environment atom fixes one offspring law `f` and one immigration law
//! `h`; an [`EnvironmentModel`] is a finite mixture of atoms. Each generation
//! draws one atom independently, so `f_n` and `h_n` may be dependent within a
//! step while different steps are i.i.d.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const MASS_TOL: f64 = 1e-12;
const UNIT_DISC_TOL: f64 = 1e-12;

/// A distribution on the nonnegative integers with an analytic p.g.f.
///
/// The JSON form is tagged by `kind`:
/// `{"kind":"point_mass","count":1}`, `{"kind":"poisson","mean":1.6}`,
/// `{"kind":"linear_fractional","a":0.2,"b":0.5}`,
/// `{"kind":"finite","probabilities":[0.1,0.9]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Law {
    PointMass {
        count: u64,
    },
    Poisson {
        mean: f64,
    },
    /// `P(0) = a`, `P(k) = (1-a)(1-b) b^(k-1)` for `k >= 1`.
    LinearFractional {
        a: f64,
        b: f64,
    },
    Finite {
        probabilities: Vec<f64>,
    },
}

/// Offspring law of one individual (the role of `f`).
pub type OffspringSpec = Law;
/// Law of the number of immigrants in one generation (the role of `h`).
pub type ImmigrationSpec = Law;

impl Law {
    pub fn validate(&self) -> Result<()> {
        match self {
            Law::PointMass { .. } => Ok(()),
            Law::Poisson { mean } => {
                if mean.is_finite() && *mean >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidLaw(format!("poisson mean {mean} must be finite and >= 0")))
                }
            }
            Law::LinearFractional { a, b } => {
                if !(0.0..1.0).contains(a) || !(0.0..1.0).contains(b) {
                    Err(Error::InvalidLaw(format!("linear-fractional parameters a={a}, b={b} must lie in [0,1)")))
                } else {
                    Ok(())
                }
            }
            Law::Finite { probabilities } => {
                if probabilities.is_empty() {
                    return Err(Error::InvalidLaw("finite law needs at least one mass".into()));
                }
                if let Some(p) = probabilities.iter().find(|p| !p.is_finite() || **p < 0.0) {
                    return Err(Error::InvalidLaw(format!("finite law has invalid mass {p}")));
                }
                let total: f64 = probabilities.iter().sum();
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidLaw(format!("finite law masses sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Offspring laws additionally need a finite, strictly positive mean.
    pub fn validate_offspring(&self) -> Result<()> {
        self.validate()?;
        let m = self.mean();
        if m > 0.0 && m.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidLaw(format!("offspring mean {m} must be finite and > 0")))
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Law::PointMass { count } => *count as f64,
            Law::Poisson { mean } => *mean,
            Law::LinearFractional { a, b } => (1.0 - a) / (1.0 - b),
            Law::Finite { probabilities } => probabilities.iter().enumerate().map(|(j, p)| j as f64 * p).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Law::PointMass { .. } => 0.0,
            Law::Poisson { mean } => *mean,
            Law::LinearFractional { a, b } => {
                let q = 1.0 - b;
                (1.0 - a) * (1.0 + b) / (q * q) - (1.0 - a) * (1.0 - a) / (q * q)
            }
            Law::Finite { probabilities } => {
                let m = self.mean();
                probabilities.iter().enumerate().map(|(j, p)| (j as f64 - m).powi(2) * p).sum()
            }
        }
    }

    /// `P(N = j)`.
    pub fn mass(&self, j: u64) -> f64 {
        match self {
            Law::PointMass { count } => {
                if j == *count {
                    1.0
                } else {
                    0.0
                }
            }
            Law::Poisson { mean } => {
                if *mean == 0.0 {
                    return if j == 0 { 1.0 } else { 0.0 };
                }
                let jf = j as f64;
                (-mean + jf * mean.ln() - statrs::function::gamma::ln_gamma(jf + 1.0)).exp()
            }
            Law::LinearFractional { a, b } => {
                if j == 0 {
                    *a
                } else {
                    (1.0 - a) * (1.0 - b) * b.powi((j - 1) as i32)
                }
            }
            Law::Finite { probabilities } => probabilities.get(j as usize).copied().unwrap_or(0.0),
        }
    }

    /// Masses `P(N = 0), ..., P(N = len-1)`, built by forward recurrences.
    pub fn masses(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        match self {
            Law::Poisson { mean } if len > 0 => {
                out[0] = (-mean).exp();
                for j in 1..len {
                    out[j] = out[j - 1] * mean / j as f64;
                }
            }
            Law::LinearFractional { a, b } if len > 0 => {
                out[0] = *a;
                let mut t = (1.0 - a) * (1.0 - b);
                for v in out.iter_mut().skip(1) {
                    *v = t;
                    t *= b;
                }
            }
            _ => {
                for (j, v) in out.iter_mut().enumerate() {
                    *v = self.mass(j as u64);
                }
            }
        }
        out
    }

    /// Evaluates the p.g.f. at `s`, which must lie in the closed unit disc.
    pub fn pgf(&self, s: Complex64) -> Result<Complex64> {
        if s.norm() > 1.0 + UNIT_DISC_TOL {
            return Err(Error::OutOfRange(format!("|s| = {} exceeds 1", s.norm())));
        }
        self.validate()?;
        Ok(self.pgf_unchecked(s))
    }

    #[inline]
    pub(crate) fn pgf_unchecked(&self, s: Complex64) -> Complex64 {
        match self {
            Law::PointMass { count } => s.powu(*count as u32),
            Law::Poisson { mean } => ((s - 1.0) * *mean).exp(),
            Law::LinearFractional { a, b } => *a + s * ((1.0 - a) * (1.0 - b)) / (Complex64::new(1.0, 0.0) - s * *b),
            Law::Finite { probabilities } => {
                probabilities.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, p| acc * s + *p)
            }
        }
    }

    #[inline]
    pub(crate) fn pgf_real(&self, s: f64) -> f64 {
        match self {
            Law::PointMass { count } => s.powi(*count as i32),
            Law::Poisson { mean } => (mean * (s - 1.0)).exp(),
            Law::LinearFractional { a, b } => a + (1.0 - a) * (1.0 - b) * s / (1.0 - b * s),
            Law::Finite { probabilities } => probabilities.iter().rev().fold(0.0, |acc, p| acc * s + p),
        }
    }

    /// `1 - f(1 - u)` for `u` in `[0, 1]`, without cancellation near `u = 0`.
    pub(crate) fn pgf_complement(&self, u: f64) -> f64 {
        let power = |j: u64| if j == 0 { 0.0 } else { -(j as f64 * (-u).ln_1p()).exp_m1() };
        match self {
            Law::PointMass { count } => power(*count),
            Law::Poisson { mean } => -(-mean * u).exp_m1(),
            Law::LinearFractional { a, b } => (1.0 - a) * u / (1.0 - b + b * u),
            Law::Finite { probabilities } => probabilities.iter().enumerate().map(|(j, p)| p * power(j as u64)).sum(),
        }
    }

    /// `log f(1 - u)`.
    pub(crate) fn log_pgf_complement(&self, u: f64) -> f64 {
        match self {
            Law::Poisson { mean } => -mean * u,
            Law::PointMass { count: 0 } => 0.0,
            Law::PointMass { count } => *count as f64 * (-u).ln_1p(),
            other => (-other.pgf_complement(u)).ln_1p(),
        }
    }

    /// `E[N^p]` by direct summation over the support.
    pub fn moment(&self, p: f64) -> f64 {
        match self {
            Law::PointMass { count } => (*count as f64).powf(p),
            Law::Finite { probabilities } => {
                probabilities.iter().enumerate().map(|(j, q)| (j as f64).powf(p) * q).sum()
            }
            _ => {
                let mean = self.mean();
                // Past the bulk both laws have geometrically decaying terms.
                let mut acc = 0.0;
                let mut j: u64 = 0;
                loop {
                    let term = (j as f64).powf(p) * self.mass(j);
                    acc += term;
                    j += 1;
                    let past_bulk = j as f64 > 2.0 * mean + 20.0;
                    if (past_bulk && term <= 1e-18 * acc) || j > 50_000_000 {
                        break;
                    }
                }
                acc
            }
        }
    }

    /// Mean of the law truncated at level `a`: mass at `[a, inf)` moved to `a`.
    pub fn truncated_mean(&self, level: u64) -> f64 {
        let mut below = 0.0;
        let mut acc = 0.0;
        for j in 0..level {
            let q = self.mass(j);
            below += q;
            acc += j as f64 * q;
        }
        acc + level as f64 * (1.0 - below).max(0.0)
    }
}

/// One mixture component of the environment law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvAtom {
    pub weight: f64,
    pub offspring: OffspringSpec,
    pub immigration: ImmigrationSpec,
}

/// Finite mixture law of the i.i.d. environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct EnvironmentModel {
    atoms: Vec<EnvAtom>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    atoms: Vec<EnvAtom>,
}

impl TryFrom<RawModel> for EnvironmentModel {
    type Error = Error;
    fn try_from(raw: RawModel) -> Result<Self> {
        EnvironmentModel::new(raw.atoms)
    }
}

impl From<EnvironmentModel> for RawModel {
    fn from(m: EnvironmentModel) -> Self {
        RawModel { atoms: m.atoms }
    }
}

impl EnvironmentModel {
    pub fn new(atoms: Vec<EnvAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidModel("model needs at least one atom".into()));
        }
        for (i, atom) in atoms.iter().enumerate() {
            if !(0.0..=1.0).contains(&atom.weight) {
                return Err(Error::InvalidModel(format!("atom {i}: weight {} not in [0,1]", atom.weight)));
            }
            atom.offspring.validate_offspring().map_err(|e| Error::InvalidModel(format!("atom {i} offspring: {e}")))?;
            atom.immigration.validate().map_err(|e| Error::InvalidModel(format!("atom {i} immigration: {e}")))?;
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidModel(format!("atom weights sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    /// A model that always draws the same pair `(f, h)`.
    pub fn single(offspring: Law, immigration: Law) -> Result<Self> {
        Self::new(vec![EnvAtom { weight: 1.0, offspring, immigration }])
    }

    pub fn atoms(&self) -> &[EnvAtom] {
        &self.atoms
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Index of the atom selected by a uniform draw `u` in `[0, 1)`.
    pub(crate) fn pick(&self, u: f64) -> usize {
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (i, atom) in self.atoms.iter().enumerate() {
            if atom.weight > 0.0 {
                last_positive = i;
            }
            cum += atom.weight;
            if u < cum && atom.weight > 0.0 {
                return i;
            }
        }
        last_positive
    }

    /// Atom log-means `log m(f)` paired with their weights.
    pub fn log_means(&self) -> Vec<(f64, f64)> {
        self.atoms.iter().map(|a| (a.weight, a.offspring.mean().ln())).collect()
    }
}

/// One realized generation of the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvStep {
    pub offspring: OffspringSpec,
    pub immigration: ImmigrationSpec,
}

/// A realized environment `(f_1, h_1), ..., (f_n, h_n)`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvPath {
    pub steps: Vec<EnvStep>,
}

impl EnvPath {
    pub fn new(steps: Vec<EnvStep>) -> Result<Self> {
        for (i, s) in steps.iter().enumerate() {
            s.offspring.validate_offspring().map_err(|e| Error::InvalidModel(format!("step {}: {e}", i + 1)))?;
            s.immigration.validate().map_err(|e| Error::InvalidModel(format!("step {}: {e}", i + 1)))?;
        }
        Ok(Self { steps })
    }

    /// `n` copies of the same step.
    pub fn constant(offspring: Law, immigration: Law, n: usize) -> Result<Self> {
        Self::new(vec![EnvStep { offspring, immigration }; n])
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The first `n` generations.
    pub fn prefix(&self, n: usize) -> EnvPath {
        EnvPath { steps: self.steps[..n.min(self.steps.len())].to_vec() }
    }

    /// The shifted environment `T^i xi` (generations `i+1, ..., n`).
    pub fn shifted(&self, i: usize) -> EnvPath {
        EnvPath { steps: self.steps[i.min(self.steps.len())..].to_vec() }
    }

    /// Partial sums `S_0 = 0, S_i = sum log m_j` of the associated walk.
    pub fn walk(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut s = 0.0;
        out.push(s);
        for step in &self.steps {
            s += step.offspring.mean().ln();
            out.push(s);
        }
        out
    }
}

/// Draws `n` i.i.d. atoms. Draw `i` is the `i`-th uniform of one ChaCha
/// stream keyed by `seed`, so a longer path extends a shorter one.
pub fn sample_env(model: &EnvironmentModel, n: usize, seed: u64) -> Result<EnvPath> {
    if model.atoms.is_empty() {
        return Err(Error::InvalidModel("empty model".into()));
    }
    let mut rng = seed::rng(seed);
    let steps = (0..n)
        .map(|_| {
            let atom = &model.atoms[model.pick(rng.random::<f64>())];
            EnvStep { offspring: atom.offspring.clone(), immigration: atom.immigration.clone() }
        })
        .collect();
    Ok(EnvPath { steps })
}

/// Atom indices drawn by [`sample_env`] with the same seed.
pub fn sample_atom_indices(model: &EnvironmentModel, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| model.pick(rng.random::<f64>())).collect()
}

/// Verdicts on the standing assumptions, each with its witness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub supercritical: bool,
    /// Exact `E log m_1` of the mixture.
    pub mu: f64,
    /// Some atom has `h(0) > 0`, `f(0) > 0` and `f({1}) > 0`.
    pub a_holds: bool,
    pub a_witness: Option<usize>,
    pub b_holds: bool,
    pub delta: f64,
    /// Largest `f({0})` over atoms and the atom attaining it.
    pub b_max_f0: f64,
    pub b_witness: usize,
    pub c_holds: bool,
    pub p: f64,
    pub q: f64,
    /// `E[(1+|log m_1|^q)((N/m_1)^p + 1)]`.
    pub c_offspring_moment: f64,
    /// `E[Y_1^p]`.
    pub c_immigration_moment: f64,
    pub nonlattice_plausible: bool,
    /// Common span of the atom log-means when they sit on a lattice.
    pub lattice_span: Option<f64>,
    pub distinct_log_means: usize,
}

impl AssumptionReport {
    /// Assumptions (A), (B), (C) and supercriticality. The lattice flag is
    /// reported separately.
    pub fn required_hold(&self) -> bool {
        self.supercritical && self.a_holds && self.b_holds && self.c_holds
    }

    pub fn failed(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.supercritical {
            out.push("supercriticality (E log m_1 > 0)");
        }
        if !self.a_holds {
            out.push("Assumption (A)");
        }
        if !self.b_holds {
            out.push("Assumption (B)");
        }
        if !self.c_holds {
            out.push("Assumption (C)");
        }
        out
    }
}

pub fn validate_assumptions(model: &EnvironmentModel, delta: f64, p: f64, q: f64) -> Result<AssumptionReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::OutOfRange(format!("delta = {delta} must lie in (0,1)")));
    }
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::OutOfRange(format!("p = {p} must lie in (1,2]")));
    }
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::OutOfRange(format!("q = {q} must exceed 1")));
    }
    let atoms = model.atoms();
    let live = || atoms.iter().enumerate().filter(|(_, a)| a.weight > 0.0);

    let mu: f64 = live().map(|(_, a)| a.weight * a.offspring.mean().ln()).sum();

    let a_witness = live()
        .find(|(_, a)| a.immigration.mass(0) > 0.0 && a.offspring.mass(0) > 0.0 && a.offspring.mass(1) > 0.0)
        .map(|(i, _)| i);

    let (b_witness, b_max_f0) =
        live()
            .map(|(i, a)| (i, a.offspring.mass(0)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });

    let mut c_off = 0.0;
    let mut c_imm = 0.0;
    for (_, a) in live() {
        let m = a.offspring.mean();
        let lm = m.ln().abs().powf(q);
        c_off += a.weight * (1.0 + lm) * (a.offspring.moment(p) / m.powf(p) + 1.0);
        c_imm += a.weight * a.immigration.moment(p);
    }

    let log_means: Vec<f64> = live().map(|(_, a)| a.offspring.mean().ln()).collect();
    let (distinct, span) = lattice_span(&log_means, 1e-9);

    Ok(AssumptionReport {
        supercritical: mu > 0.0,
        mu,
        a_holds: a_witness.is_some(),
        a_witness,
        b_holds: b_max_f0 < delta,
        delta,
        b_max_f0,
        b_witness,
        c_holds: c_off.is_finite() && c_imm.is_finite(),
        p,
        q,
        c_offspring_moment: c_off,
        c_immigration_moment: c_imm,
        nonlattice_plausible: span.is_none(),
        lattice_span: span,
        distinct_log_means: distinct,
    })
}

/// Returns the number of distinct values and, when all of them lie on a
/// common lattice `c Z + d`, the span `c`. One or two distinct values always
/// lie on a lattice. With more, every pair of gaps from the smallest value
/// must have a rational ratio with denominator at most 1000 to within `tol`.
fn lattice_span(values: &[f64], tol: f64) -> (usize, Option<f64>) {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup_by(|a, b| (*a - *b).abs() <= tol);
    match v.len() {
        0 | 1 => (v.len(), Some(0.0)),
        2 => (2, Some(v[1] - v[0])),
        len => {
            let gaps: Vec<f64> = v[1..].iter().map(|x| x - v[0]).collect();
            let on_lattice = |num: f64, den: f64| -> Option<u64> {
                let ratio = num / den;
                let (h, k) = rational_approx(ratio, 1000)?;
                let err = (ratio - h as f64 / k as f64).abs();
                (err <= tol * ratio.abs().max(1.0)).then_some(k)
            };
            let mut lcm: u64 = 1;
            for i in 0..gaps.len() {
                for j in (i + 1)..gaps.len() {
                    match on_lattice(gaps[j], gaps[i]) {
                        Some(den) if i == 0 => lcm = lcm / gcd(lcm, den) * den,
                        Some(_) => {}
                        None => return (len, None),
                    }
                }
            }
            (len, Some(gaps[0] / lcm as f64))
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Best continued-fraction convergent of `x` with denominator `<= max_den`.
fn rational_approx(x: f64, max_den: u64) -> Option<(i64, u64)> {
    if !x.is_finite() {
        return None;
    }
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let ai = a as i64;
        let h2 = ai.checked_mul(h1)?.checked_add(h0)?;
        let k2 = (ai as u64).checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
        let frac = r - a;
        if frac.abs() < 1e-15 {
            break;
        }
        r = 1.0 / frac;
    }
    if k1 == 0 {
        None
    } else {
        Some((h1, k1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn atom(w: f64, f: Law, h: Law) -> EnvAtom {
        EnvAtom { weight: w, offspring: f, immigration: h }
    }

    #[test]
    fn second_moments_match_closed_forms() {
        for lambda in [0.0, 0.4, 2.2, 40.0] {
            let m = Law::Poisson { mean: lambda }.moment(2.0);
            assert!((m - lambda * (1.0 + lambda)).abs() <= 1e-12 * (1.0 + m), "{lambda}: {m}");
        }
        for (a, b) in [(0.3, 0.55), (0.0, 0.99), (0.9, 0.1)] {
            let m = Law::LinearFractional { a, b }.moment(2.0);
            let exact = (1.0 - a) * (1.0 + b) / ((1.0 - b) * (1.0 - b));
            assert!((m - exact).abs() <= 1e-12 * exact, "({a},{b}): {m} vs {exact}");
        }
        let m = Law::Poisson { mean: 2.2 }.moment(1.0);
        assert!((m - 2.2).abs() < 1e-12);
    }

    #[test]
    fn pgf_examples() {
        let p = Law::Poisson { mean: 1.0 };
        assert!((p.pgf(c(1.0)).unwrap().re - 1.0).abs() < 1e-15);
        assert!((p.pgf(c(0.0)).unwrap().re - (-1.0f64).exp()).abs() < 1e-15);
        let lf = Law::LinearFractional { a: 0.2, b: 0.5 };
        assert!((lf.pgf(c(0.0)).unwrap().re - 0.2).abs() < 1e-15);
        assert!(lf.pgf(c(1.5)).is_err());
        assert!(Law::Poisson { mean: -1.0 }.pgf(c(0.5)).is_err());
    }

    #[test]
    fn mean_examples() {
        assert_eq!(Law::Poisson { mean: 1.6 }.mean(), 1.6);
        assert!((Law::LinearFractional { a: 0.2, b: 0.5 }.mean() - 1.6).abs() < 1e-15);
        assert_eq!(Law::PointMass { count: 1 }.mean(), 1.0);
        // Brute-force sum of j * mass(j) for the linear-fractional law.
        let lf = Law::LinearFractional { a: 0.2, b: 0.5 };
        let brute: f64 = (0..200).map(|j| j as f64 * lf.mass(j)).sum();
        assert!((brute - 1.6).abs() < 1e-12);
    }

    #[test]
    fn variance_matches_masses() {
        for law in [
            Law::LinearFractional { a: 0.3, b: 0.55 },
            Law::Poisson { mean: 2.2 },
            Law::Finite { probabilities: vec![0.2, 0.5, 0.3] },
        ] {
            let m = law.mean();
            let brute: f64 = (0..400).map(|j| (j as f64 - m).powi(2) * law.mass(j)).sum();
            assert!((brute - law.variance()).abs() < 1e-10, "{law:?}");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(Law::LinearFractional { a: 1.0, b: 0.2 }.validate().is_err());
        assert!(Law::Finite { probabilities: vec![0.5, 0.4] }.validate().is_err());
        assert!(Law::Finite { probabilities: vec![1.1, -0.1] }.validate().is_err());
        assert!(Law::PointMass { count: 0 }.validate_offspring().is_err());
        assert!(EnvironmentModel::new(vec![]).is_err());
        let f = Law::Poisson { mean: 2.0 };
        let h = Law::PointMass { count: 0 };
        assert!(EnvironmentModel::new(vec![atom(0.5, f.clone(), h.clone()), atom(0.6, f, h)]).is_err());
    }

    #[test]
    fn sample_env_degenerate_mixtures() {
        let f = Law::Poisson { mean: 2.0 };
        let g = Law::LinearFractional { a: 0.2, b: 0.5 };
        let h = Law::PointMass { count: 0 };
        let single = EnvironmentModel::single(f.clone(), h.clone()).unwrap();
        let path = sample_env(&single, 5, 1).unwrap();
        assert_eq!(path.len(), 5);
        assert!(path.steps.iter().all(|s| s.offspring == f));

        let two = EnvironmentModel::new(vec![atom(1.0, g.clone(), h.clone()), atom(0.0, f, h)]).unwrap();
        let path = sample_env(&two, 3, 9).unwrap();
        assert!(path.steps.iter().all(|s| s.offspring == g));
    }

    #[test]
    fn sample_env_frequencies_and_reproducibility() {
        let h = Law::PointMass { count: 0 };
        let model = EnvironmentModel::new(vec![
            atom(0.5, Law::Poisson { mean: 2.0 }, h.clone()),
            atom(0.5, Law::Poisson { mean: 3.0 }, h),
        ])
        .unwrap();
        let idx = sample_atom_indices(&model, 10_000, 2024);
        let freq = idx.iter().filter(|&&i| i == 0).count() as f64 / 1e4;
        assert!((freq - 0.5).abs() < 3.0 * 0.005, "freq {freq}");
        assert_eq!(sample_env(&model, 50, 3).unwrap(), sample_env(&model, 50, 3).unwrap());
        // Prefix consistency.
        assert_eq!(sample_env(&model, 20, 3).unwrap(), sample_env(&model, 50, 3).unwrap().prefix(20));
    }

    #[test]
    fn assumptions_single_lf_atom() {
        let model =
            EnvironmentModel::single(Law::LinearFractional { a: 0.3, b: 0.4 }, Law::Poisson { mean: 0.5 }).unwrap();
        let r = validate_assumptions(&model, 0.5, 2.0, 4.0).unwrap();
        assert!(r.a_holds && r.b_holds && r.supercritical && r.c_holds);
        assert!((r.mu - (0.7f64 / 0.6).ln()).abs() < 1e-15);
        assert!((Law::LinearFractional { a: 0.3, b: 0.4 }.mass(1) - 0.42).abs() < 1e-15);
    }

    #[test]
    fn assumption_a_fails_without_zero_offspring() {
        let model = EnvironmentModel::single(Law::PointMass { count: 1 }, Law::Poisson { mean: 0.5 }).unwrap();
        let r = validate_assumptions(&model, 0.5, 2.0, 4.0).unwrap();
        assert!(!r.a_holds);
        assert!(r.failed().contains(&"Assumption (A)"));
    }

    #[test]
    fn log_symmetric_model_is_not_supercritical() {
        let h = Law::PointMass { count: 0 };
        let model = EnvironmentModel::new(vec![
            atom(0.5, Law::Poisson { mean: 2.0 }, h.clone()),
            atom(0.5, Law::Poisson { mean: 0.5 }, h),
        ])
        .unwrap();
        let r = validate_assumptions(&model, 0.9, 2.0, 4.0).unwrap();
        assert!(r.mu.abs() < 1e-15);
        assert!(!r.supercritical);
    }

    #[test]
    fn argument_ranges() {
        let model = EnvironmentModel::single(Law::Poisson { mean: 2.0 }, Law::Poisson { mean: 0.5 }).unwrap();
        assert!(validate_assumptions(&model, 0.0, 2.0, 4.0).is_err());
        assert!(validate_assumptions(&model, 0.5, 1.0, 4.0).is_err());
        assert!(validate_assumptions(&model, 0.5, 2.0, 1.0).is_err());
    }

    #[test]
    fn lattice_detection() {
        let ln = |x: f64| x.ln();
        assert!(lattice_span(&[ln(2.0), ln(4.0)], 1e-9).1.is_some());
        assert!(lattice_span(&[ln(2.0), ln(4.0), ln(8.0)], 1e-9).1.is_some());
        assert!(lattice_span(&[ln(2.0), ln(3.0), ln(5.0)], 1e-9).1.is_none());
        let (n, span) = lattice_span(&[1.0, 1.5, 2.25], 1e-9);
        assert_eq!(n, 3);
        assert!((span.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn model_json_roundtrip_and_errors() {
        let text = r#"{"atoms":[{"weight":1.0,
            "offspring":{"kind":"linear_fractional","a":0.3,"b":0.55},
            "immigration":{"kind":"poisson","mean":0.4}}]}"#;
        let m = EnvironmentModel::from_json_str(text).unwrap();
        let back = serde_json::to_string(&m).unwrap();
        assert_eq!(EnvironmentModel::from_json_str(&back).unwrap(), m);
        let bad = r#"{"atoms":[{"weight":1.0,"offspring":{"kind":"poisson","mean":0.0},
            "immigration":{"kind":"poisson","mean":0.4}}]}"#;
        assert!(EnvironmentModel::from_json_str(bad).is_err());
    }

    #[test]
    fn truncated_mean_is_below_mean() {
        let f = Law::Poisson { mean: 2.2 };
        let t = f.truncated_mean(10);
        assert!(t < 2.2 && t > 2.19);
        assert_eq!(Law::PointMass { count: 3 }.truncated_mean(2), 2.0);
    }
}
