//! Log-linear decay fits and Kolmogorov-Smirnov distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rwalk::{edgeworth_g3, std_normal, EdgeworthSpec};
use statrs::distribution::ContinuousCDF;

/// One-sided 99% normal quantile.
pub const Z99: f64 = 2.326_347_874_040_841;

/// Default smallest `n` kept in a fit.
pub const MIN_FIT_N: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub log_p: f64,
    /// Delta-method error `std_error / estimate`.
    pub log_err: f64,
}

/// Weighted least-squares line through `(n, log p_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub points: Vec<DecayPoint>,
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope, inflated by `max(1, sqrt(chi2/dof))`.
    /// See [`fit_decay_shared`] for estimates on common replications.
    pub slope_se: f64,
    pub r_squared: f64,
    pub chi2: f64,
    pub dof: usize,
}

impl DecayFit {
    /// One-sided upper confidence bound on the slope.
    pub fn slope_upper(&self, z: f64) -> f64 {
        self.slope + z * self.slope_se
    }

    pub fn decays_at_99(&self) -> bool {
        self.slope < 0.0 && self.slope_upper(Z99) < 0.0
    }

    /// `|s_1 - s_2| <= z * sqrt(se_1^2 + se_2^2)`.
    pub fn agrees_with(&self, other: &DecayFit, z: f64) -> bool {
        (self.slope - other.slope).abs() <= z * self.slope_se.hypot(other.slope_se)
    }
}

/// Builds points from `(n, estimate, std_error)` triples.
pub fn decay_points(rows: &[(usize, f64, f64)]) -> Result<Vec<DecayPoint>> {
    rows.iter()
        .map(|&(n, estimate, std_error)| {
            if !(estimate > 0.0) {
                return Err(Error::Degenerate(format!("estimate {estimate} at n = {n} is not positive")));
            }
            Ok(DecayPoint { n, estimate, std_error, log_p: estimate.ln(), log_err: std_error / estimate })
        })
        .collect()
}

/// Fits `log p_n = intercept + slope * n` over points with `n >= min_n`,
/// weighting by `1 / log_err^2`. When every error is zero the fit is
/// unweighted and the slope error comes from the residuals.
pub fn fit_decay(points: &[DecayPoint], min_n: usize) -> Result<DecayFit> {
    let kept: Vec<DecayPoint> = points.iter().copied().filter(|p| p.n >= min_n).collect();
    if kept.len() < 2 {
        return Err(Error::Insufficient(format!("{} points with n >= {min_n}; need 2", kept.len())));
    }
    if kept.iter().any(|p| !p.log_p.is_finite()) {
        return Err(Error::Degenerate("non-finite log probability".into()));
    }
    let (w, unweighted) = fit_weights(&kept);
    let x: Vec<f64> = kept.iter().map(|p| p.n as f64).collect();
    let y: Vec<f64> = kept.iter().map(|p| p.log_p).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = w.iter().zip(x.iter().zip(&y)).map(|(w, (x, y))| w * (x - xm) * (y - ym)).sum();
    let syy: f64 = w.iter().zip(&y).map(|(w, y)| w * (y - ym).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("all points share one n".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let chi2: f64 = w.iter().zip(x.iter().zip(&y)).map(|(w, (x, y))| w * (y - intercept - slope * x).powi(2)).sum();
    let dof = kept.len() - 2;
    let slope_se = if unweighted {
        if dof == 0 {
            0.0
        } else {
            (chi2 / dof as f64 / sxx).sqrt()
        }
    } else {
        let birge = if dof == 0 { 1.0 } else { (chi2 / dof as f64).sqrt().max(1.0) };
        birge / sxx.sqrt()
    };
    let r_squared = if syy > 0.0 { (1.0 - chi2 / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(DecayFit { points: kept, slope, intercept, slope_se, r_squared, chi2, dof })
}

fn fit_weights(kept: &[DecayPoint]) -> (Vec<f64>, bool) {
    let positive: Vec<f64> = kept.iter().map(|p| p.log_err).filter(|e| *e > 0.0).collect();
    let unweighted = positive.is_empty();
    let floor = positive.iter().copied().fold(f64::INFINITY, f64::min);
    let w = kept.iter().map(|p| if unweighted { 1.0 } else { p.log_err.max(floor).powi(-2) }).collect();
    (w, unweighted)
}

/// [`fit_decay`] for estimates that are means over the same replications.
/// `replicates[r][i]` is replication `r`'s value at `points[i]`. The slope
/// is a fixed linear combination of the `log p̂_n`, so its error is the
/// spread of each replication's linearized contribution
/// `sum_n c_n X_{r,n} / p̂_n`, which carries the correlation between
/// horizons. The Birge inflation is applied on top.
pub fn fit_decay_shared(points: &[DecayPoint], min_n: usize, replicates: &[Vec<f64>]) -> Result<DecayFit> {
    let mut fit = fit_decay(points, min_n)?;
    if replicates.len() < 2 || replicates.iter().any(|r| r.len() != points.len()) {
        return Err(Error::OutOfRange("need at least 2 replications with one value per point".into()));
    }
    let keep: Vec<usize> = (0..points.len()).filter(|&i| points[i].n >= min_n).collect();
    let kept: Vec<DecayPoint> = keep.iter().map(|&i| points[i]).collect();
    let (w, _) = fit_weights(&kept);
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&kept).map(|(w, p)| w * p.n as f64).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&kept).map(|(w, p)| w * (p.n as f64 - xm).powi(2)).sum();
    let c: Vec<f64> = w.iter().zip(&kept).map(|(w, p)| w * (p.n as f64 - xm) / sxx / p.estimate).collect();
    let psi: Vec<f64> = replicates.iter().map(|row| keep.iter().zip(&c).map(|(&i, c)| c * row[i]).sum()).collect();
    let r = psi.len() as f64;
    let mean = psi.iter().sum::<f64>() / r;
    let var = psi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    let birge = if fit.dof == 0 { 1.0 } else { (fit.chi2 / fit.dof as f64).sqrt().max(1.0) };
    fit.slope_se = birge * (var / r).sqrt();
    Ok(fit)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KsTarget {
    NormalCdf,
    EdgeworthG3(EdgeworthSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub n_samples: usize,
    pub ks_stat: f64,
    pub target: KsTarget,
}

/// Two-sided statistic `sup |F_emp - F|` for a sorted sample, using the
/// right-continuous empirical CDF.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let r = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max(f - i as f64 / r).max(j as f64 / r - f);
        i = j;
    }
    d
}

/// `sup |F_emp(x) - F(x)|` over the grid `lo, lo + step, ..., hi`.
pub fn grid_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let r = sorted.len() as f64;
    let points = ((hi - lo) / step).round() as usize;
    let mut idx = 0;
    let mut d: f64 = 0.0;
    for g in 0..=points {
        let x = lo + g as f64 * step;
        while idx < sorted.len() && sorted[idx] <= x {
            idx += 1;
        }
        d = d.max((idx as f64 / r - cdf(x)).abs());
    }
    d
}

pub fn ks_report(mut sample: Vec<f64>, target: KsTarget, n: usize) -> Result<KsReport> {
    if sample.is_empty() {
        return Err(Error::Insufficient("empty sample".into()));
    }
    sample.sort_by(f64::total_cmp);
    let normal = std_normal();
    let ks_stat = match &target {
        KsTarget::NormalCdf => ks_statistic(&sample, |x| normal.cdf(x)),
        KsTarget::EdgeworthG3(spec) => {
            spec.p3(0.0)?;
            ks_statistic(&sample, |x| edgeworth_g3(x, n, spec).unwrap_or(f64::NAN))
        }
    };
    Ok(KsReport { n_samples: sample.len(), ks_stat, target })
}
