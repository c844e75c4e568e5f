//! Closed-form composition of linear-fractional p.g.f.s.
//!
//! `a + (1-a)(1-b)s/(1-bs) = ((1-a-b)s + a) / (-bs + 1)`, so each step is the
//! Möbius map of the matrix `[[1-a-b, a], [-b, 1]]` and `f_1 ∘ ... ∘ f_n`
//! is the map of the ordered product of the matrices.

use num_complex::Complex64;

use crate::env_model::{EnvPath, Law};
use crate::error::{Error, Result};

type Mat = [[f64; 2]; 2];

fn step_matrix(law: &Law) -> Option<Mat> {
    match law {
        Law::LinearFractional { a, b } => Some([[1.0 - a - b, *a], [-b, 1.0]]),
        _ => None,
    }
}

fn mat_mul(x: &Mat, y: &Mat) -> Mat {
    [
        [x[0][0] * y[0][0] + x[0][1] * y[1][0], x[0][0] * y[0][1] + x[0][1] * y[1][1]],
        [x[1][0] * y[0][0] + x[1][1] * y[1][0], x[1][0] * y[0][1] + x[1][1] * y[1][1]],
    ]
}

/// Product of the step matrices of `f_1, ..., f_n`, rescaled to unit max-norm.
pub fn composed_matrix(env: &EnvPath) -> Result<[[f64; 2]; 2]> {
    let mut acc: Mat = [[1.0, 0.0], [0.0, 1.0]];
    for (i, step) in env.steps.iter().enumerate() {
        let m = step_matrix(&step.offspring)
            .ok_or_else(|| Error::OutOfRange(format!("step {} offspring is not linear-fractional", i + 1)))?;
        acc = mat_mul(&acc, &m);
        let scale = acc.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
        for v in acc.iter_mut().flatten() {
            *v /= scale;
        }
    }
    Ok(acc)
}

/// `f_{0,n}(s)^k` of the classic process; immigration is ignored.
pub fn lf_closed_form(env: &EnvPath, k: u32, s: Complex64) -> Result<Complex64> {
    let m = composed_matrix(env)?;
    let f = (s * m[0][0] + m[0][1]) / (s * m[1][0] + m[1][1]);
    Ok(f.powu(k))
}
