//! Small dense solves used by the regression routines.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which an equilibrated normal matrix is
/// treated as singular.
const RANK_TOL: f64 = 1e-12;

/// Solve `m x = b` for symmetric positive (semi)definite `m`.
///
/// The system is equilibrated by its diagonal first, so the rank check does
/// not depend on column scaling.
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let p = m.nrows();
    if p == 0 {
        return Ok(DVector::zeros(0));
    }
    let diag: Vec<f64> = (0..p).map(|i| m[(i, i)]).collect();
    if diag.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::RankDeficient(format!("{context}: zero column")));
    }
    let scale: Vec<f64> = diag.iter().map(|d| d.sqrt().recip()).collect();
    let scaled = DMatrix::from_fn(p, p, |i, j| m[(i, j)] * scale[i] * scale[j]);
    let eig = scaled.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > RANK_TOL * max) {
        return Err(Error::RankDeficient(format!(
            "{context}: condition {:.3e}",
            max / min.max(f64::MIN_POSITIVE)
        )));
    }
    let rhs = DVector::from_fn(p, |i, _| b[i] * scale[i]);
    let chol = scaled
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(format!("{context}: not positive definite")))?;
    let z = chol.solve(&rhs);
    Ok(DVector::from_fn(p, |i, _| z[i] * scale[i]))
}

/// Prepend a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Weighted least squares `argmin sum w_i (y_i - x_i b)^2`.
pub fn wls(design: &DMatrix<f64>, y: &[f64], weights: &[f64], context: &str) -> Result<DVector<f64>> {
    let n = design.nrows();
    let p = design.ncols();
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let row = design.row(i);
        for a in 0..p {
            let wa = w * row[a];
            xtwy[a] += wa * y[i];
            for b in a..p {
                xtwx[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    solve_spd(&xtwx, &xtwy, context)
}

/// Ordinary least squares.
pub fn ols(design: &DMatrix<f64>, y: &[f64], context: &str) -> Result<DVector<f64>> {
    wls(design, y, &vec![1.0; design.nrows()], context)
}
