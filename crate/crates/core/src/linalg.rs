use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::abs;

/// Solves `a x = b` by full-pivot LU, rejecting numerically rank-deficient `a`.
pub(crate) fn solve(a: DMatrix<f64>, b: DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let lu = a.full_piv_lu();
    let u = lu.u();
    let d = u.nrows().min(u.ncols());
    let mut max = 0.0f64;
    let mut min = f64::INFINITY;
    for i in 0..d {
        let v = abs(u[(i, i)]);
        max = max.max(v);
        min = min.min(v);
    }
    if !(max > 0.0) || !(min > 1e-12 * max) || !min.is_finite() {
        return Err(Error::Singular(what));
    }
    lu.solve(&b).ok_or(Error::Singular(what))
}
