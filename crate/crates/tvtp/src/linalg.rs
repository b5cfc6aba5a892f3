//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Everything here operates on matrices of size K×K (regimes) or q×q (free
//! parameters), both small, so dense factorizations are always appropriate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TvtpError};

/// Stationary distribution of a row-stochastic matrix: the left eigenvector
/// `pi Q = pi` with entries summing to one.
///
/// Solved as the linear system `(Q' - I) pi = 0` with the last equation
/// replaced by the normalization constraint.
pub fn stationary_distribution(q: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = q.nrows();
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let mut a = q.transpose() - DMatrix::<f64>::identity(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    b[k - 1] = 1.0;
    let lu = a.lu();
    let pi = lu
        .solve(&b)
        .ok_or_else(|| TvtpError::Numeric("singular system for stationary distribution".into()))?;
    let mut out: Vec<f64> = pi.iter().copied().collect();
    // Entries of a stochastic-kernel stationary vector are positive; tiny
    // negative values can only come from rounding.
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v = (*v / sum).max(0.0);
    }
    let sum2: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum2;
    }
    Ok(out)
}

/// Inverse of a square matrix, with a condition-number estimate attached to
/// the error message when the matrix is numerically singular.
pub fn invert(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    match m.clone().try_inverse() {
        Some(inv) => Ok(inv),
        None => {
            let svd = m.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            Err(TvtpError::Numeric(format!(
                "{what} is singular (condition number estimate {cond:.3e})"
            )))
        }
    }
}

/// Eigenvalues of a symmetric matrix (ascending order not guaranteed).
#[cfg_attr(not(test), allow(dead_code))]
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().symmetric_eigen().eigenvalues.iter().copied().collect()
}

/// True when `-h` is positive definite, i.e. `h` is negative definite.
pub fn is_negative_definite(h: &DMatrix<f64>) -> bool {
    let neg = -h.clone();
    neg.cholesky().is_some()
}

/// Symmetrize in place: `(M + M') / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_of_symmetric_chain_is_uniform() {
        let q = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let pi = stationary_distribution(&q).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-14);
        assert!((pi[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn stationary_matches_closed_form_two_state() {
        // pi0 = (1 - p11) / (2 - p00 - p11)
        let (p00, p11) = (0.95, 0.7);
        let q = DMatrix::from_row_slice(2, 2, &[p00, 1.0 - p00, 1.0 - p11, p11]);
        let pi = stationary_distribution(&q).unwrap();
        let expect = (1.0 - p11) / (2.0 - p00 - p11);
        assert!((pi[0] - expect).abs() < 1e-14);
        let left = DMatrix::from_row_slice(1, 2, &pi) * &q;
        assert!((left[(0, 0)] - pi[0]).abs() < 1e-14);
    }

    #[test]
    fn invert_reports_singularity() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let err = invert(&m, "test matrix").unwrap_err();
        assert!(err.to_string().contains("singular"));
    }

    #[test]
    fn negative_definite_check() {
        let h = DMatrix::from_row_slice(2, 2, &[-2.0, 0.1, 0.1, -3.0]);
        assert!(is_negative_definite(&h));
        let h2 = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -3.0]);
        assert!(!is_negative_definite(&h2));
    }
}
