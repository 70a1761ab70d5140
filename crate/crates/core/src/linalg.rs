//! Dense linear-algebra helpers: SVD-based minimum-norm least squares and
//! symmetric pseudoinverses.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative cutoff for singular values: `max(rows, cols) * eps`.
pub fn default_rtol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON
}

fn check_finite_matrix(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_finite_vector(a: &DVector<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Minimum-norm solution of `min ||a x - b||_2` through a thin SVD.
///
/// Singular values below `rtol * sigma_max` are treated as zero.
pub fn lstsq_min_norm(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rtol: Option<f64>,
) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: b.len(),
            context: "least-squares right-hand side".into(),
        });
    }
    check_finite_matrix(a, "least-squares matrix")?;
    check_finite_vector(b, "least-squares right-hand side")?;
    if m == 0 || n == 0 {
        return Ok(DVector::zeros(n));
    }
    let rtol = rtol.unwrap_or_else(|| default_rtol(m, n));
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let s = &svd.singular_values;
    let s_max = s.iter().cloned().fold(0.0_f64, f64::max);
    if s_max == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let cutoff = rtol * s_max;
    let utb = u.transpose() * b;
    let mut x = DVector::zeros(n);
    for (k, &sk) in s.iter().enumerate() {
        if sk > cutoff {
            let coef = utb[k] / sk;
            x.axpy(coef, &v_t.row(k).transpose(), 1.0);
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("least-squares solution".into()));
    }
    Ok(x)
}

/// Minimum-norm minimizer of `||f x - c||_W^2` with `W = diag(w)`.
///
/// Equal to `(F^T W F)^+ F^T W C`; computed from the SVD of `W^{1/2} F`.
pub fn weighted_lstsq(
    f: &DMatrix<f64>,
    c: &DVector<f64>,
    w: &DVector<f64>,
    rtol: Option<f64>,
) -> Result<DVector<f64>> {
    let m = f.nrows();
    if c.len() != m || w.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: if c.len() != m { c.len() } else { w.len() },
            context: "weighted least squares rows".into(),
        });
    }
    check_finite_vector(w, "weights")?;
    if w.iter().any(|&wi| wi <= 0.0) {
        return Err(Error::InvalidConfig(
            "weights must be strictly positive".into(),
        ));
    }
    let sqrt_w = w.map(f64::sqrt);
    let mut a = f.clone();
    for (mut row, &s) in a.row_iter_mut().zip(sqrt_w.iter()) {
        row *= s;
    }
    let b = c.component_mul(&sqrt_w);
    lstsq_min_norm(&a, &b, rtol)
}

/// Moore-Penrose pseudoinverse of a symmetric matrix via its eigendecomposition.
pub fn pinv_symmetric(a: &DMatrix<f64>, rtol: Option<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
            context: "symmetric pseudoinverse".into(),
        });
    }
    check_finite_matrix(a, "symmetric matrix")?;
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let mut out = DMatrix::zeros(n, n);
    if lam_max == 0.0 {
        return Ok(out);
    }
    let cutoff = rtol.unwrap_or_else(|| default_rtol(n, n)) * lam_max;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    Ok(out)
}

/// Largest absolute eigenvalue of a symmetric matrix (its spectral norm).
pub fn spectral_norm_symmetric(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, l| m.max(l.abs()))
}

/// Scalar empirical variance of the entries of a vector:
/// `(n x^T x - (sum x)^2) / n^2`.
pub fn empirical_var(x: &[f64]) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let sum: f64 = x.iter().sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    ((nf * sq - sum * sum) / (nf * nf)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unweighted_mean() {
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 3.0]);
        let x = weighted_lstsq(&f, &c, &DVector::from_element(2, 1.0), None).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn weighted_mean() {
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 3.0]);
        let x = weighted_lstsq(&f, &c, &DVector::from_vec(vec![3.0, 1.0]), None).unwrap();
        assert_relative_eq!(x[0], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn rank_deficient_min_norm() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = DVector::from_vec(vec![2.0, 2.0]);
        let x = weighted_lstsq(&f, &c, &DVector::from_element(2, 1.0), None).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_finite_and_nonpositive_weights() {
        let f = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        let c = DVector::from_vec(vec![1.0, 3.0]);
        let w = DVector::from_element(2, 1.0);
        assert!(matches!(
            weighted_lstsq(&f, &c, &w, None),
            Err(Error::NonFinite(_))
        ));
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let w = DVector::from_vec(vec![1.0, 0.0]);
        assert!(weighted_lstsq(&f, &c, &w, None).is_err());
    }

    #[test]
    fn symmetric_pinv_of_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv_symmetric(&a, None).unwrap();
        // pinv of [[1,1],[1,1]] is [[.25,.25],[.25,.25]]
        for v in p.iter() {
            assert_relative_eq!(*v, 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn var_operator() {
        assert_relative_eq!(empirical_var(&[1.0, 3.0]), 1.0, epsilon = 1e-15);
        assert_eq!(empirical_var(&[2.0, 2.0, 2.0]), 0.0);
    }
}
