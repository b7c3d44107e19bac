//! Matrix-normal sampling through Cholesky factors of the row and column
//! covariances.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::Seed;

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower(cov: &Array2<f64>) -> Result<Array2<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n || n == 0 {
        return Err(Error::InvalidParameter("covariance must be square and non-empty".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if (cov[[i, j]] - cov[[j, i]]).abs() > 1e-12 * (1.0 + cov[[i, j]].abs()) {
                return Err(Error::InvalidParameter("covariance must be symmetric".into()));
            }
        }
    }
    let m = DMatrix::from_fn(n, n, |i, j| cov[[i, j]]);
    let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| l[(i, j)]))
}

/// Draws from the matrix normal with row covariance `row_chol·row_cholᵀ` and
/// column covariance `col_chol·col_cholᵀ`. `None` stands for the identity.
#[derive(Debug, Clone)]
pub struct MatrixNormal {
    rows: usize,
    cols: usize,
    row_chol: Option<Array2<f64>>,
    col_chol: Option<Array2<f64>>,
}

impl MatrixNormal {
    pub fn new(rows: usize, cols: usize, row_chol: Option<Array2<f64>>, col_chol: Option<Array2<f64>>) -> Result<Self> {
        if row_chol.as_ref().is_some_and(|l| l.dim() != (rows, rows))
            || col_chol.as_ref().is_some_and(|l| l.dim() != (cols, cols))
        {
            return Err(Error::InvalidParameter("Cholesky factor shape mismatch".into()));
        }
        Ok(MatrixNormal {
            rows,
            cols,
            row_chol,
            col_chol,
        })
    }

    pub fn from_covariances(row_cov: &Array2<f64>, col_cov: &Array2<f64>) -> Result<Self> {
        Self::new(
            row_cov.nrows(),
            col_cov.nrows(),
            Some(cholesky_lower(row_cov)?),
            Some(cholesky_lower(col_cov)?),
        )
    }

    /// Zero-mean draw. Entries of the standard normal matrix are filled in
    /// row-major order.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Array2<f64> {
        let mut w = Array2::from_shape_simple_fn((self.rows, self.cols), || rng.sample::<f64, _>(StandardNormal));
        if let Some(l) = &self.row_chol {
            w = l.dot(&w);
        }
        if let Some(l) = &self.col_chol {
            w = w.dot(&l.t());
        }
        w
    }
}

/// `mean + L_row · Z · L_colᵀ` with `Z` standard normal.
pub fn matnorm_sample(mean: &Array2<f64>, row_cov: &Array2<f64>, col_cov: &Array2<f64>, seed: Seed) -> Result<Array2<f64>> {
    if row_cov.nrows() != mean.nrows() || col_cov.nrows() != mean.ncols() {
        return Err(Error::InvalidParameter("covariance dimensions do not match the mean".into()));
    }
    let mn = MatrixNormal::from_covariances(row_cov, col_cov)?;
    Ok(mn.sample(&mut seed.rng()) + mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::cov::{build_cov, CovKind, CovSpec};
    use approx::assert_relative_eq;

    #[test]
    fn identity_covariances_give_standard_normals() {
        let mean = Array2::zeros((3, 4));
        let eye3 = Array2::eye(3);
        let eye4 = Array2::eye(4);
        let a = matnorm_sample(&mean, &eye3, &eye4, Seed::new(5)).unwrap();
        let plain = MatrixNormal::new(3, 4, None, None).unwrap().sample(&mut Seed::new(5).rng());
        for (x, y) in a.iter().zip(plain.iter()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-15);
        }
    }

    #[test]
    fn mean_is_added() {
        let mean = Array2::from_elem((2, 2), 10.0);
        let w = matnorm_sample(&mean, &Array2::eye(2), &Array2::eye(2), Seed::new(1)).unwrap();
        assert!(w.iter().all(|v| (v - 10.0).abs() < 8.0));
    }

    #[test]
    fn non_positive_definite_is_an_error() {
        let bad = ndarray::array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(cholesky_lower(&bad), Err(Error::NotPositiveDefinite)));
        let asym = ndarray::array![[1.0, 0.2], [0.1, 1.0]];
        assert!(cholesky_lower(&asym).is_err());
        let mean = Array2::zeros((2, 3));
        assert!(matnorm_sample(&mean, &Array2::eye(3), &Array2::eye(3), Seed::new(0)).is_err());
    }

    #[test]
    fn empirical_covariances_converge() {
        // Kronecker structure: cov(W[i,k], W[j,l]) = row[i,j]·col[k,l].
        let (r, c) = (6, 4);
        let row = build_cov(CovSpec::new(CovKind::Ar1(0.7), r)).unwrap();
        let col = build_cov(CovSpec::new(CovKind::CompoundSymmetric(0.3), c)).unwrap();
        let mn = MatrixNormal::from_covariances(&row, &col).unwrap();
        let mut rng = Seed::new(21).rng();
        let n = 5000;
        let mut row_acc = Array2::<f64>::zeros((r, r));
        let mut col_acc = Array2::<f64>::zeros((c, c));
        for _ in 0..n {
            let w = mn.sample(&mut rng);
            row_acc += &w.dot(&w.t());
            col_acc += &w.t().dot(&w);
        }
        // E[W Wᵀ] = tr(col)·row and E[Wᵀ W] = tr(row)·col.
        let row_emp = row_acc / (n as f64 * c as f64);
        let col_emp = col_acc / (n as f64 * r as f64);
        let frob = |a: &Array2<f64>, b: &Array2<f64>| (a - b).mapv(|v| v * v).sum().sqrt();
        assert!(frob(&row_emp, &row) < 0.1, "{}", frob(&row_emp, &row));
        assert!(frob(&col_emp, &col) < 0.1, "{}", frob(&col_emp, &col));
    }
}
