//! Structured covariance matrices for the simulator.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    Identity,
    /// Entry (i, j) is `rho^|i-j|`.
    Ar1(f64),
    /// Unit diagonal, constant `rho` off the diagonal.
    CompoundSymmetric(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovSpec {
    pub kind: CovKind,
    pub dim: usize,
}

impl CovSpec {
    pub fn new(kind: CovKind, dim: usize) -> Self {
        CovSpec { kind, dim }
    }

    /// Checks the parameter range that keeps the matrix positive definite.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("covariance dimension must be at least 1".into()));
        }
        match self.kind {
            CovKind::Identity => Ok(()),
            CovKind::Ar1(rho) if rho.is_finite() && rho.abs() < 1.0 => Ok(()),
            CovKind::CompoundSymmetric(rho)
                if rho.is_finite() && rho < 1.0 && (self.dim == 1 || rho > -1.0 / (self.dim - 1) as f64) =>
            {
                Ok(())
            }
            _ => Err(Error::NotPositiveDefinite),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self.kind {
            CovKind::Identity => true,
            CovKind::Ar1(rho) => rho == 0.0 || self.dim == 1,
            CovKind::CompoundSymmetric(rho) => rho == 0.0 || self.dim == 1,
        }
    }
}

pub fn build_cov(spec: CovSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    Ok(Array2::from_shape_fn((spec.dim, spec.dim), |(i, j)| match spec.kind {
        CovKind::Identity => (i == j) as u8 as f64,
        CovKind::Ar1(rho) => rho.powi(i.abs_diff(j) as i32),
        CovKind::CompoundSymmetric(rho) => {
            if i == j {
                1.0
            } else {
                rho
            }
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn ar1_entries() {
        let s = build_cov(CovSpec::new(CovKind::Ar1(0.95), 3)).unwrap();
        let want = array![[1.0, 0.95, 0.9025], [0.95, 1.0, 0.95], [0.9025, 0.95, 1.0]];
        for (a, b) in s.iter().zip(want.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-15);
        }
        let z = build_cov(CovSpec::new(CovKind::Ar1(0.0), 4)).unwrap();
        assert_eq!(z, Array2::<f64>::eye(4));
    }

    #[test]
    fn compound_symmetric_entries() {
        let s = build_cov(CovSpec::new(CovKind::CompoundSymmetric(0.5), 2)).unwrap();
        assert_eq!(s, array![[1.0, 0.5], [0.5, 1.0]]);
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        assert!(build_cov(CovSpec::new(CovKind::Ar1(1.0), 3)).is_err());
        assert!(build_cov(CovSpec::new(CovKind::Ar1(-1.2), 3)).is_err());
        assert!(build_cov(CovSpec::new(CovKind::CompoundSymmetric(-0.5), 3)).is_err());
        assert!(build_cov(CovSpec::new(CovKind::CompoundSymmetric(-0.4), 3)).is_ok());
        assert!(build_cov(CovSpec::new(CovKind::Identity, 0)).is_err());
    }

    proptest! {
        #[test]
        fn ar1_is_positive_definite(rho in -0.99f64..0.99, dim in 1usize..25) {
            let s = build_cov(CovSpec::new(CovKind::Ar1(rho), dim)).unwrap();
            let m = DMatrix::from_fn(dim, dim, |i, j| s[[i, j]]);
            let eig = m.symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
        }
    }
}
