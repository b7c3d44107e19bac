//! Latin hypercube designs on the unit cube.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

/// `n × dims` design: in every column each of the `n` equal-width strata of
/// `[0, 1)` holds exactly one point, placed uniformly within its stratum.
pub fn latin_hypercube<R: Rng>(n: usize, dims: usize, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros((n, dims));
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..dims {
        strata.shuffle(rng);
        for (i, &k) in strata.iter().enumerate() {
            out[[i, j]] = (k as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    out
}

/// Maps a unit value onto `lo..=hi`, one equal share of the interval per integer.
pub fn unit_to_int(u: f64, lo: usize, hi: usize) -> usize {
    let span = (hi - lo + 1) as f64;
    lo + ((u * span).floor() as usize).min(hi - lo)
}

pub fn unit_to_range(u: f64, lo: f64, hi: f64) -> f64 {
    lo + u * (hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn one_point_per_stratum(n in 1usize..200, dims in 1usize..6, seed in any::<u64>()) {
            let d = latin_hypercube(n, dims, &mut Seed::new(seed).rng());
            for col in d.columns() {
                let mut seen = vec![false; n];
                for &u in col {
                    prop_assert!((0.0..1.0).contains(&u));
                    let b = ((u * n as f64).floor() as usize).min(n - 1);
                    prop_assert!(!seen[b]);
                    seen[b] = true;
                }
            }
        }
    }

    #[test]
    fn integer_mapping_covers_range() {
        assert_eq!(unit_to_int(0.0, 5, 10), 5);
        assert_eq!(unit_to_int(0.999_999, 5, 10), 10);
        assert_eq!(unit_to_int(0.5, 5, 10), 8);
        assert_eq!(unit_to_range(0.5, 0.1, 2.0), 1.05);
    }
}
