//! Unnormalized fast Walsh–Hadamard transform in Sylvester (natural) order.
//!
//! `H[i][j] = (-1)^popcount(i & j)`. No `1/sqrt(n)` factor is applied, so
//! `H·H = n·I`; callers fold any normalization into neighbouring parameters.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flops::{Stage, Tally};
use crate::Matrix;

/// A validated power-of-two transform size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HadamardOrder {
    n: usize,
    log2n: u32,
}

impl HadamardOrder {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        Ok(Self {
            n,
            log2n: n.trailing_zeros(),
        })
    }

    #[inline]
    pub fn n(self) -> usize {
        self.n
    }

    #[inline]
    pub fn log2n(self) -> u32 {
        self.log2n
    }

    /// Additions performed by one transform: `n·log2(n)`.
    pub fn additions(self) -> u64 {
        self.n as u64 * self.log2n as u64
    }
}

/// Replaces `v` with `H·v`. Fails if `v.len()` is not a power of two.
pub fn fwht_inplace(v: &mut [f64]) -> Result<()> {
    HadamardOrder::new(v.len())?;
    fwht_unchecked(v, &());
    Ok(())
}

/// Butterfly kernel; `v.len()` must already be a power of two.
#[inline]
pub(crate) fn fwht_unchecked<T: Tally>(v: &mut [f64], tally: &T) {
    let n = v.len();
    let mut half = 1;
    while half < n {
        for block in v.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        tally.add(Stage::Hash, n as u64);
        half *= 2;
    }
}

/// Transforms every row of `m` independently.
pub fn fwht_rows(m: &mut Matrix) -> Result<()> {
    let cols = m.cols();
    HadamardOrder::new(cols)?;
    for chunk in m.data_mut().chunks_exact_mut(cols) {
        fwht_unchecked(chunk, &());
    }
    Ok(())
}

/// Dense `n×n` Sylvester Hadamard matrix.
pub fn hadamard_matrix(order: HadamardOrder) -> Matrix {
    let n = order.n();
    Matrix::from_fn(n, n, |i, j| {
        if (i & j).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    })
}

/// `H·v` by materializing `H`; `O(n²)` reference path.
pub fn naive_hadamard_matmul(v: &[f64]) -> Result<Vec<f64>> {
    let order = HadamardOrder::new(v.len())?;
    let h = hadamard_matrix(order);
    let mut out = vec![0.0; order.n()];
    for (i, o) in out.iter_mut().enumerate() {
        *o = h.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flops::OpCounter;
    use crate::rng::{gaussian_vec, seeded};

    #[test]
    fn order_one_is_identity() {
        let mut v = [3.5];
        fwht_inplace(&mut v).unwrap();
        assert_eq!(v, [3.5]);
    }

    #[test]
    fn first_basis_vector_maps_to_ones() {
        let mut v = [1.0, 0.0, 0.0, 0.0];
        fwht_inplace(&mut v).unwrap();
        assert_eq!(v, [1.0; 4]);
    }

    #[test]
    fn naive_small_cases() {
        let (a, b) = (2.5, -0.75);
        assert_eq!(naive_hadamard_matmul(&[a, b]).unwrap(), alloc::vec![a + b, a - b]);
        assert_eq!(
            naive_hadamard_matmul(&[1.0; 4]).unwrap(),
            alloc::vec![4.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn matches_dense_oracle_n8_and_n16() {
        let mut rng = seeded(8);
        for n in [8, 16] {
            let v = gaussian_vec(&mut rng, n, 1.0);
            let mut fast = v.clone();
            fwht_inplace(&mut fast).unwrap();
            let slow = naive_hadamard_matmul(&v).unwrap();
            for (f, s) in fast.iter().zip(&slow) {
                assert!((f - s).abs() <= 1e-12 * s.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert_eq!(fwht_inplace(&mut [0.0; 6]), Err(Error::NotPowerOfTwo(6)));
        assert_eq!(fwht_inplace(&mut []), Err(Error::NotPowerOfTwo(0)));
        assert!(naive_hadamard_matmul(&[1.0; 3]).is_err());
        assert!(fwht_rows(&mut Matrix::zeros(2, 12)).is_err());
    }

    #[test]
    fn counts_n_log_n_additions() {
        let counter = OpCounter::default();
        let mut v = alloc::vec![1.0; 1024];
        fwht_unchecked(&mut v, &counter);
        assert_eq!(counter.get(Stage::Hash), 10240);
        assert_eq!(HadamardOrder::new(1024).unwrap().additions(), 10240);
    }

    #[test]
    fn batched_rows_match_single() {
        let mut rng = seeded(3);
        let m = Matrix::from_vec(3, 32, gaussian_vec(&mut rng, 96, 1.0)).unwrap();
        let mut batched = m.clone();
        fwht_rows(&mut batched).unwrap();
        for r in 0..3 {
            let mut single = m.row(r).to_vec();
            fwht_inplace(&mut single).unwrap();
            assert_eq!(batched.row(r), &single[..]);
        }
    }
}
