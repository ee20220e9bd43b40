//! Static-table estimator: `V` summed into the LSH buckets of `W`, read back
//! at the query's buckets.
//!
//! With `L` tables of `tau` hyperplane bits, `Σ_k T_k[f_k(x)]` is an
//! unbiased estimate of `Σ_i (1 − θ_i/π)^tau V_i` where `θ_i` is the angle
//! between `x` and `W_i`.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::lsh::LshEnsemble;
use crate::error::{size_err, Result};
use crate::Matrix;

/// `L × 2^tau × d_out` bucket sums scaled by `1/L`.
#[derive(Debug, Clone, PartialEq)]
pub struct YosoTables {
    tables: usize,
    rows: usize,
    d_out: usize,
    data: Vec<f64>,
}

impl YosoTables {
    /// `T[k][j] = (1/L) Σ_{f_k(W_i) = j} V_i`.
    pub fn build(ensemble: &LshEnsemble, v: &Matrix) -> Result<Self> {
        if v.rows() != ensemble.items() {
            return Err(size_err!(
                "V has {} rows but {} were hashed",
                v.rows(),
                ensemble.items()
            ));
        }
        let (l, rows, d_out) = (ensemble.tables(), 1usize << ensemble.tau(), v.cols());
        let mut data = vec![0.0; l * rows * d_out];
        let scale = 1.0 / l as f64;
        for k in 0..l {
            for code in 0..rows {
                let dst = &mut data[(k * rows + code) * d_out..][..d_out];
                for &i in ensemble.bucket(k, code as u32) {
                    for (d, s) in dst.iter_mut().zip(v.row(i)) {
                        *d += scale * s;
                    }
                }
            }
        }
        Ok(Self {
            tables: l,
            rows,
            d_out,
            data,
        })
    }

    pub fn row(&self, k: usize, code: u32) -> &[f64] {
        &self.data[(k * self.rows + code as usize) * self.d_out..][..self.d_out]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// `ŷ = Σ_k T_k[f_k(x)]` for every row of `x`.
pub fn yoso_estimate(x: &Matrix, ensemble: &LshEnsemble, tables: &YosoTables) -> Result<Matrix> {
    let codes = ensemble.hash_rows(x)?;
    let mut y = Matrix::zeros(x.rows(), tables.d_out);
    for (r, c) in codes.chunks_exact(tables.tables).enumerate() {
        let yr = y.row_mut(r);
        for (k, &code) in c.iter().enumerate() {
            for (o, t) in yr.iter_mut().zip(tables.row(k, code)) {
                *o += t;
            }
        }
    }
    Ok(y)
}

/// Expected value of the estimator: `Σ_i (1 − θ_i/π)^tau V_i`.
pub fn collision_weighted_sum(x: &Matrix, w: &Matrix, v: &Matrix, tau: usize) -> Result<Matrix> {
    let dots = x.matmul_t(w)?;
    let xn: Vec<f64> = x.rows_iter().map(norm).collect();
    let wn: Vec<f64> = w.rows_iter().map(norm).collect();
    let mut p = dots;
    for (r, xr) in xn.iter().enumerate() {
        for (i, d) in p.row_mut(r).iter_mut().enumerate() {
            let denom = xr * wn[i];
            let cos = if denom > 0.0 { (*d / denom).clamp(-1.0, 1.0) } else { 1.0 };
            *d = (1.0 - cos.acos() / core::f64::consts::PI).powi(tau as i32);
        }
    }
    p.matmul(v)
}

fn norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean squared error of the estimator against its expectation over the
/// rows of `x`, for one ensemble of `tables` tables.
pub fn yoso_mse(x: &Matrix, w: &Matrix, v: &Matrix, tables: usize, tau: usize, seed: u64) -> Result<f64> {
    let ens = LshEnsemble::build(w, tables, tau, seed)?;
    let t = YosoTables::build(&ens, v)?;
    let est = yoso_estimate(x, &ens, &t)?;
    let target = collision_weighted_sum(x, w, v, tau)?;
    Ok(sq_err(&est, &target) / est.data().len().max(1) as f64)
}

fn sq_err(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum()
}
