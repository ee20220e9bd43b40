//! Closed-form single-bit special cases and their embeddings as lookup layers.
//!
//! With `tau = 1`, both codes gathered and `T_k[0] = 0`, the softmax variant
//! computes `Σ_k sigmoid(2 z_k) V_k` and the scaled variant computes
//! `Σ_k z_k · sigmoid(2 z_k) V_k`. Choosing `z_k = 0.5⟨x, W_k⟩` gives a
//! sigmoid FFN; `z_k = 0.851⟨x, W_k⟩` with `T_k[1] = 1.175 V_k` gives a fast
//! GELU approximation.

use alloc::vec;

use num_traits::Float;

use super::{HashTables, LookupConfig, LookupFfn, Variant};
use crate::error::{size_err, Result};
use crate::proj::{ProjKind, Projection};
use crate::Matrix;

/// Input scale of the GELU construction.
pub const GELU_INPUT_SCALE: f64 = 0.851;
/// Output scale of the GELU construction.
pub const GELU_OUTPUT_SCALE: f64 = 1.175;

pub fn gelu_exact(u: f64) -> f64 {
    0.5 * u * (1.0 + libm::erf(u / core::f64::consts::SQRT_2))
}

/// `1.175 · z · e^z / (e^z + e^{-z})` with `z = 0.851 u`.
pub fn gelu_approx(u: f64) -> f64 {
    let z = GELU_INPUT_SCALE * u;
    GELU_OUTPUT_SCALE * z * sigmoid(2.0 * z)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Largest `|gelu_approx(u) - gelu_exact(u)|` on an evenly spaced grid of
/// `points` over `[lo, hi]`; returns `(deviation, u at the maximum)`.
pub fn gelu_approx_max_deviation(lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let points = points.max(2);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let u = lo + step * i as f64;
            ((gelu_approx(u) - gelu_exact(u)).abs(), u)
        })
        .fold((0.0, lo), |best, cur| if cur.0 > best.0 { cur } else { best })
}

fn check_ffn(w: &Matrix, v: &Matrix) -> Result<()> {
    if w.rows() != v.rows() || w.rows() == 0 {
        return Err(size_err!(
            "W has {} units but V has {}",
            w.rows(),
            v.rows()
        ));
    }
    Ok(())
}

/// `y = Σ_k 1.175 z_k e^{z_k} V_k / (e^{z_k} + e^{-z_k})`, `z_k = 0.851⟨x, W_k⟩`.
/// `w` is `h × d_in`, `v` is `h × d_out`.
pub fn gelu_tau1_reference(x: &Matrix, w: &Matrix, v: &Matrix) -> Result<Matrix> {
    check_ffn(w, v)?;
    let pre = x.matmul_t(w)?;
    let mut act = pre;
    act.data_mut().iter_mut().for_each(|u| *u = gelu_approx(*u));
    act.matmul(v)
}

impl LookupFfn {
    fn single_bit(w: &Matrix, v: &Matrix, variant: Variant, in_scale: f64, out_scale: f64) -> Result<Self> {
        check_ffn(w, v)?;
        let (h, d_in, d_out) = (w.rows(), w.cols(), v.cols());
        let cfg = LookupConfig::new(d_in, d_out, h, 1)
            .with_variant(variant)
            .with_neighbors(2);
        let spec = cfg.projection_spec(ProjKind::Dense)?;
        // dense projection is d_in × h: column k is in_scale · W_k
        let r = Matrix::from_fn(d_in, h, |i, k| in_scale * w.get(k, i));
        let proj = Projection::from_params(spec, r.into_vec())?;
        let mut t = vec![0.0; h * 2 * d_out];
        for k in 0..h {
            let dst = &mut t[(2 * k + 1) * d_out..(2 * k + 2) * d_out];
            for (d, s) in dst.iter_mut().zip(v.row(k)) {
                *d = out_scale * s;
            }
        }
        let tables = HashTables::from_vec(&cfg, t)?;
        Self::from_parts(cfg, proj, tables)
    }

    /// Single-bit layer equal to the sigmoid FFN `Σ_k sigmoid(⟨x, W_k⟩) V_k`.
    pub fn sigmoid_embedding(w: &Matrix, v: &Matrix) -> Result<Self> {
        Self::single_bit(w, v, Variant::SigmoidTau1, 0.5, 1.0)
    }

    /// Single-bit scaled layer equal to [`gelu_tau1_reference`].
    pub fn gelu_embedding(w: &Matrix, v: &Matrix) -> Result<Self> {
        Self::single_bit(w, v, Variant::GeluTau1, GELU_INPUT_SCALE, GELU_OUTPUT_SCALE)
    }
}
