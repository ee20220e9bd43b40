//! The dense two-layer FFN `y = σ(xWᵀ)V`.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{size_err, Result};
use crate::matrix::gemm;
use crate::flops::{Stage, Tally};
use crate::lookup::gelu_exact;
use crate::rng::{gaussian_matrix, seeded};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Sigmoid,
    /// Softmax across the `t` hidden units of each row.
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    /// `t × d_in`.
    pub w: Matrix,
    /// `t × d_out`.
    pub v: Matrix,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    x: Matrix,
    pre: Matrix,
    act: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnGrads {
    pub x: Matrix,
    pub w: Matrix,
    pub v: Matrix,
}

/// Pre-allocated hidden buffer for [`FfnParams::infer_into`].
#[derive(Debug, Clone)]
pub struct FfnWorkspace {
    tile: usize,
    hidden: Vec<f64>,
}

impl FfnWorkspace {
    pub fn new(p: &FfnParams, tile: usize) -> Self {
        let tile = tile.max(1);
        Self {
            tile,
            hidden: alloc::vec![0.0; tile * p.hidden()],
        }
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn gelu_grad(u: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(u / core::f64::consts::SQRT_2));
    let pdf = (-0.5 * u * u).exp() / (2.0 * core::f64::consts::PI).sqrt();
    cdf + u * pdf
}

impl FfnParams {
    pub fn new(w: Matrix, v: Matrix, activation: Activation) -> Result<Self> {
        if w.rows() != v.rows() || w.rows() == 0 {
            return Err(size_err!(
                "W has {} hidden units, V has {}",
                w.rows(),
                v.rows()
            ));
        }
        w.ensure_finite("ffn W")?;
        v.ensure_finite("ffn V")?;
        Ok(Self { w, v, activation })
    }

    /// `W ~ N(0, 1/d_in)`, `V ~ N(0, 1/t)`.
    pub fn init(d_in: usize, t: usize, d_out: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let w = gaussian_matrix(&mut rng, t, d_in, 1.0 / (d_in as f64).sqrt());
        let v = gaussian_matrix(&mut rng, t, d_out, 1.0 / (t as f64).sqrt());
        Self { w, v, activation }
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.v.cols()
    }

    fn activate(&self, pre: &Matrix) -> Matrix {
        let mut a = pre.clone();
        self.activate_in_place(a.data_mut());
        a
    }

    /// Applies the activation to whole rows of `hidden()` values.
    fn activate_in_place(&self, h: &mut [f64]) {
        match self.activation {
            Activation::Gelu => h.iter_mut().for_each(|u| *u = gelu_exact(*u)),
            Activation::Sigmoid => h.iter_mut().for_each(|u| *u = sigmoid(*u)),
            Activation::Softmax => {
                for row in h.chunks_exact_mut(self.hidden()) {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for u in row.iter_mut() {
                        *u = (*u - max).exp();
                        sum += *u;
                    }
                    row.iter_mut().for_each(|u| *u /= sum);
                }
            }
        }
    }

    /// Allocation-free forward on row-major buffers, one GEMM pair per tile.
    pub fn infer_into<T: Tally>(&self, x: &[f64], out: &mut [f64], ws: &mut FfnWorkspace, tally: &T) {
        let (d_in, t, d_out) = (self.d_in(), self.hidden(), self.d_out());
        for (xt, yt) in x.chunks(ws.tile * d_in).zip(out.chunks_mut(ws.tile * d_out)) {
            let rows = xt.len() / d_in;
            let h = &mut ws.hidden[..rows * t];
            gemm(1.0, xt, (rows, d_in), false, self.w.data(), t, true, 0.0, h);
            self.activate_in_place(h);
            gemm(1.0, h, (rows, t), false, self.v.data(), d_out, false, 0.0, yt);
            tally.add(Stage::Other, rows as u64 * (2 * d_in as u64 * t as u64 + 2 * t as u64 * d_out as u64));
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, FfnCache)> {
        self.forward_with(x, &())
    }

    /// Forward pass; both GEMMs are charged to [`Stage::Other`].
    pub fn forward_with<T: Tally>(&self, x: &Matrix, tally: &T) -> Result<(Matrix, FfnCache)> {
        if x.cols() != self.d_in() {
            return Err(size_err!(
                "ffn expects {} input columns, got {}",
                self.d_in(),
                x.cols()
            ));
        }
        let pre = x.matmul_t(&self.w)?;
        let act = self.activate(&pre);
        let y = act.matmul(&self.v)?;
        let n = x.rows() as u64;
        let t = self.hidden() as u64;
        tally.add(
            Stage::Other,
            n * (2 * self.d_in() as u64 * t + 2 * t * self.d_out() as u64),
        );
        y.ensure_finite("ffn output")?;
        Ok((
            y,
            FfnCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(&self, grad_y: &Matrix, cache: &FfnCache) -> Result<FfnGrads> {
        if grad_y.shape() != (cache.x.rows(), self.d_out()) {
            return Err(size_err!(
                "grad_y is {}x{}, expected {}x{}",
                grad_y.rows(),
                grad_y.cols(),
                cache.x.rows(),
                self.d_out()
            ));
        }
        let gv = cache.act.t_matmul(grad_y)?;
        let mut gu = grad_y.matmul_t(&self.v)?;
        match self.activation {
            Activation::Gelu => {
                for (g, u) in gu.data_mut().iter_mut().zip(cache.pre.data()) {
                    *g *= gelu_grad(*u);
                }
            }
            Activation::Sigmoid => {
                for (g, a) in gu.data_mut().iter_mut().zip(cache.act.data()) {
                    *g *= a * (1.0 - a);
                }
            }
            Activation::Softmax => {
                for r in 0..gu.rows() {
                    let a = cache.act.row(r);
                    let g = gu.row_mut(r);
                    let dot: f64 = a.iter().zip(g.iter()).map(|(p, q)| p * q).sum();
                    for (gi, ai) in g.iter_mut().zip(a) {
                        *gi = ai * (*gi - dot);
                    }
                }
            }
        }
        let gw = gu.t_matmul(&cache.x)?;
        let gx = gu.matmul(&self.w)?;
        Ok(FfnGrads { x: gx, w: gw, v: gv })
    }

    /// Parameters flattened as `W` then `V`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.w.data().to_vec();
        p.extend_from_slice(self.v.data());
        p
    }
}
