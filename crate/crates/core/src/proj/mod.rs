//! Projections producing soft hash codes.
//!
//! Three of the four kinds are *stage stacks*: a row vector is zero-padded to
//! the power-of-two `width`, then each stage multiplies it by a block-diagonal
//! matrix and applies the unnormalized Hadamard transform, and the result is
//! truncated to `d_out`. They differ only in their stage list:
//!
//! | kind       | stages                         | learnable |
//! |------------|--------------------------------|-----------|
//! | `Bh`       | `stages` × block size `block`  | yes       |
//! | `Acdc`     | `2·depth` diagonals (A_i, D_i) | yes       |
//! | `SignFlip` | 3 fixed ±1 diagonals           | no        |
//!
//! A diagonal is a block-diagonal matrix with block size 1. `Dense` is a
//! plain `d_in × d_out` matrix.

mod approx;
mod stack;

pub use approx::{matrix_approx_experiment, ApproxHyper, ApproxResult};

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use num_traits::Float;

use crate::error::{size_err, Error, Result};
use crate::flops::{Stage, Tally};
use crate::matrix::gemm;
use crate::rng::{gaussian_vec, seeded, sign_vec};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjKind {
    Dense,
    /// `R = Π_{i=1..stages} B_i H` with `block × block` diagonal blocks.
    Bh { stages: usize, block: usize },
    /// Hadamard variant of ACDC: `R = Π_{i=1..depth} A_i H D_i H`.
    Acdc { depth: usize },
    /// `R = D_1 H D_2 H D_3 H` with fixed random signs.
    SignFlip,
}

impl ProjKind {
    pub fn code(self) -> u8 {
        match self {
            ProjKind::Dense => 0,
            ProjKind::Bh { .. } => 1,
            ProjKind::Acdc { .. } => 2,
            ProjKind::SignFlip => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProjKind::Dense => "dense",
            ProjKind::Bh { .. } => "bh",
            ProjKind::Acdc { .. } => "acdc",
            ProjKind::SignFlip => "signflip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionSpec {
    d_in: usize,
    d_out: usize,
    width: usize,
    kind: ProjKind,
}

impl ProjectionSpec {
    pub fn new(d_in: usize, d_out: usize, kind: ProjKind) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(size_err!("projection widths must be positive, got {d_in}->{d_out}"));
        }
        let width = d_in.max(d_out).next_power_of_two();
        match kind {
            ProjKind::Bh { stages, block } => {
                if stages == 0 {
                    return Err(Error::Config("BH needs at least one stage".into()));
                }
                if block == 0 || block > width || !width.is_multiple_of(block) {
                    return Err(size_err!("block size {block} does not divide width {width}"));
                }
            }
            ProjKind::Acdc { depth: 0 } => {
                return Err(Error::Config("ACDC depth must be at least 1".into()));
            }
            _ => {}
        }
        Ok(Self {
            d_in,
            d_out,
            width,
            kind,
        })
    }

    #[inline]
    pub fn d_in(&self) -> usize {
        self.d_in
    }

    #[inline]
    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// Internal transform width: smallest power of two `>= max(d_in, d_out)`.
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn kind(&self) -> ProjKind {
        self.kind
    }

    /// Block size of every stage for stage-stack kinds; empty for `Dense`.
    pub(crate) fn stage_blocks(&self) -> Vec<usize> {
        match self.kind {
            ProjKind::Dense => Vec::new(),
            ProjKind::Bh { stages, block } => vec![block; stages],
            ProjKind::Acdc { depth } => vec![1; 2 * depth],
            ProjKind::SignFlip => vec![1; 3],
        }
    }

    /// Number of stored reals (including the fixed signs of `SignFlip`).
    pub fn stored_len(&self) -> usize {
        match self.kind {
            ProjKind::Dense => self.d_in * self.d_out,
            _ => self.stage_blocks().iter().map(|b| self.width * b).sum(),
        }
    }
}

/// Activations kept by [`Projection::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ProjCache {
    rows: usize,
    /// Dense: the input. Stage stacks: the padded input of every stage.
    saved: Vec<Matrix>,
}

/// Reusable per-row buffers for allocation-free inference.
#[derive(Debug, Clone)]
pub struct ProjScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ProjScratch {
    pub fn new(spec: &ProjectionSpec) -> Self {
        Self {
            a: vec![0.0; spec.width()],
            b: vec![0.0; spec.width()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    spec: ProjectionSpec,
    params: Vec<f64>,
}

impl Projection {
    /// Seeded initialization.
    ///
    /// * Dense: `N(0, 1/d_in)`.
    /// * BH: block entries `N(0, 1/(block·width))`, so every
    ///   (block, Hadamard) stage preserves the variance of its input.
    /// * ACDC: random signs scaled by `width^{-1/2}`; each (diagonal, H)
    ///   pair is then orthogonal and the whole operator has unit gain.
    /// * SignFlip: random ±1.
    pub fn init(spec: ProjectionSpec, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let params = Self::init_params(&spec, &mut rng);
        Self { spec, params }
    }

    fn init_params(spec: &ProjectionSpec, rng: &mut impl Rng) -> Vec<f64> {
        let w = spec.width() as f64;
        match spec.kind() {
            ProjKind::Dense => {
                gaussian_vec(rng, spec.stored_len(), 1.0 / (spec.d_in() as f64).sqrt())
            }
            ProjKind::Bh { block, .. } => {
                gaussian_vec(rng, spec.stored_len(), 1.0 / (block as f64 * w).sqrt())
            }
            ProjKind::Acdc { .. } => {
                let s = 1.0 / w.sqrt();
                sign_vec(rng, spec.stored_len()).into_iter().map(|v| v * s).collect()
            }
            ProjKind::SignFlip => sign_vec(rng, spec.stored_len()),
        }
    }

    pub fn from_params(spec: ProjectionSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.stored_len() {
            return Err(size_err!(
                "{} projection needs {} values, got {}",
                spec.kind().name(),
                spec.stored_len(),
                params.len()
            ));
        }
        if spec.kind() == ProjKind::SignFlip && params.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Config("sign-flip entries must be exactly ±1".into()));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "projection parameters",
            });
        }
        Ok(Self { spec, params })
    }

    #[inline]
    pub fn spec(&self) -> &ProjectionSpec {
        &self.spec
    }

    /// All stored reals in declaration order (stage by stage, block by
    /// block, each block row-major; dense is `d_in × d_out` row-major).
    #[inline]
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    #[inline]
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_trainable(&self) -> bool {
        self.spec.kind() != ProjKind::SignFlip
    }

    /// Block `blk` of stage `stage`, `b×b` row-major.
    pub fn block(&self, stage: usize, blk: usize) -> &[f64] {
        let blocks = self.spec.stage_blocks();
        let b = blocks[stage];
        let off: usize = blocks[..stage].iter().map(|bs| bs * self.spec.width()).sum();
        &self.params[off + blk * b * b..off + (blk + 1) * b * b]
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.d_in() {
            return Err(size_err!(
                "projection expects {} input columns, got {}",
                self.spec.d_in(),
                x.cols()
            ));
        }
        x.ensure_finite("projection input")
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ProjCache)> {
        self.forward_with(x, &())
    }

    pub(crate) fn forward_with<T: Tally>(&self, x: &Matrix, tally: &T) -> Result<(Matrix, ProjCache)> {
        self.check_input(x)?;
        let (out, saved) = match self.spec.kind() {
            ProjKind::Dense => {
                tally.add(
                    Stage::Hash,
                    2 * (x.rows() * self.spec.d_in() * self.spec.d_out()) as u64,
                );
                let r = Matrix::from_vec(self.spec.d_in(), self.spec.d_out(), self.params.clone())?;
                (x.matmul(&r)?, vec![x.clone()])
            }
            _ => stack::forward(&self.spec, &self.params, x, tally),
        };
        out.ensure_finite("projection output")?;
        Ok((
            out,
            ProjCache {
                rows: x.rows(),
                saved,
            },
        ))
    }

    /// Forward without keeping activations.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut out = Matrix::zeros(x.rows(), self.spec.d_out());
        let mut scratch = ProjScratch::new(&self.spec);
        self.apply_into(x.data(), out.data_mut(), &mut scratch, &());
        out.ensure_finite("projection output")?;
        Ok(out)
    }

    /// Allocation-free forward on raw row-major buffers; `x.len()` must be a
    /// multiple of `d_in` and `out` must hold the matching rows of `d_out`.
    pub fn apply_into<T: Tally>(&self, x: &[f64], out: &mut [f64], scratch: &mut ProjScratch, tally: &T) {
        let (d_in, d_out) = (self.spec.d_in(), self.spec.d_out());
        let rows = x.len() / d_in;
        debug_assert_eq!(out.len(), rows * d_out);
        match self.spec.kind() {
            ProjKind::Dense => {
                tally.add(Stage::Hash, 2 * (rows * d_in * d_out) as u64);
                gemm(1.0, x, (rows, d_in), false, &self.params, d_out, false, 0.0, out);
            }
            _ => {
                for (xr, yr) in x.chunks_exact(d_in).zip(out.chunks_exact_mut(d_out)) {
                    stack::apply_row(&self.spec, &self.params, xr, yr, scratch, tally);
                }
            }
        }
    }

    /// Vector-Jacobian product. Returns `(grad_x, grad_params)` with
    /// `grad_params` laid out like [`Projection::params`]. The fixed signs of
    /// `SignFlip` receive a zero gradient.
    pub fn backward(&self, grad_out: &Matrix, cache: &ProjCache) -> Result<(Matrix, Vec<f64>)> {
        if grad_out.shape() != (cache.rows, self.spec.d_out()) {
            return Err(size_err!(
                "projection grad_out is {}x{}, expected {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                cache.rows,
                self.spec.d_out()
            ));
        }
        if cache.saved.is_empty() {
            return Err(Error::MissingCache);
        }
        let (gx, mut gp) = match self.spec.kind() {
            ProjKind::Dense => {
                let x = &cache.saved[0];
                let r = Matrix::from_vec(self.spec.d_in(), self.spec.d_out(), self.params.clone())?;
                (grad_out.matmul_t(&r)?, x.t_matmul(grad_out)?.into_vec())
            }
            _ => stack::backward(&self.spec, &self.params, grad_out, &cache.saved)?,
        };
        if !self.is_trainable() {
            gp.iter_mut().for_each(|g| *g = 0.0);
        }
        gx.ensure_finite("projection backward")?;
        Ok((gx, gp))
    }

    /// The explicit `d_in × d_out` matrix, obtained by pushing every basis
    /// row through [`Projection::apply`].
    pub fn materialize(&self) -> Matrix {
        self.apply(&Matrix::identity(self.spec.d_in()))
            .expect("identity input is finite and correctly shaped")
    }
}
