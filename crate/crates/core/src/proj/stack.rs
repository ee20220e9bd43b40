//! Alternating (block-diagonal, Hadamard) stage stacks.

use alloc::vec;
use alloc::vec::Vec;

use super::{ProjScratch, ProjectionSpec};
use crate::error::Result;
use crate::flops::{Stage, Tally};
use crate::fwht::fwht_unchecked;
use crate::Matrix;

/// `dst = src · blockdiag(blocks)` for one row.
#[inline]
fn block_mul(src: &[f64], blocks: &[f64], b: usize, dst: &mut [f64]) {
    if b == 1 {
        for ((d, s), w) in dst.iter_mut().zip(src).zip(blocks) {
            *d = s * w;
        }
        return;
    }
    for ((s, d), blk) in src
        .chunks_exact(b)
        .zip(dst.chunks_exact_mut(b))
        .zip(blocks.chunks_exact(b * b))
    {
        d.fill(0.0);
        for (&xi, row) in s.iter().zip(blk.chunks_exact(b)) {
            for (dj, &bij) in d.iter_mut().zip(row) {
                *dj += xi * bij;
            }
        }
    }
}

/// `dst = src · blockdiag(blocks)ᵀ` for one row.
#[inline]
fn block_mul_t(src: &[f64], blocks: &[f64], b: usize, dst: &mut [f64]) {
    for ((g, d), blk) in src
        .chunks_exact(b)
        .zip(dst.chunks_exact_mut(b))
        .zip(blocks.chunks_exact(b * b))
    {
        for (di, row) in d.iter_mut().zip(blk.chunks_exact(b)) {
            *di = row.iter().zip(g).map(|(w, gj)| w * gj).sum();
        }
    }
}

/// `grad_blocks[i][j] += x_i · g_j` within each block.
#[inline]
fn block_outer_acc(x: &[f64], g: &[f64], b: usize, grad_blocks: &mut [f64]) {
    for ((xs, gs), gb) in x
        .chunks_exact(b)
        .zip(g.chunks_exact(b))
        .zip(grad_blocks.chunks_exact_mut(b * b))
    {
        for (&xi, grow) in xs.iter().zip(gb.chunks_exact_mut(b)) {
            if xi == 0.0 {
                continue;
            }
            for (gij, &gj) in grow.iter_mut().zip(gs) {
                *gij += xi * gj;
            }
        }
    }
}

fn stage_ranges(spec: &ProjectionSpec) -> Vec<(usize, usize)> {
    let w = spec.width();
    let mut off = 0;
    spec.stage_blocks()
        .into_iter()
        .map(|b| {
            let r = (off, b);
            off += w * b;
            r
        })
        .collect()
}

pub(super) fn forward<T: Tally>(
    spec: &ProjectionSpec,
    params: &[f64],
    x: &Matrix,
    tally: &T,
) -> (Matrix, Vec<Matrix>) {
    let w = spec.width();
    let mut buf = x.resize_cols(w);
    let stages = stage_ranges(spec);
    let mut saved = Vec::with_capacity(stages.len());
    for (off, b) in stages {
        let blocks = &params[off..off + w * b];
        let mut next = Matrix::zeros(x.rows(), w);
        for (src, dst) in buf.rows_iter().zip(next.data_mut().chunks_exact_mut(w)) {
            block_mul(src, blocks, b, dst);
            tally.add(Stage::Hash, 2 * (w * b) as u64);
            fwht_unchecked(dst, tally);
        }
        saved.push(core::mem::replace(&mut buf, next));
    }
    (buf.resize_cols(spec.d_out()), saved)
}

pub(super) fn apply_row<T: Tally>(
    spec: &ProjectionSpec,
    params: &[f64],
    x: &[f64],
    out: &mut [f64],
    scratch: &mut ProjScratch,
    tally: &T,
) {
    let w = spec.width();
    let (a, b_buf) = (&mut scratch.a, &mut scratch.b);
    a[..x.len()].copy_from_slice(x);
    a[x.len()..].fill(0.0);
    let mut off = 0;
    for b in spec.stage_blocks_iter() {
        block_mul(a, &params[off..off + w * b], b, b_buf);
        tally.add(Stage::Hash, 2 * (w * b) as u64);
        fwht_unchecked(b_buf, tally);
        core::mem::swap(a, b_buf);
        off += w * b;
    }
    out.copy_from_slice(&a[..out.len()]);
}

pub(super) fn backward(
    spec: &ProjectionSpec,
    params: &[f64],
    grad_out: &Matrix,
    saved: &[Matrix],
) -> Result<(Matrix, Vec<f64>)> {
    let w = spec.width();
    let stages = stage_ranges(spec);
    let mut grad_p = vec![0.0; params.len()];
    let mut g = grad_out.resize_cols(w);
    let mut tmp = vec![0.0; w];
    for ((off, b), input) in stages.into_iter().zip(saved).rev() {
        let blocks = &params[off..off + w * b];
        let grad_blocks = &mut grad_p[off..off + w * b];
        for (grow, xrow) in g.data_mut().chunks_exact_mut(w).zip(input.rows_iter()) {
            // Hᵀ = H
            fwht_unchecked(grow, &());
            block_outer_acc(xrow, grow, b, grad_blocks);
            block_mul_t(grow, blocks, b, &mut tmp);
            grow.copy_from_slice(&tmp);
        }
    }
    Ok((g.resize_cols(spec.d_in()), grad_p))
}

impl ProjectionSpec {
    fn stage_blocks_iter(&self) -> impl Iterator<Item = usize> {
        use super::ProjKind;
        let (n, b) = match self.kind() {
            ProjKind::Dense => (0, 0),
            ProjKind::Bh { stages, block } => (stages, block),
            ProjKind::Acdc { depth } => (2 * depth, 1),
            ProjKind::SignFlip => (3, 1),
        };
        core::iter::repeat_n(b, n)
    }
}
