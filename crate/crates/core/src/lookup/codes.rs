//! Hash codes over the virtual ±1 codebook.
//!
//! Row `i` of the codebook `S` is the binary expansion of `i` written as
//! signs: bit `j` of `i` set means `S[i][j] = +1`, clear means `-1`. Bit 0
//! is coordinate 0. `sign(0)` is taken as `+1`.
//!
//! With that convention `decimal(sign(z))` is the row maximizing `⟨z, S_i⟩`,
//! its complement is the minimizer, and `Σ_i exp⟨z, S_i⟩` factorizes into
//! `Π_j (e^{z_j} + e^{-z_j})`. The codebook is never materialized here.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_traits::Float;

use crate::error::{size_err, Result};
use crate::Matrix;

/// Largest supported code length.
pub const MAX_TAU: usize = 24;

/// `decimal(sign(z))` with bit `j` set iff `z[j] >= 0`.
#[inline]
pub fn code_of(z: &[f64]) -> u32 {
    z.iter()
        .enumerate()
        .fold(0u32, |acc, (j, &v)| acc | (u32::from(v >= 0.0) << j))
}

/// Sign of codebook entry `S[code][j]`.
#[inline]
pub fn codebook_sign(code: u32, j: usize) -> f64 {
    if code >> j & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// `⟨z, S_code⟩` without materializing the codebook row.
#[inline]
pub fn codebook_inner(z: &[f64], code: u32) -> f64 {
    z.iter()
        .enumerate()
        .map(|(j, &v)| v * codebook_sign(code, j))
        .sum()
}

/// Virtual `2^tau × tau` codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignCodebook {
    tau: usize,
}

impl SignCodebook {
    pub fn new(tau: usize) -> Result<Self> {
        if tau == 0 || tau > MAX_TAU {
            return Err(size_err!("code length {tau} outside 1..={MAX_TAU}"));
        }
        Ok(Self { tau })
    }

    pub fn tau(self) -> usize {
        self.tau
    }

    pub fn len(self) -> usize {
        1 << self.tau
    }

    pub fn is_empty(self) -> bool {
        false
    }

    /// `decimal⁻¹(i)` as a ±1 vector.
    pub fn row(self, i: u32) -> Vec<f64> {
        (0..self.tau).map(|j| codebook_sign(i, j)).collect()
    }
}

/// Soft hash codes for `n` rows and `h` tables: an `n × (h·tau)` matrix
/// whose row is the concatenation of the `h` per-table vectors `z_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCodes {
    z: Matrix,
    h: usize,
    tau: usize,
}

impl SoftCodes {
    pub fn new(z: Matrix, h: usize, tau: usize) -> Result<Self> {
        if z.cols() != h * tau {
            return Err(size_err!(
                "soft codes need {} columns for h={h}, tau={tau}, got {}",
                h * tau,
                z.cols()
            ));
        }
        Ok(Self { z, h, tau })
    }

    #[inline]
    pub fn table(&self, row: usize, k: usize) -> &[f64] {
        &self.z.row(row)[k * self.tau..(k + 1) * self.tau]
    }

    pub fn rows(&self) -> usize {
        self.z.rows()
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn matrix(&self) -> &Matrix {
        &self.z
    }
}

/// Hard codes `g(z_k)` per row and table plus the `|z|` cache.
#[derive(Debug, Clone, PartialEq)]
pub struct SignCodes {
    pub h: usize,
    pub tau: usize,
    /// `rows × h`, row-major.
    pub codes: Vec<u32>,
    /// `rows × h × tau`.
    pub abs_z: Vec<f64>,
}

impl SignCodes {
    #[inline]
    pub fn code(&self, row: usize, k: usize) -> u32 {
        self.codes[row * self.h + k]
    }
}

pub fn compute_codes(z: &SoftCodes) -> SignCodes {
    let mut codes = Vec::with_capacity(z.rows() * z.h());
    for r in 0..z.rows() {
        for k in 0..z.h() {
            codes.push(code_of(z.table(r, k)));
        }
    }
    SignCodes {
        h: z.h(),
        tau: z.tau(),
        codes,
        abs_z: z.matrix().data().iter().map(|v| v.abs()).collect(),
    }
}

/// `log Σ_i exp⟨z, S_i⟩ = Σ_j log(e^{z_j} + e^{-z_j})`, evaluated as
/// `Σ_j (|z_j| + log1p(e^{-2|z_j|}))` so it never overflows.
pub fn log_denominator(z: &[f64]) -> f64 {
    z.iter()
        .map(|v| {
            let a = v.abs();
            a + (-2.0 * a).exp().ln_1p()
        })
        .sum()
}

/// Softmax weight of the top code: `Π_j 1 / (1 + e^{-2|z_j|})`.
#[inline]
pub fn top1_weight(z: &[f64]) -> f64 {
    z.iter()
        .map(|v| 1.0 / (1.0 + (-2.0 * v.abs()).exp()))
        .product()
}

#[derive(Debug, Clone, Copy)]
struct Frontier {
    /// Σ |z_j| over the flipped coordinates.
    cost: f64,
    /// Position in the magnitude order of the last flipped coordinate.
    last: usize,
    mask: u32,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // reversed: BinaryHeap is a max-heap and we pop the cheapest flip set
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.mask.cmp(&self.mask))
    }
}

/// The `count` flip masks with the smallest flip cost `Σ_{j∈F} |z_j|`, in
/// non-decreasing cost order, paired with that cost. The first entry is
/// always the empty mask. Since `⟨z, S_{g ^ F}⟩ = Σ|z| − 2·cost(F)`, these
/// are exactly the `count` largest softmax numerators.
///
/// Subsets are enumerated lazily over coordinates sorted by magnitude: a
/// popped set `{.., p}` spawns `{.., p, p+1}` and `{.., p+1}`, which visits
/// every subset once in cost order.
pub fn neighbor_flips(z: &[f64], count: usize) -> Result<Vec<(u32, f64)>> {
    let mut search = NeighborSearch::default();
    Ok(search.run(z, count)?.to_vec())
}

/// Reusable buffers for [`neighbor_flips`]; after the first call with a
/// given `(tau, count)` further calls do not allocate.
#[derive(Debug, Clone, Default)]
pub struct NeighborSearch {
    out: Vec<(u32, f64)>,
    order: Vec<usize>,
    mag: Vec<f64>,
    heap: BinaryHeap<Frontier>,
}

impl NeighborSearch {
    pub fn with_capacity(tau: usize, count: usize) -> Self {
        Self {
            out: Vec::with_capacity(count),
            order: Vec::with_capacity(tau),
            mag: Vec::with_capacity(tau),
            heap: BinaryHeap::with_capacity(2 * count),
        }
    }

    /// Same result as [`neighbor_flips`], borrowed from the internal buffer.
    pub fn run(&mut self, z: &[f64], count: usize) -> Result<&[(u32, f64)]> {
        let tau = z.len();
        if tau > MAX_TAU {
            return Err(size_err!("code length {tau} exceeds {MAX_TAU}"));
        }
        if count == 0 || count > 1usize << tau {
            return Err(size_err!(
                "neighbor count {count} outside 1..={} for tau={tau}",
                1usize << tau
            ));
        }
        let Self { out, order, mag, heap } = self;
        out.clear();
        out.push((0u32, 0.0));
        if count == 1 {
            return Ok(out);
        }
        order.clear();
        order.extend(0..tau);
        order.sort_unstable_by(|&a, &b| z[a].abs().total_cmp(&z[b].abs()).then(a.cmp(&b)));
        mag.clear();
        mag.extend(order.iter().map(|&j| z[j].abs()));

        heap.clear();
        heap.push(Frontier {
            cost: mag[0],
            last: 0,
            mask: 1 << order[0],
        });
        while out.len() < count {
            let Some(f) = heap.pop() else { break };
            out.push((f.mask, f.cost));
            let next = f.last + 1;
            if next < tau {
                heap.push(Frontier {
                    cost: f.cost + mag[next],
                    last: next,
                    mask: f.mask | 1 << order[next],
                });
                heap.push(Frontier {
                    cost: f.cost - mag[f.last] + mag[next],
                    last: next,
                    mask: (f.mask & !(1 << order[f.last])) | 1 << order[next],
                });
            }
        }
        Ok(out)
    }
}

/// Codes of the `count` largest numerators, best first.
pub fn neighbor_codes(z: &[f64], count: usize) -> Result<Vec<u32>> {
    let g = code_of(z);
    Ok(neighbor_flips(z, count)?
        .into_iter()
        .map(|(mask, _)| g ^ mask)
        .collect())
}
