//! Per-token floating-point operation accounting.
//!
//! Conventions: one multiply-accumulate is 2 FLOP, a Hadamard butterfly is
//! 2 FLOP (one add, one subtract) so a length-`n` transform costs
//! `n·log2(n)`, and each elementary function call (`exp`, `log1p`) counts as
//! a single op in the `other` bucket.
//!
//! [`OpCounter`] is threaded through the kernels as a [`Tally`] so the
//! analytic numbers can be audited against what the code actually executes.

use core::cell::Cell;

use crate::error::{Error, Result};
use crate::lookup::{LookupConfig, Variant};
use crate::proj::{ProjKind, ProjectionSpec};

/// Ops charged per code bit when computing a top-1 weight:
/// `|z|`, `-2·|z|`, `exp`, `+1`, reciprocal, product accumulation.
pub const WEIGHT_COST_PER_BIT: u64 = 6;
/// Extra per-bit cost of the log-space denominator used when more than one
/// neighbor is gathered: `log1p`, add, accumulate.
pub const LOG_DENOM_COST_PER_BIT: u64 = 3;
/// Ops charged per additional (non-top) neighbor: score update, subtract, `exp`, scale.
pub const EXTRA_NEIGHBOR_COST: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Hash,
    Gather,
    Other,
}

/// Sink for executed-operation counts. `()` discards everything.
pub trait Tally {
    fn add(&self, stage: Stage, n: u64);
}

impl Tally for () {
    #[inline(always)]
    fn add(&self, _: Stage, _: u64) {}
}

#[derive(Debug, Default)]
pub struct OpCounter {
    hash: Cell<u64>,
    gather: Cell<u64>,
    other: Cell<u64>,
}

impl Tally for OpCounter {
    #[inline]
    fn add(&self, stage: Stage, n: u64) {
        let c = match stage {
            Stage::Hash => &self.hash,
            Stage::Gather => &self.gather,
            Stage::Other => &self.other,
        };
        c.set(c.get() + n);
    }
}

impl OpCounter {
    pub fn get(&self, stage: Stage) -> u64 {
        match stage {
            Stage::Hash => self.hash.get(),
            Stage::Gather => self.gather.get(),
            Stage::Other => self.other.get(),
        }
    }

    /// Counts averaged over `tokens` rows, in MFLOP.
    pub fn per_token(&self, tokens: usize) -> FlopReport {
        let t = tokens.max(1) as f64;
        FlopReport::from_flops(
            self.hash.get() as f64 / t,
            self.gather.get() as f64 / t,
            self.other.get() as f64 / t,
        )
    }
}

/// Per-token cost split into the hash, gather and remaining stages (MFLOP).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopReport {
    pub hash_mflop: f64,
    pub gather_mflop: f64,
    pub other_mflop: f64,
    pub total_mflop: f64,
}

impl FlopReport {
    /// Builds a report from raw FLOP counts.
    pub fn from_flops(hash: f64, gather: f64, other: f64) -> Self {
        let (h, g, o) = (hash / 1e6, gather / 1e6, other / 1e6);
        Self {
            hash_mflop: h,
            gather_mflop: g,
            other_mflop: o,
            total_mflop: h + g + o,
        }
    }

    pub fn total_flops(&self) -> f64 {
        self.total_mflop * 1e6
    }
}

/// Dense FFN `σ(xWᵀ)V`: two GEMMs, activation not counted. Reported under `other`.
pub fn vanilla_flops(d_in: usize, t: usize, d_out: usize) -> FlopReport {
    let f = 2.0 * d_in as f64 * t as f64 + 2.0 * t as f64 * d_out as f64;
    FlopReport::from_flops(0.0, 0.0, f)
}

/// FLOP of one row through a projection.
pub fn projection_flops(spec: &ProjectionSpec) -> u64 {
    let w = spec.width() as u64;
    let log = spec.width().trailing_zeros() as u64;
    match spec.kind() {
        ProjKind::Dense => 2 * spec.d_in() as u64 * spec.d_out() as u64,
        ProjKind::Bh { stages, block } => stages as u64 * (2 * w * block as u64 + w * log),
        // a diagonal is a block size of 1: two (diagonal, H) stages per depth
        ProjKind::Acdc { depth } => depth as u64 * 2 * (2 * w + w * log),
        ProjKind::SignFlip => 3 * (2 * w + w * log),
    }
}

/// Learnable parameter count of a projection.
pub fn projection_params(spec: &ProjectionSpec) -> usize {
    let w = spec.width();
    match spec.kind() {
        ProjKind::Dense => spec.d_in() * spec.d_out(),
        ProjKind::Bh { stages, block } => stages * w * block,
        ProjKind::Acdc { depth } => 2 * depth * w,
        ProjKind::SignFlip => 0,
    }
}

/// Grouped linear map with `width/block` groups followed by a channel
/// shuffle: returns `(flops, params)`. The shuffle is a permutation and
/// costs nothing, so this equals the block stage of a BH1.
pub fn grouped_shuffle_counts(width: usize, block: usize) -> (u64, usize) {
    (2 * width as u64 * block as u64, width * block)
}

/// Analytic cost of one LookupFFN row.
///
/// * hash: the projection producing the `h·tau` soft codes,
/// * gather: `2·d_out` per table read, `h·neighbor_count` reads,
/// * other: weight computation (see the `*_COST*` constants).
pub fn lookup_flops(cfg: &LookupConfig, proj: &ProjectionSpec) -> FlopReport {
    let hash = projection_flops(proj) as f64;
    let reads = (cfg.h * cfg.neighbor_count) as f64;
    let gather = 2.0 * reads * cfg.d_out as f64;
    FlopReport::from_flops(hash, gather, weight_flops(cfg) as f64)
}

pub(crate) fn weight_flops(cfg: &LookupConfig) -> u64 {
    let (h, tau, nc) = (cfg.h as u64, cfg.tau as u64, cfg.neighbor_count as u64);
    let scaled = cfg.variant.is_scaled();
    let mut per_table = WEIGHT_COST_PER_BIT * tau;
    if scaled {
        // running Σ|z| plus the final score·weight product
        per_table += tau + 1;
    }
    if nc > 1 {
        per_table += LOG_DENOM_COST_PER_BIT * tau;
        per_table += (nc - 1) * (EXTRA_NEIGHBOR_COST + u64::from(scaled));
    }
    h * per_table
}

/// Checks hash, gather and total of `measured` against `analytic` within
/// relative tolerance `tol`, naming the first stage that disagrees.
pub fn audit(analytic: &FlopReport, measured: &FlopReport, tol: f64) -> Result<()> {
    let checks = [
        ("hash", analytic.hash_mflop, measured.hash_mflop),
        ("gather", analytic.gather_mflop, measured.gather_mflop),
        ("total", analytic.total_mflop, measured.total_mflop),
    ];
    for (stage, a, m) in checks {
        let denom = a.abs().max(f64::MIN_POSITIVE);
        if (a - m).abs() / denom > tol && a != m {
            return Err(Error::Audit {
                stage,
                analytic: a,
                measured: m,
            });
        }
    }
    Ok(())
}

impl Variant {
    pub(crate) fn is_scaled(self) -> bool {
        matches!(self, Variant::Scaled | Variant::GeluTau1)
    }
}
