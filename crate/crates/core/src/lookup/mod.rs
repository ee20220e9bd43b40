//! The LookupFFN layer.
//!
//! For each input row `x` the layer computes soft codes `z = x·R` split into
//! `h` vectors `z_k` of length `tau`, and returns
//!
//! ```text
//! y = Σ_k Σ_{i ∈ N(z_k)} w(z_k, i) · T_k[i]
//! w(z, i) = exp⟨z, S_i⟩ / Π_j (e^{z_j} + e^{-z_j})          (softmax)
//! w(z, i) = ⟨z, S_i⟩ · exp⟨z, S_i⟩ / Π_j (e^{z_j} + e^{-z_j}) (scaled)
//! ```
//!
//! where `N(z_k)` holds the `neighbor_count` codes with the largest
//! numerators (just `g(z_k) = decimal(sign(z_k))` by default).

mod codes;
mod layer;
mod reference;

pub use codes::{
    code_of, codebook_inner, codebook_sign, compute_codes, log_denominator, neighbor_codes,
    neighbor_flips, top1_weight, NeighborSearch, SignCodebook, SignCodes, SoftCodes, MAX_TAU,
};
pub use layer::{GatherKernel, LookupCache, LookupGrads, LookupWorkspace};
pub use reference::{gelu_approx, gelu_approx_max_deviation, gelu_exact, gelu_tau1_reference};

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use crate::error::{size_err, Error, Result};
use crate::proj::{ProjKind, Projection, ProjectionSpec};
use crate::rng::{gaussian_vec, seeded};
use crate::train::Optimizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Partial softmax over the codebook.
    Softmax,
    /// Softmax weight multiplied by the score `⟨z, S_i⟩`; the GELU-like form.
    Scaled,
    /// `tau = 1` softmax; with both codes gathered and `T[k][0] = 0` this is
    /// a sigmoid FFN.
    SigmoidTau1,
    /// `tau = 1` scaled variant; the fast GELU approximation.
    GeluTau1,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::Softmax => 0,
            Variant::Scaled => 1,
            Variant::SigmoidTau1 => 2,
            Variant::GeluTau1 => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Variant::Softmax,
            1 => Variant::Scaled,
            2 => Variant::SigmoidTau1,
            3 => Variant::GeluTau1,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Softmax => "softmax",
            Variant::Scaled => "scaled",
            Variant::SigmoidTau1 => "sigmoid-tau1",
            Variant::GeluTau1 => "gelu-tau1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LookupConfig {
    pub d_in: usize,
    pub d_out: usize,
    /// Number of tables.
    pub h: usize,
    /// Code length in bits; each table has `2^tau` rows.
    pub tau: usize,
    pub variant: Variant,
    pub neighbor_count: usize,
}

impl LookupConfig {
    /// Softmax variant, top-1 gather.
    pub fn new(d_in: usize, d_out: usize, h: usize, tau: usize) -> Self {
        Self {
            d_in,
            d_out,
            h,
            tau,
            variant: Variant::Softmax,
            neighbor_count: 1,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_neighbors(mut self, neighbor_count: usize) -> Self {
        self.neighbor_count = neighbor_count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.tau > MAX_TAU {
            return Err(Error::Config(format!("tau={} outside 1..={MAX_TAU}", self.tau)));
        }
        if self.h == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(Error::Config(format!(
                "h, d_in and d_out must be positive (h={}, d_in={}, d_out={})",
                self.h, self.d_in, self.d_out
            )));
        }
        if self.neighbor_count == 0 || self.neighbor_count > self.table_rows() {
            return Err(Error::Config(format!(
                "neighbor_count={} outside 1..={}",
                self.neighbor_count,
                self.table_rows()
            )));
        }
        if matches!(self.variant, Variant::SigmoidTau1 | Variant::GeluTau1) && self.tau != 1 {
            return Err(Error::Config(format!("{} requires tau=1", self.variant.name())));
        }
        Ok(())
    }

    /// Width of the projection output, `h·tau`.
    pub fn code_width(&self) -> usize {
        self.h * self.tau
    }

    pub fn table_rows(&self) -> usize {
        1 << self.tau
    }

    /// Table rows read per input row; independent of the data.
    pub fn reads_per_row(&self) -> usize {
        self.h * self.neighbor_count
    }

    pub fn projection_spec(&self, kind: ProjKind) -> Result<ProjectionSpec> {
        ProjectionSpec::new(self.d_in, self.code_width(), kind)
    }
}

/// The learnable table stack `T`, shape `h × 2^tau × d_out`.
///
/// Values only change through [`HashTables::apply_gradient`]; nothing in
/// the forward pass or elsewhere can rebuild them. `writes()` counts those
/// updates so training runs can assert it.
#[derive(Debug, Clone, PartialEq)]
pub struct HashTables {
    h: usize,
    rows: usize,
    d_out: usize,
    data: Vec<f64>,
    writes: u64,
}

impl HashTables {
    /// Entries drawn from `N(0, 1/h)`.
    pub fn init(cfg: &LookupConfig, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let len = cfg.h * cfg.table_rows() * cfg.d_out;
        Self {
            h: cfg.h,
            rows: cfg.table_rows(),
            d_out: cfg.d_out,
            data: gaussian_vec(&mut rng, len, 1.0 / (cfg.h as f64).sqrt()),
            writes: 0,
        }
    }

    pub fn from_vec(cfg: &LookupConfig, data: Vec<f64>) -> Result<Self> {
        let len = cfg.h * cfg.table_rows() * cfg.d_out;
        if data.len() != len {
            return Err(size_err!("tables need {len} values, got {}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "tables" });
        }
        Ok(Self {
            h: cfg.h,
            rows: cfg.table_rows(),
            d_out: cfg.d_out,
            data,
            writes: 0,
        })
    }

    #[inline]
    pub fn row(&self, k: usize, code: u32) -> &[f64] {
        let start = (k * self.rows + code as usize) * self.d_out;
        &self.data[start..start + self.d_out]
    }

    /// Flattened `h × 2^tau × d_out`, row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.rows, self.d_out)
    }

    pub fn writes(&self) -> u64 {
        self.writes
    }

    /// The only mutation path: one optimizer step on `grad`.
    pub fn apply_gradient(&mut self, opt: &mut dyn Optimizer, grad: &[f64]) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(size_err!(
                "table gradient has {} values, expected {}",
                grad.len(),
                self.data.len()
            ));
        }
        opt.step(&mut self.data, grad);
        self.writes += 1;
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "table update",
            });
        }
        Ok(())
    }
}

/// A LookupFFN layer: projection plus tables.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupFfn {
    cfg: LookupConfig,
    proj: Projection,
    tables: HashTables,
}

impl LookupFfn {
    /// Seeded init; the projection and tables draw from independent streams.
    pub fn new(cfg: LookupConfig, kind: ProjKind, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.projection_spec(kind)?;
        let proj = Projection::init(spec, seed.wrapping_mul(2).wrapping_add(1));
        let tables = HashTables::init(&cfg, seed.wrapping_mul(2).wrapping_add(2));
        Ok(Self { cfg, proj, tables })
    }

    pub fn from_parts(cfg: LookupConfig, proj: Projection, tables: HashTables) -> Result<Self> {
        cfg.validate()?;
        let spec = proj.spec();
        if spec.d_in() != cfg.d_in || spec.d_out() != cfg.code_width() {
            return Err(size_err!(
                "projection maps {}->{}, layer needs {}->{}",
                spec.d_in(),
                spec.d_out(),
                cfg.d_in,
                cfg.code_width()
            ));
        }
        if tables.shape() != (cfg.h, cfg.table_rows(), cfg.d_out) {
            return Err(size_err!("table shape {:?} does not match config", tables.shape()));
        }
        Ok(Self { cfg, proj, tables })
    }

    pub fn config(&self) -> &LookupConfig {
        &self.cfg
    }

    /// Gather width can be changed after construction; tables are unaffected.
    pub fn set_neighbor_count(&mut self, n: usize) -> Result<()> {
        let cfg = self.cfg.with_neighbors(n);
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn projection(&self) -> &Projection {
        &self.proj
    }

    pub fn projection_mut(&mut self) -> &mut Projection {
        &mut self.proj
    }

    pub fn tables(&self) -> &HashTables {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut HashTables {
        &mut self.tables
    }

    pub fn into_parts(self) -> (LookupConfig, Projection, HashTables) {
        (self.cfg, self.proj, self.tables)
    }
}

#[cfg(test)]
mod tests;
