//! Forward, backward and inference kernels of [`LookupFfn`].

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::codes::{code_of, log_denominator, neighbor_flips, top1_weight, NeighborSearch, SoftCodes};
use super::LookupFfn;
use crate::error::{size_err, Error, Result};
use crate::flops::{weight_flops, Stage, Tally};
use crate::proj::{ProjCache, ProjScratch};
use crate::Matrix;

/// Everything the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct LookupCache {
    rows: usize,
    z: SoftCodes,
    proj: ProjCache,
    /// Selected table row per (row, table, neighbor).
    codes: Vec<u32>,
    /// Softmax probability `exp(s - log_den)` of each selection.
    probs: Vec<f64>,
    /// Score `⟨z_k, S_i⟩` of each selection.
    scores: Vec<f64>,
}

impl LookupCache {
    pub fn soft_codes(&self) -> &SoftCodes {
        &self.z
    }

    /// Table rows selected for input row `r`, table `k`, best first.
    pub fn selected(&self, r: usize, k: usize) -> &[u32] {
        let nc = self.codes.len() / (self.rows * self.z.h()).max(1);
        let start = (r * self.z.h() + k) * nc;
        &self.codes[start..start + nc]
    }

    /// Every selected table row, ordered by input row, table, then rank.
    pub fn selections(&self) -> &[u32] {
        &self.codes
    }

    /// Table reads performed for each input row.
    pub fn reads_per_row(&self) -> Vec<usize> {
        let per = self.codes.len() / self.rows.max(1);
        vec![per; self.rows]
    }

    /// Final weights of each selection (probability, or score·probability
    /// for the scaled variants), in selection order.
    pub fn weights(&self, scaled: bool) -> Vec<f64> {
        if scaled {
            self.probs.iter().zip(&self.scores).map(|(p, s)| p * s).collect()
        } else {
            self.probs.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupGrads {
    pub x: Matrix,
    /// Laid out like [`crate::proj::Projection::params`].
    pub proj: Vec<f64>,
    /// Laid out like [`super::HashTables::data`].
    pub tables: Vec<f64>,
}

/// Gather kernel used by [`LookupFfn::infer_into`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GatherKernel {
    /// Row by row, table by table.
    #[default]
    Portable,
    /// Per table, visits the rows of a batch tile in code order so repeated
    /// table rows are read back to back. Top-1 only; wider gathers fall back
    /// to `Portable`.
    Grouped,
}

/// Pre-allocated buffers for [`LookupFfn::infer_into`].
#[derive(Debug, Clone)]
pub struct LookupWorkspace {
    tile: usize,
    z: Vec<f64>,
    codes: Vec<u32>,
    weights: Vec<f64>,
    order: Vec<(u32, u32)>,
    neighbors: NeighborSearch,
    proj: ProjScratch,
}

impl LookupWorkspace {
    pub fn new(layer: &LookupFfn, tile: usize) -> Self {
        let tile = tile.max(1);
        let h = layer.cfg.h;
        Self {
            tile,
            z: vec![0.0; tile * layer.cfg.code_width()],
            codes: vec![0; tile * h],
            weights: vec![0.0; tile * h],
            order: Vec::with_capacity(tile),
            neighbors: NeighborSearch::with_capacity(layer.cfg.tau, layer.cfg.neighbor_count),
            proj: ProjScratch::new(layer.proj.spec()),
        }
    }
}

/// Selection weights for one table of one row.
struct TableSelection {
    g: u32,
    abs_sum: f64,
    log_den: f64,
}

impl TableSelection {
    fn new(z: &[f64], wide: bool) -> Self {
        Self {
            g: code_of(z),
            abs_sum: z.iter().map(|v| v.abs()).sum(),
            log_den: if wide { log_denominator(z) } else { 0.0 },
        }
    }
}

impl LookupFfn {
    fn check_rows(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.cfg.d_in {
            return Err(size_err!(
                "lookup layer expects {} input columns, got {}",
                self.cfg.d_in,
                x.cols()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LookupCache)> {
        self.forward_with(x, &())
    }

    /// Forward pass charging every executed op to `tally`.
    pub fn forward_with<T: Tally>(&self, x: &Matrix, tally: &T) -> Result<(Matrix, LookupCache)> {
        self.check_rows(x)?;
        let cfg = &self.cfg;
        let (zm, pcache) = self.proj.forward_with(x, tally)?;
        let z = SoftCodes::new(zm, cfg.h, cfg.tau)?;
        let n = x.rows();
        let nc = cfg.neighbor_count;
        let scaled = cfg.variant.is_scaled();
        let per_table_other = weight_flops(cfg) / cfg.h as u64;

        let mut y = Matrix::zeros(n, cfg.d_out);
        let mut codes = Vec::with_capacity(n * cfg.h * nc);
        let mut probs = Vec::with_capacity(n * cfg.h * nc);
        let mut scores = Vec::with_capacity(n * cfg.h * nc);
        for r in 0..n {
            let yr = y.row_mut(r);
            for k in 0..cfg.h {
                let zk = z.table(r, k);
                let sel = TableSelection::new(zk, nc > 1);
                if nc == 1 {
                    codes.push(sel.g);
                    probs.push(top1_weight(zk));
                    scores.push(sel.abs_sum);
                } else {
                    for (mask, cost) in neighbor_flips(zk, nc)? {
                        let s = sel.abs_sum - 2.0 * cost;
                        codes.push(sel.g ^ mask);
                        probs.push((s - sel.log_den).exp());
                        scores.push(s);
                    }
                }
                tally.add(Stage::Other, per_table_other);
                let base = codes.len() - nc;
                for i in base..codes.len() {
                    let w = if scaled { probs[i] * scores[i] } else { probs[i] };
                    let row = self.tables.row(k, codes[i]);
                    for (o, t) in yr.iter_mut().zip(row) {
                        *o += w * t;
                    }
                    tally.add(Stage::Gather, 2 * cfg.d_out as u64);
                }
            }
        }
        y.ensure_finite("gather")?;
        Ok((
            y,
            LookupCache {
                rows: n,
                z,
                proj: pcache,
                codes,
                probs,
                scores,
            },
        ))
    }

    /// Exact vector-Jacobian product at the selections stored in `cache`.
    ///
    /// The discrete choice of table rows is held fixed (straight-through);
    /// the weights, including the full denominator, are differentiated.
    pub fn backward(&self, grad_y: &Matrix, cache: &LookupCache) -> Result<LookupGrads> {
        let cfg = &self.cfg;
        let n = cache.rows;
        let nc = cfg.neighbor_count;
        if grad_y.shape() != (n, cfg.d_out) {
            return Err(size_err!(
                "grad_y is {}x{}, expected {}x{}",
                grad_y.rows(),
                grad_y.cols(),
                n,
                cfg.d_out
            ));
        }
        if cache.codes.len() != n * cfg.h * nc || cache.z.h() != cfg.h {
            return Err(Error::MissingCache);
        }
        let scaled = cfg.variant.is_scaled();
        let mut grad_t = vec![0.0; self.tables.data().len()];
        let mut grad_z = Matrix::zeros(n, cfg.code_width());
        let mut tanh = vec![0.0; cfg.tau];
        let mut sign = vec![0.0; cfg.tau];
        let (rows_per_table, d_out) = (cfg.table_rows(), cfg.d_out);

        for r in 0..n {
            let gy = grad_y.row(r);
            for k in 0..cfg.h {
                let zk = cache.z.table(r, k);
                let g = code_of(zk);
                for j in 0..cfg.tau {
                    tanh[j] = zk[j].tanh();
                    sign[j] = if zk[j] >= 0.0 { 1.0 } else { -1.0 };
                }
                let gz = &mut grad_z.row_mut(r)[k * cfg.tau..(k + 1) * cfg.tau];
                let base = (r * cfg.h + k) * nc;
                for i in base..base + nc {
                    let code = cache.codes[i];
                    let (p, s) = (cache.probs[i], cache.scores[i]);
                    let w = if scaled { p * s } else { p };
                    let t = self.tables.row(k, code);
                    let dl_dw: f64 = gy.iter().zip(t).map(|(a, b)| a * b).sum();
                    let start = (k * rows_per_table + code as usize) * d_out;
                    for (gt, gyv) in grad_t[start..start + d_out].iter_mut().zip(gy) {
                        *gt += w * gyv;
                    }
                    let flips = g ^ code;
                    for j in 0..cfg.tau {
                        let s_ij = if flips >> j & 1 == 1 { -sign[j] } else { sign[j] };
                        let dp = p * (s_ij - tanh[j]);
                        gz[j] += dl_dw * if scaled { p * s_ij + s * dp } else { dp };
                    }
                }
            }
        }
        let (gx, gp) = self.proj.backward(&grad_z, &cache.proj)?;
        Ok(LookupGrads {
            x: gx,
            proj: gp,
            tables: grad_t,
        })
    }

    /// Allocation-free forward for inference on row-major buffers.
    ///
    /// `x` holds whole rows of `d_in`; `out` receives the matching rows of
    /// `d_out` (overwritten). Rows are processed in tiles of the workspace
    /// size.
    pub fn infer_into<T: Tally>(
        &self,
        x: &[f64],
        out: &mut [f64],
        ws: &mut LookupWorkspace,
        kernel: GatherKernel,
        tally: &T,
    ) {
        let cfg = &self.cfg;
        let tile = ws.tile;
        for (xt, yt) in x
            .chunks(tile * cfg.d_in)
            .zip(out.chunks_mut(tile * cfg.d_out))
        {
            let rows = xt.len() / cfg.d_in;
            let zt = &mut ws.z[..rows * cfg.code_width()];
            self.proj.apply_into(xt, zt, &mut ws.proj, tally);
            yt.fill(0.0);
            if kernel == GatherKernel::Grouped && cfg.neighbor_count == 1 {
                self.gather_grouped(rows, yt, ws, tally);
            } else {
                let zt = &ws.z[..rows * cfg.code_width()];
                self.gather_portable(zt, yt, &mut ws.neighbors, tally);
            }
        }
    }

    fn gather_portable<T: Tally>(&self, z: &[f64], y: &mut [f64], search: &mut NeighborSearch, tally: &T) {
        let cfg = &self.cfg;
        let nc = cfg.neighbor_count;
        let scaled = cfg.variant.is_scaled();
        let per_table_other = weight_flops(cfg) / cfg.h as u64;
        for (zr, yr) in z.chunks_exact(cfg.code_width()).zip(y.chunks_exact_mut(cfg.d_out)) {
            for (k, zk) in zr.chunks_exact(cfg.tau).enumerate() {
                tally.add(Stage::Other, per_table_other);
                if nc == 1 {
                    let w = weight_top1(zk, scaled);
                    accumulate(yr, self.tables.row(k, code_of(zk)), w);
                    tally.add(Stage::Gather, 2 * cfg.d_out as u64);
                    continue;
                }
                let sel = TableSelection::new(zk, true);
                // neighbor_count was validated against tau at construction
                let flips = search.run(zk, nc).expect("validated neighbor count");
                for &(mask, cost) in flips {
                    let s = sel.abs_sum - 2.0 * cost;
                    let p = (s - sel.log_den).exp();
                    let w = if scaled { p * s } else { p };
                    accumulate(yr, self.tables.row(k, sel.g ^ mask), w);
                    tally.add(Stage::Gather, 2 * cfg.d_out as u64);
                }
            }
        }
    }

    fn gather_grouped<T: Tally>(&self, rows: usize, y: &mut [f64], ws: &mut LookupWorkspace, tally: &T) {
        let cfg = &self.cfg;
        let (h, d_out) = (cfg.h, cfg.d_out);
        let scaled = cfg.variant.is_scaled();
        let per_table_other = weight_flops(cfg) / h as u64;
        for (r, zr) in ws.z[..rows * cfg.code_width()]
            .chunks_exact(cfg.code_width())
            .enumerate()
        {
            for (k, zk) in zr.chunks_exact(cfg.tau).enumerate() {
                ws.codes[r * h + k] = code_of(zk);
                ws.weights[r * h + k] = weight_top1(zk, scaled);
                tally.add(Stage::Other, per_table_other);
            }
        }
        for k in 0..h {
            ws.order.clear();
            ws.order
                .extend((0..rows).map(|r| (ws.codes[r * h + k], r as u32)));
            ws.order.sort_unstable();
            for &(code, r) in &ws.order {
                let r = r as usize;
                let yr = &mut y[r * d_out..(r + 1) * d_out];
                accumulate(yr, self.tables.row(k, code), ws.weights[r * h + k]);
                tally.add(Stage::Gather, 2 * d_out as u64);
            }
        }
    }

    /// Forward without a backward cache.
    pub fn infer(&self, x: &Matrix, kernel: GatherKernel) -> Result<Matrix> {
        self.check_rows(x)?;
        x.ensure_finite("lookup input")?;
        let mut ws = LookupWorkspace::new(self, x.rows().clamp(1, 256));
        let mut out = Matrix::zeros(x.rows(), self.cfg.d_out);
        self.infer_into(x.data(), out.data_mut(), &mut ws, kernel, &());
        out.ensure_finite("gather")?;
        Ok(out)
    }
}

#[inline]
fn weight_top1(z: &[f64], scaled: bool) -> f64 {
    let p = top1_weight(z);
    if scaled {
        p * z.iter().map(|v| v.abs()).sum::<f64>()
    } else {
        p
    }
}

#[inline]
fn accumulate(y: &mut [f64], row: &[f64], w: f64) {
    for (o, t) in y.iter_mut().zip(row) {
        *o += w * t;
    }
}
