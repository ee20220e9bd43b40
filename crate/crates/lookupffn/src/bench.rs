//! Forward-pass latency of dense and lookup layers on CPU.
//!
//! Parameters, inputs, outputs and per-worker workspaces are allocated in
//! [`PreparedModel::new`]; the timed [`PreparedModel::run`] only reads and
//! writes those buffers. Repetitions of all models are interleaved so slow
//! drift of the machine affects every model alike.

use std::time::Instant;

use rayon::prelude::*;

use lookupffn_core::baselines::{Activation, FfnParams, FfnWorkspace};
use lookupffn_core::flops::{lookup_flops, vanilla_flops, FlopReport};
use lookupffn_core::lookup::{GatherKernel, LookupConfig, LookupFfn, LookupWorkspace};
use lookupffn_core::proj::{ProjKind, ProjScratch};
use lookupffn_core::rng::{gaussian_vec, seeded};

#[derive(Debug, Clone, PartialEq)]
pub enum BenchModel {
    Dense {
        d_in: usize,
        hidden: usize,
        d_out: usize,
    },
    Lookup {
        cfg: LookupConfig,
        kind: ProjKind,
        kernel: GatherKernel,
    },
}

impl BenchModel {
    pub fn label(&self) -> String {
        match self {
            BenchModel::Dense { d_in, hidden, d_out } => format!("dense-{d_in}x{hidden}x{d_out}"),
            BenchModel::Lookup { cfg, kind, kernel } => {
                let proj = match kind {
                    ProjKind::Bh { stages, block } => format!("bh{stages}-b{block}"),
                    ProjKind::Acdc { depth } => format!("acdc{depth}"),
                    k => k.name().to_string(),
                };
                let kernel = match kernel {
                    GatherKernel::Portable => "portable",
                    GatherKernel::Grouped => "grouped",
                };
                format!("lookup-h{}-tau{}-{proj}-{kernel}", cfg.h, cfg.tau)
            }
        }
    }

    pub fn flops(&self) -> lookupffn_core::Result<FlopReport> {
        match self {
            BenchModel::Dense { d_in, hidden, d_out } => Ok(vanilla_flops(*d_in, *hidden, *d_out)),
            BenchModel::Lookup { cfg, kind, .. } => Ok(lookup_flops(cfg, &cfg.projection_spec(*kind)?)),
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            BenchModel::Dense { d_in, d_out, .. } => (*d_in, *d_out),
            BenchModel::Lookup { cfg, .. } => (cfg.d_in, cfg.d_out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchSpec {
    /// Rows per forward call (the effective batch).
    pub rows: usize,
    /// Rows per kernel tile.
    pub tile: usize,
    pub reps: usize,
    pub warmup: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            rows: 4096,
            tile: 256,
            reps: 10,
            warmup: 2,
            threads: 1,
            seed: 0,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.reps < 3 {
            return Err(format!("reps must be >= 3, got {}", self.reps));
        }
        if self.warmup < 1 {
            return Err("warmup must be >= 1".into());
        }
        if self.rows == 0 || self.tile == 0 || self.threads == 0 {
            return Err("rows, tile and threads must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub label: String,
    pub rows: usize,
    pub threads: usize,
    pub flops: FlopReport,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    /// Analytic FLOP of the whole batch divided by the median time.
    pub gflops: f64,
    /// Median of the first model divided by this model's median.
    pub speedup: f64,
    /// Wall-clock split for lookup models: projection alone, and the rest.
    pub hash_median_ms: Option<f64>,
    pub gather_median_ms: Option<f64>,
}

enum Kernel {
    Dense {
        params: FfnParams,
        ws: Vec<FfnWorkspace>,
    },
    Lookup {
        layer: LookupFfn,
        kernel: GatherKernel,
        ws: Vec<LookupWorkspace>,
        hash_ws: Vec<(ProjScratch, Vec<f64>)>,
    },
}

/// A model with every buffer the timed region touches already allocated.
pub struct PreparedModel {
    pub model: BenchModel,
    kernel: Kernel,
    out: Vec<f64>,
    d_in: usize,
    d_out: usize,
    tile: usize,
    /// Rows handed to each worker.
    chunk: usize,
}

impl PreparedModel {
    pub fn new(model: &BenchModel, spec: &BenchSpec) -> lookupffn_core::Result<Self> {
        let (d_in, d_out) = model.dims();
        let workers = spec.threads.max(1);
        let chunk = spec.rows.div_ceil(workers).max(1);
        let kernel = match model {
            BenchModel::Dense { d_in, hidden, d_out } => {
                let params = FfnParams::init(*d_in, *hidden, *d_out, Activation::Gelu, spec.seed);
                let ws = (0..workers).map(|_| FfnWorkspace::new(&params, spec.tile)).collect();
                Kernel::Dense { params, ws }
            }
            BenchModel::Lookup { cfg, kind, kernel } => {
                let layer = LookupFfn::new(*cfg, *kind, spec.seed)?;
                let ws = (0..workers).map(|_| LookupWorkspace::new(&layer, spec.tile)).collect();
                let hash_ws = (0..workers)
                    .map(|_| {
                        (
                            ProjScratch::new(layer.projection().spec()),
                            vec![0.0; spec.tile * cfg.code_width()],
                        )
                    })
                    .collect();
                Kernel::Lookup {
                    layer,
                    kernel: *kernel,
                    ws,
                    hash_ws,
                }
            }
        };
        Ok(Self {
            model: model.clone(),
            kernel,
            out: vec![0.0; spec.rows * d_out],
            d_in,
            d_out,
            tile: spec.tile,
            chunk,
        })
    }

    pub fn output(&self) -> &[f64] {
        &self.out
    }

    /// One forward pass over `x`. Runs inline when `pool` is `None`.
    pub fn run(&mut self, x: &[f64], pool: Option<&rayon::ThreadPool>) {
        let (d_in, d_out, chunk) = (self.d_in, self.d_out, self.chunk);
        let out = &mut self.out;
        match &mut self.kernel {
            Kernel::Dense { params, ws } => match pool {
                None => params.infer_into(x, out, &mut ws[0], &()),
                Some(pool) => pool.install(|| {
                    x.par_chunks(chunk * d_in)
                        .zip(out.par_chunks_mut(chunk * d_out))
                        .zip(ws.par_iter_mut())
                        .for_each(|((xc, yc), w)| params.infer_into(xc, yc, w, &()));
                }),
            },
            Kernel::Lookup { layer, kernel, ws, .. } => match pool {
                None => layer.infer_into(x, out, &mut ws[0], *kernel, &()),
                Some(pool) => pool.install(|| {
                    x.par_chunks(chunk * d_in)
                        .zip(out.par_chunks_mut(chunk * d_out))
                        .zip(ws.par_iter_mut())
                        .for_each(|((xc, yc), w)| layer.infer_into(xc, yc, w, *kernel, &()));
                }),
            },
        }
    }

    /// Projection only (lookup models); `false` for dense models.
    pub fn run_hash(&mut self, x: &[f64], pool: Option<&rayon::ThreadPool>) -> bool {
        let (d_in, chunk, tile) = (self.d_in, self.chunk, self.tile);
        let Kernel::Lookup { layer, hash_ws, .. } = &mut self.kernel else {
            return false;
        };
        let width = layer.config().code_width();
        let hash = |xc: &[f64], (scratch, z): &mut (ProjScratch, Vec<f64>)| {
            for xt in xc.chunks(tile * d_in) {
                let rows = xt.len() / d_in;
                layer
                    .projection()
                    .apply_into(xt, &mut z[..rows * width], scratch, &());
            }
        };
        match pool {
            None => hash(x, &mut hash_ws[0]),
            Some(pool) => pool.install(|| {
                x.par_chunks(chunk * d_in)
                    .zip(hash_ws.par_iter_mut())
                    .for_each(|(xc, w)| hash(xc, w));
            }),
        }
        true
    }
}

pub fn summarize(times: &[f64]) -> (f64, f64, f64, f64) {
    let n = times.len().max(1) as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = match sorted.len() {
        0 => 0.0,
        l if l % 2 == 1 => sorted[l / 2],
        l => 0.5 * (sorted[l / 2 - 1] + sorted[l / 2]),
    };
    (mean, median, var.sqrt(), sorted.first().copied().unwrap_or(0.0))
}

/// Times every model on the same random input; speedups are relative to
/// the first model.
pub fn bench(models: &[BenchModel], spec: &BenchSpec) -> anyhow::Result<Vec<BenchResult>> {
    spec.validate().map_err(anyhow::Error::msg)?;
    let d_in = models.first().map(|m| m.dims().0).unwrap_or(0);
    anyhow::ensure!(
        models.iter().all(|m| m.dims().0 == d_in),
        "all benchmarked models must share d_in"
    );
    let x = gaussian_vec(&mut seeded(spec.seed ^ 0xbe7c), spec.rows * d_in, 1.0);
    let pool = if spec.threads > 1 {
        Some(rayon::ThreadPoolBuilder::new().num_threads(spec.threads).build()?)
    } else {
        None
    };
    let mut prepared = models
        .iter()
        .map(|m| PreparedModel::new(m, spec))
        .collect::<lookupffn_core::Result<Vec<_>>>()?;

    let mut times = vec![Vec::with_capacity(spec.reps); models.len()];
    let mut hash_times = vec![Vec::with_capacity(spec.reps); models.len()];
    for _ in 0..spec.warmup {
        for p in &mut prepared {
            p.run(&x, pool.as_ref());
        }
    }
    for _ in 0..spec.reps {
        for (i, p) in prepared.iter_mut().enumerate() {
            let t0 = Instant::now();
            p.run(&x, pool.as_ref());
            times[i].push(t0.elapsed().as_secs_f64() * 1e3);
        }
    }
    for _ in 0..spec.reps {
        for (i, p) in prepared.iter_mut().enumerate() {
            let t0 = Instant::now();
            if p.run_hash(&x, pool.as_ref()) {
                hash_times[i].push(t0.elapsed().as_secs_f64() * 1e3);
            }
        }
    }

    let base_median = summarize(&times[0]).1;
    let mut results = Vec::with_capacity(models.len());
    for (i, m) in models.iter().enumerate() {
        let (mean, median, std, min) = summarize(&times[i]);
        let flops = m.flops()?;
        let hash = (!hash_times[i].is_empty()).then(|| summarize(&hash_times[i]).1);
        results.push(BenchResult {
            label: m.label(),
            rows: spec.rows,
            threads: spec.threads,
            flops,
            mean_ms: mean,
            median_ms: median,
            std_ms: std,
            min_ms: min,
            gflops: flops.total_flops() * spec.rows as f64 / (median * 1e-3) / 1e9,
            speedup: base_median / median,
            hash_median_ms: hash,
            gather_median_ms: hash.map(|h| (median - h).max(0.0)),
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let (mean, median, std, min) = summarize(&[3.0, 1.0, 2.0, 4.0]);
        assert_eq!((mean, median, min), (2.5, 2.5, 1.0));
        assert!((std - 1.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn threaded_and_inline_outputs_agree() {
        let cfg = LookupConfig::new(16, 8, 4, 3);
        let models = [
            BenchModel::Dense { d_in: 16, hidden: 32, d_out: 8 },
            BenchModel::Lookup { cfg, kind: ProjKind::Bh { stages: 4, block: 4 }, kernel: GatherKernel::Grouped },
        ];
        let x = gaussian_vec(&mut seeded(1), 100 * 16, 1.0);
        for m in &models {
            let one = BenchSpec { rows: 100, tile: 16, ..BenchSpec::default() };
            let three = BenchSpec { threads: 3, ..one };
            let mut a = PreparedModel::new(m, &one).unwrap();
            let mut b = PreparedModel::new(m, &three).unwrap();
            a.run(&x, None);
            let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
            b.run(&x, Some(&pool));
            assert_eq!(a.output(), b.output());
        }
    }

    #[test]
    fn rejects_too_few_reps() {
        let spec = BenchSpec { reps: 2, ..BenchSpec::default() };
        assert!(bench(&[BenchModel::Dense { d_in: 2, hidden: 2, d_out: 2 }], &spec).is_err());
    }
}
