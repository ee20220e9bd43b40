//! Argument parsing and subcommand dispatch.
//!
//! Exit status: 0 on success, 1 on usage or validation errors, 2 when a
//! numeric check fails (gradient check, FLOP audit, divergence, non-finite
//! values, checkpoint round-trip mismatch).

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lookupffn_core::baselines::{
    bucket_histogram, lsh_recall_experiment, Activation, FfnParams, LshEnsemble, RecallSpec,
};
use lookupffn_core::flops::{audit, lookup_flops, vanilla_flops, FlopReport, OpCounter};
use lookupffn_core::lookup::{GatherKernel, LookupConfig, LookupFfn, Variant};
use lookupffn_core::proj::{matrix_approx_experiment, ApproxHyper, ProjKind};
use lookupffn_core::rng::{gaussian_matrix, gaussian_vec, seeded};
use lookupffn_core::train::{
    default_teacher, grad_check, tau_tradeoff_sweep, train_with, GradCheckModel, GradCheckReport,
    OptimizerKind, Student, Task, TrainConfig,
};
use lookupffn_core::Matrix;

use crate::bench::{bench, BenchModel, BenchSpec};
use crate::checkpoint::{self, CheckpointError};
use crate::config::expand_config;

#[derive(Debug, Parser)]
#[command(
    name = "lookupffn",
    version,
    about = "LookupFFN layers: FLOP model, gradient checks, toy training and CPU benchmarks",
    args_override_self = true,
    subcommand_required = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-token MFLOP of dense and lookup layers, as CSV.
    Flops(FlopsArgs),
    /// Finite-difference check of analytic gradients.
    GradCheck(GradCheckArgs),
    /// Train a lookup student on a desk-scale task; writes the loss curve.
    TrainToy(TrainArgs),
    /// Trade table count against code length at fixed h·tau.
    Sweep(SweepArgs),
    /// Forward-pass latency of a dense FFN against lookup layers.
    Bench(BenchArgs),
    /// LSH recall against exact inner-product search and bucket skew.
    LshDiag(LshArgs),
    /// Fit a random matrix with each projection family.
    ApproxMatrix(ApproxArgs),
    /// Write, read or round-trip a parameter checkpoint.
    CheckpointIo(CheckpointArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Softmax,
    Scaled,
    SigmoidTau1,
    GeluTau1,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Softmax => Variant::Softmax,
            VariantArg::Scaled => Variant::Scaled,
            VariantArg::SigmoidTau1 => Variant::SigmoidTau1,
            VariantArg::GeluTau1 => Variant::GeluTau1,
        }
    }
}

/// `dense`, `signflip`, `bh<m>:<b>` (e.g. `bh4:64`) or `acdc:<k>`.
pub fn parse_proj(s: &str) -> Result<ProjKind, String> {
    let bad = || format!("bad projection `{s}`; expected dense, signflip, bh<m>:<b> or acdc:<k>");
    match s {
        "dense" => return Ok(ProjKind::Dense),
        "signflip" => return Ok(ProjKind::SignFlip),
        _ => {}
    }
    if let Some(k) = s.strip_prefix("acdc:") {
        return Ok(ProjKind::Acdc {
            depth: k.parse().map_err(|_| bad())?,
        });
    }
    if let Some(rest) = s.strip_prefix("bh") {
        let (m, b) = rest.split_once(':').ok_or_else(bad)?;
        return Ok(ProjKind::Bh {
            stages: m.parse().map_err(|_| bad())?,
            block: b.parse().map_err(|_| bad())?,
        });
    }
    Err(bad())
}

fn proj_label(kind: ProjKind) -> String {
    match kind {
        ProjKind::Bh { stages, block } => format!("bh{stages}:{block}"),
        ProjKind::Acdc { depth } => format!("acdc:{depth}"),
        k => k.name().to_string(),
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad number `{p}` in `{s}`")))
        .collect()
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let v = parse_list(s)?;
    v.try_into().map_err(|_| format!("expected three comma-separated sizes, got `{s}`"))
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once([',', 'x'])
        .ok_or_else(|| format!("expected <h>,<tau>, got `{s}`"))?;
    let n = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("bad number in `{s}`"));
    Ok((n(a)?, n(b)?))
}

#[derive(Debug, Args)]
pub struct Output {
    /// CSV destination (stdout when omitted).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl Output {
    fn writer(&self) -> anyhow::Result<csv::Writer<Box<dyn Write>>> {
        let sink: Box<dyn Write> = match &self.output {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        };
        Ok(csv::Writer::from_writer(sink))
    }
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Dense FFN `d_in,t,d_out`; repeatable.
    #[arg(long, value_parser = parse_triple)]
    pub vanilla: Vec<[usize; 3]>,
    /// Lookup layer `h,tau`; repeatable.
    #[arg(long, value_parser = parse_pair)]
    pub lookup: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 512)]
    pub d_in: usize,
    #[arg(long, default_value_t = 512)]
    pub d_out: usize,
    #[arg(long, default_value = "bh4:64", value_parser = parse_proj)]
    pub proj: ProjKind,
    #[arg(long, default_value_t = 1)]
    pub neighbors: usize,
    #[arg(long, value_enum, default_value = "scaled")]
    pub variant: VariantArg,
    /// Also run each layer with an op counter and check it against the model.
    #[arg(long)]
    pub audit: bool,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CheckTarget {
    Ffn,
    Projection,
    Lookup,
    /// Every check of the verification suite.
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ActivationArg {
    Gelu,
    Sigmoid,
    Softmax,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Gelu => Activation::Gelu,
            ActivationArg::Sigmoid => Activation::Sigmoid,
            ActivationArg::Softmax => Activation::Softmax,
        }
    }
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, value_enum, default_value = "lookup")]
    pub model: CheckTarget,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 8)]
    pub h: usize,
    #[arg(long, default_value_t = 4)]
    pub tau: usize,
    /// Gather every code (`neighbor_count = 2^tau`).
    #[arg(long)]
    pub full_neighbors: bool,
    #[arg(long, default_value_t = 1)]
    pub neighbors: usize,
    #[arg(long, value_enum, default_value = "softmax")]
    pub variant: VariantArg,
    #[arg(long, default_value = "bh4:4", value_parser = parse_proj)]
    pub proj: ProjKind,
    #[arg(long, value_enum, default_value = "gelu")]
    pub activation: ActivationArg,
    /// Defaults: 1e-5 for partial-neighbor lookup, 1e-6 otherwise.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    TeacherDistill,
    SyntheticRegression,
    ToyClassification,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "teacher-distill")]
    pub task: TaskArg,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            task: match self.task {
                TaskArg::TeacherDistill => Task::TeacherDistill,
                TaskArg::SyntheticRegression => Task::SyntheticRegression,
                TaskArg::ToyClassification => Task::ToyClassification,
            },
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            optimizer: match self.optimizer {
                OptimizerArg::Sgd => OptimizerKind::Sgd,
                OptimizerArg::Adam => OptimizerKind::Adam,
            },
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long, default_value_t = 64)]
    pub h: usize,
    #[arg(long, default_value_t = 6)]
    pub tau: usize,
    #[arg(long, default_value = "bh4:16", value_parser = parse_proj)]
    pub proj: ProjKind,
    #[arg(long, value_enum, default_value = "scaled")]
    pub variant: VariantArg,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainOpts,
    /// `h,tau` cells separated by `;`, e.g. `128,2;64,4;32,8`.
    #[arg(long, default_value = "128,2;64,4;32,8", value_parser = parse_pair, value_delimiter = ';')]
    pub grid: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value = "bh4:16", value_parser = parse_proj)]
    pub proj: ProjKind,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum KernelArg {
    Portable,
    Grouped,
    Both,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 4096)]
    pub rows: usize,
    #[arg(long, default_value_t = 256)]
    pub tile: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Model width (`d_in = d_out`).
    #[arg(long, default_value_t = 512)]
    pub d: usize,
    /// Dense FFN hidden width.
    #[arg(long, default_value_t = 2048)]
    pub t: usize,
    #[arg(long, default_value_t = 128)]
    pub h: usize,
    #[arg(long, default_value_t = 8)]
    pub tau: usize,
    #[arg(long, default_value = "bh4:64", value_parser = parse_proj)]
    pub proj: ProjKind,
    #[arg(long, value_enum, default_value = "both")]
    pub kernel: KernelArg,
    #[arg(long, value_enum, default_value = "scaled")]
    pub variant: VariantArg,
    /// Benchmark the dense baseline against itself (noise floor).
    #[arg(long)]
    pub self_check: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct LshArgs {
    #[arg(long, default_value_t = 2048)]
    pub t: usize,
    #[arg(long, default_value_t = 512)]
    pub d: usize,
    #[arg(long, default_value_t = 256)]
    pub queries: usize,
    #[arg(long, default_value_t = 8)]
    pub tau: usize,
    #[arg(long, default_value = "1,2,4,8,16,32,64,128", value_delimiter = ',')]
    pub tables: Vec<usize>,
    #[arg(long, default_value = "1,8,32,128", value_delimiter = ',')]
    pub top: Vec<usize>,
    /// Weight of a component shared by every row of W (0 = independent rows).
    #[arg(long, default_value_t = 0.0)]
    pub correlation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write bucket sizes of the largest ensemble.
    #[arg(long)]
    pub hist_output: Option<PathBuf>,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct ApproxArgs {
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    /// BH stage count.
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    #[arg(long, default_value = "2,4,8,16,32,64", value_delimiter = ',')]
    pub blocks: Vec<usize>,
    #[arg(long, default_value = "1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16", value_delimiter = ',')]
    pub depths: Vec<usize>,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    /// Initialize a layer from the flags below and write it here.
    #[arg(long, conflicts_with = "read")]
    pub write: Option<PathBuf>,
    /// Read a checkpoint and print its header fields.
    #[arg(long)]
    pub read: Option<PathBuf>,
    /// With --write: read the file back and compare every value.
    #[arg(long, requires = "write")]
    pub verify: bool,
    #[arg(long, default_value_t = 64)]
    pub d_in: usize,
    #[arg(long, default_value_t = 64)]
    pub d_out: usize,
    #[arg(long, default_value_t = 32)]
    pub h: usize,
    #[arg(long, default_value_t = 8)]
    pub tau: usize,
    #[arg(long, default_value = "bh4:16", value_parser = parse_proj)]
    pub proj: ProjKind,
    #[arg(long, value_enum, default_value = "scaled")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: Output,
}

/// A numeric check that ran to completion and failed.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    use lookupffn_core::Error as E;
    let numeric = |e: &E| {
        matches!(
            e,
            E::NonFinite { .. } | E::Diverged { .. } | E::Audit { .. } | E::GradCheck { .. }
        )
    };
    for cause in err.chain() {
        if cause.is::<CheckFailed>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return if numeric(e) { 2 } else { 1 };
        }
        if let Some(CheckpointError::Layer(e)) = cause.downcast_ref::<CheckpointError>() {
            return if numeric(e) { 2 } else { 1 };
        }
    }
    1
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status.
pub fn main_with(argv: Vec<OsString>) -> u8 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Flops(a) => flops_cmd(a),
        Command::GradCheck(a) => grad_check_cmd(a),
        Command::TrainToy(a) => train_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::LshDiag(a) => lsh_cmd(a),
        Command::ApproxMatrix(a) => approx_cmd(a),
        Command::CheckpointIo(a) => checkpoint_cmd(a),
    }
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

fn e(v: f64) -> String {
    format!("{v:.3e}")
}

fn report_fields(r: &FlopReport) -> [String; 4] {
    [f(r.hash_mflop), f(r.gather_mflop), f(r.other_mflop), f(r.total_mflop)]
}

struct FlopRow {
    model: &'static str,
    d_in: usize,
    d_out: usize,
    config: String,
    proj: String,
    report: FlopReport,
    note: &'static str,
    layer: Option<(LookupConfig, ProjKind)>,
    dense: Option<[usize; 3]>,
}

fn lookup_row(cfg: LookupConfig, kind: ProjKind, note: &'static str) -> anyhow::Result<FlopRow> {
    cfg.validate()?;
    let spec = cfg.projection_spec(kind)?;
    Ok(FlopRow {
        model: "lookup",
        d_in: cfg.d_in,
        d_out: cfg.d_out,
        config: format!("h={} tau={} n={}", cfg.h, cfg.tau, cfg.neighbor_count),
        proj: proj_label(kind),
        report: lookup_flops(&cfg, &spec),
        note,
        layer: Some((cfg, kind)),
        dense: None,
    })
}

fn vanilla_row(d: [usize; 3], note: &'static str) -> anyhow::Result<FlopRow> {
    if d.contains(&0) {
        bail!("dense sizes must be positive, got {d:?}");
    }
    Ok(FlopRow {
        model: "vanilla",
        d_in: d[0],
        d_out: d[2],
        config: format!("t={}", d[1]),
        proj: String::new(),
        report: vanilla_flops(d[0], d[1], d[2]),
        note,
        layer: None,
        dense: Some(d),
    })
}

/// Standard configurations: two model sizes plus projection, table count
/// and code length sweeps.
fn reference_rows() -> anyhow::Result<Vec<FlopRow>> {
    let s = Variant::Scaled;
    let bh = |b| ProjKind::Bh { stages: 4, block: b };
    let lk = |h, tau| LookupConfig::new(512, 512, h, tau).with_variant(s);
    let mut rows = vec![
        vanilla_row([512, 2048, 512], "base model")?,
        lookup_row(lk(256, 8), bh(64), "base model")?,
        vanilla_row([768, 3072, 768], "large model")?,
        lookup_row(
            LookupConfig::new(768, 768, 170, 9).with_variant(s),
            bh(64),
            "large model; D=2048 with b=64",
        )?,
        lookup_row(lk(128, 8), ProjKind::Dense, "projection ablation")?,
    ];
    for b in [64, 32, 16] {
        rows.push(lookup_row(lk(128, 8), bh(b), "projection ablation")?);
    }
    for h in [64, 128, 256] {
        rows.push(lookup_row(lk(h, 8), bh(64), "table count ablation")?);
    }
    for (h, tau) in [(128, 8), (64, 16), (32, 32)] {
        if tau <= lookupffn_core::lookup::MAX_TAU {
            rows.push(lookup_row(lk(h, tau), bh(64), "code length ablation")?);
        }
    }
    Ok(rows)
}

fn flops_cmd(a: FlopsArgs) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for d in &a.vanilla {
        rows.push(vanilla_row(*d, "")?);
    }
    for &(h, tau) in &a.lookup {
        let cfg = LookupConfig::new(a.d_in, a.d_out, h, tau)
            .with_variant(a.variant.into())
            .with_neighbors(a.neighbors);
        rows.push(lookup_row(cfg, a.proj, "")?);
    }
    if rows.is_empty() {
        rows = reference_rows()?;
    }
    let mut w = a.out.writer()?;
    let mut header = vec![
        "model", "d_in", "d_out", "config", "proj", "hash_mflop", "gather_mflop", "other_mflop",
        "total_mflop",
    ];
    if a.audit {
        header.push("measured_total_mflop");
    }
    header.push("note");
    w.write_record(&header)?;
    let mut failure = None;
    for r in &rows {
        let mut rec = vec![
            r.model.to_string(),
            r.d_in.to_string(),
            r.d_out.to_string(),
            r.config.clone(),
            r.proj.clone(),
        ];
        rec.extend(report_fields(&r.report));
        if a.audit {
            let measured = audit_row(r)?;
            rec.push(f(measured.total_mflop));
            if let Err(err) = audit(&r.report, &measured, 0.05) {
                failure.get_or_insert(format!("{} {}: {err}", r.model, r.config));
            }
        }
        rec.push(r.note.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    match failure {
        Some(msg) => Err(CheckFailed(msg).into()),
        None => Ok(()),
    }
}

/// Runs the layer on a few random rows with an op counter attached.
fn audit_row(r: &FlopRow) -> anyhow::Result<FlopReport> {
    const TOKENS: usize = 4;
    let counter = OpCounter::default();
    if let Some((cfg, kind)) = r.layer {
        let layer = LookupFfn::new(cfg, kind, 1)?;
        let x = gaussian_matrix(&mut seeded(2), TOKENS, cfg.d_in, 1.0);
        layer.forward_with(&x, &counter)?;
    } else if let Some([d_in, t, d_out]) = r.dense {
        let p = FfnParams::init(d_in, t, d_out, Activation::Gelu, 1);
        let x = gaussian_matrix(&mut seeded(2), TOKENS, d_in, 1.0);
        p.forward_with(&x, &counter)?;
    }
    Ok(counter.per_token(TOKENS))
}

fn grad_check_models(a: &GradCheckArgs) -> Vec<(GradCheckModel, f64)> {
    let bh = |m| ProjKind::Bh { stages: m, block: 4 };
    let lookup = |tau: usize, nc: usize, v: Variant| GradCheckModel::Lookup {
        cfg: LookupConfig::new(a.d, a.d, a.h, tau).with_variant(v).with_neighbors(nc),
        kind: a.proj,
    };
    let thr = |default: f64| a.threshold.unwrap_or(default);
    match a.model {
        CheckTarget::Ffn => vec![(
            GradCheckModel::Ffn {
                d_in: a.d,
                hidden: 2 * a.d,
                d_out: a.d,
                activation: a.activation.into(),
            },
            thr(1e-6),
        )],
        CheckTarget::Projection => match lookupffn_core::proj::ProjectionSpec::new(a.d, a.d, a.proj) {
            Ok(spec) => vec![(GradCheckModel::Projection(spec), thr(1e-6))],
            Err(_) => Vec::new(),
        },
        CheckTarget::Lookup => {
            let nc = if a.full_neighbors { 1usize << a.tau.min(24) } else { a.neighbors };
            let full = nc == 1usize << a.tau.min(24);
            vec![(lookup(a.tau, nc, a.variant.into()), thr(if full { 1e-6 } else { 1e-5 }))]
        }
        CheckTarget::All => {
            let mut v = Vec::new();
            for act in [Activation::Gelu, Activation::Sigmoid, Activation::Softmax] {
                v.push((
                    GradCheckModel::Ffn {
                        d_in: 8,
                        hidden: 16,
                        d_out: 8,
                        activation: act,
                    },
                    thr(1e-6),
                ));
            }
            for m in [1, 2, 4] {
                let spec = lookupffn_core::proj::ProjectionSpec::new(16, 16, bh(m))
                    .expect("valid BH spec");
                v.push((GradCheckModel::Projection(spec), thr(1e-6)));
            }
            for var in [Variant::Softmax, Variant::Scaled] {
                v.push((lookup(4, 1, var), thr(1e-5)));
                v.push((lookup(3, 8, var), thr(1e-6)));
            }
            v
        }
    }
}

fn write_grad_report(w: &mut csv::Writer<Box<dyn Write>>, r: &GradCheckReport) -> anyhow::Result<()> {
    for g in &r.groups {
        w.write_record([
            r.model.clone(),
            g.name.to_string(),
            g.checked.to_string(),
            g.excluded.to_string(),
            e(g.max_rel_err),
            e(r.threshold),
            (g.max_rel_err < r.threshold).to_string(),
        ])?;
    }
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs) -> anyhow::Result<()> {
    let models = grad_check_models(&a);
    if models.is_empty() {
        bail!("no gradient check matches the given options");
    }
    let mut w = a.out.writer()?;
    w.write_record(["model", "group", "checked", "excluded", "max_rel_err", "threshold", "passed"])?;
    let mut first_failure = None;
    for (model, threshold) in models {
        let report = grad_check(&model, a.seed, threshold)?;
        write_grad_report(&mut w, &report)?;
        if let Err(e) = report.ensure_passed() {
            first_failure.get_or_insert(e);
        }
    }
    w.flush()?;
    match first_failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = a.train.config();
    let teacher = default_teacher(cfg.seed.wrapping_add(1000));
    let lc = LookupConfig::new(teacher.d_in(), teacher.d_out(), a.h, a.tau).with_variant(a.variant.into());
    lc.validate()?;
    let student = Student::Lookup { cfg: lc, kind: a.proj };
    let mut w = a.out.writer()?;
    w.write_record(["step", "loss", "wall_ms"])?;
    let start = Instant::now();
    let mut io_err = None;
    let report = train_with(&teacher, &student, &cfg, |step, loss| {
        if io_err.is_none() {
            let ms = start.elapsed().as_secs_f64() * 1e3;
            if let Err(e) = w.write_record([step.to_string(), format!("{loss:.8e}"), format!("{ms:.3}")]) {
                io_err = Some(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    w.flush()?;
    eprintln!(
        "{}: eval loss {:.6} -> {:.6}; table writes {}; student {:.4} MFLOP/token vs teacher {:.4}",
        cfg.task.name(),
        report.initial_eval,
        report.final_eval,
        report.table_writes,
        report.student_flops.total_mflop,
        report.teacher_flops.total_mflop
    );
    if report.table_writes != cfg.steps as u64 {
        return Err(CheckFailed(format!(
            "tables were written {} times in {} steps",
            report.table_writes, cfg.steps
        ))
        .into());
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> anyhow::Result<()> {
    let cfg = a.train.config();
    let teacher = default_teacher(cfg.seed.wrapping_add(1000));
    for &(h, tau) in &a.grid {
        LookupConfig::new(teacher.d_in(), teacher.d_out(), h, tau).validate()?;
    }
    let rows = tau_tradeoff_sweep(&teacher, &a.grid, a.proj, &cfg, a.seeds)?;
    let mut w = a.out.writer()?;
    w.write_record(["h", "tau", "mse", "hash_mflop", "gather_mflop", "other_mflop", "total_mflop"])?;
    for r in rows {
        let mut rec = vec![r.h.to_string(), r.tau.to_string(), format!("{:.6e}", r.mse)];
        rec.extend(report_fields(&r.flops));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> anyhow::Result<()> {
    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let spec = BenchSpec {
        rows: a.rows,
        tile: a.tile,
        reps: a.reps,
        warmup: a.warmup,
        threads,
        seed: a.seed,
    };
    spec.validate().map_err(anyhow::Error::msg)?;
    let dense = BenchModel::Dense {
        d_in: a.d,
        hidden: a.t,
        d_out: a.d,
    };
    let mut models = vec![dense.clone()];
    if a.self_check {
        models.push(dense);
    } else {
        let cfg = LookupConfig::new(a.d, a.d, a.h, a.tau).with_variant(a.variant.into());
        cfg.validate()?;
        cfg.projection_spec(a.proj)?;
        let kernels: &[GatherKernel] = match a.kernel {
            KernelArg::Portable => &[GatherKernel::Portable],
            KernelArg::Grouped => &[GatherKernel::Grouped],
            KernelArg::Both => &[GatherKernel::Portable, GatherKernel::Grouped],
        };
        for &kernel in kernels {
            models.push(BenchModel::Lookup {
                cfg,
                kind: a.proj,
                kernel,
            });
        }
    }
    let results = bench(&models, &spec)?;
    let mut w = a.out.writer()?;
    w.write_record([
        "label", "rows", "threads", "hash_mflop", "gather_mflop", "other_mflop", "total_mflop",
        "mean_ms", "median_ms", "std_ms", "min_ms", "gflops", "speedup", "hash_ms", "gather_ms",
    ])?;
    for r in results {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        let mut rec = vec![r.label.clone(), r.rows.to_string(), r.threads.to_string()];
        rec.extend(report_fields(&r.flops));
        rec.extend([
            format!("{:.4}", r.mean_ms),
            format!("{:.4}", r.median_ms),
            format!("{:.4}", r.std_ms),
            format!("{:.4}", r.min_ms),
            format!("{:.3}", r.gflops),
            format!("{:.3}", r.speedup),
            opt(r.hash_median_ms),
            opt(r.gather_median_ms),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Gaussian rows plus `correlation` times one shared Gaussian row.
pub fn correlated_rows(t: usize, d: usize, correlation: f64, seed: u64) -> Matrix {
    let mut rng = seeded(seed);
    let shared = gaussian_vec(&mut rng, d, 1.0);
    let mut w = gaussian_matrix(&mut rng, t, d, 1.0);
    for r in 0..t {
        for (v, s) in w.row_mut(r).iter_mut().zip(&shared) {
            *v += correlation * s;
        }
    }
    w
}

fn lsh_cmd(a: LshArgs) -> anyhow::Result<()> {
    if a.t == 0 || a.d == 0 || a.queries == 0 || a.tables.is_empty() || a.top.is_empty() {
        bail!("t, d, queries, tables and top must be non-empty / positive");
    }
    if let Some(&x) = a.top.iter().find(|&&x| x == 0 || x > a.t) {
        bail!("top-x value {x} outside 1..={}", a.t);
    }
    let w = correlated_rows(a.t, a.d, a.correlation, a.seed);
    let q = gaussian_matrix(&mut seeded(a.seed ^ 0x9e11), a.queries, a.d, 1.0);
    let spec = RecallSpec {
        tau: a.tau,
        table_counts: &a.tables,
        top_x: &a.top,
        seed: a.seed,
    };
    let rows = lsh_recall_experiment(&w, &q, &spec)?;
    let mut out = a.out.writer()?;
    out.write_record(["hashes", "tables", "top_x", "recall", "retrieved_mean", "retrieved_std"])?;
    for r in rows {
        out.write_record([
            r.hashes.to_string(),
            r.tables.to_string(),
            r.top_x.to_string(),
            format!("{:.6}", r.recall),
            format!("{:.2}", r.retrieved_mean),
            format!("{:.2}", r.retrieved_std),
        ])?;
    }
    out.flush()?;
    let ens = LshEnsemble::build(&w, 1, a.tau, a.seed)?;
    let stats = bucket_histogram(&ens);
    eprintln!(
        "bucket skew (1 table, tau={}): max/mean {:.3}, gini {:.3}",
        a.tau, stats.max_over_mean, stats.gini
    );
    if let Some(p) = &a.hist_output {
        let mut hw = csv::Writer::from_path(p).with_context(|| format!("cannot create {}", p.display()))?;
        hw.write_record(["rank", "size"])?;
        for (i, s) in stats.sizes.iter().enumerate() {
            hw.write_record([i.to_string(), s.to_string()])?;
        }
        hw.flush()?;
    }
    Ok(())
}

fn approx_cmd(a: ApproxArgs) -> anyhow::Result<()> {
    if !a.d.is_power_of_two() {
        bail!("--d must be a power of two, got {}", a.d);
    }
    let mut w = a.out.writer()?;
    w.write_record(["kind", "param", "seed", "flops", "params", "mse", "rel_error", "initial_rel_error"])?;
    for seed in 0..a.seeds as u64 {
        let target = gaussian_matrix(&mut seeded(1000 + seed), a.d, a.d, 1.0 / (a.d as f64).sqrt());
        let mut kinds = vec![(ProjKind::Dense, 0)];
        kinds.extend(a.blocks.iter().map(|&b| (ProjKind::Bh { stages: a.stages, block: b }, b)));
        kinds.extend(a.depths.iter().map(|&k| (ProjKind::Acdc { depth: k }, k)));
        for (kind, param) in kinds {
            let hyper = ApproxHyper {
                steps: a.steps,
                ..ApproxHyper::default_for(kind)
            };
            let r = matrix_approx_experiment(&target, kind, &hyper, seed)?;
            w.write_record([
                kind.name().to_string(),
                param.to_string(),
                seed.to_string(),
                r.flops.to_string(),
                r.params.to_string(),
                format!("{:.6e}", r.mse),
                format!("{:.6e}", r.rel_error),
                format!("{:.6e}", r.initial_rel_error),
            ])?;
            w.flush()?;
        }
    }
    Ok(())
}

fn checkpoint_cmd(a: CheckpointArgs) -> anyhow::Result<()> {
    let layer = match (&a.write, &a.read) {
        (Some(path), _) => {
            let cfg = LookupConfig::new(a.d_in, a.d_out, a.h, a.tau).with_variant(a.variant.into());
            let layer = LookupFfn::new(cfg, a.proj, a.seed)?;
            checkpoint::save(path, &layer).with_context(|| format!("writing {}", path.display()))?;
            if a.verify {
                let back = checkpoint::load(path)?;
                if back != layer {
                    return Err(CheckFailed(format!("{} did not round-trip", path.display())).into());
                }
            }
            layer
        }
        (None, Some(path)) => load_checkpoint(path)?,
        (None, None) => bail!("checkpoint-io needs --write <path> or --read <path>"),
    };
    let cfg = layer.config();
    let mut w = a.out.writer()?;
    w.write_record(["field", "value"])?;
    let kind = layer.projection().spec().kind();
    for (k, v) in [
        ("d_in", cfg.d_in.to_string()),
        ("d_out", cfg.d_out.to_string()),
        ("h", cfg.h.to_string()),
        ("tau", cfg.tau.to_string()),
        ("variant", cfg.variant.name().to_string()),
        ("projection", proj_label(kind)),
        ("projection_params", layer.projection().params().len().to_string()),
        ("table_values", layer.tables().data().len().to_string()),
    ] {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<LookupFfn> {
    checkpoint::load(path).with_context(|| format!("reading {}", path.display()))
}
