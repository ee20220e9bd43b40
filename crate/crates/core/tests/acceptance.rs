//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Built with `harness = false` so the lines always reach the terminal.
//! Every oracle here is written from scratch against the definitions rather
//! than reusing library helpers.

use std::process::ExitCode;
use std::time::Instant;

use lookupffn_core::baselines::{bucket_histogram, lsh_recall_experiment, LshEnsemble, RecallSpec};
use lookupffn_core::flops::{audit, lookup_flops, projection_flops, vanilla_flops, OpCounter};
use lookupffn_core::fwht::fwht_inplace;
use lookupffn_core::lookup::{
    compute_codes, gelu_approx_max_deviation, log_denominator, LookupConfig, LookupFfn, SoftCodes,
    Variant,
};
use lookupffn_core::proj::{matrix_approx_experiment, ApproxHyper, ProjKind, ProjectionSpec};
use lookupffn_core::rng::{gaussian_matrix, gaussian_vec, seeded};
use lookupffn_core::train::{
    default_teacher, grad_check, train_with, GradCheckModel, Student, Task, TrainConfig,
};
use lookupffn_core::baselines::{Activation, FfnParams};
use lookupffn_core::Matrix;

type Outcome = Result<String, String>;

/// `S[i][j] = +1` when bit `j` of `i` is set.
fn codebook(tau: usize) -> Vec<Vec<f64>> {
    (0..1usize << tau)
        .map(|i| (0..tau).map(|j| if i >> j & 1 == 1 { 1.0 } else { -1.0 }).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn matrix_rel(a: &Matrix, b: &Matrix) -> f64 {
    let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    (num / b.frobenius_sq().max(f64::MIN_POSITIVE)).sqrt()
}

fn gate(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn denominator_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for tau in 1..=12 {
        let s = codebook(tau);
        let mut rng = seeded(tau as u64);
        for _ in 0..1000 {
            let z = gaussian_vec(&mut rng, tau, 1.0);
            let exhaustive: f64 = s.iter().map(|row| dot(&z, row).exp()).sum();
            worst = worst.max(rel(log_denominator(&z).exp(), exhaustive));
        }
    }
    gate(worst < 1e-10, format!("max rel err {worst:.2e} over tau 1..=12 (< 1e-10)"))
}

fn code_identities() -> Outcome {
    let mut mismatches = 0usize;
    for tau in 1..=10 {
        let s = codebook(tau);
        let z = gaussian_matrix(&mut seeded(100 + tau as u64), 10_000, tau, 1.0);
        let codes = compute_codes(&SoftCodes::new(z.clone(), 1, tau).unwrap());
        for r in 0..z.rows() {
            let zr = z.row(r);
            let scores: Vec<f64> = s.iter().map(|row| dot(zr, row)).collect();
            let argmax = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
            let argmin = (0..scores.len()).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
            let g = codes.code(r, 0) as usize;
            let abs_sum: f64 = zr.iter().map(|v| v.abs()).sum();
            let complement = !g & ((1 << tau) - 1);
            if g != argmax
                || complement != argmin
                || rel(scores[argmax], abs_sum) > 1e-12
                || rel(scores[argmin], -abs_sum) > 1e-12
            {
                mismatches += 1;
            }
        }
    }
    gate(mismatches == 0, format!("{mismatches} mismatches over tau 1..=10, 10k rows each"))
}

/// `Σ_k Σ_i w_i T_k[i]` with the weights computed over the full codebook.
fn softmax_oracle(layer: &LookupFfn, x: &Matrix) -> Matrix {
    let cfg = *layer.config();
    let z = layer.projection().apply(x).unwrap();
    let s = codebook(cfg.tau);
    let scaled = matches!(cfg.variant, Variant::Scaled | Variant::GeluTau1);
    let mut y = Matrix::zeros(x.rows(), cfg.d_out);
    for r in 0..x.rows() {
        for k in 0..cfg.h {
            let zk = &z.row(r)[k * cfg.tau..(k + 1) * cfg.tau];
            let scores: Vec<f64> = s.iter().map(|row| dot(zk, row)).collect();
            let den: f64 = scores.iter().map(|v| v.exp()).sum();
            for (i, sc) in scores.iter().enumerate() {
                let p = sc.exp() / den;
                let w = if scaled { p * sc } else { p };
                let t = layer.tables().row(k, i as u32);
                for (o, tv) in y.row_mut(r).iter_mut().zip(t) {
                    *o += w * tv;
                }
            }
        }
    }
    y
}

fn full_softmax_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for (tau, variant) in [(1, Variant::Softmax), (3, Variant::Scaled), (5, Variant::Softmax), (8, Variant::Scaled)] {
        let cfg = LookupConfig::new(32, 12, 4, tau)
            .with_variant(variant)
            .with_neighbors(1 << tau);
        let layer = LookupFfn::new(cfg, ProjKind::Dense, tau as u64).unwrap();
        let x = gaussian_matrix(&mut seeded(7), 256, 32, 1.0);
        let (y, _) = layer.forward(&x).unwrap();
        worst = worst.max(matrix_rel(&y, &softmax_oracle(&layer, &x)));
    }
    gate(worst < 1e-10, format!("max rel err {worst:.2e} at tau 1/3/5/8, 256 rows (< 1e-10)"))
}

fn gradient_suite() -> Outcome {
    let mut cases: Vec<(GradCheckModel, f64)> = Vec::new();
    for activation in [Activation::Gelu, Activation::Sigmoid, Activation::Softmax] {
        cases.push((GradCheckModel::Ffn { d_in: 8, hidden: 16, d_out: 8, activation }, 1e-6));
    }
    for stages in [1, 2, 4] {
        let spec = ProjectionSpec::new(16, 16, ProjKind::Bh { stages, block: 4 }).unwrap();
        cases.push((GradCheckModel::Projection(spec), 1e-6));
    }
    let bh = ProjKind::Bh { stages: 2, block: 4 };
    for variant in [Variant::Softmax, Variant::Scaled] {
        for tau in [2, 4] {
            let cfg = LookupConfig::new(16, 8, 8, tau).with_variant(variant);
            cases.push((GradCheckModel::Lookup { cfg, kind: bh }, 1e-5));
        }
        let cfg = LookupConfig::new(16, 8, 4, 3).with_variant(variant).with_neighbors(8);
        cases.push((GradCheckModel::Lookup { cfg, kind: bh }, 1e-6));
    }
    let mut failures = Vec::new();
    let mut worst = (0.0f64, String::new());
    for (model, threshold) in &cases {
        let report = grad_check(model, 3, *threshold).map_err(|e| e.to_string())?;
        let full = matches!(model, GradCheckModel::Lookup { cfg, .. } if cfg.neighbor_count == cfg.table_rows());
        if full && report.groups.iter().any(|g| g.excluded > 0) {
            failures.push(format!("{} excluded entries in full-neighbor mode", report.model));
        }
        if !report.passed() {
            failures.push(format!("{} {:.2e}", report.model, report.max_rel_err()));
        }
        let ratio = report.max_rel_err() / threshold;
        if ratio >= worst.0 {
            worst = (ratio, format!("{} {:.2e}", report.model, report.max_rel_err()));
        }
    }
    gate(
        failures.is_empty(),
        format!(
            "{} checks (ffn 1e-6, bh 1e-6, top-1 1e-5, all-neighbor 1e-6); closest to threshold: {}{}",
            cases.len(),
            worst.1,
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    )
}

fn fwht_suite() -> Outcome {
    let mut worst_oracle: f64 = 0.0;
    let mut worst_involution: f64 = 0.0;
    let mut n = 1;
    while n <= 4096 {
        let v = gaussian_vec(&mut seeded(n as u64), n, 1.0);
        let mut fast = v.clone();
        fwht_inplace(&mut fast).unwrap();
        let naive: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if (i & j).count_ones() % 2 == 0 { v[j] } else { -v[j] })
                    .sum()
            })
            .collect();
        let norm = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = fast.iter().zip(&naive).map(|(a, b)| a - b).collect();
        worst_oracle = worst_oracle.max(norm(&diff) / norm(&naive));
        let mut twice = fast.clone();
        fwht_inplace(&mut twice).unwrap();
        let diff: Vec<f64> = twice.iter().zip(&v).map(|(a, b)| a - n as f64 * b).collect();
        worst_involution = worst_involution.max(norm(&diff) / (n as f64 * norm(&v)));
        n *= 2;
    }
    gate(
        worst_oracle < 1e-12 && worst_involution < 1e-12,
        format!("n <= 4096: oracle {worst_oracle:.2e}, involution {worst_involution:.2e} (< 1e-12)"),
    )
}

fn flop_tables() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        let pass = if tol == 0.0 { format!("{got:.2}") == format!("{want:.2}") } else { rel(got, want) <= tol };
        ok &= pass;
        notes.push(format!("{name} {got:.4}{}", if pass { "" } else { " (off)" }));
    };
    check("vanilla512", vanilla_flops(512, 2048, 512).total_mflop, 4.19, 0.0);
    check("vanilla768", vanilla_flops(768, 3072, 768).total_mflop, 9.44, 0.0);
    let hash_mflop = |kind| projection_flops(&ProjectionSpec::new(512, 1024, kind).unwrap()) as f64 / 1e6;
    for (b, want) in [(64, 0.56), (32, 0.30), (16, 0.17)] {
        check(&format!("bh4-b{b}"), hash_mflop(ProjKind::Bh { stages: 4, block: b }), want, 0.02);
    }
    check("dense-hash", hash_mflop(ProjKind::Dense), 1.05, 0.02);
    let cfg = LookupConfig::new(512, 512, 128, 8).with_variant(Variant::Scaled);
    let spec = cfg.projection_spec(ProjKind::Bh { stages: 4, block: 64 }).unwrap();
    check("gather-h128", lookup_flops(&cfg, &spec).gather_mflop, 0.13, 0.02);
    let cfg = LookupConfig::new(512, 512, 256, 8).with_variant(Variant::Scaled);
    let spec = cfg.projection_spec(ProjKind::Bh { stages: 4, block: 64 }).unwrap();
    check("lookup-h256", lookup_flops(&cfg, &spec).total_mflop, 1.38, 0.03);

    let mut audit_worst: f64 = 0.0;
    let layers = [
        (LookupConfig::new(512, 512, 256, 8).with_variant(Variant::Scaled), ProjKind::Bh { stages: 4, block: 64 }),
        (LookupConfig::new(64, 32, 16, 4).with_neighbors(5), ProjKind::Acdc { depth: 2 }),
        (LookupConfig::new(64, 32, 8, 6).with_variant(Variant::Scaled).with_neighbors(3), ProjKind::Dense),
        (LookupConfig::new(48, 16, 8, 4), ProjKind::SignFlip),
    ];
    let tokens = 6;
    for (cfg, kind) in layers {
        let layer = LookupFfn::new(cfg, kind, 1).unwrap();
        let counter = OpCounter::default();
        layer.forward_with(&gaussian_matrix(&mut seeded(4), tokens, cfg.d_in, 1.0), &counter).unwrap();
        let analytic = lookup_flops(&cfg, layer.projection().spec());
        let measured = counter.per_token(tokens);
        audit_worst = audit_worst.max(rel(measured.total_mflop, analytic.total_mflop));
        if let Err(e) = audit(&analytic, &measured, 0.05) {
            ok = false;
            notes.push(e.to_string());
        }
    }
    let dense = FfnParams::init(64, 128, 32, Activation::Gelu, 0);
    let counter = OpCounter::default();
    dense.forward_with(&gaussian_matrix(&mut seeded(5), tokens, 64, 1.0), &counter).unwrap();
    let measured = counter.per_token(tokens);
    audit_worst = audit_worst.max(rel(measured.total_mflop, vanilla_flops(64, 128, 32).total_mflop));
    ok &= audit_worst <= 0.05;
    notes.push(format!("runtime audit max dev {:.2}%", 100.0 * audit_worst));
    gate(ok, notes.join(", "))
}

fn single_bit_equivalences() -> Outcome {
    let (d_in, h, d_out) = (10, 6, 4);
    let w = gaussian_matrix(&mut seeded(11), h, d_in, 0.7);
    let v = gaussian_matrix(&mut seeded(12), h, d_out, 1.0);
    let x = gaussian_matrix(&mut seeded(13), 64, d_in, 1.0);
    let ffn = |act: &dyn Fn(f64) -> f64| {
        Matrix::from_fn(x.rows(), d_out, |r, c| {
            (0..h).map(|k| act(dot(x.row(r), w.row(k))) * v.get(k, c)).sum()
        })
    };
    let sigmoid = |u: f64| 1.0 / (1.0 + (-u).exp());
    let want_sig = ffn(&sigmoid);
    let (got_sig, _) = LookupFfn::sigmoid_embedding(&w, &v).unwrap().forward(&x).unwrap();
    let sig_err = matrix_rel(&got_sig, &want_sig);
    let formula = |u: f64| {
        let z = 0.851 * u;
        1.175 * z * z.exp() / (z.exp() + (-z).exp())
    };
    let want_gelu = ffn(&formula);
    let (got_gelu, _) = LookupFfn::gelu_embedding(&w, &v).unwrap().forward(&x).unwrap();
    let gelu_err = matrix_rel(&got_gelu, &want_gelu);
    let (dev, at) = gelu_approx_max_deviation(-6.0, 6.0, 120_001);
    gate(
        sig_err < 1e-10 && gelu_err < 1e-10,
        format!(
            "sigmoid {sig_err:.2e}, scaled/GELU formula {gelu_err:.2e} (< 1e-10); \
             formula vs exact GELU on [-6,6]: max |dev| {dev:.4} at u={at:.3} (reported)"
        ),
    )
}

fn approximation_experiment() -> Outcome {
    const D: usize = 64;
    const SEEDS: u64 = 5;
    let target = |seed: u64| gaussian_matrix(&mut seeded(1000 + seed), D, D, 1.0 / (D as f64).sqrt());
    let run = |kind: ProjKind, seed: u64| {
        let hyper = ApproxHyper::default_for(kind);
        matrix_approx_experiment(&target(seed), kind, &hyper, seed).map_err(|e| e.to_string())
    };
    let bh = ProjKind::Bh { stages: 4, block: 8 };
    let bh_flops = projection_flops(&ProjectionSpec::new(D, D, bh).unwrap());
    // smallest ACDC depth whose FLOP count is at least BH4's
    let matched = (1..=16)
        .find(|&k| projection_flops(&ProjectionSpec::new(D, D, ProjKind::Acdc { depth: k }).unwrap()) >= bh_flops)
        .unwrap();
    let acdc = ProjKind::Acdc { depth: matched };

    let mut dense_worst: f64 = 0.0;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..SEEDS {
        dense_worst = dense_worst.max(run(ProjKind::Dense, seed)?.rel_error);
        let b = run(bh, seed)?.rel_error;
        let a = run(acdc, seed)?.rel_error;
        wins += usize::from(b < a);
        pairs.push(format!("{b:.3}/{a:.3}"));
    }
    let sweep: Vec<f64> = (1..=16)
        .map(|k| run(ProjKind::Acdc { depth: k }, 0).map(|r| r.rel_error))
        .collect::<Result<_, _>>()?;
    let rises: Vec<usize> = (1..sweep.len()).filter(|&i| sweep[i] > sweep[i - 1]).map(|i| i + 1).collect();
    gate(
        dense_worst < 1e-8 && wins >= 4 && !rises.is_empty(),
        format!(
            "dense max rel err {dense_worst:.1e}; BH4 b=8 beats ACDC k={matched} on {wins}/{SEEDS} seeds \
             (rel err bh/acdc {}); ACDC k=1..16 on seed 0 rises at k={rises:?}",
            pairs.join(" ")
        ),
    )
}

fn lsh_diagnostics() -> Outcome {
    let (t, d) = (1024, 64);
    let mut rng = seeded(21);
    let w = gaussian_matrix(&mut rng, t, d, 1.0);
    let q = gaussian_matrix(&mut rng, 128, d, 1.0);
    let budgets = [1, 2, 4, 8, 16, 32, 64];
    let spec = RecallSpec { tau: 8, table_counts: &budgets, top_x: &[8], seed: 3 };
    let rows = lsh_recall_experiment(&w, &q, &spec).map_err(|e| e.to_string())?;
    let recall: Vec<f64> = rows.iter().map(|r| r.recall).collect();
    let monotone = recall.windows(2).all(|p| p[1] >= p[0]);
    let below_one = recall[0] < 1.0;

    let shared = gaussian_vec(&mut rng, d, 1.0);
    let correlated = Matrix::from_fn(t, d, |r, c| w.get(r, c) + 2.0 * shared[c]);
    let ens = LshEnsemble::build(&correlated, 1, 8, 5).map_err(|e| e.to_string())?;
    let skew = bucket_histogram(&ens).max_over_mean;

    let cfg = LookupConfig::new(d, 16, 32, 6);
    let layer = LookupFfn::new(cfg, ProjKind::Bh { stages: 4, block: 16 }, 0).unwrap();
    let (_, cache) = layer.forward(&gaussian_matrix(&mut rng, 200, d, 1.0)).unwrap();
    let reads = cache.reads_per_row();
    let regular = reads.iter().all(|&r| r == cfg.h);
    gate(
        monotone && below_one && skew > 2.0 && regular,
        format!(
            "recall@8 over {:?} tables: {}; correlated W bucket max/mean {skew:.1} (> 2); \
             lookup reads per row {} for all {} rows",
            budgets,
            recall.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" "),
            cfg.h,
            reads.len()
        ),
    )
}

fn training_smoke() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let bh16 = ProjKind::Bh { stages: 4, block: 16 };
    for task in [Task::TeacherDistill, Task::SyntheticRegression, Task::ToyClassification] {
        let cfg = TrainConfig { task, steps: 1001, ..TrainConfig::default() };
        let teacher = default_teacher(1000);
        let student = Student::lookup(&teacher, 64, 6, bh16);
        let report = train_with(&teacher, &student, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
        let (first, at_1000) = (report.losses[0], report.losses[1000]);
        let writes_ok = report.table_writes == cfg.steps as u64;
        ok &= at_1000 < first && writes_ok;
        notes.push(format!("{} {first:.3}->{at_1000:.3} writes {}", task.name(), report.table_writes));
    }

    let teacher = default_teacher(1000);
    let cfg = TrainConfig { steps: 5000, ..TrainConfig::default() };
    let report = train_with(&teacher, &Student::lookup(&teacher, 64, 6, bh16), &cfg, |_, _| {})
        .map_err(|e| e.to_string())?;
    let ratio = report.final_eval / report.initial_eval;
    ok &= ratio < 0.5;
    notes.push(format!("h=64 5k-step eval MSE ratio {ratio:.3} (< 0.5)"));

    let cfg = TrainConfig { steps: DOUBLING_STEPS, ..TrainConfig::default() };
    let mut better = 0;
    let mut pairs = Vec::new();
    for seed in 0..5 {
        let c = TrainConfig { seed, ..cfg };
        let mse = |h| {
            train_with(&teacher, &Student::lookup(&teacher, h, 6, bh16), &c, |_, _| {})
                .map(|r| r.final_eval)
                .map_err(|e| e.to_string())
        };
        let (small, large) = (mse(64)?, mse(128)?);
        better += usize::from(large < small);
        pairs.push(format!("{small:.3}/{large:.3}"));
    }
    ok &= better >= 4;
    notes.push(format!("h 64->128 lowers MSE on {better}/5 seeds ({})", pairs.join(" ")));
    gate(ok, notes.join("; "))
}

const DOUBLING_STEPS: usize = 2000;

fn not_reproducible() -> Outcome {
    Ok("pretraining perplexity and finetuning scores, absolute latencies and the end-to-end \
        speedup, and cache statistics are out of reach at desk scale; the checks above stand \
        in for them and `lookupffn bench` reports speedup ratios for information only"
        .to_string())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("denominator identity", denominator_identity),
        ("code identities", code_identities),
        ("full-softmax equivalence", full_softmax_equivalence),
        ("gradient suite", gradient_suite),
        ("fwht", fwht_suite),
        ("flop tables", flop_tables),
        ("single-bit equivalences", single_bit_equivalences),
        ("matrix approximation", approximation_experiment),
        ("lsh diagnostics", lsh_diagnostics),
        ("training smoke", training_smoke),
        ("not reproducible at desk scale", not_reproducible),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
