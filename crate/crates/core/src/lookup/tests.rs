use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::flops::{lookup_flops, OpCounter, Stage};
use crate::rng::{gaussian_matrix, gaussian_vec, seeded};
use crate::train::{grad_check, GradCheckModel};
use crate::Matrix;

/// The full `2^tau × tau` ±1 codebook.
fn codebook(tau: usize) -> Vec<Vec<f64>> {
    (0..1usize << tau)
        .map(|i| (0..tau).map(|j| if i >> j & 1 == 1 { 1.0 } else { -1.0 }).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full softmax over the materialized codebook, one table at a time.
fn full_softmax_oracle(layer: &LookupFfn, x: &Matrix) -> Matrix {
    let cfg = layer.config();
    let s = codebook(cfg.tau);
    let z = layer.projection().apply(x).unwrap();
    let mut y = Matrix::zeros(x.rows(), cfg.d_out);
    for r in 0..x.rows() {
        for k in 0..cfg.h {
            let zk = &z.row(r)[k * cfg.tau..(k + 1) * cfg.tau];
            let scores: Vec<f64> = s.iter().map(|row| dot(zk, row)).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = scores.iter().map(|v| (v - max).exp()).sum();
            for (i, &sc) in scores.iter().enumerate() {
                let mut w = (sc - max).exp() / denom;
                if cfg.variant.is_scaled() {
                    w *= sc;
                }
                for (o, t) in y.row_mut(r).iter_mut().zip(layer.tables().row(k, i as u32)) {
                    *o += w * t;
                }
            }
        }
    }
    y
}

fn layer(h: usize, tau: usize, variant: Variant, nc: usize, seed: u64) -> LookupFfn {
    let cfg = LookupConfig::new(12, 6, h, tau)
        .with_variant(variant)
        .with_neighbors(nc);
    LookupFfn::new(cfg, ProjKind::Bh { stages: 2, block: 4 }, seed).unwrap()
}

#[test]
fn codes_are_brute_force_argmax() {
    let s = codebook(8);
    let mut rng = seeded(1);
    for _ in 0..100 {
        let z = gaussian_vec(&mut rng, 8, 1.0);
        let best = (0..256).max_by(|&a, &b| dot(&z, &s[a]).total_cmp(&dot(&z, &s[b]))).unwrap();
        assert_eq!(code_of(&z), best as u32);
        let abs: f64 = z.iter().map(|v| v.abs()).sum();
        assert!((codebook_inner(&z, best as u32) - abs).abs() < 1e-12);
    }
}

#[test]
fn denominator_matches_exhaustive_sum() {
    let s = codebook(10);
    let mut rng = seeded(2);
    for _ in 0..20 {
        let z = gaussian_vec(&mut rng, 10, 2.0);
        let brute: f64 = s.iter().map(|row| dot(&z, row).exp()).sum::<f64>().ln();
        let got = log_denominator(&z);
        assert!((got - brute).abs() / brute.abs() < 1e-10);
    }
}

#[test]
fn neighbor_codes_are_exact_top_k() {
    let s = codebook(8);
    let mut rng = seeded(3);
    for _ in 0..50 {
        let z = gaussian_vec(&mut rng, 8, 1.0);
        let mut all: Vec<(f64, u32)> = (0..256u32).map(|i| (dot(&z, &s[i as usize]), i)).collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let got = neighbor_codes(&z, 16).unwrap();
        assert_eq!(got[0], code_of(&z));
        for (rank, c) in got.iter().enumerate() {
            assert!((codebook_inner(&z, *c) - all[rank].0).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_codes_split_weight_evenly() {
    let cfg = LookupConfig::new(4, 3, 5, 1);
    let spec = cfg.projection_spec(ProjKind::Dense).unwrap();
    let proj = Projection::from_params(spec, vec![0.0; spec.stored_len()]).unwrap();
    let v = [0.5, -1.0, 2.0];
    let tables = HashTables::from_vec(&cfg, v.repeat(2 * cfg.h)).unwrap();
    let l = LookupFfn::from_parts(cfg, proj, tables).unwrap();
    let (y, _) = l.forward(&Matrix::zeros(2, 4)).unwrap();
    for r in 0..2 {
        for (o, vv) in y.row(r).iter().zip(v) {
            assert!((o - 5.0 * vv / 2.0).abs() < 1e-15);
        }
    }
}

#[test]
fn all_neighbors_match_full_softmax() {
    let x = gaussian_matrix(&mut seeded(4), 64, 12, 1.0);
    for (tau, variant) in [(1, Variant::Softmax), (3, Variant::Softmax), (5, Variant::Scaled), (8, Variant::Softmax)] {
        let l = layer(2, tau, variant, 1 << tau, 5);
        let (y, _) = l.forward(&x).unwrap();
        let want = full_softmax_oracle(&l, &x);
        assert!(y.rel_diff(&want) < 1e-10, "tau={tau}: {}", y.rel_diff(&want));
        assert!(l.infer(&x, GatherKernel::Portable).unwrap().rel_diff(&want) < 1e-10);
    }
}

#[test]
fn weights_are_normalized() {
    let x = gaussian_matrix(&mut seeded(6), 8, 12, 1.0);
    let l = layer(3, 4, Variant::Softmax, 16, 1);
    let (_, cache) = l.forward(&x).unwrap();
    let w = cache.weights(false);
    for chunk in w.chunks_exact(16) {
        assert!((chunk.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let top = layer(3, 4, Variant::Softmax, 1, 1);
    let (_, cache) = top.forward(&x).unwrap();
    assert!(cache.weights(false).iter().all(|&p| p > 1.0 / 16.0 && p <= 1.0));
}

#[test]
fn single_bit_constructions() {
    let mut rng = seeded(7);
    let (h, d_in, d_out) = (6, 5, 3);
    let w = gaussian_matrix(&mut rng, h, d_in, 1.0);
    let v = gaussian_matrix(&mut rng, h, d_out, 1.0);
    let x = gaussian_matrix(&mut rng, 20, d_in, 1.0);

    let sig = LookupFfn::sigmoid_embedding(&w, &v).unwrap();
    let (y, _) = sig.forward(&x).unwrap();
    let mut want = x.matmul_t(&w).unwrap();
    want.data_mut().iter_mut().for_each(|u| *u = 1.0 / (1.0 + (-*u).exp()));
    let want = want.matmul(&v).unwrap();
    assert!(y.rel_diff(&want) < 1e-10);

    let gelu = LookupFfn::gelu_embedding(&w, &v).unwrap();
    let (y, _) = gelu.forward(&x).unwrap();
    assert!(y.rel_diff(&gelu_tau1_reference(&x, &w, &v).unwrap()) < 1e-10);
}

#[test]
fn zero_grad_y_gives_zero_grads() {
    let l = layer(4, 3, Variant::Scaled, 1, 2);
    let x = gaussian_matrix(&mut seeded(8), 3, 12, 1.0);
    let (_, cache) = l.forward(&x).unwrap();
    let g = l.backward(&Matrix::zeros(3, 6), &cache).unwrap();
    assert!(g.x.data().iter().chain(&g.proj).chain(&g.tables).all(|&v| v == 0.0));
}

#[test]
fn backward_matches_finite_differences() {
    let bh = ProjKind::Bh { stages: 4, block: 4 };
    let cases = [
        (LookupConfig::new(16, 16, 8, 4), 1e-5),
        (LookupConfig::new(16, 16, 8, 4).with_variant(Variant::Scaled), 1e-5),
        (LookupConfig::new(16, 8, 8, 3).with_neighbors(8), 1e-6),
        (LookupConfig::new(16, 8, 8, 3).with_neighbors(8).with_variant(Variant::Scaled), 1e-6),
        (LookupConfig::new(16, 8, 4, 3).with_neighbors(3), 1e-5),
    ];
    for (cfg, tol) in cases {
        let r = grad_check(&GradCheckModel::Lookup { cfg, kind: bh }, 11, tol).unwrap();
        r.ensure_passed().unwrap();
        assert!(r.groups.iter().all(|g| g.checked > 0));
    }
}

#[test]
fn reads_per_row_do_not_depend_on_data() {
    let l = layer(8, 4, Variant::Softmax, 3, 3);
    let mut x = gaussian_matrix(&mut seeded(9), 10, 12, 1.0);
    // a skewed batch: half the rows identical
    for r in 0..5 {
        let first = x.row(0).to_vec();
        x.row_mut(r).copy_from_slice(&first);
    }
    let (_, cache) = l.forward(&x).unwrap();
    assert!(cache.reads_per_row().iter().all(|&n| n == 24));
}

#[test]
fn forward_never_writes_tables() {
    let l = layer(4, 3, Variant::Softmax, 1, 4);
    let before = l.tables().clone();
    let x = gaussian_matrix(&mut seeded(10), 5, 12, 1.0);
    let _ = l.forward(&x).unwrap();
    let _ = l.infer(&x, GatherKernel::Grouped).unwrap();
    assert_eq!(l.tables(), &before);
    assert_eq!(l.tables().writes(), 0);
}

#[test]
fn table_updates_are_counted() {
    let mut l = layer(2, 2, Variant::Softmax, 1, 4);
    let g = vec![1.0; l.tables().data().len()];
    let mut opt = crate::train::Sgd { lr: 0.1 };
    l.tables_mut().apply_gradient(&mut opt, &g).unwrap();
    assert_eq!(l.tables().writes(), 1);
    assert!(l.tables_mut().apply_gradient(&mut opt, &g[1..]).is_err());
}

#[test]
fn kernels_agree_with_forward() {
    let x = gaussian_matrix(&mut seeded(12), 300, 12, 1.0);
    for nc in [1, 4] {
        let l = layer(6, 4, Variant::Scaled, nc, 5);
        let (y, _) = l.forward(&x).unwrap();
        for kernel in [GatherKernel::Portable, GatherKernel::Grouped] {
            assert!(l.infer(&x, kernel).unwrap().rel_diff(&y) < 1e-12);
        }
    }
}

#[test]
fn counted_ops_equal_analytic_model() {
    for (nc, variant) in [(1, Variant::Softmax), (1, Variant::Scaled), (5, Variant::Scaled)] {
        let l = layer(8, 4, variant, nc, 1);
        let x = gaussian_matrix(&mut seeded(13), 7, 12, 1.0);
        let c = OpCounter::default();
        let _ = l.forward_with(&x, &c).unwrap();
        let analytic = lookup_flops(l.config(), l.projection().spec());
        let measured = c.per_token(7);
        assert!((analytic.hash_mflop - measured.hash_mflop).abs() < 1e-15);
        assert!((analytic.gather_mflop - measured.gather_mflop).abs() < 1e-15);
        assert!((analytic.other_mflop - measured.other_mflop).abs() < 1e-15);

        let c2 = OpCounter::default();
        let mut ws = LookupWorkspace::new(&l, 4);
        let mut out = vec![0.0; 7 * 6];
        l.infer_into(x.data(), &mut out, &mut ws, GatherKernel::Grouped, &c2);
        assert_eq!(c.get(Stage::Gather), c2.get(Stage::Gather));
        assert_eq!(c.get(Stage::Hash), c2.get(Stage::Hash));
    }
}

#[test]
fn invalid_configs() {
    assert!(LookupConfig::new(4, 4, 2, 0).validate().is_err());
    assert!(LookupConfig::new(4, 4, 2, 25).validate().is_err());
    assert!(LookupConfig::new(4, 4, 2, 2).with_neighbors(5).validate().is_err());
    assert!(LookupConfig::new(4, 4, 2, 2).with_variant(Variant::GeluTau1).validate().is_err());
    let l = layer(2, 2, Variant::Softmax, 1, 0);
    assert!(l.forward(&Matrix::zeros(1, 11)).is_err());
    let (_, cache) = l.forward(&Matrix::zeros(2, 12)).unwrap();
    assert!(l.backward(&Matrix::zeros(3, 6), &cache).is_err());
}

proptest! {
    #[test]
    fn code_identities(z in prop::collection::vec(-5.0f64..5.0, 1..=10)) {
        prop_assume!(z.iter().all(|v| *v != 0.0));
        let g = code_of(&z);
        let tau = z.len();
        let abs: f64 = z.iter().map(|v| v.abs()).sum();
        prop_assert!((codebook_inner(&z, g) - abs).abs() < 1e-12);
        let complement = !g & ((1u32 << tau) - 1);
        prop_assert!((codebook_inner(&z, complement) + abs).abs() < 1e-12);
        let w = top1_weight(&z);
        prop_assert!(w > 0.5f64.powi(tau as i32) && w <= 1.0);
    }

    #[test]
    fn neighbor_scores_non_increasing(z in prop::collection::vec(-3.0f64..3.0, 1..=8), k in 1usize..=16) {
        let count = k.min(1 << z.len());
        let codes = neighbor_codes(&z, count).unwrap();
        for pair in codes.windows(2) {
            prop_assert!(codebook_inner(&z, pair[0]) >= codebook_inner(&z, pair[1]) - 1e-12);
        }
    }
}

