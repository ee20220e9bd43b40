use lookupffn_core::fwht::fwht_inplace;
use lookupffn_core::proj::{matrix_approx_experiment, ApproxHyper, ProjKind, Projection, ProjectionSpec};
use lookupffn_core::rng::{gaussian_matrix, seeded};
use lookupffn_core::Matrix;

/// Applies `pad · Π (blockdiag · H) · truncate` one row at a time with a
/// sign-formula Hadamard.
fn stagewise(p: &Projection, stages: usize, block: usize, x: &[f64]) -> Vec<f64> {
    let spec = p.spec();
    let w = spec.width();
    let mut v = vec![0.0; w];
    v[..x.len()].copy_from_slice(x);
    for s in 0..stages {
        let mut u = vec![0.0; w];
        for blk in 0..w / block {
            let b = p.block(s, blk);
            for j in 0..block {
                u[blk * block + j] = (0..block).map(|i| v[blk * block + i] * b[i * block + j]).sum();
            }
        }
        v = (0..w)
            .map(|j| {
                (0..w)
                    .map(|i| if (i & j).count_ones() % 2 == 0 { u[i] } else { -u[i] })
                    .sum()
            })
            .collect();
    }
    v.truncate(spec.d_out());
    v
}

#[test]
fn bh4_at_width_1024_matches_stagewise_oracle() {
    let spec = ProjectionSpec::new(1000, 1024, ProjKind::Bh { stages: 4, block: 64 }).unwrap();
    let p = Projection::init(spec, 9);
    let x = gaussian_matrix(&mut seeded(2), 3, 1000, 1.0);
    let y = p.apply(&x).unwrap();
    for r in 0..3 {
        let want = stagewise(&p, 4, 64, x.row(r));
        let err: f64 = want.iter().zip(y.row(r)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12 * scale, "row {r}: {err} vs scale {scale}");
    }
}

#[test]
fn bh4_init_keeps_unit_scale_at_width_1024() {
    let spec = ProjectionSpec::new(1024, 1024, ProjKind::Bh { stages: 4, block: 64 }).unwrap();
    let y = Projection::init(spec, 5).apply(&gaussian_matrix(&mut seeded(6), 16, 1024, 1.0)).unwrap();
    let var = y.frobenius_sq() / y.data().len() as f64;
    assert!((0.25..4.0).contains(&var), "output variance {var}");
}

#[test]
fn fwht_is_linear() {
    let mut rng = seeded(3);
    let u = gaussian_matrix(&mut rng, 1, 512, 1.0).into_vec();
    let v = gaussian_matrix(&mut rng, 1, 512, 1.0).into_vec();
    let (a, b) = (0.7, -1.9);
    let mut mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
    let (mut hu, mut hv) = (u, v);
    fwht_inplace(&mut mix).unwrap();
    fwht_inplace(&mut hu).unwrap();
    fwht_inplace(&mut hv).unwrap();
    let want: Vec<f64> = hu.iter().zip(&hv).map(|(x, y)| a * x + b * y).collect();
    let num: f64 = mix.iter().zip(&want).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = want.iter().map(|x| x * x).sum();
    assert!((num / den).sqrt() < 1e-12);
}

#[test]
fn full_width_bh4_fits_an_arbitrary_matrix() {
    let d = 64;
    let target = gaussian_matrix(&mut seeded(1000), d, d, 1.0 / (d as f64).sqrt());
    let hyper = ApproxHyper { lr: 0.05, steps: 30_000 };
    let r = matrix_approx_experiment(&target, ProjKind::Bh { stages: 4, block: d }, &hyper, 0).unwrap();
    assert!(r.rel_error < 1e-6, "relative error {}", r.rel_error);
}

#[test]
fn sign_flip_cannot_be_fit() {
    let target = Matrix::identity(16);
    let kind = ProjKind::SignFlip;
    let r = matrix_approx_experiment(&target, kind, &ApproxHyper::default_for(kind), 0).unwrap();
    assert_eq!(r.rel_error, r.initial_rel_error);
}
