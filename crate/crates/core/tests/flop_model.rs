use lookupffn_core::flops::{lookup_flops, vanilla_flops};
use lookupffn_core::lookup::{LookupConfig, Variant};
use lookupffn_core::proj::ProjKind;

fn lookup(h: usize, tau: usize, kind: ProjKind) -> lookupffn_core::flops::FlopReport {
    let cfg = LookupConfig::new(512, 512, h, tau).with_variant(Variant::Scaled);
    lookup_flops(&cfg, &cfg.projection_spec(kind).unwrap())
}

const BH64: ProjKind = ProjKind::Bh { stages: 4, block: 64 };

#[test]
fn dense_layer_counts_two_flop_per_mac() {
    let r = vanilla_flops(3, 5, 7);
    assert_eq!(r.total_flops(), (2 * 3 * 5 + 2 * 5 * 7) as f64);
    assert_eq!(r.hash_mflop + r.gather_mflop, 0.0);
}

#[test]
fn table_count_sweep_scales_linearly() {
    let (a, b, c) = (lookup(64, 8, BH64), lookup(128, 8, BH64), lookup(256, 8, BH64));
    assert!((b.gather_mflop - 2.0 * a.gather_mflop).abs() < 1e-12);
    assert!((c.gather_mflop - 2.0 * b.gather_mflop).abs() < 1e-12);
    assert!(a.total_mflop < b.total_mflop && b.total_mflop < c.total_mflop);
}

#[test]
fn code_length_sweep_keeps_hash_cost_and_shrinks_gather() {
    let cells = [(128, 2), (64, 4), (32, 8), (16, 16)];
    let reports: Vec<_> = cells.iter().map(|&(h, tau)| lookup(h, tau, BH64)).collect();
    let hash0 = reports[0].hash_mflop;
    for r in &reports {
        assert!((r.hash_mflop - hash0).abs() <= 0.02 * hash0);
    }
    for pair in reports.windows(2) {
        assert!(pair[1].gather_mflop < pair[0].gather_mflop);
    }
}

#[test]
fn extra_neighbors_only_add_gather_and_other() {
    let cfg = LookupConfig::new(512, 512, 128, 8);
    let spec = cfg.projection_spec(BH64).unwrap();
    let one = lookup_flops(&cfg, &spec);
    let four = lookup_flops(&cfg.with_neighbors(4), &spec);
    assert_eq!(one.hash_mflop, four.hash_mflop);
    assert!((four.gather_mflop - 4.0 * one.gather_mflop).abs() < 1e-12);
    assert!(four.other_mflop > one.other_mflop);
}

#[test]
fn lookup_is_cheaper_than_the_dense_layer_it_replaces() {
    assert!(lookup(256, 8, BH64).total_mflop < vanilla_flops(512, 2048, 512).total_mflop / 2.0);
}
