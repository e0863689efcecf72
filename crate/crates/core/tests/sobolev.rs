use bgkit::covering::{build_covering, build_partition, BumpTemplate, PatchOptions};
use bgkit::sobolev::{
    build_patches, embedding_interpolation_check, norm_equivalence_report, patch_norm_with, sobolev_norm, Battery,
    TensorField,
};
use bgkit::geometry::AtlasSpec;
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn sphere_patch_norms_are_finite() {
    let atlas = AtlasSpec::sphere(33).build().unwrap();
    let r = 0.8;
    let cov = build_covering(&atlas, r).unwrap();
    let pou = build_partition(&atlas, &cov, BumpTemplate::Quintic).unwrap();
    assert!(pou.sum_defect < 1e-12);
    let options = PatchOptions { arclength_step: 1.0 / 32.0, ..PatchOptions::matching(&atlas, r) };
    let patches = build_patches(&atlas, &cov, options).unwrap();
    let battery = Battery::for_atlas(&atlas, 21, 6, 3);
    let report = norm_equivalence_report(&atlas, &battery, 1, 2.0, &pou, &patches).unwrap();
    assert!(report.ratios.iter().all(|r| r.is_finite() && *r > 0.0), "{:?}", report.ratios);
    assert!(report.spread.is_finite());
    assert!(report.overlap_defect.unwrap() < 5e-3);
}

#[test]
fn flat_spread_is_stable_under_refinement() {
    let r = PI / 2.0;
    let battery = Battery { kind: bgkit::sobolev::BatteryKind::Trigonometric, seed: 3, count: 50, cap: 3 };
    for s in 0..=2 {
        let spreads: Vec<f64> = [32, 64]
            .iter()
            .map(|&res| {
                let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], res).build().unwrap();
                let cov = build_covering(&atlas, r).unwrap();
                let pou = build_partition(&atlas, &cov, BumpTemplate::Quintic).unwrap();
                let patches = build_patches(&atlas, &cov, PatchOptions::matching(&atlas, r)).unwrap();
                norm_equivalence_report(&atlas, &battery, s, 2.0, &pou, &patches).unwrap().spread
            })
            .collect();
        assert!(spreads.iter().all(|v| v.is_finite()));
        assert!((spreads[1] / spreads[0] - 1.0).abs() < 0.5, "s = {s}: {spreads:?}");
    }
}

#[test]
fn interpolation_inequality_has_no_violations() {
    let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 32).build().unwrap();
    let fields = Battery::for_atlas(&atlas, 99, 200, 4).fields(&atlas).unwrap();
    let report = embedding_interpolation_check(&atlas, &fields, &[0.5, 0.1]).unwrap();
    assert!(report.delta >= 0.0 && report.delta.is_finite());
    for check in &report.checks {
        assert_eq!(check.violations, 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn covariant_norm_axioms(seed in 0u64..1000, a in -3.0f64..3.0, p in prop::sample::select(vec![1.0, 2.0, 3.0, f64::INFINITY])) {
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 16).build().unwrap();
        let battery = Battery::for_atlas(&atlas, seed, 2, 2);
        let u = battery.field(&atlas, 0).unwrap();
        let v = battery.field(&atlas, 1).unwrap();
        for k in 0..=2 {
            let nu = sobolev_norm(&atlas, &u, k, p).unwrap();
            let nv = sobolev_norm(&atlas, &v, k, p).unwrap();
            let nau = sobolev_norm(&atlas, &u.scale(a), k, p).unwrap();
            let nsum = sobolev_norm(&atlas, &u.combine(1.0, &v, 1.0), k, p).unwrap();
            prop_assert!((nau - a.abs() * nu).abs() <= 1e-12 * nu.max(1.0));
            prop_assert!(nsum <= nu + nv + 1e-10);
        }
    }

    #[test]
    fn patch_norm_triangle_inequality(seed in 0u64..1000) {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let r = PI / 2.0;
        let cov = build_covering(&atlas, r).unwrap();
        let pou = build_partition(&atlas, &cov, BumpTemplate::Quintic).unwrap();
        let patches = build_patches(&atlas, &cov, PatchOptions::matching(&atlas, r)).unwrap();
        let battery = Battery::for_atlas(&atlas, seed, 2, 2);
        let u = battery.field(&atlas, 0).unwrap();
        let v = battery.field(&atlas, 1).unwrap();
        let w: TensorField = u.combine(1.0, &v, 1.0);
        for s in 0..=2 {
            let nu = patch_norm_with(&u, s, 2.0, &pou, &patches).unwrap();
            let nv = patch_norm_with(&v, s, 2.0, &pou, &patches).unwrap();
            let nw = patch_norm_with(&w, s, 2.0, &pou, &patches).unwrap();
            prop_assert!(nw <= nu + nv + 1e-10);
            prop_assert!(nu > 0.0);
        }
    }
}
