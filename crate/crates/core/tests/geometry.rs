use bgkit::geometry::{distance, exp_map, transport_along_curve, AtlasSpec, ChartPoint};
use proptest::prelude::*;
use std::f64::consts::PI;

fn wrapped(angle: f64) -> f64 {
    let a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

#[test]
fn sphere_latitude_holonomy() {
    let atlas = AtlasSpec::sphere(17).build().unwrap();
    for theta in [PI / 6.0, PI / 4.0, PI / 3.0] {
        let rho = (theta / 2.0).tan();
        let curve = |t: f64| (vec![rho * t.cos(), rho * t.sin()], vec![-rho * t.sin(), rho * t.cos()]);
        let w0 = [1.0, 0.0];
        let w = transport_along_curve(&atlas, 0, curve, 2.0 * PI, 4000, &w0).unwrap();
        // conformal metric: euclidean angles in the chart are metric angles
        let angle = wrapped(w[1].atan2(w[0]));
        let expected = wrapped(2.0 * PI * (1.0 - theta.cos()));
        assert!((angle.abs() - expected.abs()).abs() < 1e-4, "theta {theta}: {angle} vs {expected}");
        let scale = 2.0 / (1.0 + rho * rho);
        assert!(((w[0].hypot(w[1]) * scale) - scale).abs() < 1e-8);
    }
}

#[test]
fn flat_torus_exp_endpoint_is_exact() {
    let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 4.0], 16).build().unwrap();
    let x = ChartPoint::new(0, vec![1.0, 3.5]);
    let v = [0.3, -1.1];
    let path = exp_map(&atlas, &x, &v, 10.0, Default::default()).unwrap();
    let end = path.end_point();
    let expected = [(1.0 + 3.0f64).rem_euclid(2.0 * PI), (3.5 - 11.0f64).rem_euclid(4.0)];
    for i in 0..2 {
        let d = (end.x[i] - expected[i]).abs();
        let period = if i == 0 { 2.0 * PI } else { 4.0 };
        assert!(d.min(period - d) < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flat_distance_is_a_metric(a in 0.0..2.0 * PI, b in 0.0..2.0 * PI, c in 0.0..2.0 * PI, d in 0.0..2.0 * PI, e in 0.0..2.0 * PI, f in 0.0..2.0 * PI) {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let h = 2.0 * PI / 16.0;
        let x = ChartPoint::new(0, vec![a, b]);
        let y = ChartPoint::new(0, vec![c, d]);
        let z = ChartPoint::new(0, vec![e, f]);
        let dxy = distance(&atlas, &x, &y).unwrap();
        let dyx = distance(&atlas, &y, &x).unwrap();
        let dyz = distance(&atlas, &y, &z).unwrap();
        let dxz = distance(&atlas, &x, &z).unwrap();
        prop_assert!((dxy - dyx).abs() <= 2.0 * h);
        prop_assert!(dxz <= dxy + dyz + 4.0 * h);
        prop_assert!(dxy <= PI * 2f64.sqrt() + 1e-12);
    }

    #[test]
    fn warped_distance_is_symmetric(a in 0.0..2.0 * PI, b in 0.0..2.0 * PI, c in 0.0..2.0 * PI, d in 0.0..2.0 * PI) {
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 16).build().unwrap();
        let h = 2.0 * PI / 16.0;
        let x = ChartPoint::new(0, vec![a, b]);
        let y = ChartPoint::new(0, vec![c, d]);
        let dxy = distance(&atlas, &x, &y).unwrap();
        let dyx = distance(&atlas, &y, &x).unwrap();
        prop_assert!((dxy - dyx).abs() <= 2.0 * h, "{} vs {}", dxy, dyx);
        prop_assert!(distance(&atlas, &x, &x).unwrap() == 0.0);
    }
}
