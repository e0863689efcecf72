use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{curvature_report, exp_map, metric_compatibility_defect, transport_along_curve, ChartPoint, CurvatureReport, Family, GeodesicOptions, ManifoldAtlas};
use crate::error::Result;

/// Round-sphere checks: a unit great circle closes after `2π`, transport
/// around the latitude at polar angle `θ` rotates by `2π(1 − cos θ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SphereChecks {
    pub great_circle_return: f64,
    pub holonomy_theta: f64,
    pub holonomy_angle: f64,
    pub holonomy_expected: f64,
    pub holonomy_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometryCheck {
    pub family: String,
    pub metric_compatibility: f64,
    /// Largest `| |γ'(t)| − |γ'(0)| |` along a geodesic run for `t ≤ 10`.
    pub speed_drift: f64,
    pub curvature: CurvatureReport,
    pub sphere: Option<SphereChecks>,
}

fn wrapped(angle: f64) -> f64 {
    let a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

pub fn geometry_check(atlas: &ManifoldAtlas) -> Result<GeometryCheck> {
    let n = atlas.dim();
    let x = ChartPoint::new(0, (0..n).map(|i| [0.4, 0.9, 0.2][i % 3]).collect());
    let v: Vec<f64> = (0..n).map(|i| [0.7, 0.3, -0.5][i % 3]).collect();
    let path = exp_map(atlas, &x, &v, 10.0, GeodesicOptions::default())?;
    let s0 = atlas.local(&x, false).norm(&v);
    let speed_drift = path
        .samples
        .iter()
        .map(|s| (atlas.chart(s.chart).local(&s.x, false).norm(&s.v) - s0).abs())
        .fold(0.0, f64::max);
    let sphere = if atlas.family() == Family::SphereStereographic {
        let p = ChartPoint::new(0, vec![0.3, -0.4]);
        let g = atlas.local(&p, false);
        let s = g.norm(&[0.6, 0.8]);
        let circle = exp_map(atlas, &p, &[0.6 / s, 0.8 / s], 2.0 * PI, GeodesicOptions::default())?;
        let back = atlas.to_chart(&circle.end_point(), 0).unwrap_or_else(|| circle.end_point());
        let great_circle_return = ((back.x[0] - 0.3).powi(2) + (back.x[1] + 0.4).powi(2)).sqrt();
        let theta = PI / 4.0;
        let rho = (theta / 2.0).tan();
        let curve = |t: f64| (vec![rho * t.cos(), rho * t.sin()], vec![-rho * t.sin(), rho * t.cos()]);
        let w = transport_along_curve(atlas, 0, curve, 2.0 * PI, 4000, &[1.0, 0.0])?;
        // the chart metric is conformal, so chart angles are metric angles
        let angle = wrapped(w[1].atan2(w[0])).abs();
        let expected = wrapped(2.0 * PI * (1.0 - theta.cos())).abs();
        Some(SphereChecks {
            great_circle_return,
            holonomy_theta: theta,
            holonomy_angle: angle,
            holonomy_expected: expected,
            holonomy_error: (angle - expected).abs(),
        })
    } else {
        None
    };
    Ok(GeometryCheck {
        family: atlas.family().to_string(),
        metric_compatibility: metric_compatibility_defect(atlas),
        speed_drift,
        curvature: curvature_report(atlas, 1)?,
        sphere,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;

    #[test]
    fn builtin_families_pass_substrate_checks() {
        for spec in AtlasSpec::builtin_families(16) {
            let c = geometry_check(&spec.build().unwrap()).unwrap();
            assert!(c.metric_compatibility < 1e-10 && c.speed_drift < 1e-8, "{c:?}");
            if let Some(s) = c.sphere {
                assert!(s.great_circle_return < 1e-6 && s.holonomy_error < 1e-4, "{s:?}");
            }
        }
    }
}
