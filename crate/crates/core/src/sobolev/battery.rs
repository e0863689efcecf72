use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::geometry::{Family, ManifoldAtlas};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryKind {
    /// Trigonometric polynomials with frequencies `|m|_∞ ≤ cap` on a periodic chart.
    Trigonometric,
    /// Polynomials of degree `≤ cap` in the ambient coordinates of the round sphere.
    AmbientPolynomial,
    /// Nonzero constants.
    Constant,
}

/// Seeded family of random scalar fields, described by `(kind, seed, count, cap)`
/// so it can be resampled on any resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub kind: BatteryKind,
    pub seed: u64,
    pub count: usize,
    pub cap: usize,
}

impl Battery {
    /// Default kind for the atlas family.
    pub fn for_atlas(atlas: &ManifoldAtlas, seed: u64, count: usize, cap: usize) -> Self {
        let kind = match atlas.family() {
            Family::SphereStereographic => BatteryKind::AmbientPolynomial,
            _ => BatteryKind::Trigonometric,
        };
        Self { kind, seed, count, cap }
    }

    pub fn constants(seed: u64, count: usize) -> Self {
        Self { kind: BatteryKind::Constant, seed, count, cap: 0 }
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// Samples field `index` of the battery.
    pub fn field(&self, atlas: &ManifoldAtlas, index: usize) -> Result<TensorField> {
        let mut rng = self.rng(index);
        let n = atlas.dim();
        match self.kind {
            BatteryKind::Constant => {
                let c = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                Ok(TensorField::scalar_from_fn(atlas, move |_, _| c))
            }
            BatteryKind::Trigonometric => {
                if !atlas.is_single_periodic_chart() {
                    return Err(Error::Unsupported("trigonometric batteries need a periodic chart".into()));
                }
                let grid = &atlas.chart(0).grid;
                let lower = grid.lower.clone();
                let periods: Vec<f64> = grid.lower.iter().zip(&grid.upper).map(|(a, b)| b - a).collect();
                let side = 2 * self.cap + 1;
                let modes: Vec<(Vec<f64>, f64, f64)> = (0..side.pow(n as u32))
                    .map(|code| {
                        let m: Vec<f64> = (0..n).map(|a| ((code / side.pow(a as u32)) % side) as f64 - self.cap as f64).collect();
                        let decay = 1.0 / (1.0 + m.iter().map(|v| v * v).sum::<f64>());
                        (m, decay * rng.gen_range(-1.0..1.0), decay * rng.gen_range(-1.0..1.0))
                    })
                    .collect();
                Ok(TensorField::scalar_from_fn(atlas, move |_, x| {
                    modes
                        .iter()
                        .map(|(m, a, b)| {
                            let phase: f64 = (0..n).map(|i| 2.0 * std::f64::consts::PI * m[i] * (x[i] - lower[i]) / periods[i]).sum();
                            a * phase.cos() + b * phase.sin()
                        })
                        .sum()
                }))
            }
            BatteryKind::AmbientPolynomial => {
                if atlas.family() != Family::SphereStereographic {
                    return Err(Error::Unsupported("ambient polynomial batteries need the sphere atlas".into()));
                }
                let mut terms = Vec::new();
                for i in 0..=self.cap {
                    for j in 0..=self.cap - i {
                        for k in 0..=self.cap - i - j {
                            terms.push(([i as i32, j as i32, k as i32], rng.gen_range(-1.0..1.0)));
                        }
                    }
                }
                Ok(TensorField::scalar_from_fn(atlas, move |chart, x| {
                    let p = sphere_embedding(chart, x);
                    terms.iter().map(|(e, c)| c * p[0].powi(e[0]) * p[1].powi(e[1]) * p[2].powi(e[2])).sum()
                }))
            }
        }
    }

    pub fn fields(&self, atlas: &ManifoldAtlas) -> Result<Vec<TensorField>> {
        (0..self.count).map(|i| self.field(atlas, i)).collect()
    }
}

/// Inverse stereographic projection of either sphere chart into `ℝ³`.
pub(crate) fn sphere_embedding(chart: usize, x: &[f64]) -> [f64; 3] {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let z = (r2 - 1.0) / (r2 + 1.0);
    let s = 2.0 / (1.0 + r2);
    [s * x[0], s * x[1], if chart == 0 { z } else { -z }]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use crate::field::overlap_consistency;

    #[test]
    fn battery_is_reproducible_and_resolution_independent() {
        let coarse = AtlasSpec::warped_torus(2.0, 1.0, 8).build().unwrap();
        let fine = AtlasSpec::warped_torus(2.0, 1.0, 16).build().unwrap();
        let b = Battery::for_atlas(&coarse, 7, 3, 2);
        let u = b.field(&coarse, 1).unwrap();
        let v = b.field(&fine, 1).unwrap();
        // coarse node (i, j) is fine node (2i, 2j)
        let g = &coarse.chart(0).grid;
        let gf = &fine.chart(0).grid;
        for node in 0..g.len() {
            let m = g.multi_index(node);
            let nf = gf.index(&[2 * m[0], 2 * m[1]]);
            assert!((u.charts[0][node] - v.charts[0][nf]).abs() < 1e-12);
        }
        assert_eq!(b.field(&coarse, 1).unwrap(), u);
        assert_ne!(b.field(&coarse, 2).unwrap(), u);
    }

    #[test]
    fn sphere_battery_agrees_across_charts() {
        // interpolation mismatch on the overlap shrinks at fourth order
        let defect = |res: usize| {
            let atlas = AtlasSpec::sphere(res).build().unwrap();
            let b = Battery::for_atlas(&atlas, 3, 2, 3);
            b.fields(&atlas).unwrap().iter().map(|u| overlap_consistency(&atlas, u)).fold(0.0, f64::max)
        };
        let (coarse, fine) = (defect(33), defect(65));
        assert!(coarse < 5e-3 && fine < coarse / 8.0, "{coarse} -> {fine}");
        let p = sphere_embedding(1, &[0.3, -0.2]);
        assert!((p.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
