use serde::{Deserialize, Serialize};

use super::CoveringSet;
use crate::error::{Error, Result};
use crate::field::{covariant_derivative, pointwise_norm, TensorField};
use crate::geometry::{smoothstep5, ManifoldAtlas};

/// Radial bump profile `ψ(t)`: equal to one on `[0, ½]`, zero on `[1, ∞)`,
/// applied through `t²` so the bump is smooth at its center.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpTemplate {
    /// Quintic smoothstep in `t²`, `C²`.
    #[default]
    Quintic,
    /// `e^{-1/s}` transition in `t²`, `C^∞`.
    Exponential,
}

impl BumpTemplate {
    pub fn eval(&self, t: f64) -> f64 {
        let s = (t * t - 0.25) / 0.75;
        if s <= 0.0 {
            return 1.0;
        }
        if s >= 1.0 {
            return 0.0;
        }
        match self {
            BumpTemplate::Quintic => 1.0 - smoothstep5(s),
            BumpTemplate::Exponential => {
                let h = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
                let a = h(s);
                1.0 - a / (a + h(1.0 - s))
            }
        }
    }

    /// Number of continuous derivatives; `None` for `C^∞`.
    pub fn smoothness_class(&self) -> Option<u32> {
        match self {
            BumpTemplate::Quintic => Some(2),
            BumpTemplate::Exponential => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionOfUnity {
    pub radius: f64,
    pub template: BumpTemplate,
    pub smoothness_class: Option<u32>,
    /// `sup_γ ‖φ_γ‖_{W^{ρ,∞}}` for `ρ = 0, 1, 2`.
    pub uniform_bounds: Vec<f64>,
    /// `‖φ_γ‖_{W^{ρ,∞}}`, `ρ = 0, 1, 2`, per center.
    pub center_bounds: Vec<Vec<f64>>,
    /// Largest `|Σ_γ φ_γ − 1|` over all nodes.
    pub sum_defect: f64,
    /// Nodes with `φ_γ > 0` at distance `≥ r` from `x_γ`, summed over γ.
    pub support_violations: usize,
    /// Smallest unnormalized denominator `Σ_γ φ̃_γ`.
    pub min_denominator: f64,
    #[serde(skip)]
    pub weights: Vec<TensorField>,
}

/// `φ_γ = ψ(d(x_γ,·)/r) / Σ_δ ψ(d(x_δ,·)/r)` with `W^{ρ,∞}` bounds for `ρ ≤ 2`.
pub fn build_partition(atlas: &ManifoldAtlas, covering: &CoveringSet, template: BumpTemplate) -> Result<PartitionOfUnity> {
    let r = covering.radius;
    let total = atlas.node_count();
    let raw: Vec<Vec<f64>> =
        covering.fields.iter().map(|f| f.values.iter().map(|&d| template.eval(d / r)).collect()).collect();
    let mut denominators = vec![0.0; total];
    for bump in &raw {
        for (s, b) in denominators.iter_mut().zip(bump) {
            *s += b;
        }
    }
    let (worst, min_denominator) =
        denominators.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &d)| if d < acc.1 { (k, d) } else { acc });
    if min_denominator < 1e-14 {
        return Err(Error::CoverageFailure { node: worst, denominator: min_denominator });
    }
    let mut weights = Vec::with_capacity(raw.len());
    let mut support_violations = 0;
    for (bump, field) in raw.iter().zip(&covering.fields) {
        let mut phi = TensorField::zeros(atlas, 0, 0);
        for k in 0..total {
            let v = bump[k] / denominators[k];
            if v > 0.0 && field.values[k] >= r {
                support_violations += 1;
            }
            phi.at_mut(atlas.node_ref(k))[0] = v;
        }
        weights.push(phi);
    }
    let mut sum_defect = 0.0f64;
    for k in 0..total {
        let node = atlas.node_ref(k);
        let s: f64 = weights.iter().map(|w| w.at(node)[0]).sum();
        sum_defect = sum_defect.max((s - 1.0).abs());
    }
    let center_bounds: Vec<Vec<f64>> = crate::par::map_slice(&weights, |phi| w2_inf_bounds(atlas, phi));
    let uniform_bounds =
        (0..3).map(|rho| center_bounds.iter().map(|b| b[rho]).fold(0.0, f64::max)).collect();
    Ok(PartitionOfUnity {
        radius: r,
        template,
        smoothness_class: template.smoothness_class(),
        uniform_bounds,
        center_bounds,
        sum_defect,
        support_violations,
        min_denominator,
        weights,
    })
}

/// `‖φ‖_{W^{ρ,∞}} = max_{j ≤ ρ} sup |∇^j φ|` for `ρ = 0, 1, 2`.
fn w2_inf_bounds(atlas: &ManifoldAtlas, phi: &TensorField) -> Vec<f64> {
    let d1 = covariant_derivative(atlas, phi);
    let d2 = covariant_derivative(atlas, &d1);
    let mut sup = [0.0f64; 3];
    for node in atlas.nodes() {
        let local = atlas.local(&atlas.node_point(node), false);
        sup[0] = sup[0].max(phi.at(node)[0].abs());
        sup[1] = sup[1].max(pointwise_norm(&local, 0, 1, d1.at(node)));
        sup[2] = sup[2].max(pointwise_norm(&local, 0, 2, d2.at(node)));
    }
    vec![sup[0], sup[0].max(sup[1]), sup[0].max(sup[1]).max(sup[2])]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covering::{build_covering, from_center_nodes};
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn templates_have_the_right_plateaus() {
        for t in [BumpTemplate::Quintic, BumpTemplate::Exponential] {
            assert_eq!(t.eval(0.0), 1.0);
            assert_eq!(t.eval(0.5), 1.0);
            assert_eq!(t.eval(1.0), 0.0);
            // monotone in between
            let mut last = 1.0;
            for i in 0..=100 {
                let v = t.eval(0.5 + 0.005 * i as f64);
                assert!(v <= last + 1e-15 && v >= 0.0);
                last = v;
            }
        }
    }

    #[test]
    fn flat_partition_sums_to_one() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 32).build().unwrap();
        let cov = build_covering(&atlas, PI / 2.0).unwrap();
        let pou = build_partition(&atlas, &cov, BumpTemplate::Quintic).unwrap();
        assert!(pou.sum_defect < 1e-12);
        assert_eq!(pou.support_violations, 0);
        assert!(pou.uniform_bounds.iter().all(|b| b.is_finite()));
        assert!(pou.weights.iter().flat_map(|w| w.charts[0].iter()).all(|&v| v >= 0.0));
    }

    #[test]
    fn lattice_partition_has_equal_bounds() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 32).build().unwrap();
        let g = &atlas.chart(0).grid;
        let nodes: Vec<usize> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| g.index(&[8 * i, 8 * j])).collect();
        let cov = from_center_nodes(&atlas, PI / 2.0, nodes).unwrap();
        let pou = build_partition(&atlas, &cov, BumpTemplate::Quintic).unwrap();
        for b in &pou.center_bounds {
            for rho in 0..3 {
                assert!((b[rho] - pou.center_bounds[0][rho]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn uncovered_nodes_raise_coverage_failure() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let mut cov = build_covering(&atlas, PI / 2.0).unwrap();
        cov.fields.truncate(1);
        assert!(matches!(build_partition(&atlas, &cov, BumpTemplate::Quintic), Err(Error::CoverageFailure { .. })));
    }
}
