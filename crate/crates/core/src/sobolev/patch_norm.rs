use serde::{Deserialize, Serialize};

use super::{derivative_norms, Battery, Exponent};
use crate::covering::{normal_patch, resample, CoveringSet, NormalPatch, PartitionOfUnity, PatchOptions};
use crate::error::{Error, Result};
use crate::fd::{self, Stencil};
use crate::field::{overlap_consistency, TensorField};
use crate::geometry::ManifoldAtlas;
use crate::grid::Grid;
use crate::par;

/// Normal patches around every center of a covering, reused across fields.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub radius: f64,
    pub options: PatchOptions,
    pub patches: Vec<NormalPatch>,
}

pub fn build_patches(atlas: &ManifoldAtlas, covering: &CoveringSet, options: PatchOptions) -> Result<PatchSet> {
    let patches = par::map_slice(&covering.centers, |c| normal_patch(atlas, c, covering.radius, options))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(PatchSet { radius: covering.radius, options, patches })
}

/// Euclidean `W^{s,p}` norm of node-major data on a bounded grid, flat
/// quadrature `hⁿ`, all partials up to order `s`.
pub fn euclidean_sobolev_norm(grid: &Grid, data: &[f64], ncomp: usize, s: usize, p: Exponent) -> f64 {
    let n = grid.dim();
    let h = grid.cell_volume();
    let mut terms = Vec::with_capacity(s + 1);
    let mut current = data.to_vec();
    let mut width = ncomp;
    for j in 0..=s {
        if j > 0 {
            let partials: Vec<Vec<f64>> = (0..n).map(|a| fd::partial(grid, &current, width, a, Stencil::Central4)).collect();
            let mut next = vec![0.0; current.len() * n];
            for node in 0..grid.len() {
                for c in 0..width {
                    for a in 0..n {
                        next[(node * width + c) * n + a] = partials[a][node * width + c];
                    }
                }
            }
            current = next;
            width *= n;
        }
        let pointwise = (0..grid.len()).map(|node| current[node * width..(node + 1) * width].iter().map(|v| v * v).sum::<f64>().sqrt());
        terms.push(match p {
            Exponent::Finite(p) => (h * pointwise.map(|v| v.powf(p)).sum::<f64>()).powf(1.0 / p),
            Exponent::Infinity => pointwise.fold(0.0, f64::max),
        });
    }
    p.combine(terms)
}

/// `|||u|||_{s,p}`: `ℓ^p` over centers of euclidean norms of `φ_γ u` in normal coordinates.
pub fn patch_norm_with(field: &TensorField, s: usize, p: f64, partition: &PartitionOfUnity, patches: &PatchSet) -> Result<f64> {
    if s > 2 {
        return Err(Error::Parameter(format!("patch norm order s = {s} exceeds 2")));
    }
    if partition.weights.len() != patches.patches.len() {
        return Err(Error::Parameter("partition and patch set have different numbers of centers".into()));
    }
    let p = Exponent::new(p)?;
    let k = field.ncomp();
    let terms: Vec<f64> = partition
        .weights
        .iter()
        .zip(&patches.patches)
        .map(|(phi, patch)| euclidean_sobolev_norm(&patch.grid, &resample(&field.multiply(phi), patch), k, s, p))
        .collect();
    Ok(p.combine(terms))
}

pub fn patch_norm(
    atlas: &ManifoldAtlas,
    field: &TensorField,
    s: usize,
    p: f64,
    partition: &PartitionOfUnity,
    covering: &CoveringSet,
    options: PatchOptions,
) -> Result<f64> {
    patch_norm_with(field, s, p, partition, &build_patches(atlas, covering, options)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub battery: Battery,
    pub s: usize,
    pub p: f64,
    pub centers: usize,
    /// `|||u|||_{s,p} / ‖u‖_{W^{s,p}}` per battery field.
    pub ratios: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    /// `c₂ / c₁`.
    pub spread: f64,
    /// Worst cross-chart mismatch of the battery fields (multi-chart atlases only).
    pub overlap_defect: Option<f64>,
}

impl EquivalenceReport {
    /// Relative change of the spread against a report at another resolution.
    pub fn spread_change(&self, other: &EquivalenceReport) -> f64 {
        (other.spread / self.spread - 1.0).abs()
    }
}

pub fn norm_equivalence_report(
    atlas: &ManifoldAtlas,
    battery: &Battery,
    s: usize,
    p: f64,
    partition: &PartitionOfUnity,
    patches: &PatchSet,
) -> Result<EquivalenceReport> {
    if battery.count == 0 {
        return Err(Error::Rejected("empty battery".into()));
    }
    let fields = battery.fields(atlas)?;
    let exponent = Exponent::new(p)?;
    let ratios: Vec<f64> = par::map_slice(&fields, |u| -> Result<f64> {
        if u.is_zero(1e-13) {
            return Err(Error::Rejected("battery contains a zero field".into()));
        }
        let covariant = exponent.combine(derivative_norms(atlas, u, s, exponent)?);
        Ok(patch_norm_with(u, s, p, partition, patches)? / covariant)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let c1 = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let c2 = ratios.iter().copied().fold(0.0, f64::max);
    let overlap_defect = (atlas.charts.len() > 1)
        .then(|| fields.iter().map(|u| overlap_consistency(atlas, u)).fold(0.0, f64::max));
    Ok(EquivalenceReport {
        battery: battery.clone(),
        s,
        p,
        centers: patches.patches.len(),
        ratios,
        c1,
        c2,
        spread: c2 / c1,
        overlap_defect,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCheck {
    pub epsilon: f64,
    /// `(1 + δ) / (4ε)`.
    pub c_epsilon: f64,
    pub violations: usize,
    /// Smallest `ε‖u‖_{H²} + C_ε‖u‖_{L²} − ‖u‖_{H¹}` over the fields.
    pub min_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub fields: usize,
    /// Smallest `δ ≥ 0` with `‖u‖²_{H¹} ≤ (1 + δ)‖u‖_{L²}‖u‖_{H²}` on every field.
    pub delta: f64,
    pub checks: Vec<EpsilonCheck>,
}

/// Discrete `H¹ ⊂ L², H²` interpolation inequality and its `ε`-form.
pub fn embedding_interpolation_check(atlas: &ManifoldAtlas, fields: &[TensorField], epsilons: &[f64]) -> Result<InterpolationReport> {
    let norms: Vec<[f64; 3]> = par::map_slice(fields, |u| -> Result<[f64; 3]> {
        let d = derivative_norms(atlas, u, 2, Exponent::Finite(2.0))?;
        let l2 = d[0];
        let h1 = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let h2 = (h1 * h1 + d[2] * d[2]).sqrt();
        Ok([l2, h1, h2])
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let delta = norms
        .iter()
        .filter(|n| n[0] > 0.0)
        .map(|[l2, h1, h2]| h1 * h1 / (l2 * h2) - 1.0)
        .fold(0.0, f64::max);
    let checks = epsilons
        .iter()
        .map(|&epsilon| {
            let c_epsilon = (1.0 + delta) / (4.0 * epsilon);
            let margins: Vec<f64> = norms.iter().map(|[l2, h1, h2]| epsilon * h2 + c_epsilon * l2 - h1).collect();
            let violations = margins.iter().zip(&norms).filter(|(m, n)| **m < -1e-12 * n[1]).count();
            EpsilonCheck { epsilon, c_epsilon, violations, min_margin: margins.iter().copied().fold(f64::INFINITY, f64::min) }
        })
        .collect();
    Ok(InterpolationReport { fields: fields.len(), delta, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covering::{build_covering, build_partition, from_center_nodes, BumpTemplate};
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn euclidean_norm_of_a_plane_wave() {
        let g = Grid::new(vec![0.0; 2], vec![2.0 * PI; 2], vec![129; 2], vec![false; 2]).unwrap();
        let data: Vec<f64> = (0..g.len()).map(|k| g.coords(k)[0].sin()).collect();
        let v = euclidean_sobolev_norm(&g, &data, 1, 1, Exponent::Finite(2.0));
        // trapezoid-free box sum of sin² and cos² over the closed square
        let h = g.cell_volume();
        let expected: f64 = (0..g.len()).map(|k| { let x = g.coords(k)[0]; h * (x.sin().powi(2) + x.cos().powi(2)) }).sum();
        assert!((v * v - expected).abs() < 1e-6 * expected, "{} vs {}", v * v, expected);
    }

    #[test]
    fn patch_norm_is_homogeneous_and_bounded_by_multiplicity() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 32).build().unwrap();
        let g = &atlas.chart(0).grid;
        let nodes: Vec<usize> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| g.index(&[8 * i, 8 * j])).collect();
        let cov = from_center_nodes(&atlas, PI / 2.0, nodes).unwrap();
        let pou = build_partition(&atlas, &cov, BumpTemplate::Quintic).unwrap();
        let patches = build_patches(&atlas, &cov, PatchOptions::matching(&atlas, PI / 2.0)).unwrap();
        let zero = TensorField::zeros(&atlas, 0, 0);
        assert_eq!(patch_norm_with(&zero, 1, 2.0, &pou, &patches).unwrap(), 0.0);
        let battery = Battery::for_atlas(&atlas, 11, 50, 3);
        let report = norm_equivalence_report(&atlas, &battery, 0, 2.0, &pou, &patches).unwrap();
        let n_r = cov.multiplicity_table[0].count as f64;
        for &ratio in &report.ratios {
            assert!(ratio >= 1.0 / n_r.sqrt() && ratio <= n_r.sqrt(), "{ratio} outside [1/√{n_r}, √{n_r}]");
        }
        let u = battery.field(&atlas, 0).unwrap();
        let a = patch_norm_with(&u, 2, 2.0, &pou, &patches).unwrap();
        let b = patch_norm_with(&u.scale(-3.0), 2, 2.0, &pou, &patches).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12 * b);
        assert!(patch_norm_with(&u, 3, 2.0, &pou, &patches).is_err());
    }

    #[test]
    fn constants_have_equal_ratios() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let cov = build_covering(&atlas, PI / 2.0).unwrap();
        let pou = build_partition(&atlas, &cov, BumpTemplate::Quintic).unwrap();
        let patches = build_patches(&atlas, &cov, PatchOptions::matching(&atlas, PI / 2.0)).unwrap();
        let report = norm_equivalence_report(&atlas, &Battery::constants(5, 6), 0, 2.0, &pou, &patches).unwrap();
        assert!(report.spread - 1.0 < 1e-10);
    }

    #[test]
    fn eigenfields_meet_the_interpolation_bound() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 64).build().unwrap();
        for (m, n) in [(1.0, 0.0), (1.0, 2.0), (3.0, 0.0)] {
            let u = TensorField::scalar_from_fn(&atlas, move |_, x| (m * x[0] + n * x[1]).sin());
            let lambda: f64 = m * m + n * n;
            let report = embedding_interpolation_check(&atlas, &[u], &[0.5]).unwrap();
            let expected = (1.0 + lambda) / (1.0 + lambda + lambda * lambda).sqrt() - 1.0;
            assert!((report.delta - expected).abs() < 1e-4, "{} vs {expected}", report.delta);
            assert_eq!(report.checks[0].violations, 0);
        }
        let c = TensorField::scalar_from_fn(&atlas, |_, _| 2.0);
        let report = embedding_interpolation_check(&atlas, &[c], &[0.5]).unwrap();
        assert!(report.delta.abs() < 1e-12);
        assert!((report.checks[0].c_epsilon - 0.5).abs() < 1e-12);
    }
}
