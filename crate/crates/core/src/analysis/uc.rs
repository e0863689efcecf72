use serde::{Deserialize, Serialize};

use super::killing::analytic_killing_fields;
use super::spectral::{lowest_spectrum, SpectralOptions};
use crate::error::{Error, Result};
use crate::field::pointwise_norm;
use crate::geometry::{distance_field, ChartPoint, ManifoldAtlas};
use crate::operators::{deformation_laplacian, AssembledOperator};
use crate::sparse;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MassFraction {
    pub field: usize,
    /// `∫_𝒪 |X|² / ∫_M |X|²`.
    pub fraction: f64,
    /// `(inf |X|² / sup |X|²)·vol(𝒪)/vol(M)`.
    pub lower_bound: f64,
}

/// Discrete unique continuation on a metric ball `𝒪`: positivity of the
/// smallest eigenvalue of `𝐋_h` on fields vanishing at the nodes of `𝒪`.
/// This is a finite-dimensional analog of the continuation property, not a
/// proof of it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UcReport {
    pub center: ChartPoint,
    pub radius: f64,
    pub removed_nodes: usize,
    pub restricted_size: usize,
    pub lambda_min: f64,
    pub residual: f64,
    pub method: String,
    pub positive: bool,
    pub volume_fraction: f64,
    pub mass_fractions: Vec<MassFraction>,
}

/// Ball restriction test for `𝐋` on single-chart periodic manifolds.
pub fn unique_continuation_test(atlas: &ManifoldAtlas, center: &ChartPoint, radius: f64, options: SpectralOptions) -> Result<UcReport> {
    let op = deformation_laplacian(atlas)?;
    unique_continuation_with(atlas, &op, center, radius, options)
}

pub fn unique_continuation_with(
    atlas: &ManifoldAtlas,
    op: &AssembledOperator,
    center: &ChartPoint,
    radius: f64,
    options: SpectralOptions,
) -> Result<UcReport> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("ball radius must be positive, got {radius}")));
    }
    atlas.check_point(center)?;
    let field = distance_field(atlas, center, radius)?;
    let inside: Vec<bool> = field.values.iter().map(|&d| d < radius).collect();
    let removed_nodes = inside.iter().filter(|&&b| b).count();
    if removed_nodes == inside.len() {
        return Err(Error::Degenerate(format!("ball of radius {radius} contains every node")));
    }
    let k = op.dofs.ncomp;
    let keep: Vec<usize> = (0..op.dofs.len()).filter(|&d| !inside[d / k]).collect();
    let kf = sparse::submatrix(&op.stiffness, &keep);
    let mf = sparse::submatrix(&op.mass, &keep);
    let spectrum = lowest_spectrum(&kf, &mf, 1, options)?;
    let lambda_min = spectrum.eigenvalues[0];

    let mut vol_in = 0.0;
    let mut vol = 0.0;
    for (g, node) in atlas.nodes().enumerate() {
        let w = atlas.quadrature_weight(node);
        vol += w;
        if inside[g] {
            vol_in += w;
        }
    }
    let volume_fraction = vol_in / vol;
    let mut mass_fractions = Vec::new();
    for (i, x) in analytic_killing_fields(atlas)?.iter().enumerate() {
        let sampled = x.sample(atlas);
        let (mut num, mut den, mut lo, mut hi) = (0.0, 0.0, f64::INFINITY, 0.0f64);
        for (g, node) in atlas.nodes().enumerate() {
            let local = atlas.local(&atlas.node_point(node), false);
            let s = pointwise_norm(&local, 1, 0, sampled.at(node)).powi(2);
            let w = atlas.quadrature_weight(node);
            lo = lo.min(s);
            hi = hi.max(s);
            den += w * s;
            if inside[g] {
                num += w * s;
            }
        }
        mass_fractions.push(MassFraction { field: i, fraction: num / den, lower_bound: lo / hi * volume_fraction });
    }
    Ok(UcReport {
        center: center.clone(),
        radius,
        removed_nodes,
        restricted_size: keep.len(),
        lambda_min,
        residual: spectrum.residuals[0],
        method: spectrum.method,
        positive: lambda_min > 1e-8 * spectrum.lambda_max,
        volume_fraction,
        mass_fractions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn flat_ball_restriction_is_positive() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let r = unique_continuation_test(&atlas, &ChartPoint::new(0, vec![PI, PI]), 1.0, SpectralOptions::default()).unwrap();
        assert!(r.positive && r.lambda_min > 1e-3, "{r:?}");
        assert!(r.removed_nodes > 0);
        for m in &r.mass_fractions {
            // |∂_x| ≡ 1 makes the fraction the volume fraction
            assert!((m.fraction - r.volume_fraction).abs() < 1e-12);
            assert!(m.fraction >= m.lower_bound - 1e-15);
        }
    }

    #[test]
    fn warped_mass_fraction_exceeds_bound() {
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 16).build().unwrap();
        let r = unique_continuation_test(&atlas, &ChartPoint::new(0, vec![0.0, 1.0]), 0.8, SpectralOptions::default()).unwrap();
        assert_eq!(r.mass_fractions.len(), 1);
        let m = &r.mass_fractions[0];
        assert!(m.fraction >= m.lower_bound && m.lower_bound > 0.0);
        assert!(r.positive);
    }

    #[test]
    fn degenerate_balls_are_rejected() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 8).build().unwrap();
        let c = ChartPoint::new(0, vec![0.0, 0.0]);
        assert!(matches!(unique_continuation_test(&atlas, &c, 100.0, SpectralOptions::default()), Err(Error::Degenerate(_))));
        assert!(unique_continuation_test(&atlas, &c, 0.0, SpectralOptions::default()).is_err());
    }
}
