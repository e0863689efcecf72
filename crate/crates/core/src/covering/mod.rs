//! Geodesic coverings, uniform partitions of unity and normal-coordinate patches.

mod partition;
mod patch;

pub use partition::{build_partition, BumpTemplate, PartitionOfUnity};
pub use patch::{normal_patch, resample, NormalPatch, PatchOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance_field, ChartPoint, DistanceField, ManifoldAtlas};
use crate::par;

/// Relative slack used for the radius bound and greedy thresholds.
const SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityEntry {
    pub radius: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoveringSet {
    pub centers: Vec<ChartPoint>,
    /// Global node index of each center.
    pub center_nodes: Vec<usize>,
    pub radius: f64,
    /// Smallest pairwise center distance.
    pub separation: f64,
    /// Largest distance from a node to its nearest center.
    pub coverage_distance: f64,
    pub multiplicity_table: Vec<MultiplicityEntry>,
    /// Distances from each center to every node.
    #[serde(skip)]
    pub fields: Vec<DistanceField>,
}

impl CoveringSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Rejects radii outside `(0, ½·inj]`.
pub fn check_radius(atlas: &ManifoldAtlas, r: f64) -> Result<()> {
    let bound = 0.5 * atlas.injectivity_radius();
    if !(r > 0.0) || r > bound * (1.0 + SLACK) {
        return Err(Error::Parameter(format!(
            "covering radius r = {r} must satisfy 0 < r <= inj/2 = {bound} (injectivity radius {})",
            atlas.injectivity_radius()
        )));
    }
    Ok(())
}

/// Distance fields used by coverings: refinement cutoff `r`, graph values beyond.
fn center_field(atlas: &ManifoldAtlas, node: usize, r: f64) -> Result<DistanceField> {
    distance_field(atlas, &atlas.node_point(atlas.node_ref(node)), r)
}

/// Graph-only distances from a node, used to drive the greedy selection.
fn graph_distances(atlas: &ManifoldAtlas, node: usize, r: f64) -> Result<Vec<f64>> {
    if atlas.is_single_periodic_chart() && atlas.chart(0).is_flat() {
        return Ok(center_field(atlas, node, r)?.values);
    }
    Ok(atlas.graph().dijkstra(&[(node, 0.0)], f64::INFINITY).0)
}

/// Greedy farthest-point `(r/2)`-net over all grid nodes, seeded at node 0.
pub fn build_covering(atlas: &ManifoldAtlas, r: f64) -> Result<CoveringSet> {
    check_radius(atlas, r)?;
    let total = atlas.node_count();
    let mut centers = vec![0usize];
    let mut nearest = graph_distances(atlas, 0, r)?;
    loop {
        let mut best = 0usize;
        let mut best_value = f64::NEG_INFINITY;
        for k in 0..total {
            if nearest[k] > best_value + SLACK * best_value.max(1.0) {
                best = k;
                best_value = nearest[k];
            }
        }
        if best_value <= 0.5 * r * (1.0 + SLACK) {
            break;
        }
        centers.push(best);
        let d = graph_distances(atlas, best, r)?;
        for k in 0..total {
            nearest[k] = nearest[k].min(d[k]);
        }
    }
    from_center_nodes(atlas, r, centers)
}

/// Covering with prescribed center nodes; fails if some node is farther than `r`.
pub fn from_center_nodes(atlas: &ManifoldAtlas, r: f64, center_nodes: Vec<usize>) -> Result<CoveringSet> {
    check_radius(atlas, r)?;
    if center_nodes.is_empty() {
        return Err(Error::Parameter("a covering needs at least one center".into()));
    }
    let fields: Vec<DistanceField> = par::map_slice(&center_nodes, |&c| center_field(atlas, c, r))
        .into_iter()
        .collect::<Result<_>>()?;
    let total = atlas.node_count();
    let coverage_distance = (0..total)
        .map(|k| fields.iter().map(|f| f.values[k]).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    if coverage_distance > r * (1.0 + SLACK) {
        return Err(Error::Parameter(format!(
            "centers do not cover the manifold: a node lies at distance {coverage_distance} > r = {r}"
        )));
    }
    let mut separation = f64::INFINITY;
    for (a, fa) in fields.iter().enumerate() {
        for &cb in &center_nodes[a + 1..] {
            separation = separation.min(fa.values[cb]);
        }
    }
    let centers = center_nodes.iter().map(|&c| atlas.node_point(atlas.node_ref(c))).collect();
    let mut covering = CoveringSet {
        centers,
        center_nodes,
        radius: r,
        separation,
        coverage_distance,
        multiplicity_table: Vec::new(),
        fields,
    };
    covering.multiplicity_table = multiplicity_profile(&covering, &[r, 2.0 * r, 4.0 * r]);
    Ok(covering)
}

/// For each `R`, the largest number of centers at distance `< R` from a node.
pub fn multiplicity_profile(covering: &CoveringSet, radii: &[f64]) -> Vec<MultiplicityEntry> {
    let total = covering.fields.first().map_or(0, |f| f.values.len());
    radii
        .iter()
        .map(|&radius| {
            let count = (0..total)
                .map(|k| covering.fields.iter().filter(|f| f.values[k] < radius).count())
                .max()
                .unwrap_or(0);
            MultiplicityEntry { radius, count }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    fn torus(res: usize) -> ManifoldAtlas {
        AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], res).build().unwrap()
    }

    #[test]
    fn radius_bound_is_enforced() {
        let atlas = torus(16);
        let err = build_covering(&atlas, PI).unwrap_err();
        assert!(err.to_string().contains("inj/2"));
        assert!(build_covering(&atlas, 0.0).is_err());
    }

    #[test]
    fn greedy_net_is_separated_and_covers() {
        let atlas = torus(32);
        let r = PI / 2.0;
        let cov = build_covering(&atlas, r).unwrap();
        assert!(cov.separation >= r / 2.0 * (1.0 - 1e-9));
        assert!(cov.coverage_distance <= r / 2.0 * (1.0 + 1e-9));
        assert_eq!(cov.center_nodes[0], 0);
    }

    #[test]
    fn multiplicity_is_monotone_and_one_below_half_separation() {
        let atlas = torus(32);
        let cov = build_covering(&atlas, PI / 2.0).unwrap();
        let table = multiplicity_profile(&cov, &[0.49 * cov.separation, 1.0, 2.0, 3.0]);
        assert_eq!(table[0].count, 1);
        for w in table.windows(2) {
            assert!(w[0].count <= w[1].count);
        }
    }

    #[test]
    fn lattice_covering_is_accepted() {
        let atlas = torus(32);
        let g = &atlas.chart(0).grid;
        let nodes: Vec<usize> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| g.index(&[8 * i, 8 * j])).collect();
        let cov = from_center_nodes(&atlas, PI / 2.0, nodes).unwrap();
        assert!((cov.coverage_distance - PI / 4.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((cov.separation - PI / 2.0).abs() < 1e-12);
    }
}
