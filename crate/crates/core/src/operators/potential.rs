use serde::{Deserialize, Serialize};

use super::assembly::{mass_blocks, require_single_chart};
use super::Valence;
use crate::covering::BumpTemplate;
use crate::error::{Error, Result};
use crate::field::{pointwise_norm, TensorField};
use crate::geometry::{distance_field, ChartPoint, ManifoldAtlas};
use crate::sparse::{self, SparseMatrix};

/// Bump `amplitude·ψ(d(center, ·)/radius)` over a metric ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub center: ChartPoint,
    pub radius: f64,
    pub amplitude: f64,
}

/// `V = v(x)·id` with a nonnegative profile `v`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Potential {
    pub spec: PotentialSpec,
    /// `v` at every node of every chart.
    pub values: Vec<Vec<f64>>,
    /// Radius of the sub-ball where `ψ ≥ ½`, on which `(Vv, v) = 0` forces `v = 0`.
    pub operative_radius: f64,
    pub nonnegative: bool,
}

pub fn multiplication_potential(atlas: &ManifoldAtlas, spec: PotentialSpec) -> Result<Potential> {
    if spec.amplitude < 0.0 {
        return Err(Error::Parameter(format!("potential amplitude {} < 0 violates nonnegativity", spec.amplitude)));
    }
    if !(spec.radius > 0.0) {
        return Err(Error::Parameter("potential ball radius must be positive".into()));
    }
    atlas.check_point(&spec.center)?;
    let field = distance_field(atlas, &spec.center, spec.radius)?;
    let template = BumpTemplate::Quintic;
    let mut values: Vec<Vec<f64>> = atlas.charts.iter().map(|c| vec![0.0; c.grid.len()]).collect();
    for (k, node) in atlas.nodes().enumerate() {
        values[node.chart][node.node] = spec.amplitude * template.eval(field.values[k] / spec.radius);
    }
    Ok(Potential { operative_radius: (5.0f64 / 8.0).sqrt() * spec.radius, spec, values, nonnegative: true })
}

impl Potential {
    pub fn apply(&self, field: &TensorField) -> TensorField {
        let mut scalar = field.clone();
        scalar.upper = 0;
        scalar.lower = 0;
        scalar.charts = self.values.clone();
        field.multiply(&scalar)
    }

    /// `∫ (Vv, v)` by grid quadrature.
    pub fn pairing(&self, atlas: &ManifoldAtlas, field: &TensorField) -> f64 {
        atlas
            .nodes()
            .map(|node| {
                let w = atlas.quadrature_weight(node);
                if w == 0.0 {
                    return 0.0;
                }
                let local = atlas.local(&atlas.node_point(node), false);
                w * self.values[node.chart][node.node] * pointwise_norm(&local, field.upper, field.lower, field.at(node)).powi(2)
            })
            .sum()
    }

    /// Gram matrix of `(u, v) ↦ ∫ (Vu, v)` on single-chart grids.
    pub fn matrix(&self, atlas: &ManifoldAtlas, valence: Valence) -> Result<SparseMatrix> {
        require_single_chart(atlas)?;
        let values = &self.values[0];
        Ok(sparse::block_diagonal(&mass_blocks(atlas, valence, |node| values[node]), valence.ncomp(atlas.dim())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ball(amplitude: f64) -> PotentialSpec {
        PotentialSpec { center: ChartPoint::new(0, vec![PI, PI]), radius: 1.0, amplitude }
    }

    #[test]
    fn zero_amplitude_and_negative_amplitude() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let v = multiplication_potential(&atlas, ball(0.0)).unwrap();
        assert!(v.values[0].iter().all(|&x| x == 0.0));
        assert!(multiplication_potential(&atlas, ball(-1.0)).is_err());
    }

    #[test]
    fn pairing_is_nonnegative_and_local() {
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 24).build().unwrap();
        let v = multiplication_potential(&atlas, ball(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let f = TensorField::from_fn(&atlas, 1, 0, |_, x| vec![c[0] * (x[0] + c[2]).sin(), c[1] * (x[1] * c[3]).cos()]);
            assert!(v.pairing(&atlas, &f) >= -1e-14);
        }
        // supported away from the ball
        let far = TensorField::from_fn(&atlas, 1, 0, |_, x| {
            let d = ((x[0] - PI).powi(2) + (x[1] - PI).powi(2)).sqrt();
            vec![if d > 2.5 { 1.0 } else { 0.0 }, 0.0]
        });
        assert_eq!(v.pairing(&atlas, &far), 0.0);
        let m = v.matrix(&atlas, Valence::VECTOR).unwrap();
        let x = far.charts[0].clone();
        assert_eq!(sparse::dot(&x, &sparse::matvec(&m, &x)), 0.0);
        assert!((v.operative_radius - (0.625f64).sqrt()).abs() < 1e-15);
    }
}
