use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spectral::{m_orthonormalize, operator_spectrum, KernelVerdict, SpectralOptions};
use crate::error::Result;
use crate::expr::Expr;
use crate::field::{SymbolicTensor, TensorField};
use crate::geometry::ManifoldAtlas;
use crate::operators::{deformation_laplacian, deformation_matrices, DofMap, Valence};
use crate::sparse::{self, SparseMatrix};

/// Numerical kernel of `𝐋` compared with the closed-form Killing fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KillingReport {
    pub family: String,
    pub resolution: Vec<usize>,
    pub dimension: usize,
    pub verdict: KernelVerdict,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `‖Def X‖_{L²} / ‖X‖_{L²}` per numerical basis field.
    pub def_ratios: Vec<f64>,
    pub analytic_dimension: usize,
    /// Largest `|Def X|` of the closed-form fields, evaluated symbolically at the nodes.
    pub analytic_def_defect: f64,
    /// Principal angles between the closed-form span and the numerical kernel.
    pub principal_angles: Vec<f64>,
    /// Kernel is determinate, has the analytic dimension, and spans it within `1e−4`.
    pub matches_analytic: bool,
    #[serde(skip)]
    pub basis: Vec<TensorField>,
}

/// The coordinate translations `∂_i` whose deformation vanishes identically.
/// On the builtin single-chart tori these span the whole Killing algebra:
/// a warp `f(x)` breaks `∂_x` unless `f' ≡ 0`.
pub fn analytic_killing_fields(atlas: &ManifoldAtlas) -> Result<Vec<SymbolicTensor>> {
    let n = atlas.dim();
    let mut out = Vec::new();
    for i in 0..n {
        let comps = (0..n).map(|k| if k == i { Expr::one() } else { Expr::zero() }).collect();
        let x = SymbolicTensor::uniform(atlas, 1, 0, comps)?;
        if symbolic_def_defect(atlas, &x) < 1e-12 {
            out.push(x);
        }
    }
    Ok(out)
}

/// `max |½(∇_i X_j + ∇_j X_i)|` over grid nodes, with symbolic derivatives.
pub fn symbolic_def_defect(atlas: &ManifoldAtlas, x: &SymbolicTensor) -> f64 {
    let n = atlas.dim();
    let charts = atlas
        .charts
        .iter()
        .zip(&x.charts)
        .map(|(chart, comps)| {
            (0..n)
                .map(|j| {
                    let mut low = Expr::zero();
                    for a in 0..n {
                        if !comps[a].is_zero() && !chart.metric_expr(j, a).is_zero() {
                            low = low + chart.metric_expr(j, a) * &comps[a];
                        }
                    }
                    low
                })
                .collect()
        })
        .collect();
    let lowered = SymbolicTensor { upper: 0, lower: 1, dim: n, charts };
    let d = lowered.covariant_derivative(atlas);
    let mut worst = 0.0f64;
    for node in atlas.nodes() {
        let v = d.eval(&atlas.node_point(node));
        for i in 0..n {
            for j in 0..n {
                // v[j*n + i] = ∇_i X_j
                worst = worst.max((0.5 * (v[j * n + i] + v[i * n + j])).abs());
            }
        }
    }
    worst
}

/// Principal angles between the spans of two `M`-orthonormal families, from
/// the `M`-norms of the residuals of `a` projected onto `b`.
pub fn principal_angles(mass: &SparseMatrix, a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let mb: Vec<Vec<f64>> = b.iter().map(|v| sparse::matvec(mass, v)).collect();
    let residuals: Vec<Vec<f64>> = a
        .iter()
        .map(|qa| {
            let mut r = qa.clone();
            for (qb, mqb) in b.iter().zip(&mb) {
                let p = sparse::dot(qa, mqb);
                r.iter_mut().zip(qb).for_each(|(ri, q)| *ri -= p * q);
            }
            r
        })
        .collect();
    let mr: Vec<Vec<f64>> = residuals.iter().map(|r| sparse::matvec(mass, r)).collect();
    let d = a.len();
    let gram = DMatrix::from_fn(d, d, |i, j| 0.5 * (sparse::dot(&residuals[i], &mr[j]) + sparse::dot(&residuals[j], &mr[i])));
    let mut angles: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|s| s.max(0.0).sqrt().min(1.0).asin()).collect();
    angles.sort_by(f64::total_cmp);
    angles
}

/// Kernel of the assembled deformation Laplacian on a single periodic chart.
pub fn killing_kernel(atlas: &ManifoldAtlas, options: SpectralOptions) -> Result<KillingReport> {
    let op = deformation_laplacian(atlas)?;
    let analytic = analytic_killing_fields(atlas)?;
    let count = (analytic.len() + 4).max(6);
    let spectrum = operator_spectrum(&op, count, options)?;
    let verdict = spectrum.default_kernel();
    let dimension = verdict.dimension;
    let basis_vectors: Vec<Vec<f64>> = spectrum.vectors[..dimension].to_vec();

    let defm = deformation_matrices(atlas)?;
    let def_ratios = basis_vectors
        .iter()
        .map(|x| {
            let dx = sparse::matvec(&defm.def, x);
            let num = sparse::dot(&dx, &sparse::matvec(&defm.mass_symmetric, &dx));
            let den = sparse::dot(x, &sparse::matvec(&op.mass, x));
            (num.max(0.0) / den).sqrt()
        })
        .collect();

    let dofs = DofMap::new(atlas, Valence::VECTOR);
    let analytic_def_defect = analytic.iter().map(|x| symbolic_def_defect(atlas, x)).fold(0.0, f64::max);
    let mut sampled: Vec<Vec<f64>> = analytic.iter().map(|x| dofs.to_vector(&x.sample(atlas))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    m_orthonormalize(&op.mass, &mut sampled, &mut rng);
    let principal_angles = principal_angles(&op.mass, &sampled, &basis_vectors);
    let matches_analytic = verdict.determinate
        && dimension == analytic.len()
        && principal_angles.iter().all(|&t| t < 1e-4);
    Ok(KillingReport {
        family: atlas.family().to_string(),
        resolution: atlas.chart(0).grid.shape.clone(),
        dimension,
        verdict,
        eigenvalues: spectrum.eigenvalues,
        residuals: spectrum.residuals,
        def_ratios,
        analytic_dimension: analytic.len(),
        analytic_def_defect,
        principal_angles,
        matches_analytic,
        basis: basis_vectors.iter().map(|v| dofs.to_field(atlas, v)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn analytic_fields_per_family() {
        let flat = AtlasSpec::flat_torus(vec![2.0 * PI, 3.0], 8).build().unwrap();
        assert_eq!(analytic_killing_fields(&flat).unwrap().len(), 2);
        let warped = AtlasSpec::warped_torus(2.0, 1.0, 8).build().unwrap();
        assert_eq!(analytic_killing_fields(&warped).unwrap().len(), 1);
        let cyl = AtlasSpec::warped_cylinder(8).build().unwrap();
        assert_eq!(analytic_killing_fields(&cyl).unwrap().len(), 1);
        let rotation = SymbolicTensor::uniform(&warped, 1, 0, vec![Expr::one(), Expr::zero()]).unwrap();
        assert!(symbolic_def_defect(&warped, &rotation) > 0.1);
    }

    #[test]
    fn kernels_match_closed_forms() {
        for (spec, dim) in [
            (AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16), 2),
            (AtlasSpec::warped_torus(2.0, 1.0, 16), 1),
            (AtlasSpec::warped_torus(2.0, 0.0, 16), 2),
        ] {
            let r = killing_kernel(&spec.build().unwrap(), SpectralOptions::default()).unwrap();
            assert_eq!(r.dimension, dim, "{:?}", r.eigenvalues);
            assert!(r.matches_analytic, "{r:?}");
            assert!(r.def_ratios.iter().all(|&q| q < 1e-6), "{:?}", r.def_ratios);
            assert!(r.analytic_def_defect < 1e-12);
        }
    }

    #[test]
    fn sphere_is_unsupported() {
        let sphere = AtlasSpec::sphere(9).build().unwrap();
        assert!(killing_kernel(&sphere, SpectralOptions::default()).is_err());
    }

    #[test]
    fn angles_detect_missing_directions() {
        let m = sparse::identity(3);
        let a = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let b = vec![vec![1.0, 0.0, 0.0]];
        let t = principal_angles(&m, &a, &b);
        assert!(t[0].abs() < 1e-15 && (t[1] - PI / 2.0).abs() < 1e-12);
    }
}
