use serde::{Deserialize, Serialize};

use super::spectral::{lowest_spectrum, SpectralOptions};
use crate::error::{Error, Result};
use crate::fd::Stencil;
use crate::geometry::ManifoldAtlas;
use crate::operators::{covariant_derivative_matrix, deformation_laplacian, mass_matrix, weak_laplacian, AssembledOperator, Valence};
use crate::sparse::{self, Cholesky, SparseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularityOperator {
    ScalarLaplacian,
    Bochner,
    DeformationLaplacian,
    Identity,
}

/// `c₀₀²`: the largest `‖u‖²_{H²} / (‖Pu‖²_{L²} + ‖u‖²_{L²})` over the grid space.
/// Since `(a+b)² ≥ a² + b²`, `c₀₀` bounds from below the constant in
/// `‖u‖_{H²} ≤ c(‖Pu‖_{L²} + ‖u‖_{L²})`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularityReport {
    pub operator: String,
    pub resolution: Vec<usize>,
    pub size: usize,
    pub c00_squared: f64,
    pub c00: f64,
    pub residual: f64,
    pub method: String,
}

/// `H₂ = M + G₁ᵀM₁G₁ + (G₂G₁)ᵀM₂(G₂G₁)`, the Gram matrix of the discrete `H²` norm.
pub fn h2_gram(atlas: &ManifoldAtlas, v: Valence) -> Result<SparseMatrix> {
    let g1 = covariant_derivative_matrix(atlas, v, Stencil::Stabilized4)?;
    let g2 = sparse::product(&covariant_derivative_matrix(atlas, v.with_lower(1), Stencil::Stabilized4)?, &g1);
    let m0 = mass_matrix(atlas, v)?;
    let t1 = sparse::product(&sparse::transpose(&g1), &sparse::product(&mass_matrix(atlas, v.with_lower(1))?, &g1));
    let t2 = sparse::product(&sparse::transpose(&g2), &sparse::product(&mass_matrix(atlas, v.with_lower(2))?, &g2));
    let h = sparse::add(&sparse::add(&m0, 1.0, &t1, 1.0), 1.0, &t2, 1.0);
    Ok(sparse::add(&h, 0.5, &sparse::transpose(&h), 0.5))
}

/// `Q = K M⁻¹ K + M`, the Gram matrix of `u ↦ ‖Pu‖² + ‖u‖²` for `P = M⁻¹K`.
pub fn graph_gram(op: &AssembledOperator) -> Result<SparseMatrix> {
    let mchol = Cholesky::new(&op.mass)?;
    // M is block diagonal; M⁻¹ is recovered exactly column by column
    let n = op.len();
    let mut t = sparse::Triplets::new(n, n);
    let k = op.dofs.ncomp;
    for block in 0..n / k {
        for c in 0..k {
            let mut e = vec![0.0; n];
            e[block * k + c] = 1.0;
            let col = mchol.solve(&e);
            for r in 0..k {
                t.push(block * k + r, block * k + c, col[block * k + r]);
            }
        }
    }
    let minv = t.build();
    let q = sparse::add(&sparse::product(&op.stiffness, &sparse::product(&minv, &op.stiffness)), 1.0, &op.mass, 1.0);
    Ok(sparse::add(&q, 0.5, &sparse::transpose(&q), 0.5))
}

pub fn regularity_constant(atlas: &ManifoldAtlas, operator: RegularityOperator, options: SpectralOptions) -> Result<RegularityReport> {
    let op = match operator {
        RegularityOperator::ScalarLaplacian => weak_laplacian(atlas, Valence::SCALAR)?,
        RegularityOperator::Bochner => weak_laplacian(atlas, Valence::VECTOR)?,
        RegularityOperator::DeformationLaplacian => deformation_laplacian(atlas)?,
        RegularityOperator::Identity => {
            return Err(Error::Unsupported("the regularity constant needs a second-order elliptic operator".into()))
        }
    };
    let h2 = h2_gram(atlas, op.dofs.valence)?;
    let q = graph_gram(&op)?;
    // largest H₂-against-Q eigenvalue = 1 / smallest Q-against-H₂ eigenvalue
    let spectrum = lowest_spectrum(&q, &h2, 1, options)?;
    let nu = spectrum.eigenvalues[0];
    Ok(RegularityReport {
        operator: op.name.clone(),
        resolution: atlas.chart(0).grid.shape.clone(),
        size: op.len(),
        c00_squared: 1.0 / nu,
        c00: (1.0 / nu).sqrt(),
        residual: spectrum.residuals[0],
        method: spectrum.method,
    })
}
