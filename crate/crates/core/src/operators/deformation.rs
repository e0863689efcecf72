use super::assembly::{block_inverse, mass_blocks, require_single_chart};
use super::{AssembledOperator, DofMap, Valence};
use crate::error::{Error, Result};
use crate::fd::{self, Stencil};
use crate::field::{covariant_derivative, TensorField};
use crate::geometry::ManifoldAtlas;
use crate::par;
use crate::sparse::{self, SparseMatrix};

/// `(Def X)_ij = ½(∇_i X_j + ∇_j X_i)`, exactly symmetric at every node.
pub fn deformation(atlas: &ManifoldAtlas, x: &TensorField) -> TensorField {
    assert!(x.upper == 1 && x.lower == 0, "deformation acts on vector fields");
    let n = atlas.dim();
    let dx = covariant_derivative(atlas, x);
    let mut out = TensorField::zeros(atlas, 0, 2);
    for node in atlas.nodes() {
        let g = atlas.local(&atlas.node_point(node), false).g;
        let d = dx.at(node);
        let s = out.at_mut(node);
        for i in 0..n {
            for j in i..n {
                // ∇_i X_j = g_ja (∇X)^a_i
                let mut v = 0.0;
                for a in 0..n {
                    v += g[j * n + a] * d[a * n + i] + g[i * n + a] * d[a * n + j];
                }
                s[i * n + j] = 0.5 * v;
                s[j * n + i] = 0.5 * v;
            }
        }
    }
    out
}

/// Strong-form comparator `(Def* S)^k = −g^{kj} g^{il} ∇_l S_ij`.
pub fn strong_divergence(atlas: &ManifoldAtlas, s: &TensorField) -> TensorField {
    assert!(s.upper == 0 && s.lower == 2, "divergence acts on (0,2) fields");
    let n = atlas.dim();
    let ds = covariant_derivative(atlas, s);
    let mut out = TensorField::zeros(atlas, 1, 0);
    for node in atlas.nodes() {
        let ginv = atlas.local(&atlas.node_point(node), false).ginv;
        let d = ds.at(node);
        let mut low = vec![0.0; n];
        for (j, lj) in low.iter_mut().enumerate() {
            for i in 0..n {
                for l in 0..n {
                    *lj -= ginv[i * n + l] * d[(i * n + j) * n + l];
                }
            }
        }
        let v = out.at_mut(node);
        for k in 0..n {
            v[k] = (0..n).map(|j| ginv[k * n + j] * low[j]).sum();
        }
    }
    out
}

/// Discrete deformation operator and the Gram matrices of its weak adjoint.
#[derive(Clone, Debug)]
pub struct DeformationMatrices {
    /// Vector fields to full `n × n` components of symmetric 2-tensors.
    pub def: SparseMatrix,
    pub mass_vector: SparseMatrix,
    pub mass_vector_inv: SparseMatrix,
    pub mass_symmetric: SparseMatrix,
    /// `M_v⁻¹ Defᵀ M_s`.
    pub adjoint: SparseMatrix,
}

/// Lie form `½(X^k ∂_k g_ij + g_kj ∂_i X^k + g_ik ∂_j X^k)` with exact metric
/// derivatives and the stabilized stencil.
pub fn deformation_matrices(atlas: &ManifoldAtlas) -> Result<DeformationMatrices> {
    require_single_chart(atlas)?;
    let chart = atlas.chart(0);
    let grid = &chart.grid;
    let n = atlas.dim();
    let rows = par::map_range(grid.len(), |node| {
        let l = chart.local(&grid.coords(node), false);
        let stencils: Vec<Vec<(usize, f64)>> = (0..n).map(|a| fd::derivative_row(grid, a, node, Stencil::Stabilized4)).collect();
        let mut block = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut row = Vec::new();
                for k in 0..n {
                    row.push((node * n + k, 0.5 * l.dg[(k * n + i) * n + j]));
                }
                for &(m, w) in &stencils[i] {
                    for k in 0..n {
                        row.push((m * n + k, 0.5 * l.g[k * n + j] * w));
                    }
                }
                for &(m, w) in &stencils[j] {
                    for k in 0..n {
                        row.push((m * n + k, 0.5 * l.g[i * n + k] * w));
                    }
                }
                block.push(row);
            }
        }
        block
    });
    let def = sparse::from_rows(grid.len() * n, &rows.concat());
    let vblocks = mass_blocks(atlas, Valence::VECTOR, |_| 1.0);
    let mass_vector = sparse::block_diagonal(&vblocks, n);
    let mass_vector_inv = block_inverse(&vblocks, n)?;
    let mass_symmetric = sparse::block_diagonal(&mass_blocks(atlas, Valence::new(0, 2), |_| 1.0), n * n);
    let adjoint = sparse::product(&mass_vector_inv, &sparse::product(&sparse::transpose(&def), &mass_symmetric));
    Ok(DeformationMatrices { def, mass_vector, mass_vector_inv, mass_symmetric, adjoint })
}

/// Weak adjoint `Def* S = M_v⁻¹ Defᵀ M_s S`; rejects non-symmetric input.
pub fn deformation_adjoint(atlas: &ManifoldAtlas, matrices: &DeformationMatrices, s: &TensorField) -> Result<TensorField> {
    if s.upper != 0 || s.lower != 2 {
        return Err(Error::Rejected("Def* acts on (0,2) tensor fields".into()));
    }
    let n = atlas.dim();
    let scale = s.max_abs().max(f64::MIN_POSITIVE);
    let data = &s.charts[0];
    let mut defect = 0.0f64;
    for node in 0..data.len() / (n * n) {
        for i in 0..n {
            for j in 0..n {
                defect = defect.max((data[node * n * n + i * n + j] - data[node * n * n + j * n + i]).abs());
            }
        }
    }
    if defect > 1e-12 * scale {
        return Err(Error::Rejected(format!("Def* needs a symmetric tensor field; asymmetry {defect:e}")));
    }
    let v = sparse::matvec(&matrices.adjoint, data);
    Ok(DofMap::new(atlas, Valence::VECTOR).to_field(atlas, &v))
}

/// `𝐋 = 2 Def* Def` in weak form: stiffness `2 Defᵀ M_s Def` against `M_v`.
pub fn deformation_laplacian(atlas: &ManifoldAtlas) -> Result<AssembledOperator> {
    let m = deformation_matrices(atlas)?;
    let stiffness = sparse::scaled(&sparse::product(&sparse::transpose(&m.def), &sparse::product(&m.mass_symmetric, &m.def)), 2.0);
    Ok(AssembledOperator::weak("deformation_laplacian", stiffness, m.mass_vector, &m.mass_vector_inv, DofMap::new(atlas, Valence::VECTOR)))
}
