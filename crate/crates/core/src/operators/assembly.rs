use nalgebra::DMatrix;

use super::{DiffOperator, Valence};
use crate::error::{Error, Result};
use crate::fd::{self, Stencil};
use crate::field::TensorField;
use crate::geometry::ManifoldAtlas;
use crate::par;
use crate::sparse::{self, SparseMatrix, Triplets};

/// Degrees of freedom of a tensor bundle on a single-chart grid: `node · ncomp + component`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofMap {
    pub nodes: usize,
    pub valence: Valence,
    pub ncomp: usize,
}

impl DofMap {
    pub fn new(atlas: &ManifoldAtlas, valence: Valence) -> Self {
        Self { nodes: atlas.chart(0).grid.len(), valence, ncomp: valence.ncomp(atlas.dim()) }
    }

    pub fn len(&self) -> usize {
        self.nodes * self.ncomp
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, node: usize, comp: usize) -> usize {
        node * self.ncomp + comp
    }

    pub fn to_vector(&self, field: &TensorField) -> Vec<f64> {
        field.charts[0].clone()
    }

    pub fn to_field(&self, atlas: &ManifoldAtlas, values: &[f64]) -> TensorField {
        let mut f = TensorField::zeros(atlas, self.valence.upper, self.valence.lower);
        f.charts[0].copy_from_slice(values);
        f
    }
}

pub(crate) fn require_single_chart(atlas: &ManifoldAtlas) -> Result<()> {
    if atlas.is_single_periodic_chart() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "global assembly needs a single periodic chart; {} uses {} charts",
            atlas.family(),
            atlas.charts.len()
        )))
    }
}

/// Discrete `∇` on `(r, s)` fields as a sparse map onto `(r, s + 1)` fields.
pub fn covariant_derivative_matrix(atlas: &ManifoldAtlas, valence: Valence, stencil: Stencil) -> Result<SparseMatrix> {
    require_single_chart(atlas)?;
    let chart = atlas.chart(0);
    let grid = &chart.grid;
    let n = atlas.dim();
    let k = valence.ncomp(n);
    let rank = valence.rank();
    let flat = chart.is_flat();
    let rows = par::map_range(grid.len(), |node| {
        let stencils: Vec<Vec<(usize, f64)>> = (0..n).map(|a| fd::derivative_row(grid, a, node, stencil)).collect();
        let gamma = if flat { None } else { Some(chart.local(&grid.coords(node), false).gamma) };
        let mut block = Vec::with_capacity(k * n);
        for idx in 0..k {
            for dir in 0..n {
                let mut row: Vec<(usize, f64)> = stencils[dir].iter().map(|&(m, w)| (m * k + idx, w)).collect();
                if let Some(gamma) = &gamma {
                    for slot in 0..rank {
                        let stride = n.pow((rank - 1 - slot) as u32);
                        let a = (idx / stride) % n;
                        let base = idx - a * stride;
                        for c in 0..n {
                            let w = if slot < valence.upper {
                                gamma[(a * n + dir) * n + c]
                            } else {
                                -gamma[(c * n + dir) * n + a]
                            };
                            if w != 0.0 {
                                row.push((node * k + base + c * stride, w));
                            }
                        }
                    }
                }
                block.push(row);
            }
        }
        block
    });
    Ok(sparse::from_rows(grid.len() * k, &rows.concat()))
}

/// Pointwise Gram block of the `L²` pairing on valence `v`:
/// `√g hⁿ ⊗_slots (g_ab or g^ab)`.
pub(crate) fn mass_block(g: &[f64], ginv: &[f64], sqrt_det: f64, cell: f64, v: Valence, n: usize) -> Vec<f64> {
    let k = v.ncomp(n);
    let rank = v.rank();
    let mut block = vec![0.0; k * k];
    for p in 0..k {
        for q in 0..k {
            let mut w = sqrt_det * cell;
            for slot in 0..rank {
                let stride = n.pow((rank - 1 - slot) as u32);
                let (a, b) = ((p / stride) % n, (q / stride) % n);
                w *= if slot < v.upper { g[a * n + b] } else { ginv[a * n + b] };
            }
            block[p * k + q] = w;
        }
    }
    block
}

pub(crate) fn mass_blocks(atlas: &ManifoldAtlas, v: Valence, weight: impl Fn(usize) -> f64 + Sync) -> Vec<Vec<f64>> {
    let chart = atlas.chart(0);
    let n = atlas.dim();
    let cell = chart.grid.cell_volume();
    par::map_range(chart.grid.len(), |node| {
        let l = chart.local(&chart.grid.coords(node), false);
        mass_block(&l.g, &l.ginv, l.sqrt_det * weight(node), cell, v, n)
    })
}

/// `L²` Gram matrix of valence `v` fields.
pub fn mass_matrix(atlas: &ManifoldAtlas, v: Valence) -> Result<SparseMatrix> {
    require_single_chart(atlas)?;
    Ok(sparse::block_diagonal(&mass_blocks(atlas, v, |_| 1.0), v.ncomp(atlas.dim())))
}

pub(crate) fn block_inverse(blocks: &[Vec<f64>], k: usize) -> Result<SparseMatrix> {
    let inv: Vec<Vec<f64>> = blocks
        .iter()
        .map(|b| {
            let m = DMatrix::from_row_slice(k, k, b).try_inverse().ok_or_else(|| Error::LinearAlgebra("singular mass block".into()))?;
            Ok((0..k * k).map(|q| m[(q / k, q % k)]).collect())
        })
        .collect::<Result<_>>()?;
    Ok(sparse::block_diagonal(&inv, k))
}

/// Discrete operator with the `L²` Gram matrix of its source bundle.
#[derive(Clone, Debug)]
pub struct AssembledOperator {
    pub name: String,
    /// Action on nodal components.
    pub matrix: SparseMatrix,
    pub mass: SparseMatrix,
    /// `M·A`, the bilinear form of the operator.
    pub stiffness: SparseMatrix,
    /// `M·A` symmetric within `1e−10` relative, i.e. `A` is `M`-self-adjoint.
    pub symmetric: bool,
    pub symmetry_defect: f64,
    pub dofs: DofMap,
}

impl AssembledOperator {
    pub(crate) fn from_parts(name: &str, matrix: SparseMatrix, mass: SparseMatrix, dofs: DofMap) -> Self {
        let stiffness = sparse::product(&mass, &matrix);
        let symmetry_defect = sparse::symmetry_defect(&stiffness);
        let symmetric = symmetry_defect < 1e-10;
        Self { name: name.to_string(), matrix, mass, stiffness, symmetric, symmetry_defect, dofs }
    }

    /// Weak form `A = M⁻¹K` with symmetric `K`; `K` is kept exactly symmetric.
    pub(crate) fn weak(name: &str, stiffness: SparseMatrix, mass: SparseMatrix, mass_inv: &SparseMatrix, dofs: DofMap) -> Self {
        let stiffness = sparse::add(&stiffness, 0.5, &sparse::transpose(&stiffness), 0.5);
        let matrix = sparse::product(mass_inv, &stiffness);
        Self { name: name.to_string(), matrix, mass, stiffness, symmetric: true, symmetry_defect: 0.0, dofs }
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    pub fn apply(&self, atlas: &ManifoldAtlas, field: &TensorField) -> TensorField {
        let out = sparse::matvec(&self.matrix, &self.dofs.to_vector(field));
        let target = DofMap { nodes: self.dofs.nodes, valence: self.dofs.valence, ncomp: out.len() / self.dofs.nodes };
        let mut f = TensorField::zeros(atlas, target.valence.upper, target.valence.lower);
        if f.charts[0].len() == out.len() {
            f.charts[0] = out;
        }
        f
    }

    /// `⟨u, v⟩_M`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        sparse::dot(u, &sparse::matvec(&self.mass, v))
    }
}

/// `Σ_j a_j ∇^j` with the stabilized fourth-order stencil.
pub fn assemble_operator(op: &DiffOperator, atlas: &ManifoldAtlas) -> Result<AssembledOperator> {
    require_single_chart(atlas)?;
    let n = atlas.dim();
    let grid = &atlas.chart(0).grid;
    let nodes = grid.len();
    let ke = op.source.ncomp(n);
    let kf = op.target.ncomp(n);
    let mut total: Option<SparseMatrix> = None;
    let mut derivative = sparse::identity(nodes * ke);
    for (j, a) in op.coefficients.iter().enumerate() {
        if j > 0 {
            let step = covariant_derivative_matrix(atlas, op.source.with_lower(j - 1), Stencil::Stabilized4)?;
            derivative = sparse::product(&step, &derivative);
        }
        let Some(a) = a else { continue };
        let width = ke * n.pow(j as u32);
        let rows = par::map_range(nodes, |node| {
            let x = grid.coords(node);
            (0..kf)
                .map(|f| {
                    (0..width)
                        .filter_map(|q| {
                            let v = a[0][f * width + q].eval(&x);
                            (v != 0.0).then_some((node * width + q, v))
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        });
        let contraction = sparse::from_rows(nodes * width, &rows.concat());
        let term = sparse::product(&contraction, &derivative);
        total = Some(match total {
            None => term,
            Some(t) => sparse::add(&t, 1.0, &term, 1.0),
        });
    }
    let matrix = total.unwrap_or_else(|| Triplets::new(nodes * kf, nodes * ke).build());
    let mass = mass_matrix(atlas, op.source)?;
    let dofs = DofMap::new(atlas, op.source);
    if op.source == op.target {
        Ok(AssembledOperator::from_parts(&op.name, matrix, mass, dofs))
    } else {
        Ok(AssembledOperator { name: op.name.clone(), stiffness: matrix.clone(), matrix, mass, symmetric: false, symmetry_defect: f64::NAN, dofs })
    }
}

/// Weak rough Laplacian `M⁻¹ Gᵀ M₁ G` on valence `v` (scalar Laplacian for
/// functions, Bochner Laplacian for vector fields).
pub fn weak_laplacian(atlas: &ManifoldAtlas, v: Valence) -> Result<AssembledOperator> {
    require_single_chart(atlas)?;
    let n = atlas.dim();
    let g = covariant_derivative_matrix(atlas, v, Stencil::Stabilized4)?;
    let m1 = mass_matrix(atlas, v.with_lower(1))?;
    let stiffness = sparse::product(&sparse::transpose(&g), &sparse::product(&m1, &g));
    let blocks = mass_blocks(atlas, v, |_| 1.0);
    let k = v.ncomp(n);
    let mass = sparse::block_diagonal(&blocks, k);
    let mass_inv = block_inverse(&blocks, k)?;
    let name = if v == Valence::SCALAR { "scalar_laplacian" } else { "bochner" };
    Ok(AssembledOperator::weak(name, stiffness, mass, &mass_inv, DofMap::new(atlas, v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::field::SymbolicTensor;
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn identity_acts_as_identity() {
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 8).build().unwrap();
        let a = assemble_operator(&DiffOperator::identity(&atlas, Valence::VECTOR), &atlas).unwrap();
        let u = TensorField::from_fn(&atlas, 1, 0, |_, x| vec![x[0].sin(), x[1].cos()]);
        assert_eq!(a.apply(&atlas, &u), u);
        assert!(a.symmetric);
    }

    #[test]
    fn scalar_laplacian_on_sine() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 32).build().unwrap();
        let u = TensorField::scalar_from_fn(&atlas, |_, x| x[0].sin());
        for a in [assemble_operator(&DiffOperator::scalar_laplacian(&atlas), &atlas).unwrap(), weak_laplacian(&atlas, Valence::SCALAR).unwrap()] {
            let lu = a.apply(&atlas, &u);
            let err = lu.combine(1.0, &u, -1.0).max_abs();
            assert!(err < 1e-4, "{}: {err}", a.name);
        }
    }

    #[test]
    fn strong_operators_converge_to_symbolic_application() {
        let errors = |res: usize| {
            let atlas = AtlasSpec::warped_torus(2.0, 1.0, res).build().unwrap();
            let x = Expr::var(0);
            let y = Expr::var(1);
            let u = SymbolicTensor::uniform(&atlas, 1, 0, vec![(x.clone() + y.clone()).sin(), x.cos() * (2.0 * y).sin()]).unwrap();
            [DiffOperator::bochner(&atlas), DiffOperator::deformation_laplacian(&atlas)]
                .iter()
                .map(|op| {
                    let exact = op.apply_symbolic(&atlas, &u).unwrap().sample(&atlas);
                    let a = assemble_operator(op, &atlas).unwrap();
                    a.apply(&atlas, &u.sample(&atlas)).combine(1.0, &exact, -1.0).max_abs()
                })
                .collect::<Vec<_>>()
        };
        let coarse = errors(32);
        let fine = errors(64);
        for (c, f) in coarse.iter().zip(&fine) {
            let order = (c / f).log2();
            assert!(order >= 3.5, "order {order} ({c} -> {f})");
        }
    }

    #[test]
    fn weak_bochner_on_killing_field_matches_oracle() {
        let error = |res: usize| {
            let atlas = AtlasSpec::warped_torus(2.0, 1.0, res).build().unwrap();
            let u = SymbolicTensor::uniform(&atlas, 1, 0, vec![Expr::zero(), Expr::one()]).unwrap();
            let exact = DiffOperator::bochner(&atlas).apply_symbolic(&atlas, &u).unwrap().sample(&atlas);
            let weak = weak_laplacian(&atlas, Valence::VECTOR).unwrap();
            weak.apply(&atlas, &u.sample(&atlas)).combine(1.0, &exact, -1.0).max_abs()
        };
        let (coarse, fine) = (error(32), error(64));
        assert!((coarse / fine).log2() > 3.5, "{coarse} -> {fine}");
    }

    #[test]
    fn multi_chart_assembly_is_unsupported() {
        let atlas = AtlasSpec::sphere(9).build().unwrap();
        assert!(matches!(assemble_operator(&DiffOperator::bochner(&atlas), &atlas), Err(Error::Unsupported(_))));
    }
}
