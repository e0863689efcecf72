//! Differential operators `Σ a_j ∇^j`, their principal symbols, and the
//! deformation operator family.

mod assembly;
mod deformation;
mod potential;

pub use assembly::{
    assemble_operator, covariant_derivative_matrix, mass_matrix, weak_laplacian, AssembledOperator, DofMap,
};
pub use deformation::{
    deformation, deformation_adjoint, deformation_laplacian, deformation_matrices, strong_divergence,
    DeformationMatrices,
};
pub use potential::{multiplication_potential, Potential, PotentialSpec};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::field::{transform_components, SymbolicTensor};
use crate::geometry::{ChartPoint, ManifoldAtlas};

/// Valence `(r, s)` of a tensor bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Valence {
    pub upper: usize,
    pub lower: usize,
}

impl Valence {
    pub const SCALAR: Valence = Valence { upper: 0, lower: 0 };
    pub const VECTOR: Valence = Valence { upper: 1, lower: 0 };

    pub fn new(upper: usize, lower: usize) -> Self {
        Self { upper, lower }
    }

    pub fn rank(&self) -> usize {
        self.upper + self.lower
    }

    pub fn ncomp(&self, n: usize) -> usize {
        n.pow(self.rank() as u32)
    }

    pub fn with_lower(&self, extra: usize) -> Self {
        Self { upper: self.upper, lower: self.lower + extra }
    }
}

/// `u ↦ Σ_{j ≤ μ} a_j ∇^j u`. Coefficient `a_j` is stored per chart with
/// layout `[f][e][i_1..i_j]` (target component, source component, derivative slots).
#[derive(Clone, Debug)]
pub struct DiffOperator {
    pub name: String,
    pub source: Valence,
    pub target: Valence,
    pub dim: usize,
    pub coefficients: Vec<Option<Vec<Vec<Expr>>>>,
}

fn metric_inverse_exprs(atlas: &ManifoldAtlas) -> Vec<Vec<Vec<Expr>>> {
    let n = atlas.dim();
    atlas
        .charts
        .iter()
        .map(|c| {
            let g: Vec<Vec<Expr>> = (0..n).map(|i| (0..n).map(|j| c.metric_expr(i, j).clone()).collect()).collect();
            expr::inverse(&g)
        })
        .collect()
}

impl DiffOperator {
    pub fn order(&self) -> usize {
        self.coefficients.iter().rposition(|c| c.is_some()).unwrap_or(0)
    }

    fn coefficient_len(&self, j: usize) -> usize {
        self.target.ncomp(self.dim) * self.source.ncomp(self.dim) * self.dim.pow(j as u32)
    }

    pub fn new(
        atlas: &ManifoldAtlas,
        name: &str,
        source: Valence,
        target: Valence,
        coefficients: Vec<Option<Vec<Vec<Expr>>>>,
    ) -> Result<Self> {
        let op = Self { name: name.to_string(), source, target, dim: atlas.dim(), coefficients };
        if op.coefficients.is_empty() || op.coefficients.len() > 3 {
            return Err(Error::Parameter("operator order must lie in 0..=2".into()));
        }
        for (j, a) in op.coefficients.iter().enumerate() {
            if let Some(a) = a {
                if a.len() != atlas.charts.len() || a.iter().any(|c| c.len() != op.coefficient_len(j)) {
                    return Err(Error::Parameter(format!("coefficient a_{j} has the wrong shape")));
                }
            }
        }
        Ok(op)
    }

    pub fn identity(atlas: &ManifoldAtlas, valence: Valence) -> Self {
        let k = valence.ncomp(atlas.dim());
        let a0: Vec<Expr> = (0..k * k).map(|q| if q / k == q % k { Expr::one() } else { Expr::zero() }).collect();
        Self::new(atlas, "identity", valence, valence, vec![Some(vec![a0; atlas.charts.len()])]).expect("shape")
    }

    /// `Δ = −g^{ij}∇_i∇_j` on functions.
    pub fn scalar_laplacian(atlas: &ManifoldAtlas) -> Self {
        let n = atlas.dim();
        let a2 = metric_inverse_exprs(atlas)
            .into_iter()
            .map(|gi| (0..n * n).map(|q| -1.0 * &gi[q / n][q % n]).collect())
            .collect();
        Self::new(atlas, "scalar_laplacian", Valence::SCALAR, Valence::SCALAR, vec![None, None, Some(a2)]).expect("shape")
    }

    /// `∇*∇X = −g^{ij}∇_j∇_i X` on vector fields.
    pub fn bochner(atlas: &ManifoldAtlas) -> Self {
        Self::vector_second_order(atlas, "bochner", |gi, k, a, i, j| if k == a { -1.0 * &gi[i][j] } else { Expr::zero() })
    }

    /// `2Def*Def X = −∇^i∇_i X^k − ∇^k∇_a X^a`, written without commuting derivatives.
    pub fn deformation_laplacian(atlas: &ManifoldAtlas) -> Self {
        Self::vector_second_order(atlas, "deformation_laplacian", |gi, k, a, i, j| {
            let mut e = Expr::zero();
            if k == a {
                e = e - &gi[i][j];
            }
            if j == a {
                e = e - &gi[k][i];
            }
            e
        })
    }

    fn vector_second_order(
        atlas: &ManifoldAtlas,
        name: &str,
        entry: impl Fn(&[Vec<Expr>], usize, usize, usize, usize) -> Expr,
    ) -> Self {
        let n = atlas.dim();
        let a2 = metric_inverse_exprs(atlas)
            .into_iter()
            .map(|gi| {
                let mut out = Vec::with_capacity(n.pow(4));
                for k in 0..n {
                    for a in 0..n {
                        for i in 0..n {
                            for j in 0..n {
                                out.push(entry(&gi, k, a, i, j));
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Self::new(atlas, name, Valence::VECTOR, Valence::VECTOR, vec![None, None, Some(a2)]).expect("shape")
    }

    pub fn negated(&self) -> Self {
        let coefficients = self
            .coefficients
            .iter()
            .map(|a| a.as_ref().map(|charts| charts.iter().map(|c| c.iter().map(|e| -1.0 * e).collect()).collect()))
            .collect();
        Self { name: format!("-{}", self.name), coefficients, ..self.clone() }
    }

    /// Exact `P u` for a closed-form field.
    pub fn apply_symbolic(&self, atlas: &ManifoldAtlas, u: &SymbolicTensor) -> Result<SymbolicTensor> {
        if u.upper != self.source.upper || u.lower != self.source.lower {
            return Err(Error::Parameter("field valence does not match the operator source".into()));
        }
        let kf = self.target.ncomp(self.dim);
        let mut out = vec![vec![Expr::zero(); kf]; atlas.charts.len()];
        let mut derivative = u.clone();
        for (j, a) in self.coefficients.iter().enumerate() {
            if j > 0 {
                derivative = derivative.covariant_derivative(atlas);
            }
            let Some(a) = a else { continue };
            let width = derivative.ncomp();
            for (c, comps) in derivative.charts.iter().enumerate() {
                for f in 0..kf {
                    for q in 0..width {
                        let coef = &a[c][f * width + q];
                        if !coef.is_zero() && !comps[q].is_zero() {
                            out[c][f] = out[c][f].clone() + coef * &comps[q];
                        }
                    }
                }
            }
        }
        SymbolicTensor::new(atlas, self.target.upper, self.target.lower, out)
    }

    /// Coefficient `a_j` evaluated at a point.
    pub fn coefficient_at(&self, j: usize, p: &ChartPoint) -> Option<Vec<f64>> {
        self.coefficients.get(j)?.as_ref().map(|a| a[p.chart].iter().map(|e| e.eval(&p.x)).collect())
    }
}

/// `σ_μ(P)(η)` as a row-major `k_F × k_E` matrix: `a_0` for `μ = 0`,
/// `a_1(η)` (the factor `i` dropped) for `μ = 1`, `−a_2(η, η)` for `μ = 2`,
/// so that `∇*∇` has symbol `|η|²·id`.
pub fn principal_symbol(op: &DiffOperator, p: &ChartPoint, eta: &[f64]) -> Vec<f64> {
    let mu = op.order();
    let n = op.dim;
    let kf = op.target.ncomp(n);
    let ke = op.source.ncomp(n);
    let a = op.coefficient_at(mu, p).unwrap_or_else(|| vec![0.0; kf * ke]);
    let width = n.pow(mu as u32);
    let mut out = vec![0.0; kf * ke];
    for f in 0..kf {
        for e in 0..ke {
            let mut s = 0.0;
            for q in 0..width {
                let mut w = 1.0;
                let mut rest = q;
                for _ in 0..mu {
                    w *= eta[rest % n];
                    rest /= n;
                }
                s += a[(f * ke + e) * width + q] * w;
            }
            out[f * ke + e] = if mu == 2 { -s } else { s };
        }
    }
    out
}

/// Components of an orthonormal-frame change for valence `v`, `T` and `T⁻¹` as
/// `k × k` matrices, from a `g`-orthonormal frame `E` (columns).
fn frame_change(n: usize, v: Valence, frame: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let e_inv = frame.clone().try_inverse().expect("frame is invertible");
    let to_vec = |m: &DMatrix<f64>| (0..n * n).map(|q| m[(q / n, q % n)]).collect::<Vec<f64>>();
    let (up, low) = (to_vec(&e_inv), to_vec(&frame.transpose()));
    let (up_back, low_back) = (to_vec(frame), to_vec(&e_inv.transpose()));
    let k = v.ncomp(n);
    let mut t = DMatrix::zeros(k, k);
    let mut t_inv = DMatrix::zeros(k, k);
    for col in 0..k {
        let unit: Vec<f64> = (0..k).map(|q| if q == col { 1.0 } else { 0.0 }).collect();
        let a = transform_components(n, v.upper, v.lower, &up, &low, &unit);
        let b = transform_components(n, v.upper, v.lower, &up_back, &low_back, &unit);
        for row in 0..k {
            t[(row, col)] = a[row];
            t_inv[(row, col)] = b[row];
        }
    }
    (t, t_inv)
}

fn orthonormal_frame(g: &[f64], n: usize) -> DMatrix<f64> {
    // columns of L⁻ᵀ with g = L Lᵀ are g-orthonormal
    let gm = DMatrix::from_row_slice(n, n, g);
    let l = gm.cholesky().expect("metric is positive definite").l();
    l.transpose().try_inverse().expect("triangular factor is invertible")
}

/// Eigenvalues (ascending) of the symmetrized symbol `½(σ̂ + σ̂ᵀ)/|η|²` in a
/// `g`-orthonormal frame. Source and target valence must agree.
pub fn symbol_eigenvalues(op: &DiffOperator, atlas: &ManifoldAtlas, p: &ChartPoint, eta: &[f64]) -> Result<Vec<f64>> {
    if op.source != op.target {
        return Err(Error::Unsupported("symbol spectra need equal source and target bundles".into()));
    }
    let n = op.dim;
    let local = atlas.local(p, false);
    let norm2 = local.conorm(eta).powi(2);
    if !(norm2 > 0.0) {
        return Err(Error::Parameter("covector η must be nonzero".into()));
    }
    let k = op.source.ncomp(n);
    let sigma = DMatrix::from_row_slice(k, k, &principal_symbol(op, p, eta));
    let (t, t_inv) = frame_change(n, op.source, &orthonormal_frame(&local.g, n));
    let hat = &t * sigma * &t_inv;
    let sym = (&hat + hat.transpose()) * (0.5 / norm2);
    let mut values: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    Ok(values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub operator: String,
    /// Best `γ_P` over the samples.
    pub gamma: f64,
    pub samples: usize,
    pub elliptic: bool,
}

/// `min` over the samples of the smallest symmetrized-symbol eigenvalue per `|η|²`.
pub fn ellipticity_constant(
    op: &DiffOperator,
    atlas: &ManifoldAtlas,
    points: &[ChartPoint],
    etas: &[Vec<f64>],
) -> Result<EllipticityReport> {
    if op.order() != 2 {
        return Err(Error::Unsupported(format!("ellipticity needs a second-order operator, {} has order {}", op.name, op.order())));
    }
    let mut gamma = f64::INFINITY;
    let mut samples = 0;
    for p in points {
        for eta in etas {
            gamma = gamma.min(symbol_eigenvalues(op, atlas, p, eta)?[0]);
            samples += 1;
        }
    }
    Ok(EllipticityReport { operator: op.name.clone(), gamma, samples, elliptic: gamma > 0.0 })
}

/// Builtin operator names accepted by [`DiffOperator::by_name`].
pub const OPERATOR_NAMES: [&str; 4] = ["bochner", "deformation_laplacian", "identity", "scalar_laplacian"];

impl DiffOperator {
    pub fn by_name(atlas: &ManifoldAtlas, name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Self::identity(atlas, Valence::VECTOR)),
            "scalar_laplacian" => Ok(Self::scalar_laplacian(atlas)),
            "bochner" => Ok(Self::bochner(atlas)),
            "deformation_laplacian" => Ok(Self::deformation_laplacian(atlas)),
            _ => Err(Error::Parameter(format!("unknown operator '{name}' (expected one of {})", OPERATOR_NAMES.join(", ")))),
        }
    }
}

/// Self-adjoint discretization of a builtin operator: weak forms for the
/// Laplacians and `𝐋`, the assembled stencil for the identity.
pub fn assemble_by_name(atlas: &ManifoldAtlas, name: &str) -> Result<AssembledOperator> {
    match name {
        "scalar_laplacian" => weak_laplacian(atlas, Valence::SCALAR),
        "bochner" => weak_laplacian(atlas, Valence::VECTOR),
        "deformation_laplacian" => deformation_laplacian(atlas),
        _ => assemble_operator(&DiffOperator::by_name(atlas, name)?, atlas),
    }
}

/// Symbol spectra at seeded random `(x, η)`: `x` uniform in the comfort
/// region of a random chart, `η` uniform on the unit euclidean circle scaled by
/// a factor in `[0.5, 2]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymbolSweep {
    pub operator: String,
    pub points: Vec<ChartPoint>,
    pub covectors: Vec<Vec<f64>>,
    /// Ascending eigenvalues of the normalized symmetrized symbol per sample.
    pub eigenvalues: Vec<Vec<f64>>,
    pub gamma: f64,
}

pub fn symbol_sweep(op: &DiffOperator, atlas: &ManifoldAtlas, count: usize, seed: u64) -> Result<SymbolSweep> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = atlas.dim();
    let mut points = Vec::with_capacity(count);
    let mut covectors = Vec::with_capacity(count);
    let mut eigenvalues = Vec::with_capacity(count);
    while points.len() < count {
        let chart = rng.gen_range(0..atlas.charts.len());
        let grid = &atlas.chart(chart).grid;
        let x: Vec<f64> = (0..n).map(|i| rng.gen_range(grid.lower[i]..grid.upper[i])).collect();
        if !atlas.chart(chart).in_comfort_region(&x) {
            continue;
        }
        let scale = rng.gen_range(0.5..2.0);
        let eta: Vec<f64> = if n == 2 {
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            vec![scale * t.cos(), scale * t.sin()]
        } else {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-3);
            v.iter().map(|a| scale * a / norm).collect()
        };
        let p = ChartPoint::new(chart, x);
        eigenvalues.push(symbol_eigenvalues(op, atlas, &p, &eta)?);
        points.push(p);
        covectors.push(eta);
    }
    let gamma = eigenvalues.iter().map(|e: &Vec<f64>| e[0]).fold(f64::INFINITY, f64::min);
    Ok(SymbolSweep { operator: op.name.clone(), points, covectors, eigenvalues, gamma })
}
