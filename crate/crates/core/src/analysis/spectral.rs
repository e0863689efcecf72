//! Smallest eigenpairs of symmetric pencils `K x = λ M x`.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::AssembledOperator;
use crate::sparse::{self, Cholesky, SparseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Pencils below this size use a dense solver.
    pub dense_limit: usize,
    /// Residual bound `‖Kx − λMx‖_{M⁻¹} ≤ tol·max(1, |λ|)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Extra subspace columns beyond the requested count.
    pub guard: usize,
    /// Shift `τ = shift·λ_max` of the inverted pencil.
    pub shift: f64,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { dense_limit: 4000, tolerance: 1e-8, max_iterations: 400, guard: 8, shift: 1e-6, seed: 0 }
    }
}

/// Kernel count under the rule `λ < rel·λ_max` with a gap `λ_{d+1}/λ_d > gap`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelVerdict {
    pub dimension: usize,
    pub threshold: f64,
    pub gap_ratio: f64,
    pub determinate: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub operator: String,
    pub size: usize,
    pub method: String,
    pub iterations: usize,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Largest eigenvalue (exact for dense solves, power-iteration estimate otherwise).
    pub lambda_max: f64,
    /// Largest `|x_iᵀ M x_j − δ_ij|`.
    pub orthonormality_defect: f64,
    /// `M`-orthonormal eigenvectors.
    #[serde(skip)]
    pub vectors: Vec<Vec<f64>>,
}

impl SpectralReport {
    pub fn kernel(&self, relative: f64, gap: f64) -> KernelVerdict {
        let threshold = relative * self.lambda_max;
        let dimension = self.eigenvalues.iter().take_while(|&&l| l < threshold).count();
        if dimension == self.eigenvalues.len() {
            return KernelVerdict { dimension, threshold, gap_ratio: f64::NAN, determinate: false };
        }
        let next = self.eigenvalues[dimension];
        let gap_ratio = if dimension == 0 {
            f64::INFINITY
        } else {
            next / self.eigenvalues[dimension - 1].abs().max(f64::MIN_POSITIVE)
        };
        KernelVerdict { dimension, threshold, gap_ratio, determinate: gap_ratio > gap }
    }

    /// The default kernel rule: `λ < 1e−8·λ_max` and gap `> 10³`.
    pub fn default_kernel(&self) -> KernelVerdict {
        self.kernel(1e-8, 1e3)
    }
}

/// Smallest `count` eigenpairs of an assembled `M`-self-adjoint operator.
pub fn operator_spectrum(op: &AssembledOperator, count: usize, options: SpectralOptions) -> Result<SpectralReport> {
    let mut report = lowest_spectrum(&op.stiffness, &op.mass, count, options)?;
    report.operator = op.name.clone();
    Ok(report)
}

/// Smallest `count` eigenpairs of `K x = λ M x` with `K` symmetric, `M` SPD.
pub fn lowest_spectrum(k: &SparseMatrix, m: &SparseMatrix, count: usize, options: SpectralOptions) -> Result<SpectralReport> {
    let n = k.rows();
    if k.cols() != n || m.rows() != n || m.cols() != n {
        return Err(Error::Parameter("pencil matrices must be square and of equal size".into()));
    }
    let defect = sparse::symmetry_defect(k);
    if defect > 1e-10 {
        return Err(Error::NotSymmetric { defect, tolerance: 1e-10 });
    }
    let count = count.min(n);
    let mut report = if n < options.dense_limit { dense(k, m, count)? } else { shift_invert(k, m, count, options)? };
    let mchol = Cholesky::new(m)?;
    report.residuals = report
        .vectors
        .iter()
        .zip(&report.eigenvalues)
        .map(|(x, &l)| {
            let kx = sparse::matvec(k, x);
            let mx = sparse::matvec(m, x);
            let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, b)| a - l * b).collect();
            sparse::dot(&r, &mchol.solve(&r)).max(0.0).sqrt()
        })
        .collect();
    let mv: Vec<Vec<f64>> = report.vectors.iter().map(|x| sparse::matvec(m, x)).collect();
    let mut od = 0.0f64;
    for i in 0..report.vectors.len() {
        for j in 0..report.vectors.len() {
            let target = if i == j { 1.0 } else { 0.0 };
            od = od.max((sparse::dot(&report.vectors[i], &mv[j]) - target).abs());
        }
    }
    report.orthonormality_defect = od;
    report.size = n;
    Ok(report)
}

fn dense(k: &SparseMatrix, m: &SparseMatrix, count: usize) -> Result<SpectralReport> {
    let n = k.rows();
    let md = sparse::to_dense(m);
    let llt = md.llt(Side::Lower).map_err(|e| Error::LinearAlgebra(format!("mass matrix is not SPD: {e:?}")))?;
    let l = llt.L().to_owned();
    // C = L⁻¹ K L⁻ᵀ
    let mut c = sparse::to_dense(k);
    solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), Par::Seq);
    let mut ct = c.transpose().to_owned();
    solve_lower_triangular_in_place(l.as_ref(), ct.as_mut(), Par::Seq);
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (ct[(i, j)] + ct[(j, i)]));
    let evd = c.self_adjoint_eigen(Side::Lower).map_err(|e| Error::LinearAlgebra(format!("eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let mut y = evd.U().get(.., 0..count).to_owned();
    solve_upper_triangular_in_place(l.transpose(), y.as_mut(), Par::Seq);
    Ok(SpectralReport {
        operator: String::new(),
        size: n,
        method: "dense".into(),
        iterations: 0,
        eigenvalues: (0..count).map(|i| s[i]).collect(),
        residuals: Vec::new(),
        lambda_max: s[n - 1],
        orthonormality_defect: 0.0,
        vectors: (0..count).map(|j| (0..n).map(|i| y[(i, j)]).collect()).collect(),
    })
}

pub(crate) fn m_orthonormalize(m: &SparseMatrix, cols: &mut Vec<Vec<f64>>, rng: &mut ChaCha8Rng) {
    let n = m.rows();
    for j in 0..cols.len() {
        for _pass in 0..2 {
            let mx = sparse::matvec(m, &cols[j]);
            for i in 0..j {
                let p = sparse::dot(&cols[i], &mx);
                let (head, tail) = cols.split_at_mut(j);
                for (t, h) in tail[0].iter_mut().zip(&head[i]) {
                    *t -= p * h;
                }
            }
        }
        let mut norm = sparse::dot(&cols[j], &sparse::matvec(m, &cols[j])).sqrt();
        if !(norm > 1e-300) {
            cols[j] = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            norm = sparse::dot(&cols[j], &sparse::matvec(m, &cols[j])).sqrt();
        }
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
}

fn shift_invert(k: &SparseMatrix, m: &SparseMatrix, count: usize, options: SpectralOptions) -> Result<SpectralReport> {
    let n = k.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let lambda_max = power_estimate(k, m, 60, options.seed)?;
    let tau = (options.shift * lambda_max).max(1e-14);
    let factor = Cholesky::new(&sparse::add(k, 1.0, m, tau))?;
    let mchol = Cholesky::new(m)?;
    let b = (count + options.guard).min(n);
    let mut x: Vec<Vec<f64>> = (0..b).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    m_orthonormalize(m, &mut x, &mut rng);
    let mut values = vec![0.0; b];
    let mut iterations = 0;
    for it in 1..=options.max_iterations {
        iterations = it;
        let mut rhs = Mat::zeros(n, b);
        for (j, col) in x.iter().enumerate() {
            let mx = sparse::matvec(m, col);
            for i in 0..n {
                rhs[(i, j)] = mx[i];
            }
        }
        let y = factor.solve_mat(&rhs);
        let mut cols: Vec<Vec<f64>> = (0..b).map(|j| (0..n).map(|i| y[(i, j)]).collect()).collect();
        m_orthonormalize(m, &mut cols, &mut rng);
        // Rayleigh-Ritz with M-orthonormal basis
        let kc: Vec<Vec<f64>> = cols.iter().map(|c| sparse::matvec(k, c)).collect();
        let mut kr = DMatrix::zeros(b, b);
        for i in 0..b {
            for j in 0..b {
                kr[(i, j)] = sparse::dot(&cols[i], &kc[j]);
            }
        }
        let kr = (&kr + kr.transpose()) * 0.5;
        let eig = SymmetricEigen::new(kr);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
        x = order
            .iter()
            .map(|&q| {
                let mut v = vec![0.0; n];
                for (j, c) in cols.iter().enumerate() {
                    let w = eig.eigenvectors[(j, q)];
                    for i in 0..n {
                        v[i] += w * c[i];
                    }
                }
                v
            })
            .collect();
        values = order.iter().map(|&q| eig.eigenvalues[q]).collect();
        let converged = (0..count).all(|i| {
            let kx = sparse::matvec(k, &x[i]);
            let mx = sparse::matvec(m, &x[i]);
            let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, c)| a - values[i] * c).collect();
            sparse::dot(&r, &mchol.solve(&r)).max(0.0).sqrt() <= 0.1 * options.tolerance * values[i].abs().max(1.0)
        });
        if converged {
            break;
        }
    }
    x.truncate(count);
    values.truncate(count);
    Ok(SpectralReport {
        operator: String::new(),
        size: n,
        method: "shift_invert".into(),
        iterations,
        eigenvalues: values,
        residuals: Vec::new(),
        lambda_max: lambda_max.max(0.0),
        orthonormality_defect: 0.0,
        vectors: x,
    })
}

/// Rayleigh quotient after `iterations` steps of `x ← M⁻¹Kx`.
fn power_estimate(k: &SparseMatrix, m: &SparseMatrix, iterations: usize, seed: u64) -> Result<f64> {
    let mchol = Cholesky::new(m)?;
    let n = k.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let kx = sparse::matvec(k, &x);
        lambda = sparse::dot(&x, &kx) / sparse::dot(&x, &sparse::matvec(m, &x));
        let y = mchol.solve(&kx);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x = y.into_iter().map(|v| v / norm).collect();
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use crate::operators::{deformation_laplacian, weak_laplacian, Valence};
    use std::f64::consts::PI;

    #[test]
    fn identity_pencil() {
        let m = sparse::block_diagonal(&(0..30).map(|i| vec![1.0 + i as f64]).collect::<Vec<_>>(), 1);
        let r = lowest_spectrum(&m, &m, 5, SpectralOptions::default()).unwrap();
        assert!(r.eigenvalues.iter().all(|l| (l - 1.0).abs() < 1e-12));
        assert!(r.orthonormality_defect < 1e-10);
    }

    #[test]
    fn nonsymmetric_is_rejected() {
        let mut t = sparse::Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 1, 0.5);
        t.push(1, 1, 1.0);
        let a = t.build();
        let m = sparse::identity(2);
        assert!(matches!(lowest_spectrum(&a, &m, 1, SpectralOptions::default()), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn scalar_laplacian_fourier_spectrum() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 24).build().unwrap();
        let op = weak_laplacian(&atlas, Valence::SCALAR).unwrap();
        let expected = [0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
        for opts in [SpectralOptions::default(), SpectralOptions { dense_limit: 0, ..Default::default() }] {
            let r = operator_spectrum(&op, 9, opts).unwrap();
            for (l, e) in r.eigenvalues.iter().zip(expected) {
                assert!((l - e).abs() < 1e-3, "{} {l} vs {e}", r.method);
            }
            assert!(r.residuals.iter().zip(&r.eigenvalues).all(|(res, l)| *res <= 1e-8 * l.abs().max(1.0)), "{:?}", r.residuals);
            assert!(r.orthonormality_defect < 1e-10);
            let k = r.default_kernel();
            assert_eq!(k.dimension, 1);
            assert!(k.determinate);
        }
    }

    #[test]
    fn deformation_kernel_on_flat_torus() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let op = deformation_laplacian(&atlas).unwrap();
        let r = operator_spectrum(&op, 6, SpectralOptions::default()).unwrap();
        let k = r.default_kernel();
        assert_eq!(k.dimension, 2, "{:?}", r.eigenvalues);
        assert!(k.gap_ratio > 1e3);
    }
}
