//! Sparse matrix plumbing: CSR assembly on top of `sprs`, Cholesky through `faer`.

use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

pub type SparseMatrix = CsMat<f64>;

/// Triplet accumulator; duplicate entries are summed on conversion.
pub struct Triplets {
    inner: TriMat<f64>,
}

impl Triplets {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { inner: TriMat::new((rows, cols)) }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            self.inner.add_triplet(row, col, value);
        }
    }

    /// Appends sparse rows starting at `row_offset`.
    pub fn extend_rows(&mut self, row_offset: usize, rows: &[Vec<(usize, f64)>]) {
        for (r, entries) in rows.iter().enumerate() {
            for &(c, v) in entries {
                self.push(row_offset + r, c, v);
            }
        }
    }

    pub fn build(self) -> SparseMatrix {
        let m: SparseMatrix = self.inner.to_csr();
        // sum duplicates and drop explicit zeros
        let mut out = TriMat::new(m.shape());
        for (v, (r, c)) in m.iter() {
            if *v != 0.0 {
                out.add_triplet(r, c, *v);
            }
        }
        out.to_csr()
    }
}

pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> SparseMatrix {
    let mut t = Triplets::new(rows.len(), cols);
    t.extend_rows(0, rows);
    t.build()
}

pub fn identity(n: usize) -> SparseMatrix {
    CsMat::eye(n)
}

/// Block-diagonal matrix from row-major `b × b` blocks.
pub fn block_diagonal(blocks: &[Vec<f64>], b: usize) -> SparseMatrix {
    let mut t = Triplets::new(blocks.len() * b, blocks.len() * b);
    for (k, block) in blocks.iter().enumerate() {
        for i in 0..b {
            for j in 0..b {
                t.push(k * b + i, k * b + j, block[i * b + j]);
            }
        }
    }
    t.build()
}

pub fn matvec(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.cols(), x.len(), "dimension mismatch");
    let mut y = vec![0.0; a.rows()];
    for (r, row) in a.outer_iterator().enumerate() {
        y[r] = row.iter().map(|(c, v)| v * x[c]).sum();
    }
    y
}

pub fn transpose(a: &SparseMatrix) -> SparseMatrix {
    a.transpose_view().to_csr()
}

pub fn product(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
    a * b
}

/// `α·a + β·b`.
pub fn add(a: &SparseMatrix, alpha: f64, b: &SparseMatrix, beta: f64) -> SparseMatrix {
    &a.map(|v| alpha * v) + &b.map(|v| beta * v)
}

pub fn scaled(a: &SparseMatrix, s: f64) -> SparseMatrix {
    a.map(|v| s * v)
}

pub fn max_abs(a: &SparseMatrix) -> f64 {
    a.data().iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `max|A − Aᵀ| / max|A|`.
pub fn symmetry_defect(a: &SparseMatrix) -> f64 {
    let scale = max_abs(a);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&add(a, 1.0, &transpose(a), -1.0)) / scale
}

/// Principal submatrix on the sorted index set `keep`.
pub fn submatrix(a: &SparseMatrix, keep: &[usize]) -> SparseMatrix {
    let mut position = vec![usize::MAX; a.cols()];
    for (new, &old) in keep.iter().enumerate() {
        position[old] = new;
    }
    let mut t = Triplets::new(keep.len(), keep.len());
    for (new_row, &old_row) in keep.iter().enumerate() {
        if let Some(row) = a.outer_view(old_row) {
            for (c, v) in row.iter() {
                if position[c] != usize::MAX {
                    t.push(new_row, position[c], *v);
                }
            }
        }
    }
    t.build()
}

pub fn to_dense(a: &SparseMatrix) -> Mat<f64> {
    let mut m = Mat::zeros(a.rows(), a.cols());
    for (v, (r, c)) in a.iter() {
        m[(r, c)] += *v;
    }
    m
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Writes `a` in MatrixMarket coordinate format.
pub fn write_matrix_market(path: &Path, a: &SparseMatrix) -> std::io::Result<()> {
    sprs::io::write_matrix_market(path, a)
}

/// Sparse `LLᵀ` factorization of an SPD matrix.
pub struct Cholesky {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    n: usize,
}

impl Cholesky {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let n = a.rows();
        let mut triplets = Vec::with_capacity(a.nnz());
        for (v, (r, c)) in a.iter() {
            if r >= c {
                triplets.push(Triplet::new(r, c, *v));
            }
        }
        let csc = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::LinearAlgebra(format!("sparse matrix creation failed: {e:?}")))?;
        let llt = csc
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("Cholesky factorization failed (matrix not positive definite?): {e:?}")))?;
        Ok(Self { llt, n })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.llt.solve_in_place(rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }

    /// Solves for every column of `b` (`n × k`).
    pub fn solve_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        let mut rhs = b.clone();
        self.llt.solve_in_place(rhs.as_mut());
        rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> SparseMatrix {
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0 + 1e-3);
            t.push(i, (i + 1) % n, -1.0);
            t.push(i, (i + n - 1) % n, -1.0);
        }
        t.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.5);
        t.push(1, 0, 1.0);
        t.push(1, 0, -1.0);
        let m = t.build();
        assert_eq!(m.get(0, 0), Some(&3.5));
        assert_eq!(m.nnz(), 1);
    }

    #[test]
    fn cholesky_solves_periodic_system() {
        let a = laplacian_1d(50);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = matvec(&a, &x);
        let y = Cholesky::new(&a).unwrap().solve(&b);
        for i in 0..50 {
            assert!((x[i] - y[i]).abs() < 1e-9);
        }
        assert!(symmetry_defect(&a) == 0.0);
    }

    #[test]
    fn submatrix_keeps_principal_block() {
        let a = laplacian_1d(6);
        let s = submatrix(&a, &[0, 2, 3]);
        assert_eq!(s.get(1, 2), Some(&-1.0));
        assert_eq!(s.get(0, 1), None);
        let d = to_dense(&s);
        assert!((d[(0, 0)] - 2.001).abs() < 1e-15);
    }

    #[test]
    fn matrix_market_roundtrip() {
        let dir = std::env::temp_dir().join(format!("bgkit-mm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.mtx");
        let a = laplacian_1d(5);
        write_matrix_market(&path, &a).unwrap();
        let back: sprs::TriMat<f64> = sprs::io::read_matrix_market(&path).unwrap();
        assert_eq!(back.to_csr::<usize>(), a);
        std::fs::remove_dir_all(&dir).ok();
    }
}
