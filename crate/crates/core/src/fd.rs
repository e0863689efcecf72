//! Fourth-order finite-difference first derivatives on chart grids.

use crate::grid::Grid;

/// First-derivative stencil family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// Five-point central difference (one-sided closures on bounded axes).
    Central4,
    /// `Central4` plus the symmetric sixth difference `-δ⁶/(64h)`.
    ///
    /// The extra term is `O(h⁵)` on smooth data but lifts the odd-even
    /// (Nyquist) null modes of the central stencil, so first-order operators
    /// built from it have no grid-scale kernel. Periodic axes only.
    Stabilized4,
}

const CENTRAL: [(isize, f64); 4] = [(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)];
const SIXTH_DIFFERENCE: [f64; 7] = [1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0];
/// Weight of the sixth-difference term.
pub const STABILIZATION: f64 = 1.0 / 64.0;

/// Left-boundary closures, rows for nodes 0 and 1 (offsets relative to the node).
const LEFT0: [(isize, f64); 5] = [
    (0, -25.0 / 12.0),
    (1, 48.0 / 12.0),
    (2, -36.0 / 12.0),
    (3, 16.0 / 12.0),
    (4, -3.0 / 12.0),
];
const LEFT1: [(isize, f64); 5] = [
    (-1, -3.0 / 12.0),
    (0, -10.0 / 12.0),
    (1, 18.0 / 12.0),
    (2, -6.0 / 12.0),
    (3, 1.0 / 12.0),
];

/// Weights `(offset, w)` along one axis at position `i` of `s` nodes; the
/// derivative is `Σ w u[i + offset] / h`.
pub fn axis_weights(stencil: Stencil, periodic: bool, i: usize, s: usize) -> Vec<(isize, f64)> {
    match (stencil, periodic) {
        (Stencil::Central4, true) => CENTRAL.to_vec(),
        (Stencil::Stabilized4, true) => {
            let mut w: Vec<(isize, f64)> = SIXTH_DIFFERENCE
                .iter()
                .enumerate()
                .map(|(k, c)| (k as isize - 3, -STABILIZATION * c))
                .collect();
            for (o, c) in CENTRAL {
                w[(o + 3) as usize].1 += c;
            }
            w
        }
        (_, false) => {
            if i == 0 {
                LEFT0.to_vec()
            } else if i == 1 {
                LEFT1.to_vec()
            } else if i + 1 == s {
                LEFT0.iter().map(|&(o, c)| (-o, -c)).collect()
            } else if i + 2 == s {
                LEFT1.iter().map(|&(o, c)| (-o, -c)).collect()
            } else {
                CENTRAL.to_vec()
            }
        }
    }
}

/// Row of the derivative operator along `axis` at `node`: `(column node, weight)`.
pub fn derivative_row(grid: &Grid, axis: usize, node: usize, stencil: Stencil) -> Vec<(usize, f64)> {
    let i = grid.multi_index(node)[axis];
    let h = grid.spacing[axis];
    axis_weights(stencil, grid.periodic[axis], i, grid.shape[axis])
        .into_iter()
        .filter(|&(_, w)| w != 0.0)
        .map(|(o, w)| (grid.shifted(node, axis, o).expect("stencil inside grid"), w / h))
        .collect()
}

/// Partial derivative along `axis` of node-major data with `ncomp` components.
pub fn partial(grid: &Grid, data: &[f64], ncomp: usize, axis: usize, stencil: Stencil) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for node in 0..grid.len() {
        for (col, w) in derivative_row(grid, axis, node, stencil) {
            for c in 0..ncomp {
                out[node * ncomp + c] += w * data[col * ncomp + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn fourth_order_on_periodic_sine() {
        let mut errors = Vec::new();
        for n in [32usize, 64] {
            let g = Grid::new(vec![0.0], vec![2.0 * PI], vec![n], vec![true]).unwrap();
            let u: Vec<f64> = (0..n).map(|i| g.coords(i)[0].sin()).collect();
            for stencil in [Stencil::Central4, Stencil::Stabilized4] {
                let du = partial(&g, &u, 1, 0, stencil);
                let err = (0..n).map(|i| (du[i] - g.coords(i)[0].cos()).abs()).fold(0.0, f64::max);
                if stencil == Stencil::Central4 {
                    errors.push(err);
                }
            }
        }
        let order = (errors[0] / errors[1]).log2();
        assert!(order > 3.9, "order {order}");
    }

    #[test]
    fn stabilized_stencil_has_no_nyquist_kernel() {
        let n = 16;
        let g = Grid::new(vec![0.0], vec![1.0], vec![n], vec![true]).unwrap();
        let u: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let central = partial(&g, &u, 1, 0, Stencil::Central4);
        let stable = partial(&g, &u, 1, 0, Stencil::Stabilized4);
        assert!(central.iter().all(|v| v.abs() < 1e-12));
        assert!(stable.iter().all(|v| v.abs() > 0.5 / g.spacing[0]));
    }

    #[test]
    fn one_sided_closures_are_exact_on_quartics() {
        let g = Grid::new(vec![0.0], vec![1.0], vec![9], vec![false]).unwrap();
        let u: Vec<f64> = (0..9).map(|i| g.coords(i)[0].powi(4) - g.coords(i)[0]).collect();
        let du = partial(&g, &u, 1, 0, Stencil::Central4);
        for i in 0..9 {
            let x = g.coords(i)[0];
            assert!((du[i] - (4.0 * x.powi(3) - 1.0)).abs() < 1e-10);
        }
    }
}
