use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::check_radius;
use crate::error::{Error, Result};
use crate::field::{transform_components, TensorField};
use crate::geometry::{ChartPoint, ManifoldAtlas};
use crate::grid::Grid;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchOptions {
    /// Nodes per axis of the euclidean patch grid on `[−r, r]ⁿ`.
    pub resolution: usize,
    /// Arclength step of the radial geodesics.
    pub arclength_step: f64,
}

impl PatchOptions {
    /// Patch spacing close to the coarsest chart spacing of the atlas.
    pub fn matching(atlas: &ManifoldAtlas, r: f64) -> Self {
        let h = atlas.charts.iter().map(|c| c.grid.max_spacing()).fold(0.0, f64::max);
        Self { resolution: 2 * (r / h).ceil() as usize + 1, ..Self::default() }
    }
}

impl Default for PatchOptions {
    fn default() -> Self {
        Self { resolution: 33, arclength_step: 1.0 / 128.0 }
    }
}

/// Per-node data of an active patch node (`|y| < r`).
#[derive(Clone, Debug)]
pub struct PatchNode {
    pub point: ChartPoint,
    /// Transported frame as a matrix, column `a` is `e_a` in `point.chart` coordinates.
    pub frame: Vec<f64>,
    /// `F⁻¹`, used on contravariant slots.
    pub frame_inverse: Vec<f64>,
    /// Pullback metric `g̃_ab(y)` in the normal coordinates.
    pub pullback: Vec<f64>,
    /// Cubic interpolation stencil in the chart grid of `point`.
    pub stencil: Vec<(usize, f64)>,
}

/// Geodesic normal-coordinate patch with a synchronous (radially transported) frame.
#[derive(Clone, Debug)]
pub struct NormalPatch {
    pub center: ChartPoint,
    pub radius: f64,
    pub grid: Grid,
    /// `g`-orthonormal basis of the tangent space at the center (columns).
    pub frame: Vec<f64>,
    pub nodes: Vec<Option<PatchNode>>,
    /// Largest `|Fᵀ g F − I|` over active nodes.
    pub frame_defect: f64,
}

impl NormalPatch {
    pub fn active_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }
}

/// Gram-Schmidt on the coordinate basis, returned as columns.
fn orthonormal_frame(g: &[f64], n: usize) -> Vec<f64> {
    let inner = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += g[i * n + j] * a[i] * b[j];
            }
        }
        s
    };
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n);
    for a in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| if i == a { 1.0 } else { 0.0 }).collect();
        for c in &columns {
            let p = inner(&v, c);
            for i in 0..n {
                v[i] -= p * c[i];
            }
        }
        let norm = inner(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        columns.push(v);
    }
    let mut m = vec![0.0; n * n];
    for (a, c) in columns.iter().enumerate() {
        for i in 0..n {
            m[i * n + a] = c[i];
        }
    }
    m
}

fn gram(g: &[f64], f: &[f64], n: usize) -> Vec<f64> {
    let gm = DMatrix::from_row_slice(n, n, g);
    let fm = DMatrix::from_row_slice(n, n, f);
    let p = fm.transpose() * gm * fm;
    (0..n * n).map(|k| p[(k / n, k % n)]).collect()
}

/// Builds the normal-coordinate patch of radius `r` around `center`.
pub fn normal_patch(atlas: &ManifoldAtlas, center: &ChartPoint, r: f64, options: PatchOptions) -> Result<NormalPatch> {
    check_radius(atlas, r)?;
    atlas.check_point(center)?;
    let center = atlas.canonical(center);
    let n = atlas.dim();
    let grid = Grid::new(vec![-r; n], vec![r; n], vec![options.resolution; n], vec![false; n])?;
    let g0 = atlas.local(&center, false).g;
    let frame = orthonormal_frame(&g0, n);
    let columns: Vec<Vec<f64>> = (0..n).map(|a| (0..n).map(|i| frame[i * n + a]).collect()).collect();
    let flat = atlas.is_single_periodic_chart() && atlas.chart(0).is_flat();
    let built = par::map_range(grid.len(), |k| -> Result<Option<PatchNode>> {
        let y = grid.coords(k);
        if y.iter().map(|v| v * v).sum::<f64>() >= r * r {
            return Ok(None);
        }
        let v: Vec<f64> = (0..n).map(|i| (0..n).map(|a| frame[i * n + a] * y[a]).sum()).collect();
        let (point, transported, jac) = if flat {
            let mut x: Vec<f64> = center.x.iter().zip(&v).map(|(a, b)| a + b).collect();
            atlas.chart(0).grid.wrap(&mut x);
            let id = (0..n * n).map(|q| if q / n == q % n { 1.0 } else { 0.0 }).collect();
            (ChartPoint::new(0, x), columns.clone(), id)
        } else {
            crate::geometry::exp_with_transport(atlas, &center, &v, &columns, options.arclength_step)?
        };
        let mut f = vec![0.0; n * n];
        for (a, col) in transported.iter().enumerate() {
            for i in 0..n {
                f[i * n + a] = col[i];
            }
        }
        let frame_inverse = {
            let inv = DMatrix::from_row_slice(n, n, &f)
                .try_inverse()
                .ok_or_else(|| Error::Degenerate("transported frame is singular".into()))?;
            (0..n * n).map(|q| inv[(q / n, q % n)]).collect()
        };
        // ∂x/∂y^a = J e_a
        let je: Vec<f64> = {
            let jm = DMatrix::from_row_slice(n, n, &jac);
            let em = DMatrix::from_row_slice(n, n, &frame);
            let p = jm * em;
            (0..n * n).map(|q| p[(q / n, q % n)]).collect()
        };
        let g = atlas.local(&point, false).g;
        let pullback = gram(&g, &je, n);
        let stencil = atlas
            .chart(point.chart)
            .grid
            .cubic_stencil(&point.x)
            .ok_or_else(|| Error::Coverage { chart: point.chart, point: point.x.clone() })?;
        Ok(Some(PatchNode { point, frame: f, frame_inverse, pullback, stencil }))
    });
    let nodes: Vec<Option<PatchNode>> = built.into_iter().collect::<Result<_>>()?;
    let mut frame_defect = 0.0f64;
    for node in nodes.iter().flatten() {
        let g = atlas.local(&node.point, false).g;
        let p = gram(&g, &node.frame, n);
        for q in 0..n * n {
            let target = if q / n == q % n { 1.0 } else { 0.0 };
            frame_defect = frame_defect.max((p[q] - target).abs());
        }
    }
    Ok(NormalPatch { center, radius: r, grid, frame, nodes, frame_defect })
}

/// Patch components of `field`: cubic interpolation of the chart components
/// at each active node, then expression in the transported frame (`F⁻¹` on
/// upper slots, `Fᵀ` on lower slots). Inactive nodes get zeros.
pub fn resample(field: &TensorField, patch: &NormalPatch) -> Vec<f64> {
    let n = field.dim;
    let k = field.ncomp();
    let mut out = vec![0.0; patch.grid.len() * k];
    for (idx, node) in patch.nodes.iter().enumerate() {
        let Some(node) = node else { continue };
        let data = &field.charts[node.point.chart];
        let mut interp = vec![0.0; k];
        for &(m, w) in &node.stencil {
            for c in 0..k {
                interp[c] += w * data[m * k + c];
            }
        }
        let ft: Vec<f64> = (0..n * n).map(|q| node.frame[(q % n) * n + q / n]).collect();
        let comps = transform_components(n, field.upper, field.lower, &node.frame_inverse, &ft, &interp);
        out[idx * k..(idx + 1) * k].copy_from_slice(&comps);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn flat_patch_is_isometric() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 32).build().unwrap();
        let patch = normal_patch(&atlas, &ChartPoint::new(0, vec![0.1, 6.0]), 1.0, PatchOptions::default()).unwrap();
        for node in patch.nodes.iter().flatten() {
            for q in 0..4 {
                let target = if q == 0 || q == 3 { 1.0 } else { 0.0 };
                assert!((node.pullback[q] - target).abs() < 1e-10);
            }
        }
        assert!(patch.frame_defect < 1e-12);
    }

    #[test]
    fn sphere_patch_determinant_and_frames() {
        let atlas = AtlasSpec::sphere(33).build().unwrap();
        let patch = normal_patch(&atlas, &ChartPoint::new(0, vec![0.4, -0.3]), 0.5, PatchOptions { resolution: 17, arclength_step: 1.0 / 128.0 }).unwrap();
        assert!(patch.frame_defect < 1e-8, "{}", patch.frame_defect);
        for (idx, node) in patch.nodes.iter().enumerate() {
            let Some(node) = node else { continue };
            let y = patch.grid.coords(idx);
            let rho = (y[0] * y[0] + y[1] * y[1]).sqrt();
            let det = node.pullback[0] * node.pullback[3] - node.pullback[1] * node.pullback[2];
            let expected = if rho == 0.0 { 1.0 } else { (rho.sin() / rho).powi(2) };
            assert!((det - expected).abs() < 1e-3, "rho {rho}: {det} vs {expected}");
            if rho == 0.0 {
                for q in 0..4 {
                    let target = if q == 0 || q == 3 { 1.0 } else { 0.0 };
                    assert!((node.pullback[q] - target).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn resample_is_linear_and_zero_on_zero() {
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 32).build().unwrap();
        let patch = normal_patch(&atlas, &ChartPoint::new(0, vec![1.0, 1.0]), 1.0, PatchOptions { resolution: 9, arclength_step: 1.0 / 64.0 }).unwrap();
        let zero = TensorField::zeros(&atlas, 1, 0);
        assert!(resample(&zero, &patch).iter().all(|&v| v == 0.0));
        let u = TensorField::from_fn(&atlas, 1, 0, |_, x| vec![x[0].sin(), (x[1] * 2.0).cos()]);
        let v = TensorField::from_fn(&atlas, 1, 0, |_, x| vec![x[1].cos() * x[0].cos(), 0.3]);
        let lhs = resample(&u.combine(2.0, &v, -0.7), &patch);
        let ru = resample(&u, &patch);
        let rv = resample(&v, &patch);
        for i in 0..lhs.len() {
            assert!((lhs[i] - (2.0 * ru[i] - 0.7 * rv[i])).abs() < 1e-12);
        }
    }
}
