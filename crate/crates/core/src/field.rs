//! Sampled tensor fields and their closed-form counterparts.
//!
//! Components of an `(r, s)` field are stored node-major per chart, with the
//! multi-index `(a_1..a_r, b_1..b_s)` flattened row-major (first slot
//! slowest). Covariant derivatives append their new lower slot last, so
//! `(∇T)^{a}_{b k}` is the derivative of `T^a_b` in direction `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::fd::{self, Stencil};
use crate::geometry::{Chart, ChartPoint, LocalGeometry, ManifoldAtlas, NodeRef};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorField {
    pub upper: usize,
    pub lower: usize,
    pub dim: usize,
    /// Per chart, `nodes × ncomp` values.
    pub charts: Vec<Vec<f64>>,
}

impl TensorField {
    pub fn zeros(atlas: &ManifoldAtlas, upper: usize, lower: usize) -> Self {
        let dim = atlas.dim();
        let ncomp = dim.pow((upper + lower) as u32);
        let charts = atlas.charts.iter().map(|c| vec![0.0; c.grid.len() * ncomp]).collect();
        Self { upper, lower, dim, charts }
    }

    /// Samples `f(chart, x)`, which must return `ncomp` components.
    pub fn from_fn(
        atlas: &ManifoldAtlas,
        upper: usize,
        lower: usize,
        f: impl Fn(usize, &[f64]) -> Vec<f64> + Sync + Send,
    ) -> Self {
        let mut field = Self::zeros(atlas, upper, lower);
        let ncomp = field.ncomp();
        for (c, chart) in atlas.charts.iter().enumerate() {
            let rows = par::map_range(chart.grid.len(), |node| f(c, &chart.grid.coords(node)));
            for (node, row) in rows.into_iter().enumerate() {
                assert_eq!(row.len(), ncomp, "component count mismatch");
                field.charts[c][node * ncomp..(node + 1) * ncomp].copy_from_slice(&row);
            }
        }
        field
    }

    pub fn scalar_from_fn(atlas: &ManifoldAtlas, f: impl Fn(usize, &[f64]) -> f64 + Sync + Send) -> Self {
        Self::from_fn(atlas, 0, 0, move |c, x| vec![f(c, x)])
    }

    pub fn rank(&self) -> usize {
        self.upper + self.lower
    }

    pub fn ncomp(&self) -> usize {
        self.dim.pow(self.rank() as u32)
    }

    pub fn at(&self, node: NodeRef) -> &[f64] {
        let k = self.ncomp();
        &self.charts[node.chart][node.node * k..(node.node + 1) * k]
    }

    pub fn at_mut(&mut self, node: NodeRef) -> &mut [f64] {
        let k = self.ncomp();
        &mut self.charts[node.chart][node.node * k..(node.node + 1) * k]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.upper == other.upper && self.lower == other.lower && self.dim == other.dim
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.charts.iter_mut().flatten().for_each(|v| *v *= a);
        out
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        assert!(self.same_shape(other), "valence mismatch");
        let mut out = self.clone();
        for (oc, xc) in out.charts.iter_mut().zip(&other.charts) {
            for (o, x) in oc.iter_mut().zip(xc) {
                *o = a * *o + b * x;
            }
        }
        out
    }

    /// Multiplies every component by a scalar field.
    pub fn multiply(&self, scalar: &TensorField) -> Self {
        assert_eq!(scalar.rank(), 0);
        let mut out = self.clone();
        let k = self.ncomp();
        for (oc, sc) in out.charts.iter_mut().zip(&scalar.charts) {
            for (node, s) in sc.iter().enumerate() {
                oc[node * k..(node + 1) * k].iter_mut().for_each(|v| *v *= s);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.charts.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_abs() <= tol
    }
}

/// Applies `upper` matrices to contravariant slots and `lower` matrices to
/// covariant slots: `out^{a..}_{b..} = U^a_c ⋯ L_b^d ⋯ T^{c..}_{d..}`.
pub fn transform_components(n: usize, r: usize, s: usize, up: &[f64], low: &[f64], t: &[f64]) -> Vec<f64> {
    let rank = r + s;
    let mut cur = t.to_vec();
    for slot in 0..rank {
        let m = if slot < r { up } else { low };
        let stride = n.pow((rank - 1 - slot) as u32);
        let mut next = vec![0.0; cur.len()];
        for idx in 0..cur.len() {
            let a = (idx / stride) % n;
            let base = idx - a * stride;
            next[idx] = (0..n).map(|c| m[a * n + c] * cur[base + c * stride]).sum();
        }
        cur = next;
    }
    cur
}

/// Pointwise `g`-norm with full contraction of every slot.
pub fn pointwise_norm(local: &LocalGeometry, r: usize, s: usize, t: &[f64]) -> f64 {
    let lowered = transform_components(local.n, r, s, &local.g, &local.ginv, t);
    t.iter().zip(&lowered).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
}

/// Pointwise inner product of two fields' components.
pub fn pointwise_inner(local: &LocalGeometry, r: usize, s: usize, t: &[f64], u: &[f64]) -> f64 {
    let lowered = transform_components(local.n, r, s, &local.g, &local.ginv, u);
    t.iter().zip(&lowered).map(|(a, b)| a * b).sum()
}

/// Christoffel correction for one slot structure: adds
/// `+Γ^a_{kc}T^{..c..}` per upper slot and `−Γ^c_{kb}T_{..c..}` per lower slot
/// in direction `k` into `out`.
fn add_connection_terms(n: usize, r: usize, s: usize, gamma: &[f64], k: usize, t: &[f64], out: &mut [f64]) {
    let rank = r + s;
    for slot in 0..rank {
        let stride = n.pow((rank - 1 - slot) as u32);
        for idx in 0..t.len() {
            let a = (idx / stride) % n;
            let base = idx - a * stride;
            let mut v = 0.0;
            for c in 0..n {
                if slot < r {
                    v += gamma[(a * n + k) * n + c] * t[base + c * stride];
                } else {
                    v -= gamma[(c * n + k) * n + a] * t[base + c * stride];
                }
            }
            out[idx] += v;
        }
    }
}

/// `∇T` by fourth-order differences plus Christoffel corrections.
pub fn covariant_derivative(atlas: &ManifoldAtlas, field: &TensorField) -> TensorField {
    let n = field.dim;
    let k_in = field.ncomp();
    let mut out = TensorField { upper: field.upper, lower: field.lower + 1, dim: n, charts: Vec::new() };
    for (c, chart) in atlas.charts.iter().enumerate() {
        let data = &field.charts[c];
        let partials: Vec<Vec<f64>> = (0..n).map(|axis| fd::partial(&chart.grid, data, k_in, axis, Stencil::Central4)).collect();
        let rows = par::map_range(chart.grid.len(), |node| {
            let t = &data[node * k_in..(node + 1) * k_in];
            let mut row = vec![0.0; k_in * n];
            let gamma = if chart.is_flat() { None } else { Some(chart.local(&chart.grid.coords(node), false).gamma) };
            for k in 0..n {
                let mut d: Vec<f64> = partials[k][node * k_in..(node + 1) * k_in].to_vec();
                if let Some(gamma) = &gamma {
                    add_connection_terms(n, field.upper, field.lower, gamma, k, t, &mut d);
                }
                for idx in 0..k_in {
                    row[idx * n + k] = d[idx];
                }
            }
            row
        });
        out.charts.push(rows.concat());
    }
    out
}

/// Symbolic Christoffel symbols `Γ^k_ij` of a chart, stored `[k][i][j]`.
pub fn christoffel_exprs(chart: &Chart) -> Vec<Expr> {
    let n = chart.dim();
    let g: Vec<Vec<Expr>> = (0..n).map(|i| (0..n).map(|j| chart.metric_expr(i, j).clone()).collect()).collect();
    let ginv = expr::inverse(&g);
    let mut out = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut s = Expr::zero();
                for l in 0..n {
                    let t = g[j][l].diff(i) + g[i][l].diff(j) - g[i][j].diff(l);
                    if !t.is_zero() && !ginv[k][l].is_zero() {
                        s = s + &ginv[k][l] * t;
                    }
                }
                out.push(0.5 * s);
            }
        }
    }
    out
}

/// Tensor field in closed form, one component list per chart.
#[derive(Clone, Debug)]
pub struct SymbolicTensor {
    pub upper: usize,
    pub lower: usize,
    pub dim: usize,
    pub charts: Vec<Vec<Expr>>,
}

impl SymbolicTensor {
    pub fn new(atlas: &ManifoldAtlas, upper: usize, lower: usize, charts: Vec<Vec<Expr>>) -> Result<Self> {
        let dim = atlas.dim();
        let ncomp = dim.pow((upper + lower) as u32);
        if charts.len() != atlas.charts.len() || charts.iter().any(|c| c.len() != ncomp) {
            return Err(Error::Parameter("symbolic tensor has the wrong number of components".into()));
        }
        Ok(Self { upper, lower, dim, charts })
    }

    /// Same expressions in every chart (single-chart atlases, mostly).
    pub fn uniform(atlas: &ManifoldAtlas, upper: usize, lower: usize, comps: Vec<Expr>) -> Result<Self> {
        Self::new(atlas, upper, lower, vec![comps; atlas.charts.len()])
    }

    pub fn metric(atlas: &ManifoldAtlas) -> Self {
        let charts = atlas.charts.iter().map(|c| c.metric_exprs().to_vec()).collect();
        Self { upper: 0, lower: 2, dim: atlas.dim(), charts }
    }

    pub fn ncomp(&self) -> usize {
        self.dim.pow((self.upper + self.lower) as u32)
    }

    /// Exact `∇T` with symbolic derivatives and Christoffel symbols.
    pub fn covariant_derivative(&self, atlas: &ManifoldAtlas) -> Self {
        let n = self.dim;
        let rank = self.upper + self.lower;
        let mut charts = Vec::with_capacity(self.charts.len());
        for (c, comps) in self.charts.iter().enumerate() {
            let gamma = christoffel_exprs(atlas.chart(c));
            let mut out = Vec::with_capacity(comps.len() * n);
            for idx in 0..comps.len() {
                for k in 0..n {
                    let mut v = comps[idx].diff(k);
                    for slot in 0..rank {
                        let stride = n.pow((rank - 1 - slot) as u32);
                        let a = (idx / stride) % n;
                        let base = idx - a * stride;
                        for cc in 0..n {
                            let t = &comps[base + cc * stride];
                            if t.is_zero() {
                                continue;
                            }
                            if slot < self.upper {
                                let g = &gamma[(a * n + k) * n + cc];
                                if !g.is_zero() {
                                    v = v + g * t;
                                }
                            } else {
                                let g = &gamma[(cc * n + k) * n + a];
                                if !g.is_zero() {
                                    v = v - g * t;
                                }
                            }
                        }
                    }
                    out.push(v);
                }
            }
            charts.push(out);
        }
        Self { upper: self.upper, lower: self.lower + 1, dim: n, charts }
    }

    pub fn eval(&self, p: &ChartPoint) -> Vec<f64> {
        self.charts[p.chart].iter().map(|e| e.eval(&p.x)).collect()
    }

    pub fn sample(&self, atlas: &ManifoldAtlas) -> TensorField {
        TensorField::from_fn(atlas, self.upper, self.lower, |c, x| self.charts[c].iter().map(|e| e.eval(x)).collect())
    }
}

/// Largest component mismatch of `field` between overlapping charts: values
/// in chart `a` are compared with the cubic interpolant of chart `b`,
/// transformed by the transition Jacobian. Only nodes whose image lies in the
/// comfort region of `b` are checked.
pub fn overlap_consistency(atlas: &ManifoldAtlas, field: &TensorField) -> f64 {
    let n = field.dim;
    let k = field.ncomp();
    let mut worst = 0.0f64;
    for t in &atlas.transitions {
        let src = atlas.chart(t.from);
        let dst = atlas.chart(t.to);
        for node in 0..src.grid.len() {
            let x = src.grid.coords(node);
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if !(0.64..=1.56).contains(&r2) {
                continue;
            }
            let y = t.apply(&x);
            let Some(stencil) = dst.grid.cubic_stencil(&y) else { continue };
            let mut interp = vec![0.0; k];
            for (m, w) in stencil {
                for c in 0..k {
                    interp[c] += w * field.charts[t.to][m * k + c];
                }
            }
            let jac = t.jacobian(&x);
            let jinv = nalgebra::DMatrix::from_row_slice(n, n, &jac).try_inverse().unwrap();
            let low: Vec<f64> = (0..n * n).map(|idx| jinv[(idx % n, idx / n)]).collect();
            let mapped = transform_components(n, field.upper, field.lower, &jac, &low, &field.charts[t.from][node * k..(node + 1) * k]);
            let scale = mapped.iter().chain(&interp).fold(1.0f64, |m, v| m.max(v.abs()));
            for c in 0..k {
                worst = worst.max((mapped[c] - interp[c]).abs() / scale);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn constant_vector_field_is_parallel_on_flat_torus() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let x = TensorField::from_fn(&atlas, 1, 0, |_, _| vec![0.3, -1.2]);
        let dx = covariant_derivative(&atlas, &x);
        assert_eq!((dx.upper, dx.lower), (1, 1));
        assert!(dx.max_abs() < 1e-12);
    }

    #[test]
    fn metric_is_parallel_symbolically() {
        for spec in AtlasSpec::builtin_families(12) {
            let atlas = spec.build().unwrap();
            let dg = SymbolicTensor::metric(&atlas).covariant_derivative(&atlas).sample(&atlas);
            assert!(dg.max_abs() < 1e-10, "{:?}: {}", spec.family, dg.max_abs());
        }
    }

    #[test]
    fn numeric_covariant_derivative_of_killing_field_on_warped_torus() {
        // X = ∂_y, f = 2 + cos x: (∇X)^y_x = f'/f, (∇X)^x_y = -f f', other entries 0
        let mut errors = Vec::new();
        for res in [32, 64] {
            let atlas = AtlasSpec::warped_torus(2.0, 1.0, res).build().unwrap();
            let x = TensorField::from_fn(&atlas, 1, 0, |_, _| vec![0.0, 1.0]);
            let dx = covariant_derivative(&atlas, &x);
            let mut err = 0.0f64;
            for node in 0..atlas.chart(0).grid.len() {
                let p = atlas.chart(0).grid.coords(node);
                let f = 2.0 + p[0].cos();
                let fp = -p[0].sin();
                let expected = [0.0, -f * fp, fp / f, 0.0];
                for c in 0..4 {
                    err = err.max((dx.charts[0][node * 4 + c] - expected[c]).abs());
                }
            }
            errors.push(err);
        }
        // X has constant components, so only the exact connection terms remain
        assert!(errors.iter().all(|&e| e < 1e-13));
    }

    #[test]
    fn numeric_derivative_converges_at_fourth_order() {
        let mut errors = Vec::new();
        for res in [16, 32] {
            let atlas = AtlasSpec::warped_torus(2.0, 1.0, res).build().unwrap();
            let sym = SymbolicTensor::uniform(&atlas, 1, 0, vec![Expr::var(1).sin(), Expr::var(0).cos() * Expr::var(1).cos()]).unwrap();
            let exact = sym.covariant_derivative(&atlas).sample(&atlas);
            let numeric = covariant_derivative(&atlas, &sym.sample(&atlas));
            errors.push(numeric.combine(1.0, &exact, -1.0).max_abs());
        }
        let order = (errors[0] / errors[1]).log2();
        assert!(order > 3.7, "order {order}");
    }

    #[test]
    fn sphere_vector_field_is_consistent_across_charts() {
        // rotation about the polar axis is (-y, x) in both charts, since the
        // inversion between them commutes with rotations
        let atlas = AtlasSpec::sphere(33).build().unwrap();
        let rot = TensorField::from_fn(&atlas, 1, 0, |_, x| vec![-x[1], x[0]]);
        assert!(overlap_consistency(&atlas, &rot) < 1e-10);
    }

    #[test]
    fn components_transform_back() {
        let j = [2.0, 1.0, 0.5, 3.0];
        let det = 2.0 * 3.0 - 0.5;
        let jinv = [3.0 / det, -1.0 / det, -0.5 / det, 2.0 / det];
        let t = [1.0, 2.0, 3.0, 4.0];
        let jinv_t = [jinv[0], jinv[2], jinv[1], jinv[3]];
        let j_t = [j[0], j[2], j[1], j[3]];
        let forward = transform_components(2, 1, 1, &j, &jinv_t, &t);
        let back = transform_components(2, 1, 1, &jinv, &j_t, &forward);
        for c in 0..4 {
            assert!((back[c] - t[c]).abs() < 1e-14);
        }
    }
}
