//! Chart-atlas manifolds with analytic metrics.
//!
//! Every builtin family is described by closed-form metric components on one
//! or two chart boxes. Metric derivatives come from symbolic differentiation
//! of the expression trees, so Christoffel symbols are exact up to rounding.

mod checks;
mod curvature;
mod distance;
mod family;
mod geodesic;

pub use checks::{geometry_check, GeometryCheck, SphereChecks};
pub use curvature::{curvature_report, metric_compatibility_defect, riemann_lowered_at, sectional_curvature_at, CurvatureReport};
pub use distance::{distance, distance_field, DistanceField, GridGraph};
pub use family::{AtlasSpec, Family};
pub(crate) use geodesic::exp_with_transport;
pub use geodesic::{
    exp_map, log_map, parallel_transport, transport_along_curve, GeodesicOptions, GeodesicPath, GeodesicSample,
    ShootResult,
};

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Tape};
use crate::grid::Grid;

/// A point given in the coordinates of a specific chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub chart: usize,
    pub x: Vec<f64>,
}

impl ChartPoint {
    pub fn new(chart: usize, x: Vec<f64>) -> Self {
        Self { chart, x }
    }
}

/// Integration weight attached to a chart so that overlapping charts do not
/// double count: the weights of all charts sum to one at every point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChartWeight {
    One,
    /// `1` for `|x| ≤ 1/2`, `0` for `|x| ≥ 2`, with `w(x) + w(x/|x|²) = 1`.
    StereographicHalf,
}

impl ChartWeight {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ChartWeight::One => 1.0,
            ChartWeight::StereographicHalf => {
                let rho2: f64 = x.iter().map(|v| v * v).sum();
                if rho2 <= 0.25 {
                    return 1.0;
                }
                let t = 0.5 * rho2.log2() / 1.0; // log2 |x|
                let s = ((t + 1.0) / 2.0).clamp(0.0, 1.0);
                1.0 - smoothstep5(s)
            }
        }
    }
}

/// Quintic smoothstep `6s⁵ − 15s⁴ + 10s³`, C² at both ends.
pub fn smoothstep5(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

pub struct Chart {
    pub id: usize,
    pub grid: Grid,
    metric: Vec<Expr>,
    /// `g` and `∂g`, then the same plus `∂²g`.
    tape1: Tape,
    tape2: Tape,
    flat: bool,
    /// Coordinate radius beyond which points are moved to another chart.
    comfort_radius: Option<f64>,
    pub weight: ChartWeight,
}

impl std::fmt::Debug for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chart").field("id", &self.id).field("grid", &self.grid).finish()
    }
}

impl Chart {
    pub(crate) fn new(
        id: usize,
        grid: Grid,
        metric: Vec<Vec<Expr>>,
        comfort_radius: Option<f64>,
        weight: ChartWeight,
    ) -> Self {
        let n = grid.dim();
        let flat_metric: Vec<Expr> = metric.into_iter().flatten().collect();
        let mut d1 = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for e in &flat_metric {
                d1.push(e.diff(k));
            }
        }
        let mut d2 = Vec::with_capacity(n * n * n * n);
        for l in 0..n {
            for e in &d1 {
                d2.push(e.diff(l));
            }
        }
        let flat = d1.iter().all(Expr::is_zero);
        let first: Vec<Expr> = flat_metric.iter().chain(&d1).cloned().collect();
        let second: Vec<Expr> = first.iter().chain(&d2).cloned().collect();
        let (tape1, tape2) = (Tape::compile(&first), Tape::compile(&second));
        Self { id, grid, metric: flat_metric, tape1, tape2, flat, comfort_radius, weight }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// True when all metric derivatives vanish identically.
    pub fn is_flat(&self) -> bool {
        self.flat
    }

    pub fn metric_expr(&self, i: usize, j: usize) -> &Expr {
        &self.metric[i * self.dim() + j]
    }

    pub fn metric_exprs(&self) -> &[Expr] {
        &self.metric
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.grid.contains(x)
    }

    pub fn in_comfort_region(&self, x: &[f64]) -> bool {
        match self.comfort_radius {
            None => true,
            Some(r) => x.iter().map(|v| v * v).sum::<f64>() <= r * r,
        }
    }

    pub fn metric_at(&self, x: &[f64]) -> Vec<f64> {
        self.metric.iter().map(|e| e.eval(x)).collect()
    }

    /// Metric, inverse, first derivatives and Christoffel symbols at `x`;
    /// with `second = true` also the derivatives of the Christoffel symbols.
    pub fn local(&self, x: &[f64], second: bool) -> LocalGeometry {
        let mut out = LocalGeometry::default();
        self.local_into(x, second, &mut out);
        out
    }

    /// [`Chart::local`] into the buffers of `out`.
    pub fn local_into(&self, x: &[f64], second: bool, out: &mut LocalGeometry) {
        let n = self.dim();
        let (nn, n3) = (n * n, n * n * n);
        let mut values = std::mem::take(&mut out.scratch);
        if self.flat {
            values.clear();
            values.extend(self.metric.iter().map(|e| e.eval(x)));
        } else if second {
            self.tape2.eval_into(x, &mut values);
        } else {
            self.tape1.eval_into(x, &mut values);
        }
        let g = &values[..nn];
        out.n = n;
        out.g.clear();
        out.g.extend_from_slice(g);
        out.ginv.clear();
        if n == 2 {
            let det = g[0] * g[3] - g[1] * g[2];
            assert!(g[0] > 0.0 && det > 0.0, "metric must be positive definite");
            out.ginv.extend_from_slice(&[g[3] / det, -g[1] / det, -g[2] / det, g[0] / det]);
            out.sqrt_det = det.sqrt();
        } else {
            let gm = DMatrix::from_row_slice(n, n, g);
            let ginv = gm.clone().cholesky().expect("metric must be positive definite").inverse();
            out.ginv.extend((0..nn).map(|k| ginv[(k / n, k % n)]));
            out.sqrt_det = gm.determinant().sqrt();
        }
        out.dg.clear();
        out.gamma.clear();
        let mut dgamma = if second { out.dgamma.take().unwrap_or_default() } else { Vec::new() };
        dgamma.clear();
        if self.flat {
            out.dg.resize(n3, 0.0);
            out.gamma.resize(n3, 0.0);
            dgamma.resize(n * n3, 0.0);
        } else {
            out.dg.extend_from_slice(&values[nn..nn + n3]);
            christoffel_into(n, &out.ginv, &out.dg, &mut out.gamma);
            if second {
                christoffel_derivative_into(n, &out.ginv, &out.dg, &out.gamma, &values[nn + n3..], &mut dgamma);
            }
        }
        out.dgamma = second.then_some(dgamma);
        out.scratch = values;
    }
}

/// `Γ^k_ij = ½ g^{kl} (∂_i g_jl + ∂_j g_il − ∂_l g_ij)`, stored `[k][i][j]`.
/// `dg` is stored `[k][i][j] = ∂_k g_ij`.
fn christoffel_into(n: usize, ginv: &[f64], dg: &[f64], gamma: &mut Vec<f64>) {
    let d = |k: usize, i: usize, j: usize| dg[(k * n + i) * n + j];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                gamma.push((0..n).map(|l| ginv[k * n + l] * 0.5 * (d(i, j, l) + d(j, i, l) - d(l, i, j))).sum());
            }
        }
    }
}

/// `∂_m Γ^k_ij = g^{kl} (∂_m L_lij − ∂_m g_la Γ^a_ij)` with `L_lij = g_la Γ^a_ij`,
/// stored `[m][k][i][j]`; `d2g` stored `[m][k][i][j] = ∂_m ∂_k g_ij`.
fn christoffel_derivative_into(n: usize, ginv: &[f64], dg: &[f64], gamma: &[f64], d2g: &[f64], out: &mut Vec<f64>) {
    let n3 = n * n * n;
    for m in 0..n {
        let dd = &d2g[m * n3..(m + 1) * n3];
        let dgm = &dg[m * n * n..(m + 1) * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        let mut t = 0.5 * (dd[(i * n + j) * n + l] + dd[(j * n + i) * n + l] - dd[(l * n + i) * n + j]);
                        for a in 0..n {
                            t -= dgm[l * n + a] * gamma[(a * n + i) * n + j];
                        }
                        s += ginv[k * n + l] * t;
                    }
                    out.push(s);
                }
            }
        }
    }
}

/// Pointwise metric data at one point of a chart.
#[derive(Clone, Debug, Default)]
pub struct LocalGeometry {
    pub n: usize,
    /// `g_ij`, row-major.
    pub g: Vec<f64>,
    pub ginv: Vec<f64>,
    pub sqrt_det: f64,
    /// `∂_k g_ij` at `[k][i][j]`.
    pub dg: Vec<f64>,
    /// `Γ^k_ij` at `[k][i][j]`.
    pub gamma: Vec<f64>,
    /// `∂_m Γ^k_ij` at `[m][k][i][j]`.
    pub dgamma: Option<Vec<f64>>,
    scratch: Vec<f64>,
}

impl LocalGeometry {
    pub fn gamma(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[(k * self.n + i) * self.n + j]
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.g[i * n + j] * u[i] * v[j];
            }
        }
        s
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    /// Norm of a covector, `sqrt(g^{ij} η_i η_j)`.
    pub fn conorm(&self, eta: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.ginv[i * n + j] * eta[i] * eta[j];
            }
        }
        s.max(0.0).sqrt()
    }

    pub fn g_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.g)
    }

    pub fn ginv_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.ginv)
    }
}

/// Coordinate change between two charts, with symbolic Jacobian and Hessian.
pub struct Transition {
    pub from: usize,
    pub to: usize,
    map: Vec<Expr>,
    jacobian: Vec<Expr>,
    hessian: Vec<Expr>,
}

impl Transition {
    pub(crate) fn new(from: usize, to: usize, map: Vec<Expr>) -> Self {
        let n = map.len();
        let jacobian: Vec<Expr> = map.iter().flat_map(|e| (0..n).map(move |b| e.diff(b))).collect();
        let hessian: Vec<Expr> = jacobian.iter().flat_map(|e| (0..n).map(move |c| e.diff(c))).collect();
        Self { from, to, map, jacobian, hessian }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.map.iter().map(|e| e.eval(x)).collect()
    }

    /// `J[a][b] = ∂y_a/∂x_b`, row-major.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        self.jacobian.iter().map(|e| e.eval(x)).collect()
    }

    /// `H[a][b][c] = ∂²y_a/∂x_b∂x_c`.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        self.hessian.iter().map(|e| e.eval(x)).collect()
    }

    pub fn push_forward(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let j = self.jacobian(x);
        (0..n).map(|a| (0..n).map(|b| j[a * n + b] * v[b]).sum()).collect()
    }
}

/// Reference to a grid node: chart and node index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub chart: usize,
    pub node: usize,
}

pub struct ManifoldAtlas {
    pub spec: AtlasSpec,
    pub charts: Vec<Chart>,
    pub transitions: Vec<Transition>,
    injectivity_radius: f64,
    offsets: Vec<usize>,
    graph: OnceLock<GridGraph>,
}

impl std::fmt::Debug for ManifoldAtlas {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManifoldAtlas").field("spec", &self.spec).field("charts", &self.charts).finish()
    }
}

impl ManifoldAtlas {
    pub(crate) fn assemble(spec: AtlasSpec, charts: Vec<Chart>, transitions: Vec<Transition>, injectivity_radius: f64) -> Result<Self> {
        if !(injectivity_radius > 0.0) {
            return Err(Error::Parameter("injectivity radius must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(charts.len() + 1);
        let mut total = 0;
        for c in &charts {
            offsets.push(total);
            total += c.grid.len();
        }
        offsets.push(total);
        let atlas = Self { spec, charts, transitions, injectivity_radius, offsets, graph: OnceLock::new() };
        atlas.check_metrics()?;
        Ok(atlas)
    }

    fn check_metrics(&self) -> Result<()> {
        for chart in &self.charts {
            let n = chart.dim();
            for node in 0..chart.grid.len() {
                let x = chart.grid.coords(node);
                let g = DMatrix::from_row_slice(n, n, &chart.metric_at(&x));
                let asym = (&g - g.transpose()).amax();
                if asym > 1e-14 * g.amax() || g.cholesky().is_none() {
                    return Err(Error::Parameter(format!(
                        "metric of chart {} is not symmetric positive definite at {x:?}",
                        chart.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.charts[0].dim()
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.spec.params
    }

    pub fn injectivity_radius(&self) -> f64 {
        self.injectivity_radius
    }

    pub fn chart(&self, id: usize) -> &Chart {
        &self.charts[id]
    }

    pub fn is_single_periodic_chart(&self) -> bool {
        self.charts.len() == 1 && self.charts[0].grid.is_fully_periodic()
    }

    /// Total number of nodes over all charts.
    pub fn node_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn global_index(&self, node: NodeRef) -> usize {
        self.offsets[node.chart] + node.node
    }

    pub fn node_ref(&self, global: usize) -> NodeRef {
        let chart = self.offsets.partition_point(|&o| o <= global) - 1;
        NodeRef { chart, node: global - self.offsets[chart] }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.charts
            .iter()
            .flat_map(|c| (0..c.grid.len()).map(move |node| NodeRef { chart: c.id, node }))
    }

    pub fn node_point(&self, node: NodeRef) -> ChartPoint {
        ChartPoint::new(node.chart, self.charts[node.chart].grid.coords(node.node))
    }

    pub fn transition(&self, from: usize, to: usize) -> Option<&Transition> {
        self.transitions.iter().find(|t| t.from == from && t.to == to)
    }

    /// Expresses `p` in the coordinates of `chart`, if the charts overlap there.
    pub fn to_chart(&self, p: &ChartPoint, chart: usize) -> Option<ChartPoint> {
        if p.chart == chart {
            return Some(p.clone());
        }
        let t = self.transition(p.chart, chart)?;
        let mut y = t.apply(&p.x);
        if y.iter().any(|v| !v.is_finite()) || !self.charts[chart].contains(&y) {
            return None;
        }
        self.charts[chart].grid.wrap(&mut y);
        Some(ChartPoint::new(chart, y))
    }

    /// Wraps periodic coordinates and, for multi-chart atlases, moves the
    /// point to the chart in whose comfort region it lies.
    pub fn canonical(&self, p: &ChartPoint) -> ChartPoint {
        let mut q = p.clone();
        self.charts[q.chart].grid.wrap(&mut q.x);
        if self.charts[q.chart].in_comfort_region(&q.x) {
            return q;
        }
        for t in self.transitions.iter().filter(|t| t.from == q.chart) {
            if let Some(r) = self.to_chart(&q, t.to) {
                if self.charts[t.to].in_comfort_region(&r.x) {
                    return r;
                }
            }
        }
        q
    }

    pub fn check_point(&self, p: &ChartPoint) -> Result<()> {
        if p.chart >= self.charts.len() || p.x.len() != self.dim() || !self.charts[p.chart].contains(&p.x) {
            return Err(Error::Domain { chart: p.chart, point: p.x.clone() });
        }
        Ok(())
    }

    pub fn local(&self, p: &ChartPoint, second: bool) -> LocalGeometry {
        self.charts[p.chart].local(&p.x, second)
    }

    /// Christoffel symbols `Γ^k_ij` at `x`, stored `[k][i][j]`.
    pub fn christoffel_at(&self, chart: usize, x: &[f64]) -> Result<Vec<f64>> {
        let p = ChartPoint::new(chart, x.to_vec());
        self.check_point(&p)?;
        Ok(self.charts[chart].local(x, false).gamma)
    }

    /// Coordinate difference `to − from` (nearest periodic image) with both
    /// points expressed in `from.chart`.
    pub fn coordinate_difference(&self, from: &ChartPoint, to: &ChartPoint) -> Option<Vec<f64>> {
        let t = self.to_chart(to, from.chart)?;
        Some(self.charts[from.chart].grid.difference(&from.x, &t.x))
    }

    pub fn graph(&self) -> &GridGraph {
        self.graph.get_or_init(|| GridGraph::build(self))
    }

    /// Total integration weight `w_chart(x) √det g · cell volume` at a node.
    pub fn quadrature_weight(&self, node: NodeRef) -> f64 {
        let chart = &self.charts[node.chart];
        let x = chart.grid.coords(node.node);
        let w = chart.weight.eval(&x);
        if w == 0.0 {
            return 0.0;
        }
        let n = chart.dim();
        let g = DMatrix::from_row_slice(n, n, &chart.metric_at(&x));
        w * g.determinant().sqrt() * chart.grid.cell_volume()
    }

    /// Riemannian volume of the manifold by grid quadrature.
    pub fn volume(&self) -> f64 {
        self.nodes().map(|n| self.quadrature_weight(n)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn flat_torus_christoffel_vanishes() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let g = atlas.christoffel_at(0, &[1.0, 2.5]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn warped_torus_christoffel_matches_hand_derivation() {
        // g = dx² + f²dy², f = 2 + cos x:  Γ^x_yy = −f f', Γ^y_xy = Γ^y_yx = f'/f.
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 16).build().unwrap();
        for &x in &[0.0, 0.4, 1.7, 3.0, 5.5] {
            let gamma = atlas.christoffel_at(0, &[x, 0.3]).unwrap();
            let f = 2.0 + f64::cos(x);
            let fp = -f64::sin(x);
            let at = |k: usize, i: usize, j: usize| gamma[(k * 2 + i) * 2 + j];
            assert!((at(0, 1, 1) + f * fp).abs() < 1e-14);
            assert!((at(1, 0, 1) - fp / f).abs() < 1e-14);
            assert!((at(1, 1, 0) - fp / f).abs() < 1e-14);
            for (k, i, j) in [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 1)] {
                assert!(at(k, i, j).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sphere_christoffel_vanishes_at_chart_origin() {
        let atlas = AtlasSpec::sphere(16).build().unwrap();
        for chart in 0..2 {
            let g = atlas.christoffel_at(chart, &[0.0, 0.0]).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-15));
        }
        // point just off the origin: conformal formula Γ^k_ij = δ_ki ∂_j λ + δ_kj ∂_i λ − δ_ij ∂_k λ, λ = ln(2/(1+|x|²))
        let x = [0.3, -0.2];
        let s = 1.0 + 0.09 + 0.04;
        let dl = [-2.0 * x[0] / s, -2.0 * x[1] / s];
        let g = atlas.christoffel_at(0, &x).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                    let expected = d(k, i) * dl[j] + d(k, j) * dl[i] - d(i, j) * dl[k];
                    assert!((g[(k * 2 + i) * 2 + j] - expected).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn christoffel_outside_box_is_domain_error() {
        let atlas = AtlasSpec::sphere(16).build().unwrap();
        assert!(matches!(atlas.christoffel_at(0, &[5.0, 0.0]), Err(Error::Domain { .. })));
    }

    #[test]
    fn christoffel_symmetric_in_lower_indices() {
        for spec in AtlasSpec::builtin_families(12) {
            let atlas = spec.build().unwrap();
            for chart in &atlas.charts {
                for node in (0..chart.grid.len()).step_by(7) {
                    let x = chart.grid.coords(node);
                    let g = chart.local(&x, false).gamma;
                    for k in 0..2 {
                        assert_eq!(g[(k * 2) * 2 + 1], g[(k * 2 + 1) * 2]);
                    }
                }
            }
        }
    }

    #[test]
    fn sphere_transitions_are_mutually_inverse() {
        let atlas = AtlasSpec::sphere(16).build().unwrap();
        let t01 = atlas.transition(0, 1).unwrap();
        let t10 = atlas.transition(1, 0).unwrap();
        for x in [[0.5, 0.5], [1.2, -0.3], [-0.7, 1.9]] {
            let y = t01.apply(&x);
            let z = t10.apply(&y);
            assert!((z[0] - x[0]).abs() < 1e-14 && (z[1] - x[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn chart_weights_sum_to_one_on_overlap() {
        let w = ChartWeight::StereographicHalf;
        for x in [[0.3, 0.1], [0.9, 0.5], [1.5, -1.0], [0.1, 0.05]] {
            let r2 = x[0] * x[0] + x[1] * x[1];
            let y = [x[0] / r2, x[1] / r2];
            assert!((w.eval(&x) + w.eval(&y) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sphere_quadrature_volume() {
        let atlas = AtlasSpec::sphere(64).build().unwrap();
        assert!((atlas.volume() - 4.0 * PI).abs() < 1e-3, "{}", atlas.volume());
    }
}
