//! Geodesic distance: metric grid graphs, Dijkstra and shooting refinement.
//!
//! The graph joins every node to its 16-neighbourhood (two-dimensional
//! charts) or to its axis and diagonal neighbours (otherwise), with edge
//! lengths measured by the metric at the edge midpoint. Chart overlaps are
//! stitched by edges from each overlap node to the cell corners of its image.
//! Graph distances are upper bounds accurate to a few percent; within a
//! cutoff they are replaced by lengths of shot geodesics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::geodesic::{step_count, Flow, FlowState};
use super::{ChartPoint, ManifoldAtlas, NodeRef};
use crate::error::Result;

/// Adjacency of the metric grid graph in compressed rows over global node indices.
#[derive(Clone, Debug)]
pub struct GridGraph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

fn offsets_for(n: usize) -> Vec<Vec<isize>> {
    let mut out = Vec::new();
    if n == 2 {
        for (a, b) in [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1)] {
            out.push(vec![a, b]);
            out.push(vec![-a, -b]);
        }
        return out;
    }
    for a in 0..n {
        for s in [-1isize, 1] {
            let mut o = vec![0; n];
            o[a] = s;
            out.push(o);
        }
        for b in a + 1..n {
            for (sa, sb) in [(1isize, 1isize), (1, -1), (-1, 1), (-1, -1)] {
                let mut o = vec![0; n];
                o[a] = sa;
                o[b] = sb;
                out.push(o);
            }
        }
    }
    out
}

/// Metric length of the coordinate segment `x → x + d` (midpoint rule).
fn segment_length(atlas: &ManifoldAtlas, chart: usize, x: &[f64], d: &[f64]) -> f64 {
    let c = atlas.chart(chart);
    let mid: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + 0.5 * b).collect();
    let n = c.dim();
    let g = c.metric_at(&mid);
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += g[i * n + j] * d[i] * d[j];
        }
    }
    s.max(0.0).sqrt()
}

impl GridGraph {
    pub fn build(atlas: &ManifoldAtlas) -> Self {
        let n = atlas.dim();
        let stencil = offsets_for(n);
        let total = atlas.node_count();
        let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); total];
        for chart in &atlas.charts {
            for node in 0..chart.grid.len() {
                let from = atlas.global_index(NodeRef { chart: chart.id, node });
                let x = chart.grid.coords(node);
                for o in &stencil {
                    if let Some(m) = chart.grid.offset(node, o) {
                        let d: Vec<f64> = (0..n).map(|a| o[a] as f64 * chart.grid.spacing[a]).collect();
                        let w = segment_length(atlas, chart.id, &x, &d);
                        adjacency[from].push((atlas.global_index(NodeRef { chart: chart.id, node: m }) as u32, w));
                    }
                }
            }
        }
        for t in &atlas.transitions {
            let src = atlas.chart(t.from);
            let dst = atlas.chart(t.to);
            for node in 0..src.grid.len() {
                let x = src.grid.coords(node);
                let r2: f64 = x.iter().map(|v| v * v).sum();
                if !(0.25..=4.0).contains(&r2) {
                    continue;
                }
                let y = t.apply(&x);
                if !dst.contains(&y) {
                    continue;
                }
                let from = atlas.global_index(NodeRef { chart: t.from, node });
                for corner in dst.grid.cell_nodes(&y) {
                    let z = dst.grid.coords(corner);
                    let d: Vec<f64> = (0..n).map(|a| z[a] - y[a]).collect();
                    let w = segment_length(atlas, t.to, &y, &d);
                    let to = atlas.global_index(NodeRef { chart: t.to, node: corner });
                    adjacency[from].push((to as u32, w));
                    adjacency[to].push((from as u32, w));
                }
            }
        }
        let mut offsets = Vec::with_capacity(total + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in adjacency {
            for (t, w) in row {
                targets.push(t);
                weights.push(w);
            }
            offsets.push(targets.len());
        }
        Self { offsets, targets, weights }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn neighbours(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.offsets[node]..self.offsets[node + 1]).map(|k| (self.targets[k] as usize, self.weights[k]))
    }

    /// Single-source shortest paths from weighted seeds; returns distances and parents.
    pub fn dijkstra(&self, seeds: &[(usize, f64)], limit: f64) -> (Vec<f64>, Vec<usize>) {
        let mut dist = vec![f64::INFINITY; self.len()];
        let mut parent = vec![usize::MAX; self.len()];
        let mut heap = BinaryHeap::new();
        for &(s, d) in seeds {
            if d < dist[s] {
                dist[s] = d;
                heap.push(Entry(d, s));
            }
        }
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] || d > limit {
                continue;
            }
            for (v, w) in self.neighbours(u) {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    parent[v] = u;
                    heap.push(Entry(nd, v));
                }
            }
        }
        (dist, parent)
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Graph seeds around an arbitrary point: nearby nodes of every chart that
/// contains it, weighted by straight segment lengths.
fn seeds_for(atlas: &ManifoldAtlas, p: &ChartPoint) -> Vec<(usize, f64)> {
    let n = atlas.dim();
    let mut seeds = Vec::new();
    for chart in &atlas.charts {
        let Some(q) = atlas.to_chart(p, chart.id) else { continue };
        let grid = &chart.grid;
        for corner in grid.cell_nodes(&q.x) {
            for o in std::iter::once(vec![0isize; n]).chain(offsets_for(n)) {
                let Some(m) = grid.offset(corner, &o) else { continue };
                let z = grid.coords(m);
                let d = grid.difference(&q.x, &z);
                let w = segment_length(atlas, chart.id, &q.x, &d);
                seeds.push((atlas.global_index(NodeRef { chart: chart.id, node: m }), w));
            }
        }
    }
    seeds
}

fn max_spacing(atlas: &ManifoldAtlas) -> f64 {
    atlas.charts.iter().map(|c| c.grid.max_spacing()).fold(0.0, f64::max)
}

fn all_flat_periodic(atlas: &ManifoldAtlas) -> bool {
    atlas.charts.len() == 1 && atlas.charts[0].is_flat() && atlas.charts[0].grid.is_fully_periodic()
}

/// Exact distance on a flat torus (nearest periodic image).
fn flat_distance(atlas: &ManifoldAtlas, x: &ChartPoint, y: &ChartPoint) -> f64 {
    let chart = atlas.chart(0);
    let d = chart.grid.difference(&x.x, &y.x);
    segment_length(atlas, 0, &x.x, &d)
}

/// Distances from one source to every node of the atlas.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceField {
    pub source: ChartPoint,
    /// Best distance estimate per global node.
    pub values: Vec<f64>,
    /// Graph (Dijkstra) distance per global node.
    pub graph: Vec<f64>,
    /// Whether the value comes from an accepted shot geodesic (or is exact).
    pub refined: Vec<bool>,
    pub cutoff: f64,
}

struct Shot {
    v: Vec<f64>,
    end: ChartPoint,
    jacobian: DMatrix<f64>,
}

const SHOOT_STEP: f64 = 1.0 / 32.0;

fn shoot(atlas: &ManifoldAtlas, from: &ChartPoint, to: &ChartPoint, guess: Vec<f64>, tol: f64) -> Option<(f64, Shot)> {
    let n = atlas.dim();
    let g0 = atlas.local(from, false);
    let mut v = guess;
    for _ in 0..8 {
        let speed = g0.norm(&v);
        if !speed.is_finite() {
            return None;
        }
        let steps = step_count(atlas, from, &v, 1.0, SHOOT_STEP);
        let mut flow = Flow::new(atlas, FlowState::new(from, &v, &[], true));
        flow.run(1.0, steps, |_, _| {}).ok()?;
        let end = flow.state.point();
        let diff = atlas.coordinate_difference(&end, to)?;
        let residual = atlas.local(&end, false).norm(&diff);
        let jacobian = DMatrix::from_row_slice(n, n, flow.state.jacobian());
        if residual < tol {
            return Some((speed, Shot { v, end, jacobian }));
        }
        let dv = jacobian.clone().lu().solve(&DVector::from_column_slice(&diff))?;
        let step = g0.norm(dv.as_slice());
        let limit = 0.5 * speed.max(0.05);
        let damping = if step > limit { limit / step } else { 1.0 };
        for a in 0..n {
            v[a] += damping * dv[a];
        }
    }
    None
}

/// Distance field from `source`; nodes with graph distance up to about
/// `cutoff` are refined by shooting with continuation along the Dijkstra tree.
pub fn distance_field(atlas: &ManifoldAtlas, source: &ChartPoint, cutoff: f64) -> Result<DistanceField> {
    atlas.check_point(source)?;
    let total = atlas.node_count();
    if all_flat_periodic(atlas) {
        let values: Vec<f64> = (0..total)
            .map(|k| flat_distance(atlas, source, &atlas.node_point(atlas.node_ref(k))))
            .collect();
        return Ok(DistanceField { source: source.clone(), graph: values.clone(), values, refined: vec![true; total], cutoff });
    }
    let h = max_spacing(atlas);
    let graph = atlas.graph();
    let (gdist, parent) = graph.dijkstra(&seeds_for(atlas, source), f64::INFINITY);
    let mut values = gdist.clone();
    let mut refined = vec![false; total];
    let limit = 1.1 * cutoff + 2.0 * h;
    let mut order: Vec<usize> = (0..total).filter(|&k| gdist[k] <= limit).collect();
    order.sort_by(|&a, &b| gdist[a].total_cmp(&gdist[b]).then(a.cmp(&b)));
    let mut shots: Vec<Option<Shot>> = (0..total).map(|_| None).collect();
    let src = atlas.canonical(source);
    let n = atlas.dim();
    for k in order {
        let target = atlas.node_point(atlas.node_ref(k));
        // same point as the source
        if let Some(d) = atlas.coordinate_difference(&src, &target) {
            if d.iter().all(|v| v.abs() < 1e-13) {
                values[k] = 0.0;
                refined[k] = true;
                continue;
            }
        }
        let mut guesses = Vec::new();
        let mut anc = parent[k];
        while anc != usize::MAX && shots[anc].is_none() {
            anc = parent[anc];
        }
        if anc != usize::MAX {
            let shot = shots[anc].as_ref().unwrap();
            if let Some(diff) = atlas.coordinate_difference(&shot.end, &target) {
                if let Some(dv) = shot.jacobian.clone().lu().solve(&DVector::from_column_slice(&diff)) {
                    guesses.push((0..n).map(|a| shot.v[a] + dv[a]).collect::<Vec<_>>());
                }
            }
        }
        if let Some(d) = atlas.coordinate_difference(&src, &target) {
            guesses.push(d);
        }
        for guess in guesses {
            if let Some((length, shot)) = shoot(atlas, &src, &target, guess, 1e-10) {
                if length <= gdist[k] + 2.0 * h {
                    values[k] = length;
                    refined[k] = true;
                    shots[k] = Some(shot);
                }
                break;
            }
        }
    }
    Ok(DistanceField { source: source.clone(), values, graph: gdist, refined, cutoff })
}

/// Approximate geodesic distance between two points.
pub fn distance(atlas: &ManifoldAtlas, x: &ChartPoint, y: &ChartPoint) -> Result<f64> {
    atlas.check_point(x)?;
    atlas.check_point(y)?;
    if x == y {
        return Ok(0.0);
    }
    if all_flat_periodic(atlas) {
        return Ok(flat_distance(atlas, x, y));
    }
    let graph = atlas.graph();
    let (gdist, parent) = graph.dijkstra(&seeds_for(atlas, x), f64::INFINITY);
    let mut best = f64::INFINITY;
    let mut nearest = usize::MAX;
    for (node, w) in seeds_for(atlas, y) {
        if gdist[node] + w < best {
            best = gdist[node] + w;
            nearest = node;
        }
    }
    let src = atlas.canonical(x);
    let h = max_spacing(atlas);
    // initial direction from the Dijkstra path: the first path node beyond a
    // few cells that is visible from the source chart
    let mut guess = None;
    let mut walk = nearest;
    let mut candidate = None;
    while walk != usize::MAX {
        if gdist[walk] < 4.0 * h {
            break;
        }
        candidate = Some(walk);
        walk = parent[walk];
    }
    let probe = candidate.map(|c| atlas.node_point(atlas.node_ref(c))).unwrap_or_else(|| y.clone());
    if let Some(d) = atlas.coordinate_difference(&src, &probe) {
        let len = atlas.local(&src, false).norm(&d);
        if len > 0.0 {
            guess = Some(d.iter().map(|v| v * best / len).collect::<Vec<_>>());
        }
    }
    if let Some(guess) = guess {
        if let Some((length, _)) = shoot(atlas, &src, y, guess, 1e-10) {
            if length <= best + 2.0 * h {
                return Ok(length);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn flat_torus_wraparound() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 32).build().unwrap();
        let d = distance(&atlas, &ChartPoint::new(0, vec![0.0, 0.0]), &ChartPoint::new(0, vec![PI, 0.0])).unwrap();
        assert!((d - PI).abs() < 1e-12);
        let d = distance(&atlas, &ChartPoint::new(0, vec![0.1, 0.0]), &ChartPoint::new(0, vec![6.2, 0.0])).unwrap();
        assert!((d - (2.0 * PI - 6.1)).abs() < 1e-12);
    }

    #[test]
    fn identical_points_have_zero_distance() {
        let atlas = AtlasSpec::sphere(17).build().unwrap();
        let p = ChartPoint::new(1, vec![0.2, 0.3]);
        assert_eq!(distance(&atlas, &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn sphere_antipodes() {
        let atlas = AtlasSpec::sphere(33).build().unwrap();
        let h = 4.4 / 32.0;
        let x = [0.3, 0.4];
        let r2 = 0.25;
        let anti = [-x[0] / r2, -x[1] / r2];
        let d = distance(&atlas, &ChartPoint::new(0, x.to_vec()), &ChartPoint::new(0, anti.to_vec())).unwrap();
        assert!((d - PI).abs() < 2.0 * h, "{d}");
    }

    #[test]
    fn sphere_distance_matches_angle() {
        let atlas = AtlasSpec::sphere(33).build().unwrap();
        // chart origin to radius ρ is 2 atan ρ
        for rho in [0.2, 0.7, 1.4] {
            let d = distance(&atlas, &ChartPoint::new(0, vec![0.0, 0.0]), &ChartPoint::new(0, vec![rho, 0.0])).unwrap();
            assert!((d - 2.0 * f64::atan(rho)).abs() < 1e-6, "{rho}: {d}");
        }
    }

    #[test]
    fn warped_distance_field_refines_inside_cutoff() {
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 32).build().unwrap();
        let y0 = 10.0 * 2.0 * PI / 32.0;
        let field = distance_field(&atlas, &ChartPoint::new(0, vec![1.0, y0]), 1.0).unwrap();
        for k in 0..field.values.len() {
            assert!(field.values[k] <= field.graph[k] + 2.0 * atlas.chart(0).grid.max_spacing());
            if field.graph[k] < 1.0 {
                assert!(field.refined[k], "node {k} not refined");
            }
        }
        // along the x direction geodesics are coordinate lines (Γ^x_xx = 0, x-lines are geodesics)
        let node = atlas.chart(0).grid.index(&[8, 10]);
        let x = atlas.chart(0).grid.coords(node);
        assert!((x[1] - y0).abs() < 1e-12);
        assert!((field.values[node] - (x[0] - 1.0).abs()).abs() < 1e-8);
    }
}
