//! Geodesic flow, parallel transport and geodesic shooting.
//!
//! The flow is integrated with the classical fourth-order Runge-Kutta method
//! at a fixed arclength step. Besides position and velocity the state can
//! carry a set of parallel vectors and the variation `J = ∂x(t)/∂v(0)` with
//! its rate, which is what Newton shooting needs. When a point leaves the
//! comfort region of its chart the whole state is pushed through the
//! transition map.

use serde::{Deserialize, Serialize};

use super::{ChartPoint, LocalGeometry, ManifoldAtlas};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicOptions {
    /// Fixed arclength step.
    pub arclength_step: f64,
    /// Store every step in the returned path (otherwise only the ends).
    pub record: bool,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self { arclength_step: 1.0 / 256.0, record: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSample {
    pub t: f64,
    pub chart: usize,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    pub samples: Vec<GeodesicSample>,
    /// `½ ∫ |γ'|² dt`.
    pub energy: f64,
    /// Charts visited, in order, without repeats.
    pub chart_ids: Vec<usize>,
    pub options: GeodesicOptions,
}

impl GeodesicPath {
    pub fn start(&self) -> &GeodesicSample {
        &self.samples[0]
    }

    pub fn end(&self) -> &GeodesicSample {
        self.samples.last().unwrap()
    }

    pub fn end_point(&self) -> ChartPoint {
        ChartPoint::new(self.end().chart, self.end().x.clone())
    }

    pub fn duration(&self) -> f64 {
        self.end().t
    }
}

/// Flat state vector `[x, v, W_1..W_m, J, Jv]` in one chart.
#[derive(Clone, Debug)]
pub(crate) struct FlowState {
    pub chart: usize,
    pub n: usize,
    pub carried: usize,
    pub variational: bool,
    pub data: Vec<f64>,
}

impl FlowState {
    pub fn new(p: &ChartPoint, v: &[f64], carried: &[Vec<f64>], variational: bool) -> Self {
        let n = p.x.len();
        let mut data = Vec::with_capacity(2 * n + carried.len() * n + 2 * n * n);
        data.extend_from_slice(&p.x);
        data.extend_from_slice(v);
        for w in carried {
            data.extend_from_slice(w);
        }
        if variational {
            // J(0) = 0, J'(0) = id
            data.extend(std::iter::repeat(0.0).take(n * n));
            data.extend((0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }));
        }
        Self { chart: p.chart, n, carried: carried.len(), variational, data }
    }

    pub fn x(&self) -> &[f64] {
        &self.data[..self.n]
    }

    pub fn v(&self) -> &[f64] {
        &self.data[self.n..2 * self.n]
    }

    pub fn carried(&self, i: usize) -> &[f64] {
        let start = 2 * self.n + i * self.n;
        &self.data[start..start + self.n]
    }

    fn j_offset(&self) -> usize {
        2 * self.n + self.carried * self.n
    }

    /// `J[a][b] = ∂x^a/∂v_0^b`, row-major.
    pub fn jacobian(&self) -> &[f64] {
        let o = self.j_offset();
        &self.data[o..o + self.n * self.n]
    }

    pub fn point(&self) -> ChartPoint {
        ChartPoint::new(self.chart, self.x().to_vec())
    }
}

fn rhs(state: &FlowState, data: &[f64], local: &LocalGeometry, out: &mut [f64]) {
    let n = state.n;
    let v = &data[n..2 * n];
    let gamma_vv = |k: usize, a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += local.gamma(k, i, j) * a[i] * b[j];
            }
        }
        s
    };
    out[..n].copy_from_slice(v);
    for k in 0..n {
        out[n + k] = -gamma_vv(k, v, v);
    }
    for c in 0..state.carried {
        let o = 2 * n + c * n;
        let w = &data[o..o + n];
        for k in 0..n {
            out[o + k] = -gamma_vv(k, v, w);
        }
    }
    if state.variational {
        let oj = state.j_offset();
        let ojv = oj + n * n;
        let dgamma = local.dgamma.as_ref().expect("variational flow needs Γ derivatives");
        for a in 0..n {
            for b in 0..n {
                out[oj + a * n + b] = data[ojv + a * n + b];
            }
        }
        for k in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for m in 0..n {
                    let jm = data[oj + m * n + b];
                    if jm != 0.0 {
                        for i in 0..n {
                            for j in 0..n {
                                s += dgamma[((m * n + k) * n + i) * n + j] * jm * v[i] * v[j];
                            }
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        s += 2.0 * local.gamma(k, i, j) * v[i] * data[ojv + j * n + b];
                    }
                }
                out[ojv + k * n + b] = -s;
            }
        }
    }
}

pub(crate) struct Flow<'a> {
    pub atlas: &'a ManifoldAtlas,
    pub state: FlowState,
    scratch: [Vec<f64>; 5],
    local: LocalGeometry,
}

impl<'a> Flow<'a> {
    pub fn new(atlas: &'a ManifoldAtlas, state: FlowState) -> Self {
        let len = state.data.len();
        Self { atlas, state, scratch: std::array::from_fn(|_| vec![0.0; len]), local: LocalGeometry::default() }
    }

    fn eval(&mut self, which: usize, data_index: Option<(usize, f64)>) -> Result<()> {
        let n = self.state.n;
        let len = self.state.data.len();
        // stage input: state + factor * k_{which-1}
        let mut input = std::mem::take(&mut self.scratch[4]);
        input.resize(len, 0.0);
        match data_index {
            None => input.copy_from_slice(&self.state.data),
            Some((k, factor)) => {
                for i in 0..len {
                    input[i] = self.state.data[i] + factor * self.scratch[k][i];
                }
            }
        }
        let chart = self.atlas.chart(self.state.chart);
        if !chart.contains(&input[..n]) {
            let point = input[..n].to_vec();
            self.scratch[4] = input;
            return Err(Error::Coverage { chart: self.state.chart, point });
        }
        chart.local_into(&input[..n], self.state.variational, &mut self.local);
        let mut out = std::mem::take(&mut self.scratch[which]);
        rhs(&self.state, &input, &self.local, &mut out);
        self.scratch[which] = out;
        self.scratch[4] = input;
        Ok(())
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        self.eval(0, None)?;
        self.eval(1, Some((0, 0.5 * dt)))?;
        self.eval(2, Some((1, 0.5 * dt)))?;
        self.eval(3, Some((2, dt)))?;
        for i in 0..self.state.data.len() {
            self.state.data[i] += dt / 6.0
                * (self.scratch[0][i] + 2.0 * self.scratch[1][i] + 2.0 * self.scratch[2][i] + self.scratch[3][i]);
        }
        self.normalize_chart();
        Ok(())
    }

    /// Wraps periodic coordinates and switches charts when leaving the
    /// comfort region.
    pub fn normalize_chart(&mut self) {
        let n = self.state.n;
        let chart = self.atlas.chart(self.state.chart);
        chart.grid.wrap(&mut self.state.data[..n]);
        if chart.in_comfort_region(self.state.x()) {
            return;
        }
        for t in self.atlas.transitions.iter().filter(|t| t.from == self.state.chart) {
            let x = self.state.x().to_vec();
            let y = t.apply(&x);
            let target = self.atlas.chart(t.to);
            if !y.iter().all(|v| v.is_finite()) || !target.in_comfort_region(&y) {
                continue;
            }
            let jac = t.jacobian(&x);
            let push = |w: &[f64]| -> Vec<f64> {
                (0..n).map(|a| (0..n).map(|b| jac[a * n + b] * w[b]).sum()).collect()
            };
            let mut data = Vec::with_capacity(self.state.data.len());
            data.extend_from_slice(&y);
            data.extend(push(self.state.v()));
            for c in 0..self.state.carried {
                data.extend(push(self.state.carried(c)));
            }
            if self.state.variational {
                let oj = self.state.j_offset();
                let j_old = self.state.data[oj..oj + n * n].to_vec();
                let jv_old = self.state.data[oj + n * n..oj + 2 * n * n].to_vec();
                let hess = t.hessian(&x);
                let v = self.state.v().to_vec();
                let mut j_new = vec![0.0; n * n];
                let mut jv_new = vec![0.0; n * n];
                for a in 0..n {
                    for b in 0..n {
                        let mut s = 0.0;
                        let mut sv = 0.0;
                        for c in 0..n {
                            s += jac[a * n + c] * j_old[c * n + b];
                            sv += jac[a * n + c] * jv_old[c * n + b];
                            for d in 0..n {
                                sv += hess[(a * n + c) * n + d] * v[c] * j_old[d * n + b];
                            }
                        }
                        j_new[a * n + b] = s;
                        jv_new[a * n + b] = sv;
                    }
                }
                data.extend(j_new);
                data.extend(jv_new);
            }
            self.state.data = data;
            self.state.chart = t.to;
            return;
        }
    }

    /// Integrates over `[0, duration]` with `steps` equal steps; calls `visit`
    /// after every step with the elapsed time.
    pub fn run(&mut self, duration: f64, steps: usize, mut visit: impl FnMut(f64, &FlowState)) -> Result<()> {
        let dt = duration / steps as f64;
        for s in 0..steps {
            self.step(dt)?;
            visit((s + 1) as f64 * dt, &self.state);
        }
        Ok(())
    }
}

pub(crate) fn step_count(atlas: &ManifoldAtlas, p: &ChartPoint, v: &[f64], duration: f64, ds: f64) -> usize {
    let speed = atlas.local(p, false).norm(v);
    ((duration * speed / ds).ceil() as usize).max(1)
}

fn validate(atlas: &ManifoldAtlas, p: &ChartPoint, v: &[f64]) -> Result<ChartPoint> {
    atlas.check_point(p)?;
    if v.len() != atlas.dim() || v.iter().any(|c| !c.is_finite()) {
        return Err(Error::Parameter("tangent vector has wrong length or non-finite entries".into()));
    }
    Ok(atlas.canonical(p))
}

fn to_canonical_vector(atlas: &ManifoldAtlas, from: &ChartPoint, to: &ChartPoint, v: &[f64]) -> Vec<f64> {
    if from.chart == to.chart {
        v.to_vec()
    } else {
        atlas.transition(from.chart, to.chart).unwrap().push_forward(&from.x, v)
    }
}

/// Geodesic `t ↦ exp_x(t v)` for `t ∈ [0, duration]`.
pub fn exp_map(atlas: &ManifoldAtlas, x: &ChartPoint, v: &[f64], duration: f64, options: GeodesicOptions) -> Result<GeodesicPath> {
    let start = validate(atlas, x, v)?;
    let v = to_canonical_vector(atlas, x, &start, v);
    let speed = atlas.local(&start, false).norm(&v);
    if !(speed > 0.0) || !(duration > 0.0) {
        return Err(Error::Parameter("exp_map needs |v| > 0 and T > 0".into()));
    }
    let steps = step_count(atlas, &start, &v, duration, options.arclength_step);
    let mut flow = Flow::new(atlas, FlowState::new(&start, &v, &[], false));
    let mut samples = vec![GeodesicSample { t: 0.0, chart: start.chart, x: start.x.clone(), v: v.clone() }];
    let mut chart_ids = vec![start.chart];
    let mut last = None;
    flow.run(duration, steps, |t, s| {
        if chart_ids.last() != Some(&s.chart) {
            chart_ids.push(s.chart);
        }
        let sample = GeodesicSample { t, chart: s.chart, x: s.x().to_vec(), v: s.v().to_vec() };
        if options.record {
            samples.push(sample);
        } else {
            last = Some(sample);
        }
    })?;
    samples.extend(last);
    Ok(GeodesicPath { samples, energy: 0.5 * speed * speed * duration, chart_ids, options })
}

/// Parallel transport of `v0` along `path`, returned in the path's end chart.
pub fn parallel_transport(atlas: &ManifoldAtlas, path: &GeodesicPath, v0: &[f64]) -> Result<Vec<f64>> {
    let s = path.start();
    let p = ChartPoint::new(s.chart, s.x.clone());
    let steps = step_count(atlas, &p, &s.v, path.duration(), path.options.arclength_step);
    let mut flow = Flow::new(atlas, FlowState::new(&p, &s.v, &[v0.to_vec()], false));
    flow.run(path.duration(), steps, |_, _| {})?;
    Ok(flow.state.carried(0).to_vec())
}

/// End point of `exp_x(v)` with parallel-transported copies of `carried`
/// and the differential `∂ exp_x(v)/∂v` (row-major, end chart coordinates).
pub(crate) fn exp_with_transport(
    atlas: &ManifoldAtlas,
    x: &ChartPoint,
    v: &[f64],
    carried: &[Vec<f64>],
    ds: f64,
) -> Result<(ChartPoint, Vec<Vec<f64>>, Vec<f64>)> {
    let n = x.x.len();
    let speed = atlas.local(x, false).norm(v);
    if speed == 0.0 {
        let id = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
        return Ok((x.clone(), carried.to_vec(), id));
    }
    let steps = step_count(atlas, x, v, 1.0, ds);
    let mut flow = Flow::new(atlas, FlowState::new(x, v, carried, true));
    flow.run(1.0, steps, |_, _| {})?;
    let out = (0..carried.len()).map(|i| flow.state.carried(i).to_vec()).collect();
    Ok((flow.state.point(), out, flow.state.jacobian().to_vec()))
}

/// Parallel transport along an explicit curve `t ↦ (x(t), x'(t))` in one
/// chart, `t ∈ [0, t_end]`, with `steps` RK4 steps.
pub fn transport_along_curve(
    atlas: &ManifoldAtlas,
    chart: usize,
    curve: impl Fn(f64) -> (Vec<f64>, Vec<f64>),
    t_end: f64,
    steps: usize,
    v0: &[f64],
) -> Result<Vec<f64>> {
    let n = atlas.dim();
    let c = atlas.chart(chart);
    let rate = |t: f64, w: &[f64]| -> Result<Vec<f64>> {
        let (x, xd) = curve(t);
        if !c.contains(&x) {
            return Err(Error::Coverage { chart, point: x });
        }
        let local = c.local(&x, false);
        Ok((0..n)
            .map(|k| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += local.gamma(k, i, j) * xd[i] * w[j];
                    }
                }
                -s
            })
            .collect())
    };
    let dt = t_end / steps as f64;
    let mut w = v0.to_vec();
    let axpy = |a: &[f64], f: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + f * y).collect() };
    for s in 0..steps {
        let t = s as f64 * dt;
        let k1 = rate(t, &w)?;
        let k2 = rate(t + 0.5 * dt, &axpy(&w, 0.5 * dt, &k1))?;
        let k3 = rate(t + 0.5 * dt, &axpy(&w, 0.5 * dt, &k2))?;
        let k4 = rate(t + dt, &axpy(&w, dt, &k3))?;
        for i in 0..n {
            w[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootResult {
    /// Initial velocity at the source, in the source chart, with `exp(v) = target`.
    pub v: Vec<f64>,
    pub length: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Newton shooting for `v` with `exp_from(v) = to`, starting from `guess`.
pub fn log_map(
    atlas: &ManifoldAtlas,
    from: &ChartPoint,
    to: &ChartPoint,
    guess: &[f64],
    arclength_step: f64,
) -> Result<ShootResult> {
    let n = atlas.dim();
    let mut v = guess.to_vec();
    let scale = atlas.local(from, false).norm(guess).max(1e-3);
    let mut residual = f64::INFINITY;
    for iteration in 0..12 {
        let speed = atlas.local(from, false).norm(&v);
        if speed < 1e-14 {
            let d = atlas.coordinate_difference(from, to);
            let r = d.map(|d| atlas.local(from, false).norm(&d)).unwrap_or(f64::INFINITY);
            return Ok(ShootResult { v, length: 0.0, residual: r, iterations: iteration, converged: r < 1e-12 });
        }
        let steps = step_count(atlas, from, &v, 1.0, arclength_step);
        let mut flow = Flow::new(atlas, FlowState::new(from, &v, &[], true));
        flow.run(1.0, steps, |_, _| {})?;
        let end = flow.state.point();
        let diff = match atlas.coordinate_difference(&end, to) {
            Some(d) => d,
            None => return Ok(ShootResult { v, length: speed, residual, iterations: iteration, converged: false }),
        };
        residual = atlas.local(&end, false).norm(&diff);
        if residual < 1e-10 * scale.max(1.0) {
            return Ok(ShootResult { v, length: speed, residual, iterations: iteration, converged: true });
        }
        let j = nalgebra::DMatrix::from_row_slice(n, n, flow.state.jacobian());
        let rhs = nalgebra::DVector::from_column_slice(&diff);
        let dv = match j.lu().solve(&rhs) {
            Some(dv) => dv,
            None => return Ok(ShootResult { v, length: speed, residual, iterations: iteration, converged: false }),
        };
        // damp steps that are large compared with the current velocity
        let step_norm = atlas.local(from, false).norm(dv.as_slice());
        let damping = if step_norm > 0.5 * speed.max(scale) { 0.5 * speed.max(scale) / step_norm } else { 1.0 };
        for a in 0..n {
            v[a] += damping * dv[a];
        }
    }
    let length = atlas.local(from, false).norm(&v);
    Ok(ShootResult { v, length, residual, iterations: 12, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn flat_torus_geodesics_are_straight() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let path = exp_map(&atlas, &ChartPoint::new(0, vec![0.0, 0.0]), &[1.0, 0.0], 1.0, Default::default()).unwrap();
        let end = &path.end().x;
        assert!((end[0] - 1.0).abs() < 1e-12 && end[1].abs() < 1e-12);
        let path = exp_map(&atlas, &ChartPoint::new(0, vec![6.0, 1.0]), &[1.0, 0.5], 2.0, Default::default()).unwrap();
        let end = &path.end().x;
        assert!((end[0] - (8.0 - 2.0 * PI)).abs() < 1e-10 && (end[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn sphere_great_circle_returns() {
        let atlas = AtlasSpec::sphere(17).build().unwrap();
        let x = ChartPoint::new(0, vec![0.3, -0.4]);
        let g = atlas.local(&x, false);
        let v = [0.6, 0.8];
        let s = g.norm(&v);
        let v = [v[0] / s, v[1] / s];
        let path = exp_map(&atlas, &x, &v, 2.0 * PI, Default::default()).unwrap();
        assert!(path.chart_ids.len() >= 3, "path should visit both charts");
        let back = atlas.to_chart(&path.end_point(), 0).unwrap();
        assert!((back.x[0] - 0.3).abs() < 1e-6 && (back.x[1] + 0.4).abs() < 1e-6, "{:?}", back);
    }

    #[test]
    fn speed_is_conserved() {
        for spec in AtlasSpec::builtin_families(16) {
            let atlas = spec.build().unwrap();
            let x = ChartPoint::new(0, vec![0.4, 0.9]);
            let v = [0.7, 0.3];
            let path = exp_map(&atlas, &x, &v, 10.0, Default::default()).unwrap();
            let s0 = atlas.local(&x, false).norm(&v);
            let drift = path
                .samples
                .iter()
                .map(|s| (atlas.chart(s.chart).local(&s.x, false).norm(&s.v) - s0).abs())
                .fold(0.0, f64::max);
            assert!(drift < 1e-8, "{:?}: drift {drift}", spec.family);
        }
    }

    #[test]
    fn transport_preserves_norm_and_angle() {
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 16).build().unwrap();
        let x = ChartPoint::new(0, vec![0.4, 0.9]);
        let v = [0.7, 0.3];
        let w = [-0.2, 0.5];
        let path = exp_map(&atlas, &x, &v, 5.0, Default::default()).unwrap();
        let w1 = parallel_transport(&atlas, &path, &w).unwrap();
        let g0 = atlas.local(&x, false);
        let end = path.end();
        let g1 = atlas.chart(end.chart).local(&end.x, false);
        assert!((g1.norm(&w1) - g0.norm(&w)).abs() < 1e-8);
        assert!((g1.inner(&w1, &end.v) - g0.inner(&w, &v)).abs() < 1e-8);
    }

    #[test]
    fn shooting_inverts_exp() {
        let atlas = AtlasSpec::sphere(17).build().unwrap();
        let x = ChartPoint::new(0, vec![0.2, 0.1]);
        let v = [0.5, -0.3];
        let path = exp_map(&atlas, &x, &v, 1.0, Default::default()).unwrap();
        let target = path.end_point();
        let shot = log_map(&atlas, &x, &target, &[0.4, -0.2], 1.0 / 128.0).unwrap();
        assert!(shot.converged);
        assert!((shot.v[0] - 0.5).abs() < 1e-6 && (shot.v[1] + 0.3).abs() < 1e-6, "{shot:?}");
    }
}
