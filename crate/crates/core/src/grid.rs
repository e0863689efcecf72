//! Uniform tensor-product grids on chart boxes.
//!
//! Node `i = i_0 + s_0 (i_1 + s_1 (i_2 + ...))` with axis 0 fastest. Periodic
//! axes place `s` nodes on `[lower, upper)`; other axes place `s` nodes on
//! `[lower, upper]` including both ends.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub shape: Vec<usize>,
    pub periodic: Vec<bool>,
    pub spacing: Vec<f64>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, periodic: Vec<bool>) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n || shape.len() != n || periodic.len() != n || n == 0 {
            return Err(Error::Parameter("grid axes disagree in length".into()));
        }
        let mut spacing = Vec::with_capacity(n);
        for a in 0..n {
            let length = upper[a] - lower[a];
            let min_nodes = if periodic[a] { 4 } else { 5 };
            if length <= 0.0 || shape[a] < min_nodes {
                return Err(Error::Parameter(format!(
                    "axis {a} needs positive length and at least {min_nodes} nodes"
                )));
            }
            let h = if periodic[a] {
                length / shape[a] as f64
            } else {
                length / (shape[a] - 1) as f64
            };
            spacing.push(h);
        }
        Ok(Self { lower, upper, shape, periodic, spacing })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_fully_periodic(&self) -> bool {
        self.periodic.iter().all(|&p| p)
    }

    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim());
        for &s in &self.shape {
            out.push(index % s);
            index /= s;
        }
        out
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        let mut index = 0;
        for a in (0..self.dim()).rev() {
            index = index * self.shape[a] + multi[a];
        }
        index
    }

    pub fn coords(&self, index: usize) -> Vec<f64> {
        self.multi_index(index)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lower[a] + i as f64 * self.spacing[a])
            .collect()
    }

    /// Node reached by moving `offset` steps along `axis`, wrapping on periodic axes.
    pub fn shifted(&self, index: usize, axis: usize, offset: isize) -> Option<usize> {
        let mut multi = self.multi_index(index);
        let s = self.shape[axis] as isize;
        let target = multi[axis] as isize + offset;
        let wrapped = if self.periodic[axis] {
            target.rem_euclid(s)
        } else if (0..s).contains(&target) {
            target
        } else {
            return None;
        };
        multi[axis] = wrapped as usize;
        Some(self.index(&multi))
    }

    /// Node reached by a multi-axis offset.
    pub fn offset(&self, index: usize, offset: &[isize]) -> Option<usize> {
        let mut multi = self.multi_index(index);
        for a in 0..self.dim() {
            let s = self.shape[a] as isize;
            let t = multi[a] as isize + offset[a];
            multi[a] = if self.periodic[a] {
                t.rem_euclid(s) as usize
            } else if (0..s).contains(&t) {
                t as usize
            } else {
                return None;
            };
        }
        Some(self.index(&multi))
    }

    /// Wraps periodic coordinates into `[lower, upper)`.
    pub fn wrap(&self, x: &mut [f64]) {
        for a in 0..self.dim() {
            if self.periodic[a] {
                let length = self.upper[a] - self.lower[a];
                let shifted = (x[a] - self.lower[a]).rem_euclid(length);
                x[a] = self.lower[a] + if shifted >= length { 0.0 } else { shifted };
            }
        }
    }

    /// Coordinate difference `b - a` using the nearest periodic image.
    pub fn difference(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let mut d = b[k] - a[k];
                if self.periodic[k] {
                    let length = self.upper[k] - self.lower[k];
                    d -= length * (d / length).round();
                }
                d
            })
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|a| {
            self.periodic[a] || {
                let tol = 1e-12 * (self.upper[a] - self.lower[a]);
                x[a] >= self.lower[a] - tol && x[a] <= self.upper[a] + tol
            }
        })
    }

    /// Cubic Lagrange interpolation stencil: `(node, weight)` pairs.
    pub fn cubic_stencil(&self, x: &[f64]) -> Option<Vec<(usize, f64)>> {
        if !self.contains(x) {
            return None;
        }
        let n = self.dim();
        let mut axis_nodes: Vec<[(usize, f64); 4]> = Vec::with_capacity(n);
        for a in 0..n {
            let s = self.shape[a] as isize;
            let t = (x[a] - self.lower[a]) / self.spacing[a];
            let mut base = t.floor() as isize - 1;
            if !self.periodic[a] {
                base = base.clamp(0, s - 4);
            }
            let mut entries = [(0usize, 0.0f64); 4];
            let nodes: [f64; 4] = std::array::from_fn(|k| (base + k as isize) as f64);
            for k in 0..4 {
                let mut w = 1.0;
                for m in 0..4 {
                    if m != k {
                        w *= (t - nodes[m]) / (nodes[k] - nodes[m]);
                    }
                }
                let idx = if self.periodic[a] {
                    (base + k as isize).rem_euclid(s)
                } else {
                    base + k as isize
                };
                entries[k] = (idx as usize, w);
            }
            axis_nodes.push(entries);
        }
        let mut out = Vec::with_capacity(4usize.pow(n as u32));
        let mut counter = vec![0usize; n];
        loop {
            let mut multi = Vec::with_capacity(n);
            let mut w = 1.0;
            for a in 0..n {
                let (i, wa) = axis_nodes[a][counter[a]];
                multi.push(i);
                w *= wa;
            }
            out.push((self.index(&multi), w));
            let mut a = 0;
            loop {
                counter[a] += 1;
                if counter[a] < 4 {
                    break;
                }
                counter[a] = 0;
                a += 1;
                if a == n {
                    return Some(out);
                }
            }
        }
    }

    /// Cell-corner nodes surrounding `x` (lower-left corner and its neighbours).
    pub fn cell_nodes(&self, x: &[f64]) -> Vec<usize> {
        let n = self.dim();
        let mut base = Vec::with_capacity(n);
        for a in 0..n {
            let s = self.shape[a] as isize;
            let t = ((x[a] - self.lower[a]) / self.spacing[a]).floor() as isize;
            base.push(if self.periodic[a] { t } else { t.clamp(0, s - 2) });
        }
        (0..1usize << n)
            .filter_map(|mask| {
                let mut multi = vec![0usize; n];
                for a in 0..n {
                    let s = self.shape[a] as isize;
                    let t = base[a] + ((mask >> a) & 1) as isize;
                    multi[a] = if self.periodic[a] { t.rem_euclid(s) as usize } else { t.clamp(0, s - 1) as usize };
                }
                Some(self.index(&multi))
            })
            .collect()
    }
}
