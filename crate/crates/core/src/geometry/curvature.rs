//! Riemann tensor and its covariant derivatives.
//!
//! Pointwise values use the symbolic second derivatives of the metric. The
//! covariant derivatives `∇R` and `∇²R` are computed in truncated Taylor
//! arithmetic: the metric is expanded to fourth order around the node and all
//! index gymnastics are done on jets, so no finite differences enter.
//!
//! Conventions: `R^l_{kij} = ∂_iΓ^l_{jk} − ∂_jΓ^l_{ik} + Γ^l_{im}Γ^m_{jk} − Γ^l_{jm}Γ^m_{ik}`
//! are the components of `R(∂_i, ∂_j)∂_k`, lowered as `R_{lkij} = g_{la} R^a_{kij}`.
//! Tensor norms are full contractions, `‖R‖² = R_{abcd} R^{abcd}`, so a
//! surface of constant curvature `K` has `‖R‖ = 2|K|`.

use serde::{Deserialize, Serialize};

use super::{Chart, ManifoldAtlas};
use crate::error::{Error, Result};
use crate::jet::{Jet, JetSpace};
use crate::par;

/// Lowered Riemann tensor `R_{lkij}` at `x`, stored `[l][k][i][j]`.
pub fn riemann_lowered_at(chart: &Chart, x: &[f64]) -> Vec<f64> {
    let n = chart.dim();
    let local = chart.local(x, true);
    let dgamma = local.dgamma.as_ref().expect("second derivatives requested");
    let gam = |k: usize, i: usize, j: usize| local.gamma[(k * n + i) * n + j];
    let dgam = |m: usize, k: usize, i: usize, j: usize| dgamma[((m * n + k) * n + i) * n + j];
    let mut up = vec![0.0; n * n * n * n];
    for l in 0..n {
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = dgam(i, l, j, k) - dgam(j, l, i, k);
                    for m in 0..n {
                        v += gam(l, i, m) * gam(m, j, k) - gam(l, j, m) * gam(m, i, k);
                    }
                    up[((l * n + k) * n + i) * n + j] = v;
                }
            }
        }
    }
    let mut low = vec![0.0; up.len()];
    let block = n * n * n;
    for l in 0..n {
        for a in 0..n {
            let gla = local.g[l * n + a];
            for r in 0..block {
                low[l * block + r] += gla * up[a * block + r];
            }
        }
    }
    low
}

/// Sectional curvature of the coordinate plane `(∂_0, ∂_1)`.
pub fn sectional_curvature_at(chart: &Chart, x: &[f64]) -> f64 {
    let n = chart.dim();
    let r = riemann_lowered_at(chart, x);
    let g = chart.metric_at(x);
    let area2 = g[0] * g[n + 1] - g[1] * g[n];
    // K = ⟨R(∂0,∂1)∂1, ∂0⟩ / |∂0 ∧ ∂1|²
    r[((0 * n + 1) * n + 0) * n + 1] / area2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    /// `sup ‖R‖` over all grid nodes.
    pub sup_riemann: f64,
    /// `sup ‖∇^j R‖` for `j = 1..=max_deriv`.
    pub sup_derivatives: Vec<f64>,
    pub min_sectional: f64,
    pub max_sectional: f64,
    pub nodes: usize,
}

/// Sampled suprema of `‖∇^j R‖`, `j ≤ max_deriv ≤ 2`, over every grid node.
pub fn curvature_report(atlas: &ManifoldAtlas, max_deriv: usize) -> Result<CurvatureReport> {
    if max_deriv > 2 {
        return Err(Error::Parameter(format!("curvature derivatives are capped at order 2, got {max_deriv}")));
    }
    let nodes: Vec<_> = atlas.nodes().collect();
    let space = JetSpace::new(atlas.dim(), 2 + max_deriv);
    let per_node = par::map_slice(&nodes, |node| {
        let chart = atlas.chart(node.chart);
        if chart.is_flat() {
            return (vec![0.0; max_deriv + 1], 0.0);
        }
        let x = chart.grid.coords(node.node);
        let norms = riemann_jet_norms(chart, &x, &space, max_deriv);
        let k = if chart.dim() == 2 { sectional_curvature_at(chart, &x) } else { 0.0 };
        (norms, k)
    });
    let mut report = CurvatureReport {
        sup_riemann: 0.0,
        sup_derivatives: vec![0.0; max_deriv],
        min_sectional: f64::INFINITY,
        max_sectional: f64::NEG_INFINITY,
        nodes: nodes.len(),
    };
    for (norms, k) in per_node {
        report.sup_riemann = report.sup_riemann.max(norms[0]);
        for j in 1..=max_deriv {
            report.sup_derivatives[j - 1] = report.sup_derivatives[j - 1].max(norms[j]);
        }
        report.min_sectional = report.min_sectional.min(k);
        report.max_sectional = report.max_sectional.max(k);
    }
    Ok(report)
}

/// `‖∇^j R‖` for `j = 0..=max_deriv` at `x`, via Taylor jets of the metric.
pub(crate) fn riemann_jet_norms(chart: &Chart, x: &[f64], space: &std::sync::Arc<JetSpace>, max_deriv: usize) -> Vec<f64> {
    let n = chart.dim();
    let vars: Vec<Jet> = (0..n).map(|a| Jet::variable(space, a, x[a])).collect();
    let g: Vec<Jet> = chart.metric_exprs().iter().map(|e| e.eval_jet(&vars)).collect();
    let ginv = jet_inverse(n, &g);
    // dg[k][i][j]
    let mut dg = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for e in &g {
            dg.push(e.derivative(k));
        }
    }
    let d = |k: usize, i: usize, j: usize| &dg[(k * n + i) * n + j];
    let mut gamma = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut s = Jet::constant(space, 0.0);
                for l in 0..n {
                    let t = &(d(i, j, l) + d(j, i, l)) - d(l, i, j);
                    s = &s + &(&ginv[k * n + l] * &t);
                }
                gamma.push(s.scale(0.5));
            }
        }
    }
    let gam = |k: usize, i: usize, j: usize| &gamma[(k * n + i) * n + j];
    let mut riemann_up = Vec::with_capacity(n * n * n * n);
    for l in 0..n {
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = &gam(l, j, k).derivative(i) - &gam(l, i, k).derivative(j);
                    for m in 0..n {
                        v = &v + &(&(gam(l, i, m) * gam(m, j, k)) - &(gam(l, j, m) * gam(m, i, k)));
                    }
                    riemann_up.push(v);
                }
            }
        }
    }
    let block = n * n * n;
    let mut tensor: Vec<Jet> = (0..n * block)
        .map(|idx| {
            let (l, r) = (idx / block, idx % block);
            let mut s = Jet::constant(space, 0.0);
            for a in 0..n {
                s = &s + &(&g[l * n + a] * &riemann_up[a * block + r]);
            }
            s
        })
        .collect();
    let ginv_values: Vec<f64> = ginv.iter().map(Jet::value).collect();
    let mut rank = 4;
    let mut norms = vec![full_norm(n, rank, &tensor.iter().map(Jet::value).collect::<Vec<_>>(), &ginv_values)];
    for _ in 0..max_deriv {
        tensor = covariant_derivative_lower(n, rank, &tensor, &gamma);
        rank += 1;
        norms.push(full_norm(n, rank, &tensor.iter().map(Jet::value).collect::<Vec<_>>(), &ginv_values));
    }
    norms
}

/// Gauss-Jordan inverse of an SPD matrix of jets.
fn jet_inverse(n: usize, m: &[Jet]) -> Vec<Jet> {
    let space_one = m[0].constant_like(1.0);
    let zero = m[0].constant_like(0.0);
    let mut a: Vec<Jet> = m.to_vec();
    let mut inv: Vec<Jet> = (0..n * n).map(|k| if k / n == k % n { space_one.clone() } else { zero.clone() }).collect();
    for p in 0..n {
        let pivot = a[p * n + p].recip();
        for c in 0..n {
            a[p * n + c] = &a[p * n + c] * &pivot;
            inv[p * n + c] = &inv[p * n + c] * &pivot;
        }
        for r in 0..n {
            if r == p {
                continue;
            }
            let factor = a[r * n + p].clone();
            for c in 0..n {
                a[r * n + c] = &a[r * n + c] - &(&factor * &a[p * n + c]);
                inv[r * n + c] = &inv[r * n + c] - &(&factor * &inv[p * n + c]);
            }
        }
    }
    inv
}

/// `(∇T)_{a_1..a_m b} = ∂_b T_{a_1..a_m} − Σ_s Γ^c_{b a_s} T_{..c..}` for a
/// fully covariant tensor; the new slot is last.
fn covariant_derivative_lower(n: usize, rank: usize, t: &[Jet], gamma: &[Jet]) -> Vec<Jet> {
    let len = t.len();
    let mut out = Vec::with_capacity(len * n);
    let strides: Vec<usize> = (0..rank).map(|s| n.pow((rank - 1 - s) as u32)).collect();
    for idx in 0..len {
        for b in 0..n {
            let mut v = t[idx].derivative(b);
            for &stride in &strides {
                let a_s = (idx / stride) % n;
                let base = idx - a_s * stride;
                for c in 0..n {
                    let g = &gamma[(c * n + b) * n + a_s];
                    v = &v - &(g * &t[base + c * stride]);
                }
            }
            out.push(v);
        }
    }
    out
}

/// `sqrt(T_{a..} T^{a..})` for a fully covariant tensor stored row-major.
pub(crate) fn full_norm(n: usize, rank: usize, t: &[f64], ginv: &[f64]) -> f64 {
    let mut raised = t.to_vec();
    for s in 0..rank {
        let stride = n.pow((rank - 1 - s) as u32);
        let mut next = vec![0.0; raised.len()];
        for idx in 0..raised.len() {
            let a = (idx / stride) % n;
            let base = idx - a * stride;
            next[idx] = (0..n).map(|c| ginv[a * n + c] * raised[base + c * stride]).sum();
        }
        raised = next;
    }
    t.iter().zip(&raised).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
}

/// Largest `|∂_k g_ij − Γ^l_{ki} g_lj − Γ^l_{kj} g_il|` over all nodes,
/// relative to the largest metric entry.
pub fn metric_compatibility_defect(atlas: &ManifoldAtlas) -> f64 {
    let nodes: Vec<_> = atlas.nodes().collect();
    let defects = par::map_slice(&nodes, |node| {
        let chart = atlas.chart(node.chart);
        let n = chart.dim();
        let x = chart.grid.coords(node.node);
        let local = chart.local(&x, false);
        let scale = local.g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = local.dg[(k * n + i) * n + j];
                    for l in 0..n {
                        v -= local.gamma(l, k, i) * local.g[l * n + j] + local.gamma(l, k, j) * local.g[i * n + l];
                    }
                    worst = worst.max(v.abs() / scale);
                }
            }
        }
        worst
    });
    defects.into_iter().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn sphere_has_unit_curvature_and_parallel_riemann() {
        let atlas = AtlasSpec::sphere(9).build().unwrap();
        let report = curvature_report(&atlas, 2).unwrap();
        assert!((report.min_sectional - 1.0).abs() < 1e-10, "{report:?}");
        assert!((report.max_sectional - 1.0).abs() < 1e-10);
        assert!((report.sup_riemann - 2.0).abs() < 1e-10);
        assert!(report.sup_derivatives[0] < 1e-6);
        assert!(report.sup_derivatives[1] < 1e-6);
    }

    #[test]
    fn warped_torus_gauss_curvature() {
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 16).build().unwrap();
        let chart = atlas.chart(0);
        for x in [0.0, 1.0, 2.0, PI, 4.5] {
            let k = sectional_curvature_at(chart, &[x, 0.7]);
            assert!((k - x.cos() / (2.0 + x.cos())).abs() < 1e-13);
        }
        let report = curvature_report(&atlas, 1).unwrap();
        // node x = 0 attains the analytic sup 1/3
        assert!((report.max_sectional - 1.0 / 3.0).abs() < 1e-13);
        assert!((report.min_sectional + 1.0).abs() < 1e-13);
    }

    #[test]
    fn flat_torus_has_zero_curvature() {
        let atlas = AtlasSpec::flat_torus(vec![1.0, 2.0], 8).build().unwrap();
        let report = curvature_report(&atlas, 2).unwrap();
        assert_eq!(report.sup_riemann, 0.0);
        assert!(report.sup_derivatives.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn derivative_cap() {
        let atlas = AtlasSpec::flat_torus(vec![1.0, 2.0], 8).build().unwrap();
        assert!(curvature_report(&atlas, 3).is_err());
    }

    #[test]
    fn metric_connection_is_compatible() {
        for spec in AtlasSpec::builtin_families(16) {
            let atlas = spec.build().unwrap();
            assert!(metric_compatibility_defect(&atlas) < 1e-12);
        }
    }

    #[test]
    fn surface_riemann_norm_is_twice_gauss_curvature() {
        let atlas = AtlasSpec::warped_cylinder(16).build().unwrap();
        let chart = atlas.chart(0);
        let space = JetSpace::new(2, 2);
        for x in [0.3, 1.9, 3.1] {
            let norms = riemann_jet_norms(chart, &[x, 0.2], &space, 0);
            let k = sectional_curvature_at(chart, &[x, 0.2]);
            assert!((norms[0] - 2.0 * k.abs()).abs() < 1e-12);
        }
    }
}
