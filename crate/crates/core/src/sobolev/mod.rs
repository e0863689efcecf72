//! Covariant Sobolev norms, patch norms and the norm-equivalence and
//! interpolation experiments built on them.

mod battery;
mod patch_norm;

pub use battery::{Battery, BatteryKind};
pub use patch_norm::{
    build_patches, embedding_interpolation_check, euclidean_sobolev_norm, norm_equivalence_report, patch_norm,
    patch_norm_with, EquivalenceReport, InterpolationReport, PatchSet,
};

pub use crate::field::{covariant_derivative, overlap_consistency, TensorField};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::pointwise_norm;
use crate::geometry::ManifoldAtlas;

/// Largest derivative order supported by the norms.
pub const MAX_ORDER: usize = 3;

/// Integrability exponent `p ∈ [1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn new(p: f64) -> Result<Self> {
        if p == f64::INFINITY {
            Ok(Exponent::Infinity)
        } else if p >= 1.0 && p.is_finite() {
            Ok(Exponent::Finite(p))
        } else {
            Err(Error::Parameter(format!("exponent p = {p} must lie in [1, ∞]")))
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Exponent::Finite(p) => p,
            Exponent::Infinity => f64::INFINITY,
        }
    }

    /// `ℓ^p` combination of nonnegative terms.
    pub fn combine(&self, terms: impl IntoIterator<Item = f64>) -> f64 {
        match *self {
            Exponent::Finite(p) => terms.into_iter().map(|t| t.powf(p)).sum::<f64>().powf(1.0 / p),
            Exponent::Infinity => terms.into_iter().fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Covariant,
    Patch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub field: String,
    pub kind: NormKind,
    pub value: f64,
    /// `k` for covariant norms, `s` for patch norms.
    pub order: usize,
    pub p: f64,
    pub covering: Option<String>,
}

/// `‖∇^j u‖_{L^p}` for `j = 0..=k`.
pub fn derivative_norms(atlas: &ManifoldAtlas, field: &TensorField, k: usize, p: Exponent) -> Result<Vec<f64>> {
    if k > MAX_ORDER {
        return Err(Error::Parameter(format!("derivative order k = {k} exceeds the cap {MAX_ORDER}")));
    }
    let locals: Vec<_> = atlas.nodes().map(|node| (node, atlas.quadrature_weight(node))).collect();
    let geometry: Vec<_> = locals
        .iter()
        .map(|&(node, w)| if w > 0.0 { Some(atlas.local(&atlas.node_point(node), false)) } else { None })
        .collect();
    let mut out = Vec::with_capacity(k + 1);
    let mut current = field.clone();
    for j in 0..=k {
        if j > 0 {
            current = covariant_derivative(atlas, &current);
        }
        let mut acc = 0.0f64;
        for (&(node, w), local) in locals.iter().zip(&geometry) {
            let Some(local) = local else { continue };
            let v = pointwise_norm(local, current.upper, current.lower, current.at(node));
            match p {
                Exponent::Finite(p) => acc += w * v.powf(p),
                Exponent::Infinity => acc = acc.max(v),
            }
        }
        out.push(match p {
            Exponent::Finite(p) => acc.powf(1.0 / p),
            Exponent::Infinity => acc,
        });
    }
    Ok(out)
}

/// `‖u‖_{W^{k,p}}`: `ℓ^p` combination of `‖∇^j u‖_{L^p}`, `j ≤ k`.
pub fn sobolev_norm(atlas: &ManifoldAtlas, field: &TensorField, k: usize, p: f64) -> Result<f64> {
    let p = Exponent::new(p)?;
    Ok(p.combine(derivative_norms(atlas, field, k, p)?))
}

pub fn covariant_report(atlas: &ManifoldAtlas, name: &str, field: &TensorField, k: usize, p: f64) -> Result<NormReport> {
    Ok(NormReport {
        field: name.to_string(),
        kind: NormKind::Covariant,
        value: sobolev_norm(atlas, field, k, p)?,
        order: k,
        p,
        covering: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AtlasSpec;
    use std::f64::consts::PI;

    #[test]
    fn constant_scalar_lp_norms() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let c = TensorField::scalar_from_fn(&atlas, |_, _| -1.5);
        for p in [1.0, 2.0, 3.5] {
            let v = sobolev_norm(&atlas, &c, 0, p).unwrap();
            assert!((v - 1.5 * (2.0 * PI).powf(2.0 / p)).abs() < 1e-12 * v);
        }
        assert!((sobolev_norm(&atlas, &c, 2, f64::INFINITY).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn sine_norms_on_periodic_grid() {
        let spec = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 0).with_resolution(vec![1024, 16]);
        let atlas = spec.build().unwrap();
        let u = TensorField::scalar_from_fn(&atlas, |_, x| x[0].sin());
        let norms = derivative_norms(&atlas, &u, 1, Exponent::Finite(2.0)).unwrap();
        assert!((norms[0].powi(2) - 2.0 * PI * PI).abs() < 1e-8);
        assert!((norms[1].powi(2) - 2.0 * PI * PI).abs() < 1e-8);
    }

    #[test]
    fn order_cap_and_bad_exponents_are_rejected() {
        let atlas = AtlasSpec::flat_torus(vec![1.0, 1.0], 8).build().unwrap();
        let u = TensorField::zeros(&atlas, 0, 0);
        assert!(sobolev_norm(&atlas, &u, 4, 2.0).is_err());
        assert!(Exponent::new(0.5).is_err());
        assert_eq!(sobolev_norm(&atlas, &u, 3, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn norms_are_monotone_in_order() {
        let atlas = AtlasSpec::warped_torus(2.0, 1.0, 16).build().unwrap();
        let u = TensorField::from_fn(&atlas, 1, 0, |_, x| vec![x[1].sin(), (x[0] + x[1]).cos()]);
        for p in [1.0, 2.0, f64::INFINITY] {
            let mut last = 0.0;
            for k in 0..=3 {
                let v = sobolev_norm(&atlas, &u, k, p).unwrap();
                assert!(v >= last);
                last = v;
            }
        }
    }
}
