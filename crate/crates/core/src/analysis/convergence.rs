use serde::{Deserialize, Serialize};

use super::invertibility::{default_manufactured_field, manufactured_convergence};
use super::killing::killing_kernel;
use super::spectral::{operator_spectrum, SpectralOptions};
use crate::error::{Error, Result};
use crate::geometry::AtlasSpec;
use crate::operators::{weak_laplacian, PotentialSpec, Valence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub resolution: usize,
    pub h: f64,
    pub value: f64,
    /// `|value − exact|` when an exact value is known.
    pub error: Option<f64>,
    /// `log₂(e_{2h}/e_h)`, or the Richardson estimate from three consecutive values.
    pub order: Option<f64>,
}

/// Resolutions must number at least three, each double the previous.
pub fn check_nested(resolutions: &[usize]) -> Result<()> {
    if resolutions.len() < 3 {
        return Err(Error::Parameter(format!("a convergence study needs at least 3 resolutions, got {}", resolutions.len())));
    }
    for w in resolutions.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(Error::Parameter(format!("resolutions are not nested: {} does not double {}", w[1], w[0])));
        }
    }
    Ok(())
}

pub fn convergence_table(resolutions: &[usize], h: &[f64], values: &[f64], exact: Option<f64>) -> Result<Vec<ConvergenceRow>> {
    check_nested(resolutions)?;
    let errors: Option<Vec<f64>> = exact.map(|e| values.iter().map(|v| (v - e).abs()).collect());
    Ok((0..values.len())
        .map(|i| {
            let order = match &errors {
                Some(e) if i > 0 && e[i] > 0.0 && e[i - 1] > 0.0 => Some((e[i - 1] / e[i]).log2()),
                None if i > 1 => {
                    let (a, b) = (values[i - 2] - values[i - 1], values[i - 1] - values[i]);
                    (a != 0.0 && b != 0.0).then(|| (a / b).abs().log2())
                }
                _ => None,
            };
            ConvergenceRow { resolution: resolutions[i], h: h[i], value: values[i], error: errors.as_ref().map(|e| e[i]), order }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// First nonzero eigenvalue of the scalar Laplacian (flat torus oracle `1`
    /// for period `2π`).
    LaplacianEigenvalue,
    KillingDimension,
    ManufacturedSolve,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub kind: StudyKind,
    pub table: Vec<ConvergenceRow>,
}

/// Runs `kind` at each resolution of `spec`.
pub fn convergence_study(kind: StudyKind, spec: &AtlasSpec, resolutions: &[usize], options: SpectralOptions) -> Result<ConvergenceStudy> {
    check_nested(resolutions)?;
    let table = match kind {
        StudyKind::LaplacianEigenvalue | StudyKind::KillingDimension => {
            let mut values = Vec::new();
            let mut h = Vec::new();
            for &res in resolutions {
                let atlas = spec.with_resolution(vec![res]).build()?;
                h.push(atlas.chart(0).grid.max_spacing());
                values.push(if kind == StudyKind::KillingDimension {
                    killing_kernel(&atlas, options)?.dimension as f64
                } else {
                    let op = weak_laplacian(&atlas, Valence::SCALAR)?;
                    let r = operator_spectrum(&op, 2, options)?;
                    r.eigenvalues[1]
                });
            }
            let exact = (kind == StudyKind::LaplacianEigenvalue && spec.family == crate::geometry::Family::FlatTorus)
                .then(|| {
                    let longest = (1..=spec.dim())
                        .map(|i| spec.param(&format!("L{i}")).unwrap_or(2.0 * std::f64::consts::PI))
                        .fold(0.0, f64::max);
                    (2.0 * std::f64::consts::PI / longest).powi(2)
                });
            convergence_table(resolutions, &h, &values, exact)?
        }
        StudyKind::ManufacturedSolve => {
            let atlas = spec.build()?;
            let center = atlas.node_point(atlas.node_ref(atlas.node_count() / 2));
            let potential = PotentialSpec { center, radius: 1.0, amplitude: 1.0 };
            manufactured_convergence(spec, resolutions, &potential, default_manufactured_field, options)?.table
        }
    };
    Ok(ConvergenceStudy { kind, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn nesting_is_checked() {
        assert!(check_nested(&[8, 16]).is_err());
        assert!(check_nested(&[8, 16, 24]).is_err());
        assert!(check_nested(&[8, 16, 32]).is_ok());
    }

    #[test]
    fn laplacian_eigenvalue_order() {
        let spec = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 8);
        let s = convergence_study(StudyKind::LaplacianEigenvalue, &spec, &[8, 16, 32], SpectralOptions::default()).unwrap();
        let last = s.table.last().unwrap();
        assert!(last.order.unwrap() > 3.5, "{:?}", s.table);
    }

    #[test]
    fn kernel_dimension_is_stable() {
        let spec = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 8);
        let s = convergence_study(StudyKind::KillingDimension, &spec, &[8, 16, 32], SpectralOptions::default()).unwrap();
        assert!(s.table.iter().all(|r| r.value == 2.0));
    }

    #[test]
    fn richardson_order_without_oracle() {
        let values = [1.0 + 1.0 / 16.0, 1.0 + 1.0 / 256.0, 1.0 + 1.0 / 4096.0];
        let t = convergence_table(&[4, 8, 16], &[0.25, 0.125, 0.0625], &values, None).unwrap();
        assert!((t[2].order.unwrap() - 4.0).abs() < 1e-9);
    }
}
