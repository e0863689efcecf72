use serde::{Deserialize, Serialize};

use super::convergence::{convergence_table, ConvergenceRow};
use super::spectral::{lowest_spectrum, KernelVerdict, SpectralOptions};
use crate::error::{Error, Result};
use crate::field::{SymbolicTensor, TensorField};
use crate::geometry::{AtlasSpec, ManifoldAtlas};
use crate::operators::{deformation_laplacian, multiplication_potential, DiffOperator, PotentialSpec, Valence};
use crate::sparse::{self, Cholesky};

/// Outcome of solving `(𝐋 + V) u = f`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub system: String,
    pub size: usize,
    pub amplitude: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `λ_max / λ_min` of the pencil.
    pub condition_estimate: f64,
    /// Kernel of the pencil; nontrivial only when `V` does not see the Killing fields.
    pub kernel: KernelVerdict,
    pub invertible: bool,
    /// `‖(K + M_V)u − M f‖ / ‖M f‖`; absent if the system was not solved.
    pub residual: Option<f64>,
    pub rhs_norm: f64,
    pub solution_norm: Option<f64>,
    #[serde(skip)]
    pub solution: Option<TensorField>,
}

/// Checks `λ_min(𝐋_h + V_h) > 0` and solves the system when it holds.
/// Zero amplitude is allowed and reported as not invertible.
pub fn invertibility_solve(atlas: &ManifoldAtlas, potential: &PotentialSpec, rhs: &TensorField, options: SpectralOptions) -> Result<SolveReport> {
    if rhs.upper != 1 || rhs.lower != 0 {
        return Err(Error::Parameter("right-hand side must be a vector field".into()));
    }
    let op = deformation_laplacian(atlas)?;
    let v = multiplication_potential(atlas, potential.clone())?;
    let system = sparse::add(&op.stiffness, 1.0, &v.matrix(atlas, Valence::VECTOR)?, 1.0);
    let count = 4;
    let spectrum = lowest_spectrum(&system, &op.mass, count, options)?;
    let kernel = spectrum.default_kernel();
    let lambda_min = spectrum.eigenvalues[0];
    let invertible = kernel.dimension == 0 && lambda_min > 1e-8 * spectrum.lambda_max;
    let f = op.dofs.to_vector(rhs);
    let mf = sparse::matvec(&op.mass, &f);
    let rhs_norm = sparse::dot(&mf, &mf).sqrt();
    let mut report = SolveReport {
        system: format!("{} + V", op.name),
        size: op.len(),
        amplitude: potential.amplitude,
        lambda_min,
        lambda_max: spectrum.lambda_max,
        condition_estimate: spectrum.lambda_max / lambda_min.abs(),
        kernel,
        invertible,
        residual: None,
        rhs_norm,
        solution_norm: None,
        solution: None,
    };
    if !invertible {
        return Ok(report);
    }
    let u = Cholesky::new(&system)?.solve(&mf);
    let r: Vec<f64> = sparse::matvec(&system, &u).iter().zip(&mf).map(|(a, b)| a - b).collect();
    report.residual = Some(sparse::dot(&r, &r).sqrt() / rhs_norm.max(f64::MIN_POSITIVE));
    report.solution_norm = Some(op.inner(&u, &u).sqrt());
    report.solution = Some(op.dofs.to_field(atlas, &u));
    Ok(report)
}

/// Manufactured-solution study: `f = 𝐋u + Vu` is formed exactly from the
/// closed-form `u` and the discrete solution is compared with `u` in the
/// discrete `L²` norm at each resolution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManufacturedStudy {
    pub solves: Vec<SolveReport>,
    pub table: Vec<ConvergenceRow>,
    /// Smallest order in the table.
    pub min_order: f64,
}

pub fn manufactured_convergence(
    spec: &AtlasSpec,
    resolutions: &[usize],
    potential: &PotentialSpec,
    solution: impl Fn(&ManifoldAtlas) -> Result<SymbolicTensor>,
    options: SpectralOptions,
) -> Result<ManufacturedStudy> {
    let mut solves = Vec::new();
    let mut errors = Vec::new();
    let mut spacings = Vec::new();
    for &res in resolutions {
        let atlas = spec.with_resolution(vec![res]).build()?;
        let exact = solution(&atlas)?;
        let lu = DiffOperator::deformation_laplacian(&atlas).apply_symbolic(&atlas, &exact)?.sample(&atlas);
        let ue = exact.sample(&atlas);
        let v = multiplication_potential(&atlas, potential.clone())?;
        let rhs = lu.combine(1.0, &v.apply(&ue), 1.0);
        let report = invertibility_solve(&atlas, potential, &rhs, options)?;
        let u = report
            .solution
            .as_ref()
            .ok_or_else(|| Error::Degenerate(format!("𝐋 + V is not invertible at resolution {res}")))?;
        let diff = u.combine(1.0, &ue, -1.0);
        let m = crate::operators::mass_matrix(&atlas, Valence::VECTOR)?;
        let d = &diff.charts[0];
        errors.push(sparse::dot(d, &sparse::matvec(&m, d)).max(0.0).sqrt());
        spacings.push(atlas.chart(0).grid.max_spacing());
        solves.push(report);
    }
    let table = convergence_table(resolutions, &spacings, &errors, Some(0.0))?;
    let min_order = table.iter().filter_map(|r| r.order).fold(f64::INFINITY, f64::min);
    Ok(ManufacturedStudy { solves, table, min_order })
}

/// `u = (sin x · cos y, cos x + ½ sin 2y)` in the coordinate frame.
pub fn default_manufactured_field(atlas: &ManifoldAtlas) -> Result<SymbolicTensor> {
    use crate::expr::Expr;
    let (x, y) = (Expr::var(0), Expr::var(1));
    let u0 = x.sin() * y.cos();
    let u1 = x.cos() + 0.5 * (2.0 * &y).sin();
    SymbolicTensor::uniform(atlas, 1, 0, vec![u0, u1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ChartPoint;
    use std::f64::consts::PI;

    fn ball(amplitude: f64) -> PotentialSpec {
        PotentialSpec { center: ChartPoint::new(0, vec![PI, PI]), radius: 1.0, amplitude }
    }

    #[test]
    fn potential_lifts_the_kernel() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16).build().unwrap();
        let rhs = TensorField::from_fn(&atlas, 1, 0, |_, x| vec![x[0].sin(), 1.0]);
        let strong = invertibility_solve(&atlas, &ball(1.0), &rhs, SpectralOptions::default()).unwrap();
        assert!(strong.invertible && strong.lambda_min > 0.0);
        assert!(strong.residual.unwrap() < 1e-10);
        let weak = invertibility_solve(&atlas, &ball(1e-3), &rhs, SpectralOptions::default()).unwrap();
        assert!(weak.lambda_min < strong.lambda_min);
        let zero = invertibility_solve(&atlas, &ball(0.0), &rhs, SpectralOptions::default()).unwrap();
        assert!(!zero.invertible && zero.residual.is_none());
        assert_eq!(zero.kernel.dimension, 2);
    }

    #[test]
    fn negative_amplitude_is_an_error() {
        let atlas = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 8).build().unwrap();
        let rhs = TensorField::zeros(&atlas, 1, 0);
        assert!(invertibility_solve(&atlas, &ball(-1.0), &rhs, SpectralOptions::default()).is_err());
    }

    #[test]
    fn manufactured_solution_converges() {
        let spec = AtlasSpec::flat_torus(vec![2.0 * PI, 2.0 * PI], 16);
        let study = manufactured_convergence(&spec, &[12, 24, 48], &ball(1.0), default_manufactured_field, SpectralOptions::default()).unwrap();
        assert!(study.min_order > 3.5, "{:?}", study.table);
    }
}
