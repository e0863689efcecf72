use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Chart, ChartWeight, ManifoldAtlas, Transition};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FlatTorus,
    WarpedTorus,
    SphereStereographic,
    WarpedCylinderTorus,
}

impl Family {
    pub const ALL: [Family; 4] =
        [Family::FlatTorus, Family::WarpedTorus, Family::SphereStereographic, Family::WarpedCylinderTorus];

    pub fn name(&self) -> &'static str {
        match self {
            Family::FlatTorus => "flat_torus",
            Family::WarpedTorus => "warped_torus",
            Family::SphereStereographic => "sphere_stereographic",
            Family::WarpedCylinderTorus => "warped_cylinder_torus",
        }
    }

    /// Parameter names with defaults. Flat tori take `L1..Ln` on top of these.
    pub fn defaults(&self) -> Vec<(&'static str, f64)> {
        match self {
            Family::FlatTorus => vec![],
            Family::WarpedTorus => vec![("a", 2.0), ("b", 1.0), ("Ly", 2.0 * PI)],
            Family::SphereStereographic => vec![("extent", 2.2)],
            Family::WarpedCylinderTorus => vec![("a", 1.0), ("b", 1.0), ("kappa", 2.0), ("Ly", 2.0 * PI)],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown manifold family '{s}'")))
    }
}

/// Text-level description of a builtin manifold: family, named parameters
/// and nodes per axis (a single entry applies to every axis).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasSpec {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    pub resolution: Vec<usize>,
}

impl AtlasSpec {
    pub fn new(family: Family, params: BTreeMap<String, f64>, resolution: Vec<usize>) -> Self {
        Self { family, params, resolution }
    }

    pub fn flat_torus(periods: Vec<f64>, resolution: usize) -> Self {
        let params = periods.iter().enumerate().map(|(i, &l)| (format!("L{}", i + 1), l)).collect();
        Self::new(Family::FlatTorus, params, vec![resolution])
    }

    pub fn warped_torus(a: f64, b: f64, resolution: usize) -> Self {
        let params = [("a".to_string(), a), ("b".to_string(), b)].into_iter().collect();
        Self::new(Family::WarpedTorus, params, vec![resolution])
    }

    pub fn sphere(resolution: usize) -> Self {
        Self::new(Family::SphereStereographic, BTreeMap::new(), vec![resolution])
    }

    pub fn warped_cylinder(resolution: usize) -> Self {
        Self::new(Family::WarpedCylinderTorus, BTreeMap::new(), vec![resolution])
    }

    /// One spec per family with default parameters. Sphere charts get an odd
    /// node count so the chart origin is a node.
    pub fn builtin_families(resolution: usize) -> Vec<Self> {
        vec![
            Self::flat_torus(vec![2.0 * PI, 2.0 * PI], resolution),
            Self::warped_torus(2.0, 1.0, resolution),
            Self::sphere(resolution | 1),
            Self::warped_cylinder(resolution),
        ]
    }

    pub fn with_resolution(&self, resolution: Vec<usize>) -> Self {
        Self { resolution, ..self.clone() }
    }

    /// Same manifold with every axis resolution multiplied by `factor`
    /// (bounded axes keep their end nodes, so `s` nodes become `factor(s−1)+1`).
    pub fn refined(&self, factor: usize) -> Self {
        let bounded = self.family == Family::SphereStereographic;
        let resolution = self
            .resolution
            .iter()
            .map(|&s| if bounded { factor * (s - 1) + 1 } else { factor * s })
            .collect();
        self.with_resolution(resolution)
    }

    /// Parameter value, falling back to the family default.
    pub fn param(&self, name: &str) -> Result<f64> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        self.family
            .defaults()
            .into_iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Parameter(format!("missing parameter '{name}' for {}", self.family)))
    }

    /// Manifold dimension implied by the parameters.
    pub fn dim(&self) -> usize {
        match self.family {
            Family::FlatTorus => self.flat_periods().len().max(1),
            _ => 2,
        }
    }

    fn flat_periods(&self) -> Vec<f64> {
        let mut periods = Vec::new();
        while let Some(l) = self.params.get(&format!("L{}", periods.len() + 1)) {
            periods.push(*l);
        }
        if periods.is_empty() {
            periods = vec![2.0 * PI, 2.0 * PI];
        }
        periods
    }

    fn axis_resolution(&self, n: usize) -> Result<Vec<usize>> {
        match self.resolution.len() {
            1 => Ok(vec![self.resolution[0]; n]),
            k if k == n => Ok(self.resolution.clone()),
            k => Err(Error::Parameter(format!("resolution has {k} entries for a {n}-dimensional manifold"))),
        }
    }

    fn check_names(&self) -> Result<()> {
        let defaults = self.family.defaults();
        let n_periods = if self.family == Family::FlatTorus { self.flat_periods().len() } else { 0 };
        for key in self.params.keys() {
            let known = defaults.iter().any(|(k, _)| k == key)
                || (1..=n_periods).any(|i| *key == format!("L{i}"));
            if !known {
                return Err(Error::Parameter(format!("unknown parameter '{key}' for {}", self.family)));
            }
        }
        for v in self.params.values() {
            if !v.is_finite() {
                return Err(Error::Parameter("parameters must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ManifoldAtlas> {
        self.check_names()?;
        match self.family {
            Family::FlatTorus => self.build_flat(),
            Family::WarpedTorus => {
                let (a, b) = (self.param("a")?, self.param("b")?);
                if a - b.abs() <= 0.0 {
                    return Err(Error::Parameter(format!("warp f = a + b cos x must stay positive (a = {a}, b = {b})")));
                }
                let f = a + b * Expr::var(0).cos();
                let f_min = a - b.abs();
                // K = -f''/f = b cos x / (a + b cos x), maximised where |cos x| = 1
                let k_max = [1.0f64, -1.0].iter().map(|c| b * c / (a + b * c)).fold(0.0, f64::max);
                self.build_warped(f, f_min, k_max)
            }
            Family::WarpedCylinderTorus => {
                let (a, b, kappa) = (self.param("a")?, self.param("b")?, self.param("kappa")?);
                if a <= 0.0 || b < 0.0 || kappa < 0.0 {
                    return Err(Error::Parameter("warped cylinder needs a > 0, b ≥ 0, kappa ≥ 0".into()));
                }
                let f = a + b * (-kappa * (1.0 - Expr::var(0).cos())).exp();
                let f_min = a + b * (-2.0 * kappa).exp();
                // sup of K = -f''/f by dense sampling of the closed form
                let k_max = (0..20000)
                    .map(|i| {
                        let x = 2.0 * PI * i as f64 / 20000.0;
                        let e = (-kappa * (1.0 - x.cos())).exp();
                        let f2 = b * e * (kappa * kappa * x.sin().powi(2) - kappa * x.cos());
                        -f2 / (a + b * e)
                    })
                    .fold(0.0, f64::max);
                self.build_warped(f, f_min, k_max)
            }
            Family::SphereStereographic => self.build_sphere(),
        }
    }

    fn build_flat(&self) -> Result<ManifoldAtlas> {
        let periods = self.flat_periods();
        if periods.iter().any(|&l| l <= 0.0) {
            return Err(Error::Parameter("torus periods must be positive".into()));
        }
        let n = periods.len();
        let grid = Grid::new(vec![0.0; n], periods.clone(), self.axis_resolution(n)?, vec![true; n])?;
        let metric = (0..n)
            .map(|i| (0..n).map(|j| Expr::constant(if i == j { 1.0 } else { 0.0 })).collect())
            .collect();
        let chart = Chart::new(0, grid, metric, None, ChartWeight::One);
        let inj = periods.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
        ManifoldAtlas::assemble(self.clone(), vec![chart], vec![], inj)
    }

    fn build_warped(&self, f: Expr, f_min: f64, k_max: f64) -> Result<ManifoldAtlas> {
        let ly = self.param("Ly")?;
        if ly <= 0.0 {
            return Err(Error::Parameter("Ly must be positive".into()));
        }
        let grid = Grid::new(vec![0.0, 0.0], vec![2.0 * PI, ly], self.axis_resolution(2)?, vec![true, true])?;
        let metric = vec![vec![Expr::one(), Expr::zero()], vec![Expr::zero(), &f * &f]];
        let chart = Chart::new(0, grid, metric, None, ChartWeight::One);
        let mut inj = PI.min(f_min * ly / 2.0);
        if k_max > 0.0 {
            inj = inj.min(PI / k_max.sqrt());
        }
        ManifoldAtlas::assemble(self.clone(), vec![chart], vec![], inj)
    }

    fn build_sphere(&self) -> Result<ManifoldAtlas> {
        let extent = self.param("extent")?;
        if extent < 2.05 {
            return Err(Error::Parameter("sphere chart extent must be at least 2.05 so the charts overlap".into()));
        }
        let res = self.axis_resolution(2)?;
        let (x, y) = (Expr::var(0), Expr::var(1));
        let r2 = &x * &x + &y * &y;
        let conformal = 4.0 / (1.0 + &r2).powi(2);
        let mut charts = Vec::new();
        for id in 0..2 {
            let grid = Grid::new(vec![-extent; 2], vec![extent; 2], res.clone(), vec![false, false])?;
            let metric = vec![vec![conformal.clone(), Expr::zero()], vec![Expr::zero(), conformal.clone()]];
            charts.push(Chart::new(id, grid, metric, Some(1.25), ChartWeight::StereographicHalf));
        }
        // both charts project from opposite poles with the same orientation
        // convention, so the transition is the inversion x ↦ x/|x|²
        let inversion = vec![&x / &r2, &y / &r2];
        let transitions = vec![Transition::new(0, 1, inversion.clone()), Transition::new(1, 0, inversion)];
        ManifoldAtlas::assemble(self.clone(), charts, transitions, PI)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injectivity_radii() {
        let flat = AtlasSpec::flat_torus(vec![2.0 * PI, 4.0], 8).build().unwrap();
        assert!((flat.injectivity_radius() - 2.0).abs() < 1e-15);
        let warped = AtlasSpec::warped_torus(2.0, 1.0, 8).build().unwrap();
        assert!((warped.injectivity_radius() - PI).abs() < 1e-15);
        let sphere = AtlasSpec::sphere(9).build().unwrap();
        assert_eq!(sphere.injectivity_radius(), PI);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(AtlasSpec::warped_torus(1.0, 1.0, 8).build().is_err());
        let mut spec = AtlasSpec::sphere(9);
        spec.params.insert("radius".into(), 2.0);
        assert!(spec.build().is_err());
        assert!("klein_bottle".parse::<Family>().is_err());
    }

    #[test]
    fn family_names_roundtrip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
    }

    #[test]
    fn flat_torus_dimension_follows_periods() {
        let spec = AtlasSpec::flat_torus(vec![1.0, 2.0, 3.0], 6);
        assert_eq!(spec.build().unwrap().dim(), 3);
    }
}
