//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] holds the Taylor coefficients `c_α` of a function around a
//! point, `f(x + δ) = Σ c_α δ^α`, for all multi-indices with `|α| ≤ degree`.
//! Products and elementary functions are exact up to the truncation order,
//! and partial differentiation lowers the valid degree by one.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

/// Monomial bookkeeping shared by all jets of a given dimension and degree.
#[derive(Debug)]
pub struct JetSpace {
    dim: usize,
    degree: usize,
    exponents: Vec<Vec<u8>>,
    total: Vec<usize>,
    /// `(i, j, k)`: monomial `i` times monomial `j` is monomial `k`.
    products: Vec<(u32, u32, u32)>,
    /// Per variable: `(target, source, factor)` for `∂/∂x_var`.
    derivatives: Vec<Vec<(u32, u32, f64)>>,
    unit: Vec<usize>,
}

impl JetSpace {
    pub fn new(dim: usize, degree: usize) -> Arc<Self> {
        let mut exponents: Vec<Vec<u8>> = Vec::new();
        for d in 0..=degree {
            let mut current = vec![0u8; dim];
            enumerate_degree(dim, d, 0, &mut current, &mut exponents);
        }
        let index: HashMap<Vec<u8>, usize> =
            exponents.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let total: Vec<usize> = exponents
            .iter()
            .map(|e| e.iter().map(|&v| usize::from(v)).sum())
            .collect();

        let mut products = Vec::new();
        for (i, a) in exponents.iter().enumerate() {
            for (j, b) in exponents.iter().enumerate() {
                if total[i] + total[j] > degree {
                    continue;
                }
                let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                products.push((i as u32, j as u32, index[&sum] as u32));
            }
        }
        products.sort_by_key(|&(_, _, k)| total[k as usize]);

        let mut derivatives = vec![Vec::new(); dim];
        for (var, table) in derivatives.iter_mut().enumerate() {
            for (src, e) in exponents.iter().enumerate() {
                if e[var] == 0 {
                    continue;
                }
                let mut lowered = e.clone();
                lowered[var] -= 1;
                table.push((index[&lowered] as u32, src as u32, f64::from(e[var])));
            }
        }

        let unit = (0..dim)
            .map(|v| {
                let mut e = vec![0u8; dim];
                e[v] = 1;
                index.get(&e).copied().unwrap_or(usize::MAX)
            })
            .collect();

        Arc::new(Self { dim, degree, exponents, total, products, derivatives, unit })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Index of the monomial with the given exponents.
    pub fn monomial(&self, exponents: &[u8]) -> Option<usize> {
        self.exponents.iter().position(|e| e == exponents)
    }
}

fn enumerate_degree(dim: usize, remaining: usize, axis: usize, current: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if axis + 1 == dim {
        current[axis] = remaining as u8;
        out.push(current.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        current[axis] = k as u8;
        enumerate_degree(dim, remaining - k, axis + 1, current, out);
    }
    current[axis] = 0;
}

#[derive(Clone, Debug)]
pub struct Jet {
    space: Arc<JetSpace>,
    degree: usize,
    coeffs: Vec<f64>,
}

impl Jet {
    pub fn constant(space: &Arc<JetSpace>, value: f64) -> Self {
        let mut coeffs = vec![0.0; space.len()];
        coeffs[0] = value;
        Self { space: space.clone(), degree: space.degree, coeffs }
    }

    /// Jet of the coordinate function `x_var` around `value`.
    pub fn variable(space: &Arc<JetSpace>, var: usize, value: f64) -> Self {
        let mut jet = Self::constant(space, value);
        if space.degree >= 1 {
            jet.coeffs[space.unit[var]] = 1.0;
        }
        jet
    }

    pub fn constant_like(&self, value: f64) -> Self {
        let mut jet = Self::constant(&self.space, value);
        jet.degree = self.degree;
        jet
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// Valid truncation degree.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coefficient(&self, monomial: usize) -> f64 {
        self.coeffs[monomial]
    }

    /// First partial derivatives at the expansion point.
    pub fn gradient(&self) -> Vec<f64> {
        (0..self.space.dim).map(|v| self.coeffs[self.space.unit[v]]).collect()
    }

    /// Partial derivative `∂/∂x_var`; the result is valid to one degree less.
    pub fn derivative(&self, var: usize) -> Self {
        assert!(self.degree >= 1, "jet degree exhausted");
        let mut coeffs = vec![0.0; self.coeffs.len()];
        for &(target, source, factor) in &self.space.derivatives[var] {
            if self.space.total[source as usize] <= self.degree {
                coeffs[target as usize] += factor * self.coeffs[source as usize];
            }
        }
        Self { space: self.space.clone(), degree: self.degree - 1, coeffs }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            space: self.space.clone(),
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    fn truncated(mut self, degree: usize) -> Self {
        for (c, &t) in self.coeffs.iter_mut().zip(&self.space.total) {
            if t > degree {
                *c = 0.0;
            }
        }
        self.degree = degree;
        self
    }

    /// Applies a scalar function given its derivatives at the constant term.
    fn compose(&self, derivs: &[f64]) -> Self {
        let mut nilpotent = self.clone();
        nilpotent.coeffs[0] = 0.0;
        let d = self.degree;
        let mut factorial = vec![1.0; d + 1];
        for k in 1..=d {
            factorial[k] = factorial[k - 1] * k as f64;
        }
        let mut result = self.constant_like(derivs[d] / factorial[d]);
        for k in (0..d).rev() {
            result = &result * &nilpotent;
            result.coeffs[0] += derivs[k] / factorial[k];
        }
        result
    }

    pub fn powf(&self, p: f64) -> Self {
        let a = self.value();
        let mut derivs = Vec::with_capacity(self.degree + 1);
        let mut falling = 1.0;
        for k in 0..=self.degree {
            derivs.push(falling * a.powf(p - k as f64));
            falling *= p - k as f64;
        }
        self.compose(&derivs)
    }

    pub fn recip(&self) -> Self {
        self.powf(-1.0)
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let derivs: Vec<f64> = (0..=self.degree).map(|k| cycle[k % 4]).collect();
        self.compose(&derivs)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        let derivs: Vec<f64> = (0..=self.degree).map(|k| cycle[k % 4]).collect();
        self.compose(&derivs)
    }

    pub fn exp(&self) -> Self {
        let e = self.value().exp();
        self.compose(&vec![e; self.degree + 1])
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        let degree = self.degree.min(rhs.degree);
        let coeffs = self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect();
        Jet { space: self.space.clone(), degree, coeffs }.truncated(degree)
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        let degree = self.degree.min(rhs.degree);
        let coeffs = self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect();
        Jet { space: self.space.clone(), degree, coeffs }.truncated(degree)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        let degree = self.degree.min(rhs.degree);
        let mut coeffs = vec![0.0; self.coeffs.len()];
        let total = &self.space.total;
        for &(i, j, k) in &self.space.products {
            if total[k as usize] > degree {
                break;
            }
            coeffs[k as usize] += self.coeffs[i as usize] * rhs.coeffs[j as usize];
        }
        Jet { space: self.space.clone(), degree, coeffs }
    }
}

impl Div for &Jet {
    type Output = Jet;
    fn div(self, rhs: &Jet) -> Jet {
        self * &rhs.recip()
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_count_matches_binomial() {
        let space = JetSpace::new(2, 4);
        assert_eq!(space.len(), 15);
        let space = JetSpace::new(3, 2);
        assert_eq!(space.len(), 10);
    }

    #[test]
    fn taylor_coefficients_of_product_and_sin() {
        let space = JetSpace::new(2, 4);
        let x = Jet::variable(&space, 0, 0.3);
        let y = Jet::variable(&space, 1, -0.2);
        let f = (&x * &y).sin();
        // ∂x∂y sin(xy) = cos(xy) - xy sin(xy)
        let xy: f64 = 0.3 * -0.2;
        let mixed = f.derivative(0).derivative(1).value();
        assert!((mixed - (xy.cos() - xy * xy.sin())).abs() < 1e-14);
        // ∂x^4 sin(xy) = y^4 sin(xy)
        let d4 = f.derivative(0).derivative(0).derivative(0).derivative(0).value();
        assert!((d4 - 0.2f64.powi(4) * xy.sin()).abs() < 1e-14);
    }

    #[test]
    fn reciprocal_series() {
        let space = JetSpace::new(1, 5);
        let x = Jet::variable(&space, 0, 2.0);
        let r = x.recip();
        // d^k/dx^k 1/x = (-1)^k k! / x^{k+1}
        let mut d = r.clone();
        let mut factorial = 1.0;
        for k in 1..=5 {
            d = d.derivative(0);
            factorial *= k as f64;
            let expected = if k % 2 == 0 { 1.0 } else { -1.0 } * factorial / 2f64.powi(k + 1);
            assert!((d.value() - expected).abs() < 1e-12);
        }
    }
}
