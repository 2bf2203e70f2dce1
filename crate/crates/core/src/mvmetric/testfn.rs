//! The older metric built from translation-invariant test functionals.

use crate::error::{Error, Result};
use crate::measures::{LayeredMeasure, PointMeasure};

use super::tent_weight;

/// A translation-invariant function of `arity` points in reduced form: the
/// product of tents `f_r(x_j - x_1)` over `j = 2..=arity`. Its sup norm is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub arity: usize,
    pub radius: f64,
    pub weight: f64,
}

impl TestFunction {
    pub fn eval(&self, points: &[&[f64]]) -> f64 {
        let base = points[0];
        let mut v = 1.0;
        for p in &points[1..] {
            let diff: Vec<f64> = p.iter().zip(base).map(|(a, b)| a - b).collect();
            v *= tent_weight(&diff, self.radius);
            if v == 0.0 {
                break;
            }
        }
        v
    }

    pub fn sup_norm(&self) -> f64 {
        1.0
    }

    /// `Σ_i ∫ f d α_i^{⊗k}` by exact summation over atom tuples.
    pub fn functional(&self, m: &LayeredMeasure) -> f64 {
        m.point_layers()
            .iter()
            .map(|(_, p)| self.layer_functional(p))
            .sum()
    }

    fn layer_functional(&self, p: &PointMeasure) -> f64 {
        let n = p.len();
        if n == 0 {
            return 0.0;
        }
        let mut idx = vec![0usize; self.arity];
        let mut total = 0.0;
        loop {
            let pts: Vec<&[f64]> = idx.iter().map(|&i| p.position(i)).collect();
            let w: f64 = idx.iter().map(|&i| p.weight(i)).product();
            total += w * self.eval(&pts);
            let mut k = self.arity;
            loop {
                if k == 0 {
                    return total;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

/// Twelve tents: pairs then triples, radii in the order 1, 2, 4, 1/2, 8, 16.
/// Member `j` (from 1) has weight `2^-j / (1 + ‖f‖)`.
pub fn default_family() -> Vec<TestFunction> {
    let radii = [1.0, 2.0, 4.0, 0.5, 8.0, 16.0];
    let mut out = Vec::new();
    for arity in [2, 3] {
        for &radius in &radii {
            let j = out.len() as i32 + 1;
            out.push(TestFunction {
                arity,
                radius,
                weight: 2f64.powi(-j) / 2.0,
            });
        }
    }
    out
}

/// `Σ_f w_f |Λ(f, μ) − Λ(f, ν)|` over a finite family.
pub fn original_metric_d(mu: &LayeredMeasure, nu: &LayeredMeasure, family: &[TestFunction]) -> Result<f64> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    Ok(family
        .iter()
        .map(|f| f.weight * (f.functional(mu) - f.functional(nu)).abs())
        .sum())
}
