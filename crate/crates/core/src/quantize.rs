//! Equal-mass atom clouds standing in for continuous laws.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::measures::PointMeasure;

/// `mass · U(a, b)` as `n` equal atoms at `a + k (b - a) / (n - 1)`,
/// endpoints included so that support gaps are reproduced exactly.
pub fn uniform(a: f64, b: f64, mass: f64, n: usize) -> Result<PointMeasure> {
    if !(b > a) || n < 2 {
        return Err(Error::InvalidMeasure(format!("uniform({a}, {b}) with {n} atoms")));
    }
    let step = (b - a) / (n - 1) as f64;
    let w = mass / n as f64;
    let atoms: Vec<(f64, f64)> = (0..n).map(|k| (a + k as f64 * step, w)).collect();
    PointMeasure::on_line(&atoms)
}

/// Transport error of [`uniform`]: at most `mass · (b - a) / (n - 1)`.
pub fn uniform_error_bound(a: f64, b: f64, mass: f64, n: usize) -> f64 {
    mass * (b - a) / (n - 1) as f64
}

/// `mass · N(mean, var)` as `n` equal atoms at the quantile midpoints.
pub fn gaussian(mean: f64, var: f64, mass: f64, n: usize) -> Result<PointMeasure> {
    let law = Normal::new(mean, var.sqrt()).map_err(|e| Error::InvalidMeasure(e.to_string()))?;
    if n == 0 {
        return Err(Error::InvalidMeasure("no atoms".into()));
    }
    let w = mass / n as f64;
    let atoms: Vec<(f64, f64)> = (0..n)
        .map(|k| (law.inverse_cdf((k as f64 + 0.5) / n as f64), w))
        .collect();
    PointMeasure::on_line(&atoms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masses_and_support() {
        let u = uniform(8.0, 9.0, 0.125, 200).unwrap();
        assert_eq!(u.len(), 200);
        assert!((u.total_mass() - 0.125).abs() < 1e-15);
        assert_eq!(u.position(0)[0], 8.0);
        assert_eq!(u.position(199)[0], 9.0);
        let g = gaussian(1.0, 4.0, 1.0 / 6.0, 201).unwrap();
        assert!((g.position(100)[0] - 1.0).abs() < 1e-12);
        assert!((g.total_mass() - 1.0 / 6.0).abs() < 1e-15);
    }
}
