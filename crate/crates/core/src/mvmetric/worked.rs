//! A hand-built three-layer versus four-layer instance with a matching of
//! separation 8, quantized with a configurable number of atoms per piece.

use super::{MatchedPair, Matching, MatchingKind, Triple};
use crate::error::Result;
use crate::measures::{LayeredMeasure, PointMeasure};
use crate::quantize;

#[derive(Debug, Clone)]
pub struct WorkedExample {
    pub mu: LayeredMeasure,
    pub nu: LayeredMeasure,
    /// Radius 3, the four matched pairs and shifts `(-10, 4, 2, -2)`.
    pub triple: Triple,
    /// Sum of the quantization errors of the uniform pieces that enter a
    /// matched transport term.
    pub quantization_bound: f64,
}

/// `μ = (⅛δ_0 + ⅛U(8,9), ¼δ_1 + ⅙N(1,4), ¼N(0,1))` and
/// `ν = (¼δ_{-1} + ⅒δ_{10}, ⅙N(2,1), ⅙U(3,6), ⅛N(3,3))`, each continuous
/// piece replaced by `n` atoms.
pub fn worked_example(n: usize) -> Result<WorkedExample> {
    let a1_u = quantize::uniform(8.0, 9.0, 0.125, n)?;
    let a2_g = quantize::gaussian(1.0, 4.0, 1.0 / 6.0, n)?;
    let a3 = quantize::gaussian(0.0, 1.0, 0.25, n)?;
    let g2 = quantize::gaussian(2.0, 1.0, 1.0 / 6.0, n)?;
    let g3 = quantize::uniform(3.0, 6.0, 1.0 / 6.0, n)?;
    let g4 = quantize::gaussian(3.0, 3.0, 0.125, n)?;
    let mu = LayeredMeasure::from_points(vec![
        PointMeasure::on_line(&[(0.0, 0.125)])?.add(&a1_u)?,
        PointMeasure::on_line(&[(1.0, 0.25)])?.add(&a2_g)?,
        a3.clone(),
    ])?;
    let nu = LayeredMeasure::from_points(vec![
        PointMeasure::on_line(&[(-1.0, 0.25), (10.0, 0.1)])?,
        g2.clone(),
        g3.clone(),
        g4,
    ])?;
    let pair = |mu_layer, mu_part, nu_layer, nu_part| MatchedPair {
        mu_layer,
        mu_part,
        nu_layer,
        nu_part,
    };
    let matching = Matching {
        pairs: vec![
            pair(1, PointMeasure::on_line(&[(0.0, 0.1)])?, 1, PointMeasure::on_line(&[(10.0, 0.1)])?),
            pair(1, a1_u, 3, g3.scaled(0.75)),
            pair(2, PointMeasure::on_line(&[(1.0, 0.25)])?, 1, PointMeasure::on_line(&[(-1.0, 0.25)])?),
            pair(3, a3.scaled(2.0 / 3.0), 2, g2),
        ],
        kind: MatchingKind::Matching,
    };
    let quantization_bound =
        quantize::uniform_error_bound(8.0, 9.0, 0.125, n) + quantize::uniform_error_bound(3.0, 6.0, 0.125, n);
    Ok(WorkedExample {
        mu,
        nu,
        triple: Triple {
            r: 3.0,
            matching,
            shifts: [-10.0, 4.0, 2.0, -2.0].iter().map(|&x| vec![x]).collect(),
        },
        quantization_bound,
    })
}
