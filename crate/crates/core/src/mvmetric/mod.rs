//! The coupling metric on the translation-invariant compactification.
//!
//! Elements are represented by [`LayeredMeasure`]s. The metric is an
//! infimum over triples `(r, matching, shifts)`; it is evaluated exactly on
//! tiny one-dimensional instances ([`metric_exact`]) and bounded from above
//! elsewhere ([`metric_upper`]). The older test-function metric is available
//! as [`original_metric_d`] for cross-checks.

mod concentration;
mod exact;
mod testfn;
mod upper;
mod worked;

use std::collections::BTreeMap;

use serde_json::json;

use crate::error::{Error, Result};
use crate::measures::{dist, LayeredMeasure, Measure, PointMeasure, MERGE_TOL};
use crate::transport::{generalized_wasserstein, wasserstein};

pub use concentration::{concentration, concentration_points};
pub use exact::{metric_exact, metric_exact_with, ExactMetric, EXACT_MAX_ATOMS, EXACT_MAX_LAYERS};
pub use testfn::{default_family, original_metric_d, TestFunction};
pub use upper::{metric_upper, SearchBudget, UpperBound};
pub use worked::{worked_example, WorkedExample};

/// Tent profile: 1 on `|x| <= r`, 0 beyond `r + 1`, linear in between.
#[inline]
pub fn tent_weight(x: &[f64], r: f64) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    tent_of_norm(n, r)
}

#[inline]
pub(crate) fn tent_of_norm(n: f64, r: f64) -> f64 {
    (r + 1.0 - n).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchingKind {
    /// Paired submeasures carry equal mass; transport by `W`.
    Matching,
    /// Masses may differ; transport by the unequal-mass distance.
    Generalized,
}

/// One pair of a matching: a submeasure of layer `mu_layer` of the first
/// measure and one of layer `nu_layer` of the second.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub mu_layer: u32,
    pub mu_part: PointMeasure,
    pub nu_layer: u32,
    pub nu_part: PointMeasure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<MatchedPair>,
    pub kind: MatchingKind,
}

impl Matching {
    pub fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            kind: MatchingKind::Matching,
        }
    }

    /// Checks the structural conditions against the parent measures:
    /// equal positive masses (matchings only), domination by the parent
    /// layers, and disjoint supports on each side.
    pub fn validate(&self, mu: &LayeredMeasure, nu: &LayeredMeasure) -> Result<()> {
        for (k, p) in self.pairs.iter().enumerate() {
            let (a, b) = (p.mu_part.total_mass(), p.nu_part.total_mass());
            if a <= 0.0 || b <= 0.0 {
                return Err(Error::InvalidMatching(format!("pair {k} has zero mass")));
            }
            if self.kind == MatchingKind::Matching && (a - b).abs() > 1e-10 {
                return Err(Error::InvalidMatching(format!(
                    "pair {k} masses differ: {a} vs {b}"
                )));
            }
        }
        residual_side(mu, self.pairs.iter().map(|p| (p.mu_layer, &p.mu_part)))?;
        residual_side(nu, self.pairs.iter().map(|p| (p.nu_layer, &p.nu_part)))?;
        check_disjoint(self.pairs.iter().map(|p| (p.mu_layer, &p.mu_part)))?;
        check_disjoint(self.pairs.iter().map(|p| (p.nu_layer, &p.nu_part)))?;
        Ok(())
    }

    /// Reversed matching `(nu_k, mu_k)`.
    pub fn inverse(&self) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .map(|p| MatchedPair {
                    mu_layer: p.nu_layer,
                    mu_part: p.nu_part.clone(),
                    nu_layer: p.mu_layer,
                    nu_part: p.mu_part.clone(),
                })
                .collect(),
            kind: self.kind,
        }
    }
}

fn check_disjoint<'a>(parts: impl Iterator<Item = (u32, &'a PointMeasure)>) -> Result<()> {
    let parts: Vec<_> = parts.collect();
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            if parts[i].0 != parts[j].0 {
                continue;
            }
            for (x, _) in parts[i].1.atoms() {
                for (y, _) in parts[j].1.atoms() {
                    if dist(x, y) < MERGE_TOL {
                        return Err(Error::InvalidMatching(format!(
                            "supports of pairs {i} and {j} intersect"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Separation of a matching: the smallest same-side distance between
/// supports of distinct pairs; supports in distinct layers are infinitely far.
pub fn separation(phi: &Matching) -> f64 {
    let side = |sel: &dyn Fn(&MatchedPair) -> (u32, &PointMeasure)| -> f64 {
        let mut s = f64::INFINITY;
        for i in 0..phi.pairs.len() {
            for j in i + 1..phi.pairs.len() {
                let (li, pi) = sel(&phi.pairs[i]);
                let (lj, pj) = sel(&phi.pairs[j]);
                if li != lj {
                    continue;
                }
                for (x, _) in pi.atoms() {
                    for (y, _) in pj.atoms() {
                        s = s.min(dist(x, y));
                    }
                }
            }
        }
        s
    };
    side(&|p| (p.mu_layer, &p.mu_part)).min(side(&|p| (p.nu_layer, &p.nu_part)))
}

/// A triple `(r, matching, shifts)`, one shift per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub r: f64,
    pub matching: Matching,
    pub shifts: Vec<Vec<f64>>,
}

impl Triple {
    pub fn empty(r: f64) -> Self {
        Self {
            r,
            matching: Matching::empty(),
            shifts: Vec::new(),
        }
    }

    /// JSON witness: pair supports as index lists into the parent layer's
    /// atom array (sorted atom order), plus weights and shifts.
    pub fn to_json(&self, mu: &LayeredMeasure, nu: &LayeredMeasure) -> Result<serde_json::Value> {
        let index_of = |m: &LayeredMeasure, layer: u32, part: &PointMeasure| -> Result<Vec<usize>> {
            let parent = m
                .layer(layer)
                .ok_or_else(|| Error::InvalidMatching(format!("no layer {layer}")))?
                .to_points();
            part.atoms()
                .map(|(x, _)| {
                    (0..parent.len())
                        .find(|&i| dist(parent.position(i), x) < MERGE_TOL)
                        .ok_or_else(|| Error::InvalidMatching("atom not in parent".into()))
                })
                .collect()
        };
        let mut pairs = Vec::new();
        for p in &self.matching.pairs {
            pairs.push(json!({
                "mu_layer": p.mu_layer,
                "mu_atoms": index_of(mu, p.mu_layer, &p.mu_part)?,
                "mu_weights": p.mu_part.weights(),
                "nu_layer": p.nu_layer,
                "nu_atoms": index_of(nu, p.nu_layer, &p.nu_part)?,
                "nu_weights": p.nu_part.weights(),
            }));
        }
        Ok(json!({
            "r": self.r,
            "kind": match self.matching.kind {
                MatchingKind::Matching => "matching",
                MatchingKind::Generalized => "g-matching",
            },
            "pairs": pairs,
            "shifts": self.shifts,
        }))
    }
}

/// Subtracts the parts assigned to each layer; errors if a part is not
/// dominated by its parent layer.
fn residual_side<'a>(
    m: &LayeredMeasure,
    parts: impl Iterator<Item = (u32, &'a PointMeasure)>,
) -> Result<LayeredMeasure> {
    let mut layers: BTreeMap<u32, (PointMeasure, Vec<f64>)> = m
        .point_layers()
        .into_iter()
        .map(|(k, p)| {
            let w = p.weights().to_vec();
            (k, (p, w))
        })
        .collect();
    for (layer, part) in parts {
        let (parent, w) = layers
            .get_mut(&layer)
            .ok_or_else(|| Error::InvalidMatching(format!("layer {layer} not in support")))?;
        for (x, v) in part.atoms() {
            let i = (0..parent.len())
                .find(|&i| dist(parent.position(i), x) < MERGE_TOL)
                .ok_or_else(|| Error::InvalidMatching("submeasure atom outside parent support".into()))?;
            w[i] -= v;
            if w[i] < -1e-12 {
                return Err(Error::InvalidMatching(
                    "submeasures exceed their parent layer".into(),
                ));
            }
            if w[i] < 1e-15 {
                w[i] = 0.0;
            }
        }
    }
    let mut out = BTreeMap::new();
    for (k, (p, w)) in layers {
        out.insert(k, Measure::Point(p.reweighted(w)?));
    }
    Ok(LayeredMeasure::from_map_unchecked(out))
}

/// Cost of a triple.
pub fn triple_cost(mu: &LayeredMeasure, nu: &LayeredMeasure, t: &Triple) -> Result<f64> {
    if t.shifts.len() != t.matching.pairs.len() {
        return Err(Error::InvalidMatching("one shift per pair required".into()));
    }
    if !(t.r >= 0.0) {
        return Err(Error::InvalidMatching("r must be nonnegative".into()));
    }
    t.matching.validate(mu, nu)?;
    let sep = separation(&t.matching);
    if sep <= 2.0 * t.r {
        return Err(Error::SeparationTooSmall { sep, two_r: 2.0 * t.r });
    }
    let mut transport = 0.0;
    for (p, x) in t.matching.pairs.iter().zip(&t.shifts) {
        let shifted = p.nu_part.translated(x);
        transport += match t.matching.kind {
            MatchingKind::Matching => wasserstein(&p.mu_part, &shifted)?.0,
            MatchingKind::Generalized => generalized_wasserstein(&p.mu_part, &shifted)?.value,
        };
    }
    let rm = residual_side(mu, t.matching.pairs.iter().map(|p| (p.mu_layer, &p.mu_part)))?;
    let rn = residual_side(nu, t.matching.pairs.iter().map(|p| (p.nu_layer, &p.nu_part)))?;
    Ok(transport + concentration(&rm, t.r) + concentration(&rn, t.r) + (-t.r).exp2())
}

/// Normal form used for equality in the quotient space: layers sorted by
/// decreasing mass, each translated so its coordinatewise weighted median
/// sits at the origin.
pub fn canonical_form(m: &LayeredMeasure) -> Vec<PointMeasure> {
    let mut out: Vec<PointMeasure> = m
        .point_layers()
        .into_iter()
        .map(|(_, p)| {
            let med = weighted_median(&p);
            let neg: Vec<f64> = med.iter().map(|v| -v).collect();
            p.translated(&neg)
        })
        .collect();
    out.sort_by(|a, b| {
        b.total_mass()
            .partial_cmp(&a.total_mass())
            .unwrap()
            .then_with(|| a.positions().partial_cmp(b.positions()).unwrap())
            .then_with(|| a.weights().partial_cmp(b.weights()).unwrap())
    });
    out
}

fn weighted_median(p: &PointMeasure) -> Vec<f64> {
    let half = p.total_mass() / 2.0;
    (0..p.dim())
        .map(|ax| {
            let mut v: Vec<(f64, f64)> = p.atoms().map(|(x, w)| (x[ax], w)).collect();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut acc = 0.0;
            for (x, w) in &v {
                acc += w;
                if acc >= half - 1e-15 {
                    return *x;
                }
            }
            v.last().map_or(0.0, |x| x.0)
        })
        .collect()
}

/// Equality in the quotient space (layer permutation and per-layer
/// translation), up to `tol` on positions and weights.
pub fn equivalent(a: &LayeredMeasure, b: &LayeredMeasure, tol: f64) -> bool {
    let (ca, cb) = (canonical_form(a), canonical_form(b));
    ca.len() == cb.len()
        && ca.iter().zip(&cb).all(|(x, y)| {
            x.len() == y.len()
                && x.positions().iter().zip(y.positions()).all(|(p, q)| (p - q).abs() <= tol)
                && x.weights().iter().zip(y.weights()).all(|(p, q)| (p - q).abs() <= tol)
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(layers: Vec<Vec<(f64, f64)>>) -> LayeredMeasure {
        LayeredMeasure::from_points(
            layers
                .into_iter()
                .map(|l| PointMeasure::on_line(&l).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tent_examples() {
        assert_eq!(tent_weight(&[0.0], 3.0), 1.0);
        assert_eq!(tent_weight(&[3.5], 3.0), 0.5);
        assert_eq!(tent_weight(&[-3.5], 3.0), 0.5);
        assert_eq!(tent_weight(&[10.0], 3.0), 0.0);
        assert_eq!(tent_weight(&[3.0, 4.0], 4.5), 0.5);
    }

    #[test]
    fn separation_examples() {
        assert_eq!(separation(&Matching::empty()), f64::INFINITY);
        let d = |x: f64| PointMeasure::on_line(&[(x, 0.1)]).unwrap();
        let phi = Matching {
            pairs: vec![
                MatchedPair { mu_layer: 1, mu_part: d(0.0), nu_layer: 1, nu_part: d(0.0) },
                MatchedPair { mu_layer: 2, mu_part: d(0.0), nu_layer: 2, nu_part: d(5.0) },
            ],
            kind: MatchingKind::Matching,
        };
        assert_eq!(separation(&phi), f64::INFINITY);
        let phi2 = Matching {
            pairs: vec![
                MatchedPair { mu_layer: 1, mu_part: d(0.0), nu_layer: 1, nu_part: d(0.0) },
                MatchedPair { mu_layer: 1, mu_part: d(3.0), nu_layer: 2, nu_part: d(5.0) },
            ],
            kind: MatchingKind::Matching,
        };
        assert_eq!(separation(&phi2), 3.0);
    }

    #[test]
    fn empty_triple_cost() {
        let mu = lm(vec![vec![(0.0, 0.5), (3.0, 0.5)]]);
        let nu = lm(vec![vec![(1.0, 0.3)], vec![(0.0, 0.2)]]);
        let r = 1.0;
        let c = triple_cost(&mu, &nu, &Triple::empty(r)).unwrap();
        let expected = concentration(&mu, r) + concentration(&nu, r) + 0.5;
        assert_eq!(c, expected);
    }

    #[test]
    fn self_matching_cost() {
        let mu = lm(vec![vec![(0.0, 0.5), (0.7, 0.2)], vec![(4.0, 0.3)]]);
        let pairs = mu
            .point_layers()
            .into_iter()
            .map(|(k, p)| MatchedPair { mu_layer: k, mu_part: p.clone(), nu_layer: k, nu_part: p })
            .collect::<Vec<_>>();
        let n = pairs.len();
        let t = Triple {
            r: 20.0,
            matching: Matching { pairs, kind: MatchingKind::Matching },
            shifts: vec![vec![0.0]; n],
        };
        let c = triple_cost(&mu, &mu, &t).unwrap();
        assert!(c <= (-20f64).exp2() + 1e-15);
    }

    #[test]
    fn triple_cost_errors() {
        let mu = lm(vec![vec![(0.0, 0.5), (3.0, 0.5)]]);
        let d = |x: f64, w: f64| PointMeasure::on_line(&[(x, w)]).unwrap();
        let phi = Matching {
            pairs: vec![
                MatchedPair { mu_layer: 1, mu_part: d(0.0, 0.5), nu_layer: 1, nu_part: d(0.0, 0.5) },
                MatchedPair { mu_layer: 1, mu_part: d(3.0, 0.5), nu_layer: 1, nu_part: d(3.0, 0.5) },
            ],
            kind: MatchingKind::Matching,
        };
        let t = Triple { r: 1.5, matching: phi.clone(), shifts: vec![vec![0.0], vec![0.0]] };
        assert!(matches!(triple_cost(&mu, &mu, &t), Err(Error::SeparationTooSmall { .. })));
        let t = Triple { r: 1.0, matching: phi, shifts: vec![vec![0.0], vec![0.0]] };
        assert!(triple_cost(&mu, &mu, &t).unwrap() <= 0.5 + 1e-15);
        let over = Matching {
            pairs: vec![MatchedPair { mu_layer: 1, mu_part: d(0.0, 0.6), nu_layer: 1, nu_part: d(0.0, 0.6) }],
            kind: MatchingKind::Matching,
        };
        let t = Triple { r: 1.0, matching: over, shifts: vec![vec![0.0]] };
        assert!(matches!(triple_cost(&mu, &mu, &t), Err(Error::InvalidMatching(_))));
    }

    #[test]
    fn canonical_equivalence() {
        let a = lm(vec![vec![(0.0, 0.5), (1.0, 0.2)], vec![(4.0, 0.3)]]);
        let b = lm(vec![vec![(-7.0, 0.3)], vec![(10.0, 0.5), (11.0, 0.2)]]);
        assert!(equivalent(&a, &b, 1e-12));
        let c = lm(vec![vec![(0.0, 0.5), (1.5, 0.2)], vec![(4.0, 0.3)]]);
        assert!(!equivalent(&a, &c, 1e-12));
    }
}
