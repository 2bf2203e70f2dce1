//! Exact optimal transport for the truncated cost `|x - y| ∧ 1`.
//!
//! Balanced problems are solved as a transportation problem by successive
//! shortest augmenting paths with Johnson potentials (dense Dijkstra). The
//! unequal-mass distance adds one disposal node per side at unit cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{dist, PointMeasure};

/// Mass mismatch accepted by [`wasserstein`].
pub const MASS_MATCH_TOL: f64 = 1e-10;

/// Ground cost between two points.
#[inline]
pub fn truncated_cost(x: &[f64], y: &[f64]) -> f64 {
    dist(x, y).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `(source atom, target atom, mass)` with positive mass.
    pub pairs: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

impl TransportPlan {
    /// Checks marginals, nonnegativity and the stated cost against `a`, `g`.
    /// For plans of the unequal-mass distance pass `exact_marginals = false`;
    /// then marginals only need to be dominated.
    pub fn validate(&self, a: &PointMeasure, g: &PointMeasure, exact_marginals: bool) -> std::result::Result<(), String> {
        const TOL: f64 = 1e-10;
        let mut rows = vec![0.0; a.len()];
        let mut cols = vec![0.0; g.len()];
        let mut cost = 0.0;
        for &(i, j, m) in &self.pairs {
            if i >= a.len() || j >= g.len() {
                return Err(format!("TransportPlan: pair ({i}, {j}) out of range"));
            }
            if !(m >= 0.0) {
                return Err(format!("TransportPlan: negative mass {m} at ({i}, {j})"));
            }
            rows[i] += m;
            cols[j] += m;
            cost += m * truncated_cost(a.position(i), g.position(j));
        }
        for (i, r) in rows.iter().enumerate() {
            let w = a.weight(i);
            let bad = if exact_marginals { (r - w).abs() > TOL } else { *r > w + TOL };
            if bad {
                return Err(format!("TransportPlan: row sum {r} != source weight {w} at atom {i}"));
            }
        }
        for (j, c) in cols.iter().enumerate() {
            let w = g.weight(j);
            let bad = if exact_marginals { (c - w).abs() > TOL } else { *c > w + TOL };
            if bad {
                return Err(format!("TransportPlan: column sum {c} != target weight {w} at atom {j}"));
            }
        }
        if (cost - self.cost).abs() > 1e-9 {
            return Err(format!("TransportPlan: stated cost {} != recomputed {cost}", self.cost));
        }
        Ok(())
    }
}

/// Dense balanced transportation problem solved by successive shortest paths.
///
/// Returns the flow matrix (row-major `supply.len() x demand.len()`).
/// Totals may differ slightly; augmentation stops once either side is
/// exhausted.
pub(crate) fn solve_transportation(supply: &[f64], demand: &[f64], cost: &[f64]) -> Vec<f64> {
    let m = supply.len();
    let n = demand.len();
    debug_assert_eq!(cost.len(), m * n);
    let total: f64 = supply.iter().sum::<f64>().max(demand.iter().sum::<f64>());
    let eps = 1e-15 * total.max(1e-300);
    let mut flow = vec![0.0; m * n];
    let mut rem_s: Vec<f64> = supply.to_vec();
    let mut rem_d: Vec<f64> = demand.to_vec();
    // potentials: sources 0..m, sinks m..m+n
    let mut pot = vec![0.0; m + n];
    // costs are >= 0, so zero potentials are feasible initially
    let nn = m + n;
    let mut dist_v = vec![f64::INFINITY; nn];
    let mut done = vec![false; nn];
    let mut prev = vec![usize::MAX; nn];

    loop {
        let sources_left: f64 = rem_s.iter().filter(|&&s| s > eps).sum();
        let sinks_left: f64 = rem_d.iter().filter(|&&d| d > eps).sum();
        if sources_left <= eps || sinks_left <= eps {
            break;
        }
        dist_v.iter_mut().for_each(|d| *d = f64::INFINITY);
        done.iter_mut().for_each(|d| *d = false);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        for i in 0..m {
            if rem_s[i] > eps {
                dist_v[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            // select closest unfinished node
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nn {
                if !done[v] && dist_v[v] < best {
                    best = dist_v[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= m && rem_d[u - m] > eps {
                target = u;
                break;
            }
            if u < m {
                let i = u;
                for j in 0..n {
                    let v = m + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (cost[i * n + j] + pot[i] - pot[v]).max(0.0);
                    let nd = best + rc;
                    if nd < dist_v[v] {
                        dist_v[v] = nd;
                        prev[v] = u;
                    }
                }
            } else {
                let j = u - m;
                for i in 0..m {
                    if done[i] || flow[i * n + j] <= eps {
                        continue;
                    }
                    let rc = (-cost[i * n + j] + pot[u] - pot[i]).max(0.0);
                    let nd = best + rc;
                    if nd < dist_v[i] {
                        dist_v[i] = nd;
                        prev[i] = u;
                    }
                }
            }
        }
        if target == usize::MAX {
            break;
        }
        let dt = dist_v[target];
        for v in 0..nn {
            pot[v] += dist_v[v].min(dt);
        }
        // bottleneck along the path
        let mut amount = rem_d[target - m];
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= m {
                // backward edge sink u -> source v
                amount = amount.min(flow[v * n + (u - m)]);
            }
            v = u;
        }
        amount = amount.min(rem_s[v]);
        let origin = v;
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < m {
                flow[u * n + (v - m)] += amount;
            } else {
                let f = &mut flow[v * n + (u - m)];
                *f -= amount;
                if *f < eps {
                    *f = 0.0;
                }
            }
            v = u;
        }
        rem_s[origin] -= amount;
        rem_d[target - m] -= amount;
    }
    flow
}

fn cost_matrix(a: &PointMeasure, g: &PointMeasure) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * g.len());
    for (x, _) in a.atoms() {
        for (y, _) in g.atoms() {
            c.push(truncated_cost(x, y));
        }
    }
    c
}

fn check_dims(a: &PointMeasure, g: &PointMeasure) -> Result<()> {
    if a.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: g.dim(),
        });
    }
    Ok(())
}

/// Transport distance between equal-mass point measures.
pub fn wasserstein(a: &PointMeasure, g: &PointMeasure) -> Result<(f64, TransportPlan)> {
    check_dims(a, g)?;
    if a.is_empty() || g.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let (ma, mg) = (a.total_mass(), g.total_mass());
    if (ma - mg).abs() > MASS_MATCH_TOL {
        return Err(Error::MassMismatch { left: ma, right: mg });
    }
    let cost = cost_matrix(a, g);
    let flow = solve_transportation(a.weights(), g.weights(), &cost);
    let n = g.len();
    let mut pairs = Vec::new();
    let mut value = 0.0;
    for (k, &f) in flow.iter().enumerate() {
        if f > 0.0 {
            pairs.push((k / n, k % n, f));
            value += f * cost[k];
        }
    }
    let value = value.clamp(0.0, ma.max(mg));
    Ok((value, TransportPlan { pairs, cost: value }))
}

/// Result of the unequal-mass transport distance.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedTransport {
    pub value: f64,
    /// Mass moved by the plan (the common mass of the kept submeasures).
    pub kept_mass: f64,
    pub plan: TransportPlan,
}

/// Transport distance allowing disposal of mass at unit price per side.
pub fn generalized_wasserstein(a: &PointMeasure, g: &PointMeasure) -> Result<GeneralizedTransport> {
    check_dims(a, g)?;
    let (ma, mg) = (a.total_mass(), g.total_mass());
    if a.is_empty() || g.is_empty() {
        return Ok(GeneralizedTransport {
            value: ma + mg,
            kept_mass: 0.0,
            plan: TransportPlan {
                pairs: vec![],
                cost: 0.0,
            },
        });
    }
    let (m, n) = (a.len(), g.len());
    // extra row: disposal source feeding g; extra column: disposal sink for a
    let mut supply = a.weights().to_vec();
    supply.push(mg);
    let mut demand = g.weights().to_vec();
    demand.push(ma);
    let mut cost = Vec::with_capacity((m + 1) * (n + 1));
    for (x, _) in a.atoms() {
        for (y, _) in g.atoms() {
            cost.push(truncated_cost(x, y));
        }
        cost.push(1.0);
    }
    cost.extend(std::iter::repeat_n(1.0, n));
    cost.push(0.0);
    let flow = solve_transportation(&supply, &demand, &cost);
    let mut pairs = Vec::new();
    let mut transport = 0.0;
    let mut kept = 0.0;
    let mut value = 0.0;
    for i in 0..=m {
        for j in 0..=n {
            let f = flow[i * (n + 1) + j];
            if f <= 0.0 {
                continue;
            }
            value += f * cost[i * (n + 1) + j];
            if i < m && j < n {
                pairs.push((i, j, f));
                transport += f * cost[i * (n + 1) + j];
                kept += f;
            }
        }
    }
    Ok(GeneralizedTransport {
        value: value.clamp(0.0, ma + mg),
        kept_mass: kept,
        plan: TransportPlan {
            pairs,
            cost: transport,
        },
    })
}

/// Kantorovich lower bound `∫f da - ∫f dg` for a test function that is
/// 1-Lipschitz for the truncated metric on the joint support.
pub fn dual_lower_bound<F>(a: &PointMeasure, g: &PointMeasure, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    check_dims(a, g)?;
    let (ma, mg) = (a.total_mass(), g.total_mass());
    if (ma - mg).abs() > MASS_MATCH_TOL {
        return Err(Error::MassMismatch { left: ma, right: mg });
    }
    let pts: Vec<&[f64]> = a.atoms().chain(g.atoms()).map(|(p, _)| p).collect();
    let vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotLipschitz("non-finite value".into()));
    }
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi - lo > 1.0 + 1e-12 {
        return Err(Error::NotLipschitz(format!("oscillation {}", hi - lo)));
    }
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let lim = truncated_cost(pts[i], pts[j]);
            if (vals[i] - vals[j]).abs() > lim + 1e-12 {
                return Err(Error::NotLipschitz(format!(
                    "|f(x)-f(y)| = {} > {lim}",
                    (vals[i] - vals[j]).abs()
                )));
            }
        }
    }
    let ia: f64 = a.weights().iter().zip(&vals).map(|(w, v)| w * v).sum();
    let ig: f64 = g
        .weights()
        .iter()
        .zip(&vals[a.len()..])
        .map(|(w, v)| w * v)
        .sum();
    Ok(ia - ig)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(atoms: &[(f64, f64)]) -> PointMeasure {
        PointMeasure::on_line(atoms).unwrap()
    }

    #[test]
    fn two_diracs() {
        let (w, plan) = wasserstein(&pm(&[(0.0, 1.0)]), &pm(&[(0.3, 1.0)])).unwrap();
        assert!((w - 0.3).abs() < 1e-15);
        assert_eq!(plan.pairs.len(), 1);
        let (w, _) = wasserstein(&pm(&[(0.0, 1.0)]), &pm(&[(4.0, 1.0)])).unwrap();
        assert_eq!(w, 1.0);
    }

    #[test]
    fn identical_measures() {
        let a = pm(&[(0.0, 0.2), (1.5, 0.3), (-2.0, 0.1)]);
        let (w, plan) = wasserstein(&a, &a).unwrap();
        assert!(w.abs() < 1e-15);
        plan.validate(&a, &a, true).unwrap();
    }

    #[test]
    fn monotone_plan() {
        let a = pm(&[(0.0, 0.5), (1.0, 0.5)]);
        let g = pm(&[(0.5, 0.5), (1.5, 0.5)]);
        let (w, plan) = wasserstein(&a, &g).unwrap();
        assert!((w - 0.5).abs() < 1e-14);
        plan.validate(&a, &g, true).unwrap();
    }

    #[test]
    fn errors() {
        assert!(matches!(
            wasserstein(&pm(&[(0.0, 1.0)]), &pm(&[(0.0, 0.5)])),
            Err(Error::MassMismatch { .. })
        ));
        assert!(matches!(
            wasserstein(&PointMeasure::zero(1), &PointMeasure::zero(1)),
            Err(Error::EmptyMeasure)
        ));
    }

    #[test]
    fn generalized_examples() {
        let a = pm(&[(0.0, 1.0)]);
        let r = generalized_wasserstein(&a, &PointMeasure::zero(1)).unwrap();
        assert_eq!(r.value, 1.0);
        let r = generalized_wasserstein(&a, &pm(&[(0.0, 0.4)])).unwrap();
        assert!((r.value - 0.6).abs() < 1e-14);
        assert!((r.kept_mass - 0.4).abs() < 1e-14);
        let r = generalized_wasserstein(&a, &pm(&[(5.0, 1.0)])).unwrap();
        assert!((r.value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dual_examples() {
        let a = pm(&[(0.0, 1.0)]);
        let g = pm(&[(0.3, 1.0)]);
        assert_eq!(dual_lower_bound(&a, &g, |_| 0.7).unwrap(), 0.0);
        let v = dual_lower_bound(&a, &g, |x| x[0].min(1.0)).unwrap();
        assert!((v.abs() - 0.3).abs() < 1e-15);
        assert!(matches!(
            dual_lower_bound(&a, &g, |x| 5.0 * x[0]),
            Err(Error::NotLipschitz(_))
        ));
    }

    #[test]
    fn broken_plan_is_reported() {
        let a = pm(&[(0.0, 0.5), (1.0, 0.5)]);
        let (_, mut plan) = wasserstein(&a, &a).unwrap();
        plan.pairs[0].2 += 0.1;
        let err = plan.validate(&a, &a, true).unwrap_err();
        assert!(err.starts_with("TransportPlan"));
    }
}
