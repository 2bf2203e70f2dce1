//! Upper bounds on the metric by a searched family of triples.
//!
//! For each radius `r` of a grid, each layer is split into single-linkage
//! clusters at gap `2r`; clusters of the two sides are paired greedily by
//! the disposal gain `m_g + m_h - Ŵ(g, h + x)`, with the shift `x` taken from
//! the barycenters and then refined over atom alignments. The kept marginals
//! of each unequal-mass plan form an equal-mass pair, so the witness is a
//! plain matching. The matching is then re-costed at every larger radius its
//! separation allows.

use super::{
    exact, triple_cost, MatchedPair, Matching, MatchingKind, Triple, EXACT_MAX_ATOMS,
    EXACT_MAX_LAYERS,
};
use crate::error::Result;
use crate::measures::{dist, LayeredMeasure, PointMeasure};
use crate::transport::generalized_wasserstein;

/// Radius standing in for `r -> ∞` when the separation is infinite.
const FAR_RADIUS: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct SearchBudget {
    /// Radii at which clusters are formed; full layers are always tried too.
    pub radii: Vec<f64>,
    /// Cap on unequal-mass transport solves.
    pub max_transport_solves: usize,
    /// Clusters per side kept for pairing (heaviest first).
    pub max_groups: usize,
    /// Atoms per cluster kept for transport (heaviest first); the rest stay
    /// in the residual.
    pub max_group_atoms: usize,
    /// Atom alignments tried per pair when refining a shift.
    pub shift_candidates: usize,
    /// Instances within the exhaustive limits and with at most this many
    /// atoms per side are delegated to the exact evaluator.
    pub exact_atoms: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        let mut radii = vec![0.0];
        radii.extend((-2..=5).map(|j| 2f64.powi(j)));
        Self {
            radii,
            max_transport_solves: 20_000,
            max_groups: 8,
            max_group_atoms: 300,
            shift_candidates: 4,
            exact_atoms: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UpperBound {
    pub value: f64,
    pub witness: Triple,
    /// The transport budget ran out before the search finished.
    pub exhausted: bool,
    /// The value is the exact metric.
    pub exact: bool,
}

struct Group {
    layer: u32,
    part: PointMeasure,
}

struct Search<'a> {
    mu: &'a LayeredMeasure,
    nu: &'a LayeredMeasure,
    budget: &'a SearchBudget,
    solves: usize,
    best: Option<(f64, Triple)>,
}

fn exact_eligible(mu: &LayeredMeasure, nu: &LayeredMeasure, limit: usize) -> bool {
    [mu, nu].iter().all(|m| {
        let layers = m.point_layers();
        let atoms: usize = layers.iter().map(|(_, p)| p.len()).sum();
        layers.len() <= EXACT_MAX_LAYERS
            && atoms <= EXACT_MAX_ATOMS.min(limit)
            && layers.iter().all(|(_, p)| p.dim() == 1)
    })
}

/// Best triple found within `budget`; never below the metric and never
/// above 2.
pub fn metric_upper(mu: &LayeredMeasure, nu: &LayeredMeasure, budget: &SearchBudget) -> Result<UpperBound> {
    if exact_eligible(mu, nu, budget.exact_atoms) {
        let e = exact::metric_exact(mu, nu)?;
        return Ok(UpperBound {
            value: e.value,
            witness: e.witness,
            exhausted: false,
            exact: true,
        });
    }
    let mut s = Search {
        mu,
        nu,
        budget,
        solves: 0,
        best: None,
    };
    let mut radii: Vec<f64> = budget.radii.iter().copied().filter(|r| *r >= 0.0).collect();
    radii.push(f64::INFINITY);
    for &r in &radii {
        s.offer(Triple::empty(r.min(FAR_RADIUS)))?;
    }
    let mut exhausted = false;
    for &r in &radii {
        if s.solves >= budget.max_transport_solves {
            exhausted = true;
            break;
        }
        let (phi, shifts) = s.matching_at(r)?;
        let sep = super::separation(&phi);
        let mut trial: Vec<f64> = radii
            .iter()
            .copied()
            .filter(|&q| q >= r && 2.0 * q < sep && q.is_finite())
            .collect();
        if sep.is_finite() {
            trial.push(0.5 * sep * (1.0 - 1e-9));
        } else {
            trial.push(FAR_RADIUS);
        }
        for q in trial {
            s.offer(Triple {
                r: q,
                matching: phi.clone(),
                shifts: shifts.clone(),
            })?;
        }
    }
    let (value, witness) = s.best.expect("empty triple always offered");
    Ok(UpperBound {
        value,
        witness,
        exhausted,
        exact: false,
    })
}

fn barycenter(p: &PointMeasure) -> Vec<f64> {
    let m = p.total_mass();
    let mut c = vec![0.0; p.dim()];
    for (x, w) in p.atoms() {
        for (ci, xi) in c.iter_mut().zip(x) {
            *ci += w * xi;
        }
    }
    c.iter().map(|v| v / m).collect()
}

impl Search<'_> {
    fn offer(&mut self, t: Triple) -> Result<()> {
        let v = triple_cost(self.mu, self.nu, &t)?;
        if self.best.as_ref().is_none_or(|(b, _)| v < *b) {
            self.best = Some((v, t));
        }
        Ok(())
    }

    fn groups(&self, m: &LayeredMeasure, r: f64) -> Vec<Group> {
        let mut out = Vec::new();
        for (layer, p) in m.point_layers() {
            for idx in single_linkage(&p, 2.0 * r) {
                let mut idx = idx;
                idx.sort_by(|&a, &b| p.weight(b).total_cmp(&p.weight(a)));
                idx.truncate(self.budget.max_group_atoms);
                let atoms = idx.iter().map(|&i| (p.position(i).to_vec(), p.weight(i))).collect();
                let part = PointMeasure::new(p.dim(), atoms).expect("subset of a valid layer");
                out.push(Group { layer, part });
            }
        }
        out.sort_by(|a, b| b.part.total_mass().total_cmp(&a.part.total_mass()));
        out.truncate(self.budget.max_groups);
        out
    }

    fn solve(&mut self, g: &PointMeasure, h: &PointMeasure, x: &[f64]) -> Result<(f64, PointMeasure, PointMeasure)> {
        self.solves += 1;
        let shifted = h.translated(x);
        let gt = generalized_wasserstein(g, &shifted)?;
        let mut kg = vec![0.0; g.len()];
        let mut kh = vec![0.0; h.len()];
        for &(i, j, f) in &gt.plan.pairs {
            kg[i] += f;
            kh[j] += f;
        }
        let keep = |p: &PointMeasure, w: Vec<f64>| -> PointMeasure {
            let atoms = (0..p.len())
                .filter(|&i| w[i] > 0.0)
                .map(|i| (p.position(i).to_vec(), w[i].min(p.weight(i))))
                .collect();
            PointMeasure::new(p.dim(), atoms).expect("dominated by a valid measure")
        };
        Ok((gt.value, keep(g, kg), keep(h, kh)))
    }

    fn matching_at(&mut self, r: f64) -> Result<(Matching, Vec<Vec<f64>>)> {
        let gm = self.groups(self.mu, r);
        let gn = self.groups(self.nu, r);
        let mut gains = Vec::new();
        for (a, g) in gm.iter().enumerate() {
            for (b, h) in gn.iter().enumerate() {
                if self.solves >= self.budget.max_transport_solves {
                    break;
                }
                let x: Vec<f64> = barycenter(&g.part)
                    .iter()
                    .zip(barycenter(&h.part))
                    .map(|(p, q)| p - q)
                    .collect();
                let (v, ..) = self.solve(&g.part, &h.part, &x)?;
                let gain = g.part.total_mass() + h.part.total_mass() - v;
                if gain > 1e-12 {
                    gains.push((gain, a, b));
                }
            }
        }
        gains.sort_by(|p, q| q.0.total_cmp(&p.0));
        let (mut used_m, mut used_n) = (vec![false; gm.len()], vec![false; gn.len()]);
        let mut pairs = Vec::new();
        let mut shifts = Vec::new();
        for (_, a, b) in gains {
            if used_m[a] || used_n[b] {
                continue;
            }
            used_m[a] = true;
            used_n[b] = true;
            let (g, h) = (&gm[a], &gn[b]);
            let (mp, np, x) = self.refine(&g.part, &h.part)?;
            if mp.total_mass() <= 1e-14 || np.total_mass() <= 1e-14 {
                continue;
            }
            pairs.push(MatchedPair {
                mu_layer: g.layer,
                mu_part: mp,
                nu_layer: h.layer,
                nu_part: np,
            });
            shifts.push(x);
        }
        // kept masses agree up to rounding; trim the larger side exactly
        for p in &mut pairs {
            equalize(p);
        }
        let keep: Vec<bool> = pairs.iter().map(|p| p.mu_part.total_mass() > 1e-14).collect();
        let mut it = keep.iter();
        pairs.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        shifts.retain(|_| *it.next().unwrap());
        Ok((
            Matching {
                pairs,
                kind: MatchingKind::Matching,
            },
            shifts,
        ))
    }

    /// Best shift among the barycenter alignment and alignments of heavy
    /// atoms, with the kept parts of its plan.
    fn refine(&mut self, g: &PointMeasure, h: &PointMeasure) -> Result<(PointMeasure, PointMeasure, Vec<f64>)> {
        let k = self.budget.shift_candidates;
        let heavy = |p: &PointMeasure| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.sort_by(|&a, &b| p.weight(b).total_cmp(&p.weight(a)));
            idx.truncate(k);
            idx
        };
        let mut cands: Vec<Vec<f64>> = vec![barycenter(g)
            .iter()
            .zip(barycenter(h))
            .map(|(p, q)| p - q)
            .collect()];
        for &a in &heavy(g) {
            for &b in &heavy(h) {
                cands.push(g.position(a).iter().zip(h.position(b)).map(|(p, q)| p - q).collect());
            }
        }
        let mut best: Option<(f64, Vec<f64>, PointMeasure, PointMeasure)> = None;
        for x in cands {
            if self.solves >= self.budget.max_transport_solves && best.is_some() {
                break;
            }
            let (v, kg, kh) = self.solve(g, h, &x)?;
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, x, kg, kh));
            }
        }
        let (_, x, kg, kh) = best.expect("at least one candidate");
        Ok((kg, kh, x))
    }
}

fn equalize(p: &mut MatchedPair) {
    let (a, b) = (p.mu_part.total_mass(), p.nu_part.total_mass());
    let target = a.min(b);
    let fix = |m: &PointMeasure| -> PointMeasure {
        let excess = m.total_mass() - target;
        if excess <= 0.0 {
            return m.clone();
        }
        let mut w = m.weights().to_vec();
        let mut rest = excess;
        for wi in w.iter_mut() {
            let cut = rest.min(*wi);
            *wi -= cut;
            rest -= cut;
            if rest <= 0.0 {
                break;
            }
        }
        let atoms = (0..m.len())
            .filter(|&i| w[i] > 0.0)
            .map(|i| (m.position(i).to_vec(), w[i]))
            .collect();
        PointMeasure::new(m.dim(), atoms).expect("dominated")
    };
    p.mu_part = fix(&p.mu_part);
    p.nu_part = fix(&p.nu_part);
}

/// Clusters of a layer: atoms joined when closer than or at `gap`; distinct
/// clusters are strictly more than `gap` apart.
fn single_linkage(p: &PointMeasure, gap: f64) -> Vec<Vec<usize>> {
    let n = p.len();
    if gap.is_infinite() {
        return vec![(0..n).collect()];
    }
    if p.dim() == 1 {
        // atoms are sorted by position
        let mut out = vec![vec![0]];
        for i in 1..n {
            if p.position(i)[0] - p.position(i - 1)[0] > gap {
                out.push(Vec::new());
            }
            out.last_mut().unwrap().push(i);
        }
        return out;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if dist(p.position(i), p.position(j)) <= gap {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut map = std::collections::BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        map.entry(root).or_insert_with(Vec::new).push(i);
    }
    map.into_values().collect()
}
