//! Exhaustive evaluation of the metric on tiny one-dimensional instances.
//!
//! The infimum over triples is split into a finite outer enumeration and an
//! inner continuous problem:
//!
//! * outer: for each side, which atoms of each layer form which group and
//!   which atoms stay residual-only; then a bijection between the groups.
//! * inner, for fixed groups, shifts and radius: a linear program over the
//!   transported masses. The concentration of the residuals enters through
//!   epigraph rows, one per candidate center; in 1-d the breakpoints
//!   `x ± r`, `x ± (r + 1)` of the tent objective are such a finite set.
//! * shifts: for a fixed transport plan the cost is piecewise linear in each
//!   shift and its convex kinks sit at the atom differences `x_a - y_b`, so
//!   minimizing over that finite set is exact.
//! * radius: the LP value is nondecreasing in `r` while `2^-r` decreases;
//!   best-first interval search with the bound `F(a) + 2^-b` on `[a, b]`
//!   certifies the minimum to `RADIUS_TOL`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use super::{tent_of_norm, MatchedPair, Matching, MatchingKind, Triple};
use crate::error::{Error, Result};
use crate::measures::{LayeredMeasure, PointMeasure};

pub const EXACT_MAX_ATOMS: usize = 6;
pub const EXACT_MAX_LAYERS: usize = 2;

const RADIUS_TOL: f64 = 1e-10;
/// Radius used in witnesses for an infimum approached as `r -> ∞`.
const FAR_RADIUS: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct ExactMetric {
    pub value: f64,
    /// A triple whose cost is within `RADIUS_TOL`-level slack of `value`
    /// (the infimum may only be approached, e.g. as `r` grows).
    pub witness: Triple,
}

#[derive(Debug, Clone, Copy)]
struct Atom {
    layer: usize,
    x: f64,
    m: f64,
}

struct Side {
    atoms: Vec<Atom>,
    layer_ids: Vec<u32>,
    layer_atoms: Vec<Vec<usize>>,
}

impl Side {
    fn new(m: &LayeredMeasure) -> Result<Self> {
        let mut atoms = Vec::new();
        let mut layer_ids = Vec::new();
        let mut layer_atoms = Vec::new();
        for (pos, (id, p)) in m.point_layers().into_iter().enumerate() {
            if p.dim() != 1 {
                return Err(Error::InstanceTooLarge(
                    "exhaustive evaluation is implemented for d = 1".into(),
                ));
            }
            let mut idx = Vec::new();
            for (x, w) in p.atoms() {
                idx.push(atoms.len());
                atoms.push(Atom { layer: pos, x: x[0], m: w });
            }
            layer_ids.push(id);
            layer_atoms.push(idx);
        }
        if atoms.len() > EXACT_MAX_ATOMS || layer_ids.len() > EXACT_MAX_LAYERS {
            return Err(Error::InstanceTooLarge(format!(
                "{} atoms in {} layers (limit {EXACT_MAX_ATOMS} atoms, {EXACT_MAX_LAYERS} layers)",
                atoms.len(),
                layer_ids.len()
            )));
        }
        Ok(Self {
            atoms,
            layer_ids,
            layer_atoms,
        })
    }

    /// Largest half-diameter of a layer: beyond it every residual's
    /// concentration equals its largest layer mass.
    fn saturation_radius(&self) -> f64 {
        self.layer_atoms
            .iter()
            .map(|idx| {
                let xs = idx.iter().map(|&i| self.atoms[i].x);
                let hi = xs.clone().fold(f64::NEG_INFINITY, f64::max);
                let lo = xs.fold(f64::INFINITY, f64::min);
                0.5 * (hi - lo)
            })
            .fold(0.0, f64::max)
    }

    /// All ways to pick disjoint single-layer groups (atoms not in a group
    /// are residual-only). Each structure is a list of atom-index groups.
    fn structures(&self) -> Vec<Vec<Vec<usize>>> {
        let mut per_layer: Vec<Vec<Vec<Vec<usize>>>> = Vec::new();
        for idx in &self.layer_atoms {
            let mut out = Vec::new();
            let mut labels = vec![0usize; idx.len()];
            label_rec(0, 0, &mut labels, idx, &mut out);
            per_layer.push(out);
        }
        let mut combos: Vec<Vec<Vec<usize>>> = vec![vec![]];
        for options in per_layer {
            let mut next = Vec::new();
            for base in &combos {
                for opt in &options {
                    let mut c = base.clone();
                    c.extend(opt.iter().cloned());
                    next.push(c);
                }
            }
            combos = next;
        }
        combos.sort_by_key(|s| s.len());
        combos
    }

    fn group_separation(&self, groups: &[Vec<usize>]) -> f64 {
        let mut s = f64::INFINITY;
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let (gi, gj) = (&groups[i], &groups[j]);
                if self.atoms[gi[0]].layer != self.atoms[gj[0]].layer {
                    continue;
                }
                for &a in gi {
                    for &b in gj {
                        s = s.min((self.atoms[a].x - self.atoms[b].x).abs());
                    }
                }
            }
        }
        s
    }
}

/// Restricted-growth labelings: 0 = residual-only, `1..` = group number.
fn label_rec(i: usize, used: usize, labels: &mut Vec<usize>, idx: &[usize], out: &mut Vec<Vec<Vec<usize>>>) {
    if i == idx.len() {
        let mut groups = vec![Vec::new(); used];
        for (k, &l) in labels.iter().enumerate() {
            if l > 0 {
                groups[l - 1].push(idx[k]);
            }
        }
        out.push(groups);
        return;
    }
    for l in 0..=used + 1 {
        labels[i] = l;
        let nu = if l == used + 1 { used + 1 } else { used };
        label_rec(i + 1, nu, labels, idx, out);
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

struct Problem1d<'a> {
    mu: &'a Side,
    nu: &'a Side,
    kind: MatchingKind,
}

/// Pairs of groups `(mu atoms, nu atoms)` of one structure.
type Pairs = Vec<(Vec<usize>, Vec<usize>)>;

#[derive(Clone)]
struct LpSolution {
    value: f64,
    /// per pair, per (a, b) flow in row-major order of the groups
    flows: Vec<Vec<f64>>,
    mu_dispose: Vec<f64>,
    nu_dispose: Vec<f64>,
}

impl Problem1d<'_> {
    fn candidates(side: &Side, layer: usize, r: f64) -> Vec<f64> {
        let mut c = Vec::new();
        for &i in &side.layer_atoms[layer] {
            let x = side.atoms[i].x;
            c.extend([x - r - 1.0, x - r, x, x + r, x + r + 1.0]);
        }
        c
    }

    fn lp(&self, pairs: &Pairs, shifts: &[f64], r: f64) -> Result<LpSolution> {
        let mut pb = Problem::new(OptimizationDirection::Minimize);
        let g = self.kind == MatchingKind::Generalized;
        let mut flow_vars: Vec<Vec<Variable>> = Vec::new();
        // kept[a] as linear expression terms
        let mut mu_kept: Vec<Vec<Variable>> = vec![Vec::new(); self.mu.atoms.len()];
        let mut nu_kept: Vec<Vec<Variable>> = vec![Vec::new(); self.nu.atoms.len()];
        for ((ga, gb), s) in pairs.iter().zip(shifts) {
            let mut vars = Vec::new();
            for &a in ga {
                for &b in gb {
                    let c = (self.mu.atoms[a].x - self.nu.atoms[b].x - s).abs().min(1.0);
                    let v = pb.add_var(c, (0.0, f64::INFINITY));
                    mu_kept[a].push(v);
                    nu_kept[b].push(v);
                    vars.push(v);
                }
            }
            flow_vars.push(vars);
        }
        let mut mu_disp = Vec::new();
        let mut nu_disp = Vec::new();
        if g {
            for (ga, gb) in pairs {
                for &a in ga {
                    let v = pb.add_var(1.0, (0.0, f64::INFINITY));
                    mu_kept[a].push(v);
                    mu_disp.push((a, v));
                }
                for &b in gb {
                    let v = pb.add_var(1.0, (0.0, f64::INFINITY));
                    nu_kept[b].push(v);
                    nu_disp.push((b, v));
                }
            }
        }
        for (kept, side) in [(&mu_kept, self.mu), (&nu_kept, self.nu)] {
            for (a, vars) in kept.iter().enumerate() {
                if !vars.is_empty() {
                    let expr: Vec<(Variable, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
                    pb.add_constraint(&expr[..], ComparisonOp::Le, side.atoms[a].m);
                }
            }
            let t = pb.add_var(1.0, (0.0, f64::INFINITY));
            for layer in 0..side.layer_atoms.len() {
                for c in Self::candidates(side, layer, r) {
                    let mut rhs = 0.0;
                    let mut expr = vec![(t, 1.0)];
                    for &a in &side.layer_atoms[layer] {
                        let f = tent_of_norm((c - side.atoms[a].x).abs(), r);
                        if f == 0.0 {
                            continue;
                        }
                        rhs += f * side.atoms[a].m;
                        for &v in &kept[a] {
                            expr.push((v, f));
                        }
                    }
                    if rhs > 0.0 {
                        pb.add_constraint(&expr[..], ComparisonOp::Ge, rhs);
                    }
                }
            }
        }
        let sol = pb
            .solve()
            .map_err(|e| Error::LinearProgram(e.to_string()))?;
        Ok(LpSolution {
            value: sol.objective(),
            flows: flow_vars
                .iter()
                .map(|vs| vs.iter().map(|&v| sol[v].max(0.0)).collect())
                .collect(),
            mu_dispose: {
                let mut d = vec![0.0; self.mu.atoms.len()];
                for (a, v) in &mu_disp {
                    d[*a] = sol[*v].max(0.0);
                }
                d
            },
            nu_dispose: {
                let mut d = vec![0.0; self.nu.atoms.len()];
                for (b, v) in &nu_disp {
                    d[*b] = sol[*v].max(0.0);
                }
                d
            },
        })
    }

    fn shift_candidates(&self, pairs: &Pairs) -> Vec<Vec<f64>> {
        let per_pair: Vec<Vec<f64>> = pairs
            .iter()
            .map(|(ga, gb)| {
                let mut s: Vec<f64> = ga
                    .iter()
                    .flat_map(|&a| gb.iter().map(move |&b| (a, b)))
                    .map(|(a, b)| self.mu.atoms[a].x - self.nu.atoms[b].x)
                    .collect();
                s.sort_by(f64::total_cmp);
                s.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
                s
            })
            .collect();
        let mut combos = vec![vec![]];
        for opts in per_pair {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    opts.iter().map(move |&s| {
                        let mut c2 = c.clone();
                        c2.push(s);
                        c2
                    })
                })
                .collect();
        }
        combos
    }

    /// `min` over shift candidates of the LP at radius `r`.
    fn inner(&self, pairs: &Pairs, combos: &[Vec<f64>], r: f64) -> Result<(f64, usize, LpSolution)> {
        let mut best: Option<(f64, usize, LpSolution)> = None;
        for (k, s) in combos.iter().enumerate() {
            let sol = self.lp(pairs, s, r)?;
            if best.as_ref().is_none_or(|b| sol.value < b.0) {
                best = Some((sol.value, k, sol));
            }
        }
        Ok(best.expect("at least one shift combination"))
    }
}

struct Incumbent {
    value: f64,
    pairs: Pairs,
    shifts: Vec<f64>,
    r: f64,
    sol: Option<LpSolution>,
}

struct Interval {
    lower: f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
}

impl PartialEq for Interval {
    fn eq(&self, o: &Self) -> bool {
        self.lower == o.lower
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Interval {
    // min-heap on the lower bound
    fn cmp(&self, o: &Self) -> Ordering {
        o.lower.total_cmp(&self.lower)
    }
}

fn instance_key(m: &LayeredMeasure) -> Vec<f64> {
    let mut key = vec![m.num_layers() as f64];
    for (_, p) in m.point_layers() {
        key.push(p.len() as f64);
        key.extend_from_slice(p.positions());
        key.extend_from_slice(p.weights());
    }
    key
}

/// Exact metric between two tiny 1-d layered measures.
pub fn metric_exact(mu: &LayeredMeasure, nu: &LayeredMeasure) -> Result<ExactMetric> {
    metric_exact_with(mu, nu, MatchingKind::Matching)
}

/// Exact metric optimizing over matchings or over g-matchings.
pub fn metric_exact_with(mu: &LayeredMeasure, nu: &LayeredMeasure, kind: MatchingKind) -> Result<ExactMetric> {
    // evaluate in a canonical argument order so that swapping the
    // arguments reproduces the same floating-point computation
    if instance_key(mu).partial_cmp(&instance_key(nu)) == Some(Ordering::Greater) {
        let res = solve(nu, mu, kind)?;
        let witness = Triple {
            r: res.witness.r,
            matching: res.witness.matching.inverse(),
            shifts: res.witness.shifts.iter().map(|s| s.iter().map(|v| -v).collect()).collect(),
        };
        return Ok(ExactMetric {
            value: res.value,
            witness,
        });
    }
    solve(mu, nu, kind)
}

fn solve(mu: &LayeredMeasure, nu: &LayeredMeasure, kind: MatchingKind) -> Result<ExactMetric> {
    let sm = Side::new(mu)?;
    let sn = Side::new(nu)?;
    let pb = Problem1d { mu: &sm, nu: &sn, kind };
    let r_sat = sm.saturation_radius().max(sn.saturation_radius());

    let mut inc = Incumbent {
        value: f64::INFINITY,
        pairs: vec![],
        shifts: vec![],
        r: 0.0,
        sol: None,
    };
    let mu_structs = sm.structures();
    let nu_structs = sn.structures();
    for s_mu in &mu_structs {
        let sep_mu = sm.group_separation(s_mu);
        for s_nu in nu_structs.iter().filter(|s| s.len() == s_mu.len()) {
            let sep = sep_mu.min(sn.group_separation(s_nu));
            for perm in permutations(s_mu.len()) {
                let pairs: Pairs = s_mu
                    .iter()
                    .zip(&perm)
                    .map(|(ga, &j)| (ga.clone(), s_nu[j].clone()))
                    .collect();
                evaluate_structure(&pb, pairs, sep, r_sat, &mut inc)?;
            }
        }
    }
    let witness = build_witness(&sm, &sn, &inc, kind);
    Ok(ExactMetric {
        value: inc.value,
        witness,
    })
}

fn evaluate_structure(pb: &Problem1d, pairs: Pairs, sep: f64, r_sat: f64, inc: &mut Incumbent) -> Result<()> {
    let r_hi = 0.5 * sep;
    let b = r_hi.min(r_sat);
    let combos = pb.shift_candidates(&pairs);
    let decay_hi = if r_hi.is_finite() { (-r_hi).exp2() } else { 0.0 };

    let (f0, k0, sol0) = pb.inner(&pairs, &combos, 0.0)?;
    let offer = |v: f64, r: f64, k: usize, sol: &LpSolution, inc: &mut Incumbent| {
        if v < inc.value {
            inc.value = v;
            inc.pairs = pairs.clone();
            inc.shifts = combos[k].clone();
            inc.r = r;
            inc.sol = Some(sol.clone());
        }
    };
    offer(f0 + 1.0, 0.0, k0, &sol0, inc);
    if f0 + decay_hi >= inc.value - RADIUS_TOL {
        return Ok(());
    }
    let (fb, kb, solb) = if b > 0.0 { pb.inner(&pairs, &combos, b)? } else { (f0, k0, sol0.clone()) };
    offer(fb + (-b).exp2(), b, kb, &solb, inc);
    if r_hi > r_sat {
        // constant LP beyond saturation; the radius term decays to its limit
        let far = if r_hi.is_finite() { r_hi } else { f64::INFINITY };
        offer(fb + decay_hi, far, kb, &solb, inc);
    }
    let mut heap = BinaryHeap::new();
    if b > 0.0 {
        heap.push(Interval {
            lower: f0 + (-b).exp2(),
            a: 0.0,
            b,
            fa: f0,
            fb,
        });
    }
    while let Some(iv) = heap.pop() {
        if iv.lower >= inc.value - RADIUS_TOL || iv.b - iv.a < 1e-12 {
            break;
        }
        let m = 0.5 * (iv.a + iv.b);
        let (fm, km, solm) = pb.inner(&pairs, &combos, m)?;
        offer(fm + (-m).exp2(), m, km, &solm, inc);
        for (a, bb, fa, fbb) in [(iv.a, m, iv.fa, fm), (m, iv.b, fm, iv.fb)] {
            let lower = fa + (-bb).exp2();
            if lower < inc.value - RADIUS_TOL {
                heap.push(Interval { lower, a, b: bb, fa, fb: fbb });
            }
        }
    }
    Ok(())
}

fn build_witness(sm: &Side, sn: &Side, inc: &Incumbent, kind: MatchingKind) -> Triple {
    let Some(sol) = &inc.sol else {
        return Triple::empty(FAR_RADIUS);
    };
    let mut pairs = Vec::new();
    let mut shifts = Vec::new();
    for (k, (ga, gb)) in inc.pairs.iter().enumerate() {
        let flows = &sol.flows[k];
        let mut mu_w = vec![0.0; ga.len()];
        let mut nu_w = vec![0.0; gb.len()];
        for (ia, _) in ga.iter().enumerate() {
            for (ib, _) in gb.iter().enumerate() {
                let f = flows[ia * gb.len() + ib];
                mu_w[ia] += f;
                nu_w[ib] += f;
            }
        }
        if kind == MatchingKind::Generalized {
            for (ia, &a) in ga.iter().enumerate() {
                mu_w[ia] += sol.mu_dispose[a];
            }
            for (ib, &b) in gb.iter().enumerate() {
                nu_w[ib] += sol.nu_dispose[b];
            }
        }
        let part = |side: &Side, idx: &[usize], w: &[f64]| -> PointMeasure {
            let atoms: Vec<(f64, f64)> = idx
                .iter()
                .zip(w)
                .filter(|(_, &w)| w > 1e-14)
                .map(|(&a, &w)| (side.atoms[a].x, w.min(side.atoms[a].m)))
                .collect();
            PointMeasure::on_line(&atoms).expect("dominated by a valid layer")
        };
        let mp = part(sm, ga, &mu_w);
        let np = part(sn, gb, &nu_w);
        if mp.total_mass() <= 1e-14 || np.total_mass() <= 1e-14 {
            continue;
        }
        pairs.push(MatchedPair {
            mu_layer: sm.layer_ids[sm.atoms[ga[0]].layer],
            mu_part: mp,
            nu_layer: sn.layer_ids[sn.atoms[gb[0]].layer],
            nu_part: np,
        });
        shifts.push(vec![inc.shifts[k]]);
    }
    let matching = Matching { pairs, kind };
    let sep = super::separation(&matching);
    let r = if inc.r.is_infinite() || (sep.is_infinite() && inc.r >= 0.5 * sep.min(f64::MAX)) {
        FAR_RADIUS.max(inc.r.min(FAR_RADIUS))
    } else if 2.0 * inc.r >= sep {
        0.5 * sep * (1.0 - 1e-12)
    } else {
        inc.r
    };
    Triple { r, matching, shifts }
}
