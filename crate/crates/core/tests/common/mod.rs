//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use mvpolymer::measures::{LayeredMeasure, PointMeasure};
use rand::Rng;

fn cost(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
        .min(1.0)
}

/// Minimum of the transportation LP by enumerating every basis (spanning
/// tree of the bipartite support graph) and solving it by leaf peeling.
pub fn bruteforce_transportation(supply: &[f64], demand: &[f64], c: &[f64]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let need = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(need);
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        r
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        start: usize,
        cells: &[(usize, usize)],
        chosen: &mut Vec<usize>,
        parent: Vec<usize>,
        need: usize,
        m: usize,
        supply: &[f64],
        demand: &[f64],
        c: &[f64],
        n: usize,
        best: &mut f64,
    ) {
        if chosen.len() == need {
            if let Some(v) = evaluate_tree(chosen, cells, m, n, supply, demand, c) {
                if v < *best {
                    *best = v;
                }
            }
            return;
        }
        if cells.len() - start < need - chosen.len() {
            return;
        }
        for k in start..cells.len() {
            if cells.len() - k < need - chosen.len() {
                break;
            }
            let (i, j) = cells[k];
            let mut p = parent.clone();
            let (ri, rj) = (find(&mut p, i), find(&mut p, m + j));
            if ri == rj {
                continue;
            }
            p[ri] = rj;
            chosen.push(k);
            rec(k + 1, cells, chosen, p, need, m, supply, demand, c, n, best);
            chosen.pop();
        }
    }
    let parent: Vec<usize> = (0..m + n).collect();
    rec(0, &cells, &mut chosen, parent, need, m, supply, demand, c, n, &mut best);
    best
}

fn evaluate_tree(
    chosen: &[usize],
    cells: &[(usize, usize)],
    m: usize,
    n: usize,
    supply: &[f64],
    demand: &[f64],
    c: &[f64],
) -> Option<f64> {
    let mut rem: Vec<f64> = supply.iter().chain(demand).copied().collect();
    let mut alive: Vec<bool> = vec![true; chosen.len()];
    let mut deg = vec![0usize; m + n];
    for &k in chosen {
        let (i, j) = cells[k];
        deg[i] += 1;
        deg[m + j] += 1;
    }
    let mut total = 0.0;
    for _ in 0..chosen.len() {
        // find a leaf
        let leaf = (0..m + n).find(|&v| deg[v] == 1)?;
        let e = (0..chosen.len()).find(|&e| {
            alive[e] && {
                let (i, j) = cells[chosen[e]];
                i == leaf || m + j == leaf
            }
        })?;
        let (i, j) = cells[chosen[e]];
        let other = if i == leaf { m + j } else { i };
        let f = rem[leaf];
        if f < -1e-12 {
            return None;
        }
        rem[other] -= f;
        rem[leaf] = 0.0;
        total += f.max(0.0) * c[i * n + j];
        alive[e] = false;
        deg[leaf] -= 1;
        deg[other] -= 1;
    }
    Some(total)
}

pub fn bruteforce_wasserstein(a: &PointMeasure, g: &PointMeasure) -> f64 {
    let c: Vec<f64> = a
        .atoms()
        .flat_map(|(x, _)| g.atoms().map(move |(y, _)| cost(x, y)))
        .collect();
    bruteforce_transportation(a.weights(), g.weights(), &c)
}

/// Unequal-mass distance through the balanced problem with one disposal
/// node per side.
pub fn bruteforce_generalized(a: &PointMeasure, g: &PointMeasure) -> f64 {
    let (m, n) = (a.len(), g.len());
    let mut supply = a.weights().to_vec();
    supply.push(g.total_mass());
    let mut demand = g.weights().to_vec();
    demand.push(a.total_mass());
    let mut c = Vec::new();
    for i in 0..=m {
        for j in 0..=n {
            c.push(match (i < m, j < n) {
                (true, true) => cost(a.position(i), g.position(j)),
                (false, false) => 0.0,
                _ => 1.0,
            });
        }
    }
    bruteforce_transportation(&supply, &demand, &c)
}

/// Random 1-d point measure with `k` atoms on a coarse lattice (so that
/// coincident atoms and ties appear) and total mass `mass`.
pub fn random_points<R: Rng>(rng: &mut R, k: usize, mass: f64, spread: f64) -> PointMeasure {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let atoms: Vec<(f64, f64)> = raw
        .iter()
        .map(|w| {
            let x = (rng.gen_range(-spread..spread) * 4.0).round() / 4.0;
            (x, w / s * mass)
        })
        .collect();
    PointMeasure::on_line(&atoms).unwrap()
}

/// Random point measure in `dim` dimensions with continuous positions.
pub fn random_points_nd<R: Rng>(rng: &mut R, dim: usize, k: usize, mass: f64, spread: f64) -> PointMeasure {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let atoms = raw
        .iter()
        .map(|w| {
            let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-spread..spread)).collect();
            (p, w / s * mass)
        })
        .collect();
    PointMeasure::new(dim, atoms).unwrap()
}

/// Random 1-d layered measure: `layers` layers, `atoms` atoms in total
/// (at least one per layer), lattice positions, total mass in `(0, 1]`.
pub fn random_layered<R: Rng>(rng: &mut R, layers: usize, atoms: usize, spread: f64) -> LayeredMeasure {
    let total = rng.gen_range(0.2..=1.0);
    let mut counts = vec![1usize; layers];
    for _ in layers..atoms {
        counts[rng.gen_range(0..layers)] += 1;
    }
    let raw: Vec<f64> = (0..layers).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let parts = counts
        .iter()
        .zip(&raw)
        .map(|(&k, w)| random_points(rng, k, w / s * total, spread))
        .collect();
    LayeredMeasure::from_points(parts).unwrap()
}

/// Random layered measure in `dim` dimensions with continuous positions.
pub fn random_layered_nd<R: Rng>(rng: &mut R, dim: usize, layers: usize, per_layer: usize, spread: f64) -> LayeredMeasure {
    let total = rng.gen_range(0.2..=1.0);
    let raw: Vec<f64> = (0..layers).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let parts = raw
        .iter()
        .map(|w| {
            let k = rng.gen_range(1..=per_layer);
            random_points_nd(rng, dim, k, w / s * total, spread)
        })
        .collect();
    LayeredMeasure::from_points(parts).unwrap()
}
