//! The concentration functional: the largest tent-smoothed ball mass.

use std::collections::BinaryHeap;

use super::tent_of_norm;
use crate::measures::{dist, LayeredMeasure, PointMeasure};

/// Absolute accuracy of the branch-and-bound center search (d >= 2).
const CENTER_TOL: f64 = 1e-9;
/// Up to this many atoms the 1-d objective is evaluated directly.
const DIRECT_LIMIT: usize = 64;

/// `sup` over layers and centers of `∫ f_r(x - y) α_i(dy)`.
pub fn concentration(m: &LayeredMeasure, r: f64) -> f64 {
    m.point_layers()
        .iter()
        .map(|(_, p)| concentration_points(p, r).1)
        .fold(0.0, f64::max)
}

/// Maximizing center and value of the tent-smoothed mass of one layer.
pub fn concentration_points(p: &PointMeasure, r: f64) -> (Vec<f64>, f64) {
    assert!(r >= 0.0, "radius must be nonnegative");
    if p.is_empty() {
        return (vec![0.0; p.dim()], 0.0);
    }
    if p.dim() == 1 {
        line(p, r)
    } else {
        branch_and_bound(p, r)
    }
}

/// Exact 1-d maximization. The objective is piecewise linear in the center
/// with breakpoints at `x ± r` and `x ± (r + 1)`, so the maximum is attained
/// at one of them.
fn line(p: &PointMeasure, r: f64) -> (Vec<f64>, f64) {
    let xs = p.positions();
    let ws = p.weights();
    let n = xs.len();
    let offsets = [-r - 1.0, -r, 0.0, r, r + 1.0];
    let mut best = (xs[0], f64::NEG_INFINITY);
    if n <= DIRECT_LIMIT {
        for &x in xs {
            for off in offsets {
                let c = x + off;
                let v: f64 = xs
                    .iter()
                    .zip(ws)
                    .map(|(y, w)| w * tent_of_norm((c - y).abs(), r))
                    .sum();
                if v > best.1 {
                    best = (c, v);
                }
            }
        }
        return (vec![best.0], best.1);
    }
    let mut cw = vec![0.0; n + 1];
    let mut cwx = vec![0.0; n + 1];
    for i in 0..n {
        cw[i + 1] = cw[i] + ws[i];
        cwx[i + 1] = cwx[i] + ws[i] * xs[i];
    }
    // for a fixed offset the centers x + off increase with x, so the four
    // window boundaries only move right
    for off in offsets {
        let (mut i0, mut i1, mut i2, mut i3) = (0, 0, 0, 0);
        for &x in xs {
            let c = x + off;
            while i0 < n && xs[i0] < c - r - 1.0 {
                i0 += 1;
            }
            while i1 < n && xs[i1] < c - r {
                i1 += 1;
            }
            while i2 < n && xs[i2] <= c + r {
                i2 += 1;
            }
            while i3 < n && xs[i3] <= c + r + 1.0 {
                i3 += 1;
            }
            let left = (r + 1.0 - c) * (cw[i1] - cw[i0]) + (cwx[i1] - cwx[i0]);
            let mid = cw[i2] - cw[i1];
            let right = (r + 1.0 + c) * (cw[i3] - cw[i2]) - (cwx[i3] - cwx[i2]);
            let v = left + mid + right;
            if v > best.1 {
                best = (c, v);
            }
        }
    }
    // recompute the winner directly to shed prefix-sum rounding
    let c = best.0;
    let lo = xs.partition_point(|&x| x < c - r - 1.0);
    let hi = xs.partition_point(|&x| x <= c + r + 1.0);
    let v: f64 = (lo..hi)
        .map(|i| ws[i] * tent_of_norm((c - xs[i]).abs(), r))
        .sum();
    (vec![c], v)
}

struct Cell {
    upper: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.upper == other.upper
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.upper.total_cmp(&other.upper)
    }
}

fn box_distance(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| {
            let d = if v < l { l - v } else if v > h { v - h } else { 0.0 };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Best-first branch and bound over boxes. The bound on a box is
/// `Σ w f_r(dist(x, box))`, which dominates the objective on the box and
/// converges to it as the box shrinks. The search box is the bounding box
/// of the atoms: projecting a center onto it does not increase any distance.
fn branch_and_bound(p: &PointMeasure, r: f64) -> (Vec<f64>, f64) {
    let dim = p.dim();
    let objective = |c: &[f64]| -> f64 { p.atoms().map(|(x, w)| w * tent_of_norm(dist(x, c), r)).sum() };
    // Two bounds, the smaller is used. Per atom: the tent at the box
    // distance. Tangent plane: atoms whose tent stays positive on the whole
    // box contribute a concave sum, bounded by its supergradient at the
    // center; this keeps flat ridges (equal-weight atoms) from forcing
    // subdivision down to the tolerance.
    let bound = |lo: &[f64], hi: &[f64]| -> f64 {
        let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut loose = 0.0;
        let mut concave = 0.0;
        let mut rest = 0.0;
        let mut grad = vec![0.0; dim];
        for (x, w) in p.atoms() {
            let t = w * tent_of_norm(box_distance(x, lo, hi), r);
            loose += t;
            let far = x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| {
                    let d = (v - l).abs().max((v - h).abs());
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            if far <= r {
                concave += w;
            } else if far < r + 1.0 {
                let d0 = dist(x, &mid);
                concave += w * tent_of_norm(d0, r);
                if d0 > r {
                    for ax in 0..dim {
                        grad[ax] -= w * (mid[ax] - x[ax]) / d0;
                    }
                }
            } else {
                rest += t;
            }
        }
        let slope: f64 = (0..dim).map(|ax| grad[ax].abs() * 0.5 * (hi[ax] - lo[ax])).sum();
        loose.min(concave + slope + rest)
    };
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut best = (p.position(0).to_vec(), f64::NEG_INFINITY);
    for (x, _) in p.atoms() {
        for ax in 0..dim {
            lo[ax] = lo[ax].min(x[ax]);
            hi[ax] = hi[ax].max(x[ax]);
        }
        let v = objective(x);
        if v > best.1 {
            best = (x.to_vec(), v);
        }
    }
    let mut heap = BinaryHeap::new();
    heap.push(Cell {
        upper: bound(&lo, &hi),
        lo,
        hi,
    });
    let mut iterations = 0usize;
    while let Some(cell) = heap.pop() {
        if cell.upper <= best.1 + CENTER_TOL {
            break;
        }
        iterations += 1;
        if iterations > 2_000_000 {
            break;
        }
        let mid: Vec<f64> = cell.lo.iter().zip(&cell.hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let v = objective(&mid);
        if v > best.1 {
            best = (mid.clone(), v);
        }
        // split along the widest axis
        let ax = (0..dim)
            .max_by(|&a, &b| (cell.hi[a] - cell.lo[a]).total_cmp(&(cell.hi[b] - cell.lo[b])))
            .unwrap();
        if cell.hi[ax] - cell.lo[ax] < 1e-13 {
            continue;
        }
        let mut left_hi = cell.hi.clone();
        left_hi[ax] = mid[ax];
        let mut right_lo = cell.lo.clone();
        right_lo[ax] = mid[ax];
        for (l, h) in [(cell.lo.clone(), left_hi), (right_lo, cell.hi.clone())] {
            let u = bound(&l, &h);
            if u > best.1 + CENTER_TOL {
                heap.push(Cell { upper: u, lo: l, hi: h });
            }
        }
    }
    best
}
