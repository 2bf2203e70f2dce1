//! The update map on layered measures, the energy functional `R` and the
//! localization and clustering functionals.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::environment::{field_at, log_mgf, split_seed, stream_id, FieldSpec};
use crate::error::{Error, Result};
use crate::measures::{convolve, heaviest_ball, LayeredMeasure, Measure, PointMeasure, StepDistribution, MASS_TOL};
use crate::mvmetric::{concentration, concentration_points, metric_upper, SearchBudget};
use crate::polymer::{reweight, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSample {
    pub input: LayeredMeasure,
    pub output: LayeredMeasure,
    /// The normalizer `A`.
    pub normalizer: f64,
    pub log_normalizer: f64,
    pub time: u64,
    pub seed: u64,
    /// Mass removed by pruning.
    pub pruned: f64,
}

/// Mass defect `1 - ‖μ‖`, read as exactly zero within the mass tolerance.
fn defect(mu: &LayeredMeasure) -> f64 {
    let d = 1.0 - mu.total_mass();
    if d <= MASS_TOL {
        0.0
    } else {
        d
    }
}

/// One draw of `μ̂`: layer `j` (counting from 1 in key order) is reweighted
/// by its own field copy, stream `stream_id(time, j - 1)`, so a one-layer
/// probability measure sees exactly the polymer's environment at `time`.
pub fn update_sample(
    mu: &LayeredMeasure,
    beta: f64,
    spec: &FieldSpec,
    step: &StepDistribution,
    time: u64,
    seed: u64,
) -> Result<UpdateSample> {
    let c = log_mgf(spec, beta)?;
    let def = defect(mu);
    let log_extra = (def > 0.0).then(|| def.ln() + c);
    let keys: Vec<u32> = mu.support();
    let convs: Vec<Measure> = mu
        .layers()
        .map(|(_, m)| convolve(m, step))
        .collect::<Result<_>>()?;
    let (layers, log_norm) = if convs.is_empty() {
        (Vec::new(), c)
    } else {
        reweight(convs, beta, log_extra, |j, pts| {
            if beta == 0.0 {
                Ok(vec![0.0; pts.len() / spec.dim])
            } else {
                field_at(spec, seed, stream_id(time, j as u32), pts)
            }
        })?
    };
    let pruned = layers.iter().map(|l| l.1).sum();
    let map: BTreeMap<u32, Measure> = keys.into_iter().zip(layers.into_iter().map(|l| l.0)).collect();
    Ok(UpdateSample {
        input: mu.clone(),
        output: LayeredMeasure::new(map)?,
        normalizer: log_norm.exp(),
        log_normalizer: log_norm,
        time,
        seed,
        pruned,
    })
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Draws `n` independent updates (time indices `0..n` under `seed`) and
/// maps each through `f`.
fn draws<F>(mu: &LayeredMeasure, beta: f64, spec: &FieldSpec, step: &StepDistribution, n: usize, seed: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&UpdateSample) -> f64 + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|t| update_sample(mu, beta, spec, step, t, seed).map(|u| f(&u)))
        .collect()
}

/// Monte Carlo mean of `‖μ̂‖` with its standard error. The boundary cases
/// `‖μ‖ ∈ {0, 1}` and `β = 0` are returned exactly without sampling.
pub fn mass_defect_stats(
    mu: &LayeredMeasure,
    beta: f64,
    spec: &FieldSpec,
    step: &StepDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let m = mu.total_mass();
    if mu.is_zero() || defect(mu) == 0.0 || beta == 0.0 {
        return Ok((m, 0.0));
    }
    if n_samples < 2 {
        return Err(Error::InvalidConfig("at least two samples are needed".into()));
    }
    let xs = draws(mu, beta, spec, step, n_samples, seed, |u| u.output.total_mass())?;
    Ok(mean_stderr(&xs))
}

/// `R(μ) = E log A` by Monte Carlo, as (estimate, stderr). For `μ = 0`
/// the integrand is the constant `c(β)` and no sampling is done.
pub fn energy_r(
    mu: &LayeredMeasure,
    beta: f64,
    spec: &FieldSpec,
    step: &StepDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if mu.is_zero() {
        return Ok((log_mgf(spec, beta)?, 0.0));
    }
    if beta == 0.0 {
        return Ok((0.0, 0.0));
    }
    if n_samples < 2 {
        return Err(Error::InvalidConfig("at least two samples are needed".into()));
    }
    let xs = draws(mu, beta, spec, step, n_samples, seed, |u| u.log_normalizer)?;
    Ok(mean_stderr(&xs))
}

/// `(1/n) Σ_{i<n} R̂(rho_i)` over a stored trajectory, each term with its
/// own fresh fields (seed `split_seed(seed, i)`), and the combined stderr.
pub fn empirical_energy(
    traj: &Trajectory,
    spec: &FieldSpec,
    step: &StepDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = traj.len();
    if n == 0 || traj.rho.len() < n {
        return Err(Error::EmptyTrajectory);
    }
    let mut sum = 0.0;
    let mut var = 0.0;
    for (i, rho) in traj.rho[..n].iter().enumerate() {
        let mu = LayeredMeasure::single(rho.clone())?;
        let (r, se) = energy_r(&mu, traj.beta, spec, step, n_samples, split_seed(seed, i as u64))?;
        sum += r;
        var += se * se;
    }
    Ok((sum / n as f64, var.sqrt() / n as f64))
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * std::f64::consts::PI / d as f64,
    }
}

fn norm_to(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `D_r(μ, u) = (V_d r^d)^{-1} ∫ (1 - |u - v|/r)^+ μ(dv)`.
pub fn tent_density(mu: &Measure, u: &[f64], r: f64) -> f64 {
    let d = mu.dim();
    let p = mu.to_points();
    let s: f64 = p
        .atoms()
        .map(|(v, w)| w * (1.0 - norm_to(u, v) / r).max(0.0))
        .sum();
    s / (unit_ball_volume(d) * r.powi(d as i32))
}

/// For every atom, `Σ_v w_v g(|x - v|)` over atoms `v` with `|x - v| < r`.
fn neighbour_sums(p: &PointMeasure, r: f64, g: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = p.len();
    if p.dim() == 1 {
        // atoms are sorted
        let xs = p.positions();
        let ws = p.weights();
        let mut lo = 0;
        let mut hi = 0;
        (0..n)
            .map(|i| {
                while xs[i] - xs[lo] >= r {
                    lo += 1;
                }
                while hi < n && xs[hi] - xs[i] < r {
                    hi += 1;
                }
                (lo..hi).map(|k| ws[k] * g((xs[k] - xs[i]).abs())).sum()
            })
            .collect()
    } else {
        (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|k| {
                        let t = norm_to(p.position(i), p.position(k));
                        (t < r).then(|| p.weight(k) * g(t))
                    })
                    .sum()
            })
            .collect()
    }
}

/// The ramp `f_ε`: 0 below `ε`, linear on `[ε, 2ε]`, 1 above.
pub fn ramp(eps: f64, t: f64) -> f64 {
    ((t - eps) / eps).clamp(0.0, 1.0)
}

/// `J_{r,ε}(μ) = Σ_j ∫ f_ε(D_r(α_j, x)) α_j(dx)`; grid layers are read
/// cellwise (atoms at the cell nodes).
pub fn cluster_functional_j(mu: &LayeredMeasure, r: f64, eps: f64) -> f64 {
    let mut total = 0.0;
    for (_, layer) in mu.point_layers() {
        let d = layer.dim();
        let scale = 1.0 / (unit_ball_volume(d) * r.powi(d as i32));
        let dens = neighbour_sums(&layer, r, |t| 1.0 - t / r);
        total += dens
            .iter()
            .zip(layer.weights())
            .map(|(s, w)| w * ramp(eps, s * scale))
            .sum::<f64>();
    }
    total
}

/// `ρ({x : ρ(B_r(x)) > ε V_d r^d})`, evaluated at atoms (or cell nodes).
pub fn clustering_mass(rho: &Measure, eps: f64, r: f64) -> f64 {
    let p = rho.to_points();
    let level = eps * unit_ball_volume(p.dim()) * r.powi(p.dim() as i32);
    neighbour_sums(&p, r, |_| 1.0)
        .iter()
        .zip(p.weights())
        .filter(|(b, _)| **b > level)
        .map(|(_, w)| w)
        .sum()
}

/// Total mass of the cells whose density `mass / h^d` exceeds `eps`.
pub fn density_clustering_mass(rho: &Measure, eps: f64) -> Result<f64> {
    match rho {
        Measure::Grid(g) => Ok((0..g.values().len())
            .filter(|&i| g.density(i) > eps)
            .map(|i| g.values()[i])
            .sum()),
        Measure::Point(_) => Err(Error::KindMismatch("density clustering needs a grid measure")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    /// `(δ, W_δ)`; `W_δ = +∞` when no radius reaches `1 - δ`.
    pub w: Vec<(f64, f64)>,
    /// Largest layer mass.
    pub g: f64,
    /// `Σ m_i / (1 - m_i)`, `+∞` when a layer has mass 1.
    pub q: f64,
    /// `(δ, K, 1{μ ∈ 𝒢_{δ,K}})`; false unless `μ` is a one-layer
    /// probability measure.
    pub indicators: Vec<(f64, f64, bool)>,
}

/// Bisection tolerance on `W_δ`.
pub const W_TOL: f64 = 1e-9;

/// `W_δ(μ) = inf{r ≥ 0 : I_r(μ) > 1 - δ}`, by bisection on `r` (`I_r` is
/// nondecreasing in `r`).
pub fn localization_radius(mu: &LayeredMeasure, delta: f64) -> f64 {
    let target = 1.0 - delta;
    let layers: Vec<PointMeasure> = mu.point_layers().into_iter().map(|l| l.1).collect();
    let above = |r: f64| layers.iter().any(|p| concentration_points(p, r).1 > target);
    if above(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = match min_span_radius(&layers, target) {
        // open balls: radius s exceeds t exactly when r > s, and the
        // sandwich ball_r <= I_r <= ball_{r+1} brackets W in [s - 1, s]
        Some(s) => ((s - 1.0).max(0.0), s),
        None => return f64::INFINITY,
    };
    if !above(hi) {
        hi = hi * (1.0 + 1e-12) + 1e-12;
        if !above(hi) {
            lo = 0.0;
            hi = saturation_radius(&layers);
            if !above(hi) {
                return f64::INFINITY;
            }
        }
    }
    while hi - lo > W_TOL {
        let mid = 0.5 * (lo + hi);
        if above(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Radius beyond which `I_r` equals the largest layer mass.
fn saturation_radius(layers: &[PointMeasure]) -> f64 {
    let mut hi: f64 = 1.0;
    for p in layers {
        for ax in 0..p.dim() {
            let (lo_x, hi_x) = p
                .atoms()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (x, _)| (a.min(x[ax]), b.max(x[ax])));
            hi = hi.max((hi_x - lo_x) * (p.dim() as f64).sqrt() + 1.0);
        }
    }
    hi
}

/// In 1-d, half the shortest span of consecutive atoms with mass above
/// `target`, i.e. `inf{r : some open r-ball has mass > target}`. In higher
/// dimensions the saturation radius is returned as a plain upper bracket.
/// `None` when no layer is heavy enough.
fn min_span_radius(layers: &[PointMeasure], target: f64) -> Option<f64> {
    if layers.iter().all(|p| p.total_mass() <= target) {
        return None;
    }
    if layers.iter().any(|p| p.dim() != 1) {
        return Some(saturation_radius(layers));
    }
    let mut best = f64::INFINITY;
    for p in layers {
        let xs = p.positions();
        let ws = p.weights();
        let mut mass = 0.0;
        let mut lo = 0;
        for hi in 0..xs.len() {
            mass += ws[hi];
            while mass > target && lo <= hi {
                best = best.min(0.5 * (xs[hi] - xs[lo]));
                mass -= ws[lo];
                lo += 1;
            }
        }
    }
    best.is_finite().then_some(best)
}

pub fn max_layer_mass(mu: &LayeredMeasure) -> f64 {
    mu.layers().map(|(_, m)| m.total_mass()).fold(0.0, f64::max)
}

pub fn layer_statistic_q(mu: &LayeredMeasure) -> f64 {
    let mut q = 0.0;
    for (_, m) in mu.layers() {
        let a = m.total_mass();
        if a >= 1.0 - MASS_TOL {
            return f64::INFINITY;
        }
        q += a / (1.0 - a);
    }
    q
}

/// `1{μ ∈ 𝒢_{δ,K}}`: some open `K`-ball carries mass above `1 - δ`.
pub fn in_geometric_set(mu: &LayeredMeasure, delta: f64, k: f64) -> bool {
    if mu.num_layers() != 1 || (mu.total_mass() - 1.0).abs() > MASS_TOL {
        return false;
    }
    heaviest_ball(mu, k).is_some_and(|b| b.2 > 1.0 - delta)
}

pub fn localization_functionals(mu: &LayeredMeasure, deltas: &[f64], ks: &[f64]) -> Localization {
    let w = deltas.iter().map(|&d| (d, localization_radius(mu, d))).collect();
    let mut indicators = Vec::with_capacity(deltas.len() * ks.len());
    for &d in deltas {
        for &k in ks {
            indicators.push((d, k, in_geometric_set(mu, d, k)));
        }
    }
    Localization {
        w,
        g: max_layer_mass(mu),
        q: layer_statistic_q(mu),
        indicators,
    }
}

/// `(1/n) Σ_{i<n} metric_upper(rho_i, ρ̂_i)` with `ρ̂_i` a fresh draw of the
/// update of `rho_i` (fields under `split_seed(seed, i)`). This bounds
/// `(1/n) Σ 𝒲(δ_{rho_i}, T δ_{rho_i})` from above in expectation; it is not
/// an estimator of `𝒲(ψ_n, 𝒯 ψ_n)`.
pub fn lifted_distance_bound(
    traj: &Trajectory,
    spec: &FieldSpec,
    step: &StepDistribution,
    seed: u64,
    budget: &SearchBudget,
) -> Result<f64> {
    let n = traj.len();
    if n == 0 || traj.rho.len() < n {
        return Err(Error::EmptyTrajectory);
    }
    let terms: Vec<f64> = traj.rho[..n]
        .par_iter()
        .enumerate()
        .map(|(i, rho)| {
            let mu = LayeredMeasure::single(Measure::Point(rho.to_points()))?;
            let point_step = StepDistribution::new(Measure::Point(step.measure().to_points()))?;
            let u = update_sample(&mu, traj.beta, spec, &point_step, 0, split_seed(seed, i as u64))?;
            Ok(metric_upper(&mu, &u.output, budget)?.value)
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / n as f64)
}

/// Parameter grids for the per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticGrids {
    /// Radii for `I_r` and for clustering masses.
    pub r: Vec<f64>,
    pub eps: Vec<f64>,
    /// Density levels (grid mode only).
    pub density_eps: Vec<f64>,
    pub delta: Vec<f64>,
    pub k: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    /// `sup_x rho(B_1(x))`.
    pub max_ball: f64,
    /// `(r, I_r)`.
    pub concentration: Vec<(f64, f64)>,
    /// `(ε, r, rho(A^ε(r)))`.
    pub clustering: Vec<(f64, f64, f64)>,
    /// `(ε, rho(B^ε))`, empty for point measures.
    pub density_clustering: Vec<(f64, f64)>,
    pub localization: Localization,
    /// `R̂(rho)` with its stderr, when requested.
    pub energy: Option<(f64, f64)>,
}

pub fn diagnostics(step: usize, rho: &Measure, grids: &DiagnosticGrids) -> Result<DiagnosticsRecord> {
    let mu = LayeredMeasure::single(rho.clone())?;
    let max_ball = heaviest_ball(&mu, 1.0).map_or(0.0, |b| b.2);
    let concentration = grids.r.iter().map(|&r| (r, concentration(&mu, r))).collect();
    let mut clustering = Vec::with_capacity(grids.eps.len() * grids.r.len());
    for &e in &grids.eps {
        for &r in &grids.r {
            clustering.push((e, r, clustering_mass(rho, e, r)));
        }
    }
    let density_clustering = match rho {
        Measure::Grid(_) => grids
            .density_eps
            .iter()
            .map(|&e| Ok((e, density_clustering_mass(rho, e)?)))
            .collect::<Result<_>>()?,
        Measure::Point(_) => Vec::new(),
    };
    Ok(DiagnosticsRecord {
        step,
        max_ball,
        concentration,
        clustering,
        density_clustering,
        localization: localization_functionals(&mu, &grids.delta, &grids.k),
        energy: None,
    })
}
