//! The endpoint recursion `rho_{n+1} ∝ e^{βX(n+1,·)} (rho_n * λ)`, the
//! partition-function bookkeeping and free-energy estimates.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::environment::{field_at, log_mgf, stream_id, FieldLaw, FieldSpec};
use crate::error::{Error, Result};
use crate::measures::{convolve, GridMeasure, Measure, PointMeasure, StepDistribution};

/// Atoms (point mode) or boundary cells (grid mode) lighter than this
/// fraction of the heaviest one are pruned after each step.
pub const PRUNE_REL: f64 = 1e-15;
/// Largest number of paths `path_sum_oracle` enumerates.
pub const ORACLE_MAX_PATHS: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    /// Exact atoms; `λ` must be a point measure.
    Point { max_atoms: usize },
    /// Cell masses on the grid of `λ`.
    Grid,
}

/// The field slice for time `n` covers the centered cube of half-width
/// `margin + n * growth`. Points of `rho * λ` outside it are an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowPolicy {
    pub margin: f64,
    pub growth: f64,
}

impl WindowPolicy {
    /// Growth equal to the support radius of `λ`.
    pub fn for_step(step: &StepDistribution, margin: f64) -> Self {
        Self {
            margin,
            growth: step.support_radius(),
        }
    }

    pub fn half_width(&self, n: usize) -> f64 {
        self.margin + n as f64 * self.growth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolymerConfig {
    pub beta: f64,
    pub step: StepDistribution,
    pub field: FieldSpec,
    pub n_steps: usize,
    pub window: WindowPolicy,
    pub mode: Mode,
}

impl PolymerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be finite and nonnegative, got {}", self.beta)));
        }
        self.field.validate()?;
        if self.field.dim != self.step.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.field.dim,
                found: self.step.dim(),
            });
        }
        if self.field.law == FieldLaw::Bounded && 2.0 * self.beta > self.field.kappa_limit {
            return Err(Error::KappaOutOfDomain {
                kappa: 2.0 * self.beta,
                limit: self.field.kappa_limit,
            });
        }
        if !(self.window.margin.is_finite() && self.window.growth.is_finite() && self.window.margin >= 0.0) {
            return Err(Error::InvalidConfig("window margin and growth must be finite, margin nonnegative".into()));
        }
        match (&self.mode, self.step.measure()) {
            (Mode::Point { max_atoms }, Measure::Point(_)) if *max_atoms > 0 => Ok(()),
            (Mode::Point { .. }, Measure::Point(_)) => Err(Error::InvalidConfig("max_atoms must be positive".into())),
            (Mode::Grid, Measure::Grid(_)) => Ok(()),
            (Mode::Point { .. }, _) => Err(Error::InvalidConfig("point mode needs an atomic step law".into())),
            (Mode::Grid, _) => Err(Error::InvalidConfig("grid mode needs a grid step law".into())),
        }
    }

    /// `δ_0` in the representation of the mode.
    pub fn initial(&self) -> Measure {
        let d = self.step.dim();
        match self.mode {
            Mode::Point { .. } => Measure::Point(PointMeasure::dirac(vec![0.0; d], 1.0).unwrap()),
            Mode::Grid => {
                let h = match self.step.measure() {
                    Measure::Grid(g) => g.spacing(),
                    Measure::Point(_) => 1.0,
                };
                Measure::Grid(GridMeasure::new(vec![0.0; d], h, vec![1; d], vec![1.0]).unwrap())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub rho: Measure,
    pub log_ratio: f64,
    /// Mass removed by pruning, before renormalization.
    pub pruned: f64,
}

/// One application of the update. `field` receives the support points of
/// `rho * λ` (flat coordinates) and returns `X(n+1, ·)` there; it may also
/// refuse points outside its window.
pub fn step<F>(rho: &Measure, lambda: &StepDistribution, beta: f64, field: F) -> Result<StepOutput>
where
    F: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    let conv = convolve(rho, lambda)?;
    let mut field = Some(field);
    let (mut layers, log_ratio) = reweight(vec![conv], beta, None, |_, pts| (field.take().unwrap())(pts))?;
    let (rho, pruned) = layers.pop().unwrap();
    Ok(StepOutput { rho, log_ratio, pruned })
}

/// Reweights already convolved layers by `e^{βX}` and normalizes by
/// `Σ_j ∫ e^{βX_j} conv_j + e^{log_extra}`. Returns each layer with its
/// pruned mass, and the log normalizer. `field(j, points)` gives the
/// potential of layer `j`.
pub(crate) fn reweight<F>(
    convs: Vec<Measure>,
    beta: f64,
    log_extra: Option<f64>,
    mut field: F,
) -> Result<(Vec<(Measure, f64)>, f64)>
where
    F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
{
    let mut parts = Vec::with_capacity(convs.len());
    for (j, conv) in convs.iter().enumerate() {
        let (points, masses, cells) = support(conv);
        let x = field(j, &points)?;
        if x.len() != masses.len() {
            return Err(Error::InvalidField(format!("{} field values for {} points", x.len(), masses.len())));
        }
        parts.push((masses, x, cells));
    }
    if log_extra.is_none() && parts.iter().all(|p| p.0.is_empty()) {
        return Err(Error::Underflow(0));
    }
    // at β = 0 the weights are the convolution itself, bit for bit
    let (probs, log_norm): (Vec<Vec<f64>>, f64) = if beta == 0.0 {
        (parts.iter().map(|p| p.0.clone()).collect(), 0.0)
    } else {
        let logw: Vec<Vec<f64>> = parts
            .iter()
            .map(|(m, x, _)| m.iter().zip(x).map(|(m, v)| m.ln() + beta * v).collect())
            .collect();
        let top = logw
            .iter()
            .flatten()
            .copied()
            .chain(log_extra)
            .fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Err(Error::Underflow(0));
        }
        let w: Vec<Vec<f64>> = logw
            .iter()
            .map(|l| l.iter().map(|l| (l - top).exp()).collect())
            .collect();
        let s: f64 = w.iter().flatten().sum::<f64>() + log_extra.map_or(0.0, |e| (e - top).exp());
        (
            w.iter().map(|l| l.iter().map(|v| v / s).collect()).collect(),
            top + s.ln(),
        )
    };
    let wmax = probs.iter().flatten().copied().fold(0.0, f64::max);
    let floor = PRUNE_REL * wmax;
    let mut out = Vec::with_capacity(convs.len());
    for ((conv, (_, _, cells)), probs) in convs.into_iter().zip(&parts).zip(probs) {
        out.push(match conv {
            Measure::Point(p) => {
                let mut pruned = 0.0;
                let mut kept_p = Vec::with_capacity(p.positions().len());
                let mut kept_w = Vec::with_capacity(probs.len());
                for (i, &q) in probs.iter().enumerate() {
                    if q < floor {
                        pruned += q;
                    } else {
                        kept_p.extend_from_slice(p.position(i));
                        kept_w.push(q);
                    }
                }
                if pruned > 0.0 {
                    let k: f64 = kept_w.iter().sum();
                    let c = (k + pruned) / k;
                    kept_w.iter_mut().for_each(|v| *v *= c);
                }
                (Measure::Point(PointMeasure::from_flat(p.dim(), kept_p, kept_w)?), pruned)
            }
            Measure::Grid(g) => {
                let mut values = vec![0.0; g.values().len()];
                for (&c, &q) in cells.iter().zip(&probs) {
                    values[c] = q;
                }
                let origin = snap(g.origin(), g.spacing());
                let full = GridMeasure::new(origin, g.spacing(), g.shape().to_vec(), values)?;
                let (t, pruned) = full.trim(floor);
                if pruned > 0.0 {
                    let k = t.total_mass();
                    let c = (k + pruned) / k;
                    let vals: Vec<f64> = t.values().iter().map(|v| v * c).collect();
                    (Measure::Grid(t.with_values(vals)?), pruned)
                } else {
                    (Measure::Grid(t), 0.0)
                }
            }
        });
    }
    Ok((out, log_norm))
}

/// Grid origins are kept on the lattice `hZ^d` when they are within
/// rounding of it, so node coordinates do not drift over many steps.
fn snap(origin: &[f64], h: f64) -> Vec<f64> {
    origin
        .iter()
        .map(|&o| {
            let k = (o / h).round();
            if (o / h - k).abs() < 1e-6 {
                k * h
            } else {
                o
            }
        })
        .collect()
}

/// Points, masses and (grid mode) flat cell indices of the positive part.
fn support(m: &Measure) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    match m {
        Measure::Point(p) => (p.positions().to_vec(), p.weights().to_vec(), Vec::new()),
        Measure::Grid(g) => {
            let mut pts = Vec::new();
            let mut ms = Vec::new();
            let mut cells = Vec::new();
            for (i, &v) in g.values().iter().enumerate() {
                if v > 0.0 {
                    pts.extend(g.node(i));
                    ms.push(v);
                    cells.push(i);
                }
            }
            (pts, ms, cells)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub pruned: f64,
    pub support: usize,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub beta: f64,
    /// `rho_0, ..., rho_n` when stored, empty otherwise.
    pub rho: Vec<Measure>,
    /// `log(Z_{i+1} / Z_i)` for `i < n`.
    pub log_ratios: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.log_ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_ratios.is_empty()
    }

    /// `log Z_n`.
    pub fn log_partition(&self) -> f64 {
        self.log_ratios.iter().sum()
    }
}

fn support_size(m: &Measure) -> usize {
    match m {
        Measure::Point(p) => p.len(),
        Measure::Grid(g) => g.values().len(),
    }
}

/// Runs the recursion and stores every `rho_i`.
pub fn run(config: &PolymerConfig, seed: u64) -> Result<Trajectory> {
    let mut rho = Vec::with_capacity(config.n_steps + 1);
    let mut traj = run_with(config, seed, |_, m| rho.push(m.clone()))?;
    traj.rho = rho;
    Ok(traj)
}

/// Runs the recursion, handing `(i, rho_i)` to `observe` for `i = 0..=n`
/// instead of storing the measures.
pub fn run_with<O>(config: &PolymerConfig, seed: u64, mut observe: O) -> Result<Trajectory>
where
    O: FnMut(usize, &Measure),
{
    config.validate()?;
    let mut rho = config.initial();
    observe(0, &rho);
    let mut traj = Trajectory {
        seed,
        beta: config.beta,
        rho: Vec::new(),
        log_ratios: Vec::with_capacity(config.n_steps),
        diagnostics: Vec::with_capacity(config.n_steps),
    };
    for i in 0..config.n_steps {
        let n = i + 1;
        let half = config.window.half_width(n);
        let out = step(&rho, &config.step, config.beta, |pts| {
            if let Some(bad) = pts.iter().find(|x| x.abs() > half) {
                return Err(Error::WindowTooSmall {
                    step: n,
                    detail: format!("support reaches coordinate {bad}, window half-width is {half}"),
                });
            }
            if config.beta == 0.0 {
                return Ok(vec![0.0; pts.len() / config.field.dim]);
            }
            field_at(&config.field, seed, stream_id(n as u64, 0), pts)
        })
        .map_err(|e| match e {
            Error::Underflow(_) => Error::Underflow(n),
            e => e,
        })?;
        if let Mode::Point { max_atoms } = config.mode {
            if support_size(&out.rho) > max_atoms {
                return Err(Error::InstanceTooLarge(format!(
                    "step {n}: {} atoms exceed max_atoms = {max_atoms}",
                    support_size(&out.rho)
                )));
            }
        }
        traj.log_ratios.push(out.log_ratio);
        traj.diagnostics.push(StepDiagnostics {
            pruned: out.pruned,
            support: support_size(&out.rho),
            half_width: half,
        });
        rho = out.rho;
        observe(n, &rho);
    }
    Ok(traj)
}

/// `F_n = (1/n) Σ_{i<n} log(Z_{i+1}/Z_i)`.
pub fn free_energy(traj: &Trajectory) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    Ok(traj.log_partition() / traj.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeEnergyEstimate {
    pub n: usize,
    pub seeds: usize,
    pub p: f64,
    pub p_stderr: f64,
    /// `c(β) - p`; its standard error equals that of `p`.
    pub lyapunov: f64,
    /// Sample variance of `F_n` across seeds.
    pub variance: f64,
    pub samples: Vec<f64>,
}

/// Mean and standard error of `F_n` over the given seeds (run in parallel),
/// and the Lyapunov estimate `c(β) - p`.
pub fn estimate_p_and_lyapunov(config: &PolymerConfig, n: usize, seeds: &[u64]) -> Result<FreeEnergyEstimate> {
    if seeds.len() < 2 {
        return Err(Error::InvalidConfig("at least two seeds are needed".into()));
    }
    if n == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let cfg = PolymerConfig {
        n_steps: n,
        ..config.clone()
    };
    let samples: Vec<f64> = seeds
        .par_iter()
        .map(|&s| run_with(&cfg, s, |_, _| {}).and_then(|t| free_energy(&t)))
        .collect::<Result<_>>()?;
    let k = samples.len() as f64;
    let p = samples.iter().sum::<f64>() / k;
    let variance = samples.iter().map(|f| (f - p).powi(2)).sum::<f64>() / (k - 1.0);
    let p_stderr = (variance / k).sqrt();
    let c = log_mgf(&config.field, config.beta)?;
    Ok(FreeEnergyEstimate {
        n,
        seeds: seeds.len(),
        p,
        p_stderr,
        lyapunov: c - p,
        variance,
        samples,
    })
}

/// `log Z_n` by enumerating every path of an atomic `λ`, with the same
/// field streams as [`run`].
pub fn path_sum_oracle(config: &PolymerConfig, n: usize, seed: u64) -> Result<f64> {
    let lambda = match config.step.measure() {
        Measure::Point(p) => p,
        Measure::Grid(_) => return Err(Error::KindMismatch("path enumeration needs an atomic step law")),
    };
    let paths = (lambda.len() as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if paths > ORACLE_MAX_PATHS {
        return Err(Error::EnumerationCap(paths));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let d = lambda.dim();
    // field values at every reachable point, per time
    let mut frontier: Vec<Vec<f64>> = vec![vec![0.0; d]];
    let mut values: Vec<HashMap<Vec<u64>, f64>> = Vec::with_capacity(n);
    for k in 1..=n {
        let mut next: HashMap<Vec<u64>, Vec<f64>> = HashMap::new();
        for p in &frontier {
            for (q, _) in lambda.atoms() {
                let y: Vec<f64> = p.iter().zip(q).map(|(a, b)| a + b).collect();
                next.entry(y.iter().map(|v| v.to_bits()).collect()).or_insert(y);
            }
        }
        let (keys, pts): (Vec<_>, Vec<_>) = next.into_iter().unzip();
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let x = if config.beta == 0.0 {
            vec![0.0; pts.len()]
        } else {
            field_at(&config.field, seed, stream_id(k as u64, 0), &flat)?
        };
        values.push(keys.into_iter().zip(x).collect());
        frontier = pts;
    }
    let mut terms = Vec::with_capacity(paths as usize);
    let mut pos = vec![0.0; d];
    enumerate(lambda, config.beta, &values, 0, &mut pos, 0.0, &mut terms);
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln())
}

fn enumerate(
    lambda: &PointMeasure,
    beta: f64,
    values: &[HashMap<Vec<u64>, f64>],
    k: usize,
    pos: &mut Vec<f64>,
    acc: f64,
    out: &mut Vec<f64>,
) {
    if k == values.len() {
        out.push(acc);
        return;
    }
    for (q, w) in lambda.atoms() {
        let saved = pos.clone();
        for (a, b) in pos.iter_mut().zip(q) {
            *a += b;
        }
        let key: Vec<u64> = pos.iter().map(|v| v.to_bits()).collect();
        let x = values[k][&key];
        enumerate(lambda, beta, values, k + 1, pos, acc + w.ln() + beta * x, out);
        *pos = saved;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(beta: f64, n: usize) -> PolymerConfig {
        let step = StepDistribution::uniform_on_line(&[-1.0, 1.0]).unwrap();
        PolymerConfig {
            beta,
            window: WindowPolicy::for_step(&step, 1.0),
            step,
            field: FieldSpec::gaussian(1, 1.0, 1.0, 0.125).unwrap(),
            n_steps: n,
            mode: Mode::Point { max_atoms: 10_000 },
        }
    }

    #[test]
    fn two_atom_step() {
        let rho = Measure::Point(PointMeasure::dirac(vec![0.0], 1.0).unwrap());
        let step_law = StepDistribution::uniform_on_line(&[-1.0, 1.0]).unwrap();
        let (a, b, beta) = (0.3, -1.2, 1.7);
        let out = step(&rho, &step_law, beta, |pts| {
            Ok(pts.iter().map(|&x| if x < 0.0 { a } else { b }).collect())
        })
        .unwrap();
        let expect = (0.5 * (beta * a).exp() + 0.5 * (beta * b).exp()).ln();
        assert!((out.log_ratio - expect).abs() < 1e-14);
        let p = out.rho.to_points();
        let z = (beta * a).exp() + (beta * b).exp();
        assert!((p.weight(0) - (beta * a).exp() / z).abs() < 1e-15);
    }

    #[test]
    fn zero_steps() {
        let t = run(&lattice(1.0, 0), 3).unwrap();
        assert_eq!(t.rho.len(), 1);
        assert_eq!(free_energy(&t), Err(Error::EmptyTrajectory));
    }

    #[test]
    fn window_violation_names_step() {
        let mut c = lattice(0.0, 5);
        c.window.growth = 0.5;
        match run(&c, 1) {
            Err(Error::WindowTooSmall { step, .. }) => assert_eq!(step, 3),
            other => panic!("{other:?}"),
        }
    }
}
