//! TOML run configuration.
//!
//! Physics parameters are required keys; only numerical tolerances and
//! budgets have defaults. Every validation message carries the file name,
//! line and column of the offending value.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::ops::Range;

use mvpolymer::environment::{split_seed, FieldLaw, FieldSpec, Kernel};
use mvpolymer::functionals::DiagnosticGrids;
use mvpolymer::measures::{Measure, PointMeasure, StepDistribution};
use mvpolymer::polymer::{Mode, PolymerConfig, WindowPolicy};
use serde::Deserialize;
use toml::Spanned;

use crate::error::{CliError, CliResult};

pub const DEFAULT_CUTOFF: f64 = 6.0;
pub const DEFAULT_MARGIN: f64 = 1.0;
pub const DEFAULT_MAX_ATOMS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Simulate,
    Sweep,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// One value for `simulate`, at least two for `sweep`.
    pub betas: Vec<f64>,
    /// The model at `betas[0]`.
    pub polymer: PolymerConfig,
    pub grids: DiagnosticGrids,
    /// Quantile levels `q`: `K` is the empirical `q`-quantile of `W_δ` over
    /// the run, for every configured `δ`.
    pub k_quantiles: Vec<f64>,
    /// Monte Carlo samples for the per-step energy estimate; 0 disables it.
    pub energy_samples: usize,
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn at_beta(&self, beta: f64) -> PolymerConfig {
        PolymerConfig {
            beta,
            ..self.polymer.clone()
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<Spanned<String>>,
    model: Spanned<RawModel>,
    step: Spanned<RawStep>,
    field: Spanned<RawField>,
    window: Option<Spanned<RawWindow>>,
    seeds: Spanned<RawSeeds>,
    grids: Option<Spanned<RawGrids>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    beta: Option<Spanned<f64>>,
    betas: Option<Spanned<Vec<f64>>>,
    n_steps: Spanned<i64>,
    mode: Spanned<String>,
    max_atoms: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Positions {
    Line(Vec<f64>),
    Points(Vec<Vec<f64>>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    kind: Spanned<String>,
    variance: Option<Spanned<f64>>,
    spacing: Option<Spanned<f64>>,
    cutoff: Option<Spanned<f64>>,
    positions: Option<Spanned<Positions>>,
    weights: Option<Spanned<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    law: Spanned<String>,
    range: Spanned<f64>,
    variance: Spanned<f64>,
    mesh: Option<Spanned<f64>>,
    profile: Option<Spanned<Vec<f64>>>,
    kappa_limit: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    margin: Option<Spanned<f64>>,
    growth: Option<Spanned<f64>>,
}

#[derive(Deserialize, Clone)]
#[serde(untagged)]
enum SeedValue {
    Int(i64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeeds {
    list: Option<Spanned<Vec<SeedValue>>>,
    master: Option<Spanned<SeedValue>>,
    count: Option<Spanned<i64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGrids {
    r: Option<Spanned<Vec<f64>>>,
    eps: Option<Spanned<Vec<f64>>>,
    density_eps: Option<Spanned<Vec<f64>>>,
    delta: Option<Spanned<Vec<f64>>>,
    k: Option<Spanned<Vec<f64>>>,
    k_quantile: Option<Spanned<Vec<f64>>>,
    energy_samples: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
struct GridsDocument {
    grids: Spanned<RawGrids>,
}

/// Source text plus a display name, for line-precise messages.
struct Source<'a> {
    name: &'a str,
    text: &'a str,
}

impl Source<'_> {
    fn at(&self, span: Range<usize>, msg: impl Display) -> CliError {
        let head = &self.text[..span.start.min(self.text.len())];
        let line = head.matches('\n').count() + 1;
        let col = head.len() - head.rfind('\n').map_or(0, |i| i + 1) + 1;
        CliError::Config(format!("{}:{line}:{col}: {msg}", self.name))
    }

    fn parse<T: serde::de::DeserializeOwned>(&self) -> CliResult<T> {
        toml::from_str(self.text).map_err(|e| match e.span() {
            Some(span) => self.at(span, e.message()),
            None => CliError::Config(format!("{}: {}", self.name, e.message())),
        })
    }

    fn positive(&self, v: &Spanned<f64>, key: &str) -> CliResult<f64> {
        let x = *v.get_ref();
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(self.at(v.span(), format!("{key} must be positive and finite, got {x}")))
        }
    }

    fn count(&self, v: &Spanned<i64>, key: &str, min: i64) -> CliResult<usize> {
        let x = *v.get_ref();
        if x >= min {
            Ok(x as usize)
        } else {
            Err(self.at(v.span(), format!("{key} must be an integer >= {min}, got {x}")))
        }
    }

    fn list(&self, v: &Option<Spanned<Vec<f64>>>, key: &str, ok: impl Fn(f64) -> bool, what: &str) -> CliResult<Vec<f64>> {
        let Some(v) = v else { return Ok(Vec::new()) };
        if let Some(bad) = v.get_ref().iter().find(|x| !ok(**x)) {
            return Err(self.at(v.span(), format!("{key}: every entry must be {what}, got {bad}")));
        }
        Ok(v.get_ref().clone())
    }

    fn seed(&self, v: &SeedValue, span: Range<usize>) -> CliResult<u64> {
        match v {
            SeedValue::Int(x) if *x >= 0 => Ok(*x as u64),
            SeedValue::Int(x) => Err(self.at(span, format!("seed {x} is negative; write large seeds as \"0x...\" strings"))),
            SeedValue::Text(s) => s
                .strip_prefix("0x")
                .and_then(|h| u64::from_str_radix(h, 16).ok())
                .ok_or_else(|| self.at(span, format!("seed string {s:?} is not a 0x-prefixed 64-bit hex number"))),
        }
    }
}

/// Parses and validates a run configuration for the given subcommand.
pub fn parse_run_config(text: &str, name: &str, experiment: Experiment) -> CliResult<RunConfig> {
    let src = Source { name, text };
    let raw: RawConfig = src.parse()?;
    if let Some(e) = &raw.experiment {
        if e.get_ref() != experiment.name() {
            return Err(src.at(
                e.span(),
                format!("experiment is {:?} but the {} command was invoked", e.get_ref(), experiment.name()),
            ));
        }
    }
    let model = raw.model.get_ref();
    let betas = parse_betas(&src, &raw.model, experiment)?;
    let n_steps = src.count(&model.n_steps, "n_steps", 1)?;
    let step = parse_step(&src, &raw.step, &model.mode)?;
    let mode = match model.mode.get_ref().as_str() {
        "grid" => Mode::Grid,
        "point" => Mode::Point {
            max_atoms: match &model.max_atoms {
                Some(m) => src.count(m, "max_atoms", 1)?,
                None => DEFAULT_MAX_ATOMS,
            },
        },
        other => return Err(src.at(model.mode.span(), format!("mode must be \"grid\" or \"point\", got {other:?}"))),
    };
    let field = parse_field(&src, &raw.field, &step, &betas)?;
    let window = parse_window(&src, raw.window.as_ref(), &step)?;
    let polymer = PolymerConfig {
        beta: betas[0],
        step,
        field,
        n_steps,
        window,
        mode,
    };
    for &b in &betas {
        PolymerConfig {
            beta: b,
            ..polymer.clone()
        }
        .validate()
        .map_err(|e| src.at(raw.model.span(), e))?;
    }
    let seeds = parse_seeds(&src, &raw.seeds)?;
    if experiment == Experiment::Sweep && seeds.len() < 2 {
        return Err(src.at(raw.seeds.span(), "sweep needs at least two seeds"));
    }
    let (grids, k_quantiles, energy_samples) = match &raw.grids {
        Some(g) => parse_grids(&src, g)?,
        None => (DiagnosticGrids::default(), Vec::new(), 0),
    };
    if experiment == Experiment::Simulate && !k_quantiles.is_empty() {
        let g = raw.grids.as_ref().unwrap();
        return Err(src.at(g.span(), "k_quantile is only used by sweep"));
    }
    Ok(RunConfig {
        experiment,
        betas,
        polymer,
        grids,
        k_quantiles,
        energy_samples,
        seeds,
    })
}

/// Parses the `[grids]` table of a grids file (a run configuration also
/// qualifies). At least one list must be nonempty.
pub fn parse_grids_file(text: &str, name: &str) -> CliResult<DiagnosticGrids> {
    let src = Source { name, text };
    let doc: GridsDocument = src.parse()?;
    let (grids, _, _) = parse_grids(&src, &doc.grids)?;
    if grids.r.is_empty() && grids.eps.is_empty() && grids.density_eps.is_empty() && grids.delta.is_empty() {
        return Err(src.at(doc.grids.span(), "grids are empty: give at least one of r, eps, density_eps, delta"));
    }
    Ok(grids)
}

fn parse_betas(src: &Source, model: &Spanned<RawModel>, experiment: Experiment) -> CliResult<Vec<f64>> {
    let m = model.get_ref();
    let check = |b: f64, span: Range<usize>| {
        if b.is_finite() && b >= 0.0 {
            Ok(b)
        } else {
            Err(src.at(span, format!("beta must be finite and nonnegative, got {b}")))
        }
    };
    match (experiment, &m.beta, &m.betas) {
        (Experiment::Simulate, Some(b), None) => Ok(vec![check(*b.get_ref(), b.span())?]),
        (Experiment::Simulate, _, Some(bs)) => Err(src.at(bs.span(), "simulate takes a single beta; use the sweep command for betas")),
        (Experiment::Simulate, None, None) => Err(src.at(model.span(), "missing key beta")),
        (Experiment::Sweep, None, Some(bs)) => {
            let v = bs
                .get_ref()
                .iter()
                .map(|&b| check(b, bs.span()))
                .collect::<CliResult<Vec<f64>>>()?;
            let distinct: BTreeSet<u64> = v.iter().map(|b| b.to_bits()).collect();
            if v.len() < 2 || distinct.len() != v.len() {
                return Err(src.at(bs.span(), "betas needs at least two distinct values"));
            }
            Ok(v)
        }
        (Experiment::Sweep, Some(b), _) => Err(src.at(b.span(), "sweep takes a betas list, not beta")),
        (Experiment::Sweep, None, None) => Err(src.at(model.span(), "missing key betas")),
    }
}

fn parse_step(src: &Source, raw: &Spanned<RawStep>, mode: &Spanned<String>) -> CliResult<StepDistribution> {
    let s = raw.get_ref();
    let need = |v: &Option<Spanned<f64>>, key: &str| -> CliResult<f64> {
        match v {
            Some(v) => src.positive(v, key),
            None => Err(src.at(raw.span(), format!("missing key {key} for step kind {:?}", s.kind.get_ref()))),
        }
    };
    let law = match s.kind.get_ref().as_str() {
        "gaussian" => {
            if s.positions.is_some() || s.weights.is_some() {
                return Err(src.at(raw.span(), "positions and weights belong to step kind \"atoms\""));
            }
            let variance = need(&s.variance, "variance")?;
            let spacing = need(&s.spacing, "spacing")?;
            let cutoff = match &s.cutoff {
                Some(c) => src.positive(c, "cutoff")?,
                None => DEFAULT_CUTOFF,
            };
            let law = StepDistribution::gaussian_grid_1d(variance, spacing, cutoff).map_err(|e| src.at(raw.span(), e))?;
            if mode.get_ref() == "point" {
                StepDistribution::new(Measure::Point(law.measure().to_points())).map_err(|e| src.at(raw.span(), e))?
            } else {
                law
            }
        }
        "atoms" => {
            if s.variance.is_some() || s.spacing.is_some() || s.cutoff.is_some() {
                return Err(src.at(raw.span(), "variance, spacing and cutoff belong to step kind \"gaussian\""));
            }
            let Some(pos) = &s.positions else {
                return Err(src.at(raw.span(), "missing key positions for step kind \"atoms\""));
            };
            let points: Vec<Vec<f64>> = match pos.get_ref() {
                Positions::Line(xs) => xs.iter().map(|&x| vec![x]).collect(),
                Positions::Points(ps) => ps.clone(),
            };
            let k = points.len();
            let weights = match &s.weights {
                Some(w) if w.get_ref().len() == k => w.get_ref().clone(),
                Some(w) => return Err(src.at(w.span(), format!("{} weights for {k} positions", w.get_ref().len()))),
                None => vec![1.0 / k as f64; k],
            };
            let dim = points.first().map_or(0, Vec::len);
            let m = PointMeasure::new(dim, points.into_iter().zip(weights).collect()).map_err(|e| src.at(pos.span(), e))?;
            StepDistribution::new(Measure::Point(m)).map_err(|e| src.at(pos.span(), e))?
        }
        other => {
            return Err(src.at(s.kind.span(), format!("step kind must be \"gaussian\" or \"atoms\", got {other:?}")))
        }
    };
    Ok(law)
}

fn parse_field(src: &Source, raw: &Spanned<RawField>, step: &StepDistribution, betas: &[f64]) -> CliResult<FieldSpec> {
    let f = raw.get_ref();
    let law = match f.law.get_ref().as_str() {
        "gaussian" => FieldLaw::Gaussian,
        "bounded" => FieldLaw::Bounded,
        other => return Err(src.at(f.law.span(), format!("law must be \"gaussian\" or \"bounded\", got {other:?}"))),
    };
    let range = src.positive(&f.range, "range")?;
    let variance = src.positive(&f.variance, "variance")?;
    let dim = step.dim();
    let mesh = match &f.mesh {
        Some(m) => src.positive(m, "mesh")?,
        None => {
            let h = match step.measure() {
                Measure::Grid(g) => g.spacing(),
                Measure::Point(_) => f64::INFINITY,
            };
            h.min(range / 8.0)
        }
    };
    let max_beta = betas.iter().copied().fold(0.0, f64::max);
    let kappa_limit = match (&f.kappa_limit, law) {
        (Some(k), _) => src.positive(k, "kappa_limit")?,
        (None, FieldLaw::Bounded) => (2.0 * max_beta).max(1.0),
        (None, FieldLaw::Gaussian) => f64::INFINITY,
    };
    let kernel = match &f.profile {
        Some(p) => Kernel::Profile(p.get_ref().clone()),
        None => Kernel::Bump,
    };
    let spec = FieldSpec {
        law,
        kernel,
        range,
        variance,
        mesh,
        dim,
        kappa_limit,
    };
    spec.validate().map_err(|e| src.at(raw.span(), e))?;
    Ok(spec)
}

fn parse_window(src: &Source, raw: Option<&Spanned<RawWindow>>, step: &StepDistribution) -> CliResult<WindowPolicy> {
    let mut w = WindowPolicy::for_step(step, DEFAULT_MARGIN);
    if let Some(raw) = raw {
        let r = raw.get_ref();
        if let Some(m) = &r.margin {
            let x = *m.get_ref();
            if !(x.is_finite() && x >= 0.0) {
                return Err(src.at(m.span(), format!("margin must be finite and nonnegative, got {x}")));
            }
            w.margin = x;
        }
        if let Some(g) = &r.growth {
            let x = *g.get_ref();
            if !(x.is_finite() && x >= 0.0) {
                return Err(src.at(g.span(), format!("growth must be finite and nonnegative, got {x}")));
            }
            w.growth = x;
        }
    }
    Ok(w)
}

fn parse_seeds(src: &Source, raw: &Spanned<RawSeeds>) -> CliResult<Vec<u64>> {
    let s = raw.get_ref();
    let seeds = match (&s.list, &s.master, &s.count) {
        (Some(list), None, None) => list
            .get_ref()
            .iter()
            .map(|v| src.seed(v, list.span()))
            .collect::<CliResult<Vec<u64>>>()?,
        (None, Some(master), Some(count)) => {
            let m = src.seed(master.get_ref(), master.span())?;
            let k = src.count(count, "count", 1)?;
            (0..k as u64).map(|i| split_seed(m, i)).collect()
        }
        _ => return Err(src.at(raw.span(), "give either seeds.list or both seeds.master and seeds.count")),
    };
    if seeds.is_empty() {
        return Err(src.at(raw.span(), "no seeds given"));
    }
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        return Err(src.at(raw.span(), "seeds must be distinct"));
    }
    Ok(seeds)
}

fn parse_grids(src: &Source, raw: &Spanned<RawGrids>) -> CliResult<(DiagnosticGrids, Vec<f64>, usize)> {
    let g = raw.get_ref();
    let pos = |x: f64| x > 0.0 && x.is_finite();
    let grids = DiagnosticGrids {
        r: src.list(&g.r, "r", pos, "positive")?,
        eps: src.list(&g.eps, "eps", pos, "positive")?,
        density_eps: src.list(&g.density_eps, "density_eps", pos, "positive")?,
        delta: src.list(&g.delta, "delta", |x| x > 0.0 && x < 1.0, "in (0, 1)")?,
        k: src.list(&g.k, "k", pos, "positive")?,
    };
    let quantiles = src.list(&g.k_quantile, "k_quantile", |x| x > 0.0 && x <= 1.0, "in (0, 1]")?;
    if !quantiles.is_empty() && grids.delta.is_empty() {
        return Err(src.at(raw.span(), "k_quantile needs a nonempty delta list"));
    }
    let samples = match &g.energy_samples {
        Some(n) if *n.get_ref() == 0 => 0,
        Some(n) => src.count(n, "energy_samples", 2)?,
        None => 0,
    };
    Ok((grids, quantiles, samples))
}
