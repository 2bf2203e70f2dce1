//! Finite subprobability measures on `R^d` and on `N x R^d`.
//!
//! Two concrete representations are provided: weighted atoms
//! ([`PointMeasure`]) and cell masses on a uniform grid ([`GridMeasure`]).
//! [`LayeredMeasure`] is a finite collection of nonzero layers, i.e. a
//! representative of an element of the compactified space.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Slack allowed on every "mass <= 1" check.
pub const MASS_TOL: f64 = 1e-12;
/// Atoms closer than this (coordinatewise) are merged.
pub const MERGE_TOL: f64 = 1e-12;

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMeasure(format!("non-finite {what}")))
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Weighted atoms in `R^d`. Positions are stored flat, `dim` coordinates per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeasure {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl PointMeasure {
    /// Builds a measure from `(position, weight)` pairs. Zero weights are
    /// dropped and coincident atoms are merged.
    pub fn new(dim: usize, atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let mut positions = Vec::with_capacity(atoms.len() * dim);
        let mut weights = Vec::with_capacity(atoms.len());
        for (p, w) in atoms {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            positions.extend_from_slice(&p);
            weights.push(w);
        }
        Self::from_flat(dim, positions, weights)
    }

    pub fn from_flat(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if positions.len() != dim * weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates for {} atoms in dimension {dim}",
                positions.len(),
                weights.len()
            )));
        }
        check_finite(&positions, "position")?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let m = Self::assemble(dim, positions, weights);
        let total = m.total_mass();
        if total > 1.0 + MASS_TOL {
            return Err(Error::MassExceeded(total));
        }
        Ok(m)
    }

    /// 1-d convenience constructor.
    pub fn on_line(atoms: &[(f64, f64)]) -> Result<Self> {
        Self::from_flat(
            1,
            atoms.iter().map(|a| a.0).collect(),
            atoms.iter().map(|a| a.1).collect(),
        )
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            positions: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn dirac(position: Vec<f64>, weight: f64) -> Result<Self> {
        let dim = position.len();
        Self::from_flat(dim, position, vec![weight])
    }

    /// Sorts lexicographically, merges near-coincident atoms and drops zero weights.
    /// No mass check, used internally where mass is known to be bounded.
    fn assemble(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Self {
        let n = weights.len();
        let mut order: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
        order.sort_by(|&a, &b| {
            let pa = &positions[a * dim..(a + 1) * dim];
            let pb = &positions[b * dim..(b + 1) * dim];
            pa.partial_cmp(pb).unwrap()
        });
        let mut out_p: Vec<f64> = Vec::with_capacity(order.len() * dim);
        let mut out_w: Vec<f64> = Vec::with_capacity(order.len());
        for i in order {
            let p = &positions[i * dim..(i + 1) * dim];
            let k = out_w.len();
            if k > 0 {
                let last = &out_p[(k - 1) * dim..k * dim];
                if last.iter().zip(p).all(|(a, b)| (a - b).abs() < MERGE_TOL) {
                    out_w[k - 1] += weights[i];
                    continue;
                }
            }
            out_p.extend_from_slice(p);
            out_w.push(weights[i]);
        }
        Self {
            dim,
            positions: out_p,
            weights: out_w,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.positions
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Same atoms with weights multiplied by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::assemble(
            self.dim,
            self.positions.clone(),
            self.weights.iter().map(|w| w * c).collect(),
        )
    }

    /// Pushforward under `x -> x + shift`.
    pub fn translated(&self, shift: &[f64]) -> Self {
        let positions = self
            .positions
            .chunks_exact(self.dim)
            .flat_map(|p| p.iter().zip(shift).map(|(a, b)| a + b))
            .collect();
        Self {
            dim: self.dim,
            positions,
            weights: self.weights.clone(),
        }
    }

    /// Same positions with new weights (zeros removed).
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.dim, self.positions.clone(), weights)
    }

    /// Sum of two measures, merging coincident atoms.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut p = self.positions.clone();
        p.extend_from_slice(&other.positions);
        let mut w = self.weights.clone();
        w.extend_from_slice(&other.weights);
        Self::from_flat(self.dim, p, w)
    }

    /// Mass of the open ball `B_r(center)`.
    pub fn ball_mass(&self, center: &[f64], r: f64) -> f64 {
        self.atoms()
            .filter(|(p, _)| dist(p, center) < r)
            .map(|(_, w)| w)
            .sum()
    }
}

/// Cell masses on the uniform grid `origin + h * k`, `k` in the box `shape`.
/// Values are masses attached to grid nodes, not densities.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    origin: Vec<f64>,
    spacing: f64,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl GridMeasure {
    pub fn new(origin: Vec<f64>, spacing: f64, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if origin.is_empty() || origin.len() != shape.len() {
            return Err(Error::InvalidMeasure("origin/shape dimension mismatch".into()));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidMeasure("spacing must be positive".into()));
        }
        check_finite(&origin, "origin")?;
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::InvalidMeasure(format!(
                "shape holds {n} cells but {} values given",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidMeasure("cell masses must be finite and nonnegative".into()));
        }
        let total: f64 = values.iter().sum();
        if total > 1.0 + MASS_TOL {
            return Err(Error::MassExceeded(total));
        }
        Ok(Self {
            origin,
            spacing,
            shape,
            values,
        })
    }

    /// 1-d grid with node `k` at `origin + k h`.
    pub fn on_line(origin: f64, spacing: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(vec![origin], spacing, vec![n], values)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Multi-index of the flat cell index (row-major, last axis fastest).
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for ax in (0..self.shape.len()).rev() {
            idx[ax] = flat % self.shape[ax];
            flat /= self.shape[ax];
        }
        idx
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .iter()
            .zip(&self.origin)
            .map(|(&k, o)| o + k as f64 * self.spacing)
            .collect()
    }

    /// Density value `mass / h^d` of a cell.
    pub fn density(&self, flat: usize) -> f64 {
        self.values[flat] / self.spacing.powi(self.dim() as i32)
    }

    /// Converts to atoms at the grid nodes, dropping cells with mass below
    /// `floor`. Returns the measure and the dropped mass.
    pub fn to_points(&self, floor: f64) -> (PointMeasure, f64) {
        let dim = self.dim();
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        let mut dropped = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            if v < floor {
                dropped += v;
                continue;
            }
            positions.extend(self.node(i));
            weights.push(v);
        }
        let pm = PointMeasure {
            dim,
            positions,
            weights,
        };
        (pm, dropped)
    }

    pub fn ball_mass(&self, center: &[f64], r: f64) -> f64 {
        (0..self.values.len())
            .filter(|&i| self.values[i] > 0.0 && dist(&self.node(i), center) < r)
            .map(|i| self.values[i])
            .sum()
    }

    /// Same grid with new cell masses.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.origin.clone(), self.spacing, self.shape.clone(), values)
    }

    /// Removes boundary slabs whose cells all carry mass below `floor`.
    /// Returns the trimmed grid and the removed mass. Only 1-d grids are
    /// trimmed; other dimensions are returned unchanged.
    pub fn trim(&self, floor: f64) -> (GridMeasure, f64) {
        if self.dim() != 1 || self.values.is_empty() {
            return (self.clone(), 0.0);
        }
        let v = &self.values;
        let lo = v.iter().position(|&x| x >= floor).unwrap_or(v.len());
        if lo == v.len() {
            return (self.clone(), 0.0);
        }
        let hi = v.iter().rposition(|&x| x >= floor).unwrap() + 1;
        let removed: f64 = v[..lo].iter().sum::<f64>() + v[hi..].iter().sum::<f64>();
        let g = GridMeasure {
            origin: vec![self.origin[0] + lo as f64 * self.spacing],
            spacing: self.spacing,
            shape: vec![hi - lo],
            values: v[lo..hi].to_vec(),
        };
        (g, removed)
    }

    pub(crate) fn assemble_unchecked(origin: Vec<f64>, spacing: f64, shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self {
            origin,
            spacing,
            shape,
            values,
        }
    }
}

/// A measure on `R^d` in either representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    Point(PointMeasure),
    Grid(GridMeasure),
}

impl Measure {
    pub fn dim(&self) -> usize {
        match self {
            Measure::Point(p) => p.dim(),
            Measure::Grid(g) => g.dim(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            Measure::Point(p) => p.total_mass(),
            Measure::Grid(g) => g.total_mass(),
        }
    }

    pub fn ball_mass(&self, center: &[f64], r: f64) -> f64 {
        match self {
            Measure::Point(p) => p.ball_mass(center, r),
            Measure::Grid(g) => g.ball_mass(center, r),
        }
    }

    /// Atom view; grid cells become atoms at their nodes (no floor).
    pub fn to_points(&self) -> PointMeasure {
        match self {
            Measure::Point(p) => p.clone(),
            Measure::Grid(g) => g.to_points(0.0).0,
        }
    }

    pub fn scaled(&self, c: f64) -> Measure {
        match self {
            Measure::Point(p) => Measure::Point(p.scaled(c)),
            Measure::Grid(g) => Measure::Grid(GridMeasure::assemble_unchecked(
                g.origin.clone(),
                g.spacing,
                g.shape.clone(),
                g.values.iter().map(|v| v * c).collect(),
            )),
        }
    }
}

impl From<PointMeasure> for Measure {
    fn from(p: PointMeasure) -> Self {
        Measure::Point(p)
    }
}

impl From<GridMeasure> for Measure {
    fn from(g: GridMeasure) -> Self {
        Measure::Grid(g)
    }
}

/// The step law of the random walk: a nondegenerate probability measure.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    measure: Measure,
}

impl StepDistribution {
    pub fn new(measure: Measure) -> Result<Self> {
        let mass = measure.total_mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidStep(format!("total mass {mass}")));
        }
        let support = match &measure {
            Measure::Point(p) => p.len(),
            Measure::Grid(g) => g.values().iter().filter(|v| **v > 0.0).count(),
        };
        if support < 2 {
            return Err(Error::InvalidStep("support has fewer than two points".into()));
        }
        Ok(Self { measure })
    }

    /// Uniform law on the given 1-d points.
    pub fn uniform_on_line(points: &[f64]) -> Result<Self> {
        let w = 1.0 / points.len() as f64;
        let atoms: Vec<(f64, f64)> = points.iter().map(|&x| (x, w)).collect();
        Self::new(Measure::Point(PointMeasure::on_line(&atoms)?))
    }

    /// Centered Gaussian `N(0, var I_1)` discretized on the 1-d grid of spacing
    /// `h`, truncated at `cutoff` standard deviations and renormalized.
    pub fn gaussian_grid_1d(var: f64, h: f64, cutoff: f64) -> Result<Self> {
        if !(var > 0.0 && h > 0.0 && cutoff > 0.0) {
            return Err(Error::InvalidStep("variance, spacing and cutoff must be positive".into()));
        }
        let half = ((cutoff * var.sqrt()) / h).ceil() as i64;
        let raw: Vec<f64> = (-half..=half)
            .map(|k| {
                let x = k as f64 * h;
                (-x * x / (2.0 * var)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        let values: Vec<f64> = raw.iter().map(|v| v / s).collect();
        Self::new(Measure::Grid(GridMeasure::on_line(-(half as f64) * h, h, values)?))
    }

    pub fn measure(&self) -> &Measure {
        &self.measure
    }

    pub fn dim(&self) -> usize {
        self.measure.dim()
    }

    /// Largest distance of a support point from the origin.
    pub fn support_radius(&self) -> f64 {
        let pts = self.measure.to_points();
        pts.atoms()
            .map(|(p, _)| p.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Total mass of any measure representation.
pub trait TotalMass {
    fn total_mass(&self) -> f64;
}

impl TotalMass for PointMeasure {
    fn total_mass(&self) -> f64 {
        PointMeasure::total_mass(self)
    }
}

impl TotalMass for GridMeasure {
    fn total_mass(&self) -> f64 {
        GridMeasure::total_mass(self)
    }
}

impl TotalMass for Measure {
    fn total_mass(&self) -> f64 {
        Measure::total_mass(self)
    }
}

impl TotalMass for LayeredMeasure {
    fn total_mass(&self) -> f64 {
        LayeredMeasure::total_mass(self)
    }
}

pub fn total_mass<M: TotalMass>(m: &M) -> f64 {
    m.total_mass()
}

/// Convolution `m * step`.
///
/// Point measures need an atomic step law; grid measures need a grid step
/// law with the same spacing. For grids the result lives on the enlarged
/// window and is an exact discrete convolution.
pub fn convolve(m: &Measure, step: &StepDistribution) -> Result<Measure> {
    if m.dim() != step.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: step.dim(),
        });
    }
    match (m, step.measure()) {
        (Measure::Point(a), Measure::Point(s)) => Ok(Measure::Point(convolve_points(a, s))),
        (Measure::Grid(a), Measure::Grid(s)) => Ok(Measure::Grid(convolve_grids(a, s)?)),
        (Measure::Point(_), Measure::Grid(_)) => Err(Error::KindMismatch(
            "point measure convolved with a grid step law",
        )),
        (Measure::Grid(_), Measure::Point(_)) => Err(Error::KindMismatch(
            "grid measure convolved with an atomic step law",
        )),
    }
}

pub(crate) fn convolve_points(a: &PointMeasure, s: &PointMeasure) -> PointMeasure {
    let dim = a.dim();
    let mut positions = Vec::with_capacity(a.len() * s.len() * dim);
    let mut weights = Vec::with_capacity(a.len() * s.len());
    for (p, w) in a.atoms() {
        for (q, v) in s.atoms() {
            positions.extend(p.iter().zip(q).map(|(x, y)| x + y));
            weights.push(w * v);
        }
    }
    PointMeasure::assemble(dim, positions, weights)
}

pub(crate) fn convolve_grids(a: &GridMeasure, s: &GridMeasure) -> Result<GridMeasure> {
    if (a.spacing - s.spacing).abs() > 1e-12 * a.spacing.max(s.spacing) {
        return Err(Error::SpacingMismatch {
            left: a.spacing,
            right: s.spacing,
        });
    }
    let dim = a.dim();
    let origin: Vec<f64> = a.origin.iter().zip(&s.origin).map(|(x, y)| x + y).collect();
    let shape: Vec<usize> = a
        .shape
        .iter()
        .zip(&s.shape)
        .map(|(n, m)| n + m - 1)
        .collect();
    let total: usize = shape.iter().product();
    let mut values = vec![0.0; total];
    if dim == 1 {
        let sv = &s.values;
        for (i, &av) in a.values.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out = &mut values[i..i + sv.len()];
            for (o, &w) in out.iter_mut().zip(sv) {
                *o += av * w;
            }
        }
    } else {
        let strides = strides(&shape);
        for (i, &av) in a.values.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let ia = a.unravel(i);
            for (j, &sv) in s.values.iter().enumerate() {
                if sv == 0.0 {
                    continue;
                }
                let js = s.unravel(j);
                let flat: usize = ia
                    .iter()
                    .zip(&js)
                    .zip(&strides)
                    .map(|((x, y), st)| (x + y) * st)
                    .sum();
                values[flat] += av * sv;
            }
        }
    }
    Ok(GridMeasure::assemble_unchecked(origin, a.spacing, shape, values))
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for ax in (0..shape.len().saturating_sub(1)).rev() {
        st[ax] = st[ax + 1] * shape[ax + 1];
    }
    st
}

/// A finite collection of nonzero layers indexed by positive integers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayeredMeasure {
    layers: BTreeMap<u32, Measure>,
}

impl LayeredMeasure {
    pub fn new(layers: BTreeMap<u32, Measure>) -> Result<Self> {
        let mut dim = None;
        let mut out = BTreeMap::new();
        for (k, m) in layers {
            if let Some(d) = dim {
                if d != m.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: m.dim(),
                    });
                }
            }
            dim = Some(m.dim());
            if m.total_mass() > 0.0 {
                out.insert(k, m);
            }
        }
        let lm = Self { layers: out };
        let total = lm.total_mass();
        if total > 1.0 + MASS_TOL {
            return Err(Error::MassExceeded(total));
        }
        Ok(lm)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Embeds a single measure as layer 1.
    pub fn single(m: impl Into<Measure>) -> Result<Self> {
        let mut layers = BTreeMap::new();
        layers.insert(1, m.into());
        Self::new(layers)
    }

    /// Layers given as point measures, numbered from 1.
    pub fn from_points(layers: Vec<PointMeasure>) -> Result<Self> {
        Self::new(
            layers
                .into_iter()
                .enumerate()
                .map(|(i, p)| (i as u32 + 1, Measure::Point(p)))
                .collect(),
        )
    }

    pub fn layers(&self) -> impl Iterator<Item = (u32, &Measure)> + '_ {
        self.layers.iter().map(|(k, m)| (*k, m))
    }

    pub fn layer(&self, i: u32) -> Option<&Measure> {
        self.layers.get(&i)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn is_zero(&self) -> bool {
        self.layers.is_empty()
    }

    /// The N-support: indices of stored (nonzero) layers.
    pub fn support(&self) -> Vec<u32> {
        self.layers.keys().copied().collect()
    }

    pub fn dim(&self) -> Option<usize> {
        self.layers.values().next().map(|m| m.dim())
    }

    pub fn total_mass(&self) -> f64 {
        self.layers.values().map(|m| m.total_mass()).sum()
    }

    /// Mass of `B_r((layer, center))`; other layers are at infinite distance.
    pub fn ball_mass(&self, layer: u32, center: &[f64], r: f64) -> f64 {
        self.layers
            .get(&layer)
            .map_or(0.0, |m| m.ball_mass(center, r))
    }

    /// Each layer as atoms.
    pub fn point_layers(&self) -> Vec<(u32, PointMeasure)> {
        self.layers.iter().map(|(k, m)| (*k, m.to_points())).collect()
    }

    /// Layerwise convolution `mu * step`.
    pub fn convolve(&self, step: &StepDistribution) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for (k, m) in &self.layers {
            layers.insert(*k, convolve(m, step)?);
        }
        Ok(Self { layers })
    }

    pub(crate) fn from_map_unchecked(layers: BTreeMap<u32, Measure>) -> Self {
        Self {
            layers: layers
                .into_iter()
                .filter(|(_, m)| m.total_mass() > 0.0)
                .collect(),
        }
    }
}

/// The heaviest open ball of radius `r` over all layers (grid layers are
/// read as atoms at the cell centers). Returns `(layer, center, mass)`;
/// `None` for the zero measure.
pub fn heaviest_ball(m: &LayeredMeasure, r: f64) -> Option<(u32, Vec<f64>, f64)> {
    let mut best: Option<(u32, Vec<f64>, f64)> = None;
    for (k, layer) in m.layers() {
        let pts = layer.to_points();
        let (c, mass) = heaviest_ball_points(&pts, r);
        if best.as_ref().is_none_or(|b| mass > b.2) {
            best = Some((k, c, mass));
        }
    }
    best
}

/// Heaviest open ball of radius `r` in one measure, as (center, mass).
///
/// The supremum over all centers: in 1-d every maximal set of atoms spanning
/// less than `2r` is centered exactly; in 2-d the candidates are the atoms,
/// pair midpoints and the centers of circles of radius just below `r`
/// through pairs of atoms. In higher dimensions only atoms and pair
/// midpoints are tried, which gives a lower estimate.
pub fn heaviest_ball_points(p: &PointMeasure, r: f64) -> (Vec<f64>, f64) {
    if p.is_empty() {
        return (vec![0.0; p.dim()], 0.0);
    }
    if p.dim() == 1 {
        // atoms are sorted by position
        let xs = p.positions();
        let ws = p.weights();
        let n = xs.len();
        let mut hi = 0usize;
        let mut window = 0.0;
        let mut best = (xs[0], 0.0);
        for lo in 0..n {
            if hi < lo {
                hi = lo;
                window = 0.0;
            }
            while hi < n && xs[hi] - xs[lo] < 2.0 * r {
                window += ws[hi];
                hi += 1;
            }
            if hi == lo {
                continue;
            }
            if lo % 4096 == 0 {
                window = ws[lo..hi].iter().sum();
            }
            if window > best.1 {
                best = (0.5 * (xs[lo] + xs[hi - 1]), window);
            }
            window -= ws[lo];
        }
        let c = best.0;
        let exact: f64 = ws
            .iter()
            .zip(xs)
            .filter(|(_, x)| (*x - c).abs() < r)
            .map(|(w, _)| w)
            .sum();
        return (vec![c], exact);
    }
    let n = p.len();
    let mut cands: Vec<Vec<f64>> = (0..n).map(|i| p.position(i).to_vec()).collect();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (p.position(i), p.position(j));
            let d = dist(a, b);
            if d >= 2.0 * r {
                continue;
            }
            let mid: Vec<f64> = a.iter().zip(b).map(|(u, v)| 0.5 * (u + v)).collect();
            if p.dim() == 2 {
                let rr = r * (1.0 - 1e-9);
                let h2 = rr * rr - 0.25 * d * d;
                if h2 > 0.0 && d > 0.0 {
                    let h = h2.sqrt();
                    let (ux, uy) = ((b[1] - a[1]) / d, (a[0] - b[0]) / d);
                    cands.push(vec![mid[0] + h * ux, mid[1] + h * uy]);
                    cands.push(vec![mid[0] - h * ux, mid[1] - h * uy]);
                }
            }
            cands.push(mid);
        }
    }
    let mut best = (cands[0].clone(), f64::NEG_INFINITY);
    for c in cands {
        let mass = p.ball_mass(&c, r);
        if mass > best.1 {
            best = (c, mass);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_mass_examples() {
        assert_eq!(total_mass(&PointMeasure::zero(1)), 0.0);
        let m = PointMeasure::on_line(&[(0.0, 0.5), (1.0, 0.25)]).unwrap();
        assert_eq!(total_mass(&m), 0.75);
        let mut layers = BTreeMap::new();
        layers.insert(1, Measure::Point(PointMeasure::on_line(&[(0.0, 0.3)]).unwrap()));
        layers.insert(4, Measure::Point(PointMeasure::on_line(&[(2.0, 0.2)]).unwrap()));
        let lm = LayeredMeasure::new(layers).unwrap();
        assert!((total_mass(&lm) - 0.5).abs() < 1e-15);
        assert_eq!(lm.support(), vec![1, 4]);
    }

    #[test]
    fn rejects_excess_mass() {
        assert!(matches!(
            PointMeasure::on_line(&[(0.0, 0.7), (1.0, 0.7)]),
            Err(Error::MassExceeded(_))
        ));
    }

    #[test]
    fn convolve_with_dirac_is_identity() {
        let step = StepDistribution::uniform_on_line(&[-1.0, 2.0]).unwrap();
        let d0 = Measure::Point(PointMeasure::on_line(&[(0.0, 1.0)]).unwrap());
        assert_eq!(convolve(&d0, &step).unwrap(), *step.measure());
    }

    #[test]
    fn convolve_merges_atoms() {
        let m = Measure::Point(PointMeasure::on_line(&[(0.0, 0.5), (2.0, 0.5)]).unwrap());
        let step = StepDistribution::uniform_on_line(&[-1.0, 1.0]).unwrap();
        let out = convolve(&m, &step).unwrap().to_points();
        let expected = PointMeasure::on_line(&[(-1.0, 0.25), (1.0, 0.5), (3.0, 0.25)]).unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn grid_shift() {
        let h = 0.5;
        let m = Measure::Grid(GridMeasure::on_line(0.0, h, vec![0.5, 0.5]).unwrap());
        // step: delta at h, padded with a zero cell at 0 so the law has a grid
        let step = StepDistribution::new(Measure::Grid(
            GridMeasure::on_line(0.0, h, vec![0.0, 0.5, 0.5]).unwrap(),
        ))
        .unwrap();
        let out = convolve(&m, &step).unwrap();
        let Measure::Grid(g) = out else { panic!() };
        assert_eq!(g.origin(), &[0.0]);
        assert_eq!(g.values(), &[0.0, 0.25, 0.5, 0.25]);

        // uniform on {0, h} convolved with delta_h is uniform on {h, 2h}
        let Measure::Grid(a) = &m else { panic!() };
        let delta_h = GridMeasure::on_line(h, h, vec![1.0]).unwrap();
        let g2 = convolve_grids(a, &delta_h).unwrap();
        assert_eq!(g2.origin(), &[h]);
        assert_eq!(g2.values(), &[0.5, 0.5]);
    }

    #[test]
    fn grid_step_mismatch() {
        let m = Measure::Grid(GridMeasure::on_line(0.0, 0.5, vec![1.0]).unwrap());
        let step = StepDistribution::gaussian_grid_1d(1.0, 0.25, 3.0).unwrap();
        assert!(matches!(convolve(&m, &step), Err(Error::SpacingMismatch { .. })));
        let pstep = StepDistribution::uniform_on_line(&[0.0, 1.0]).unwrap();
        assert!(matches!(convolve(&m, &pstep), Err(Error::KindMismatch(_))));
    }

    #[test]
    fn degenerate_step_rejected() {
        assert!(StepDistribution::uniform_on_line(&[0.0]).is_err());
        assert!(StepDistribution::new(Measure::Point(
            PointMeasure::on_line(&[(0.0, 0.5), (1.0, 0.4)]).unwrap()
        ))
        .is_err());
    }

    #[test]
    fn ball_mass_examples() {
        let d0 = PointMeasure::on_line(&[(0.0, 1.0)]).unwrap();
        assert_eq!(d0.ball_mass(&[0.0], 1.0), 1.0);
        let m = PointMeasure::on_line(&[(0.0, 0.5), (3.0, 0.5)]).unwrap();
        assert_eq!(m.ball_mass(&[0.0], 2.0), 0.5);
        let lm = LayeredMeasure::single(d0).unwrap();
        assert_eq!(lm.ball_mass(2, &[0.0], 5.0), 0.0);
        // open ball
        assert_eq!(m.ball_mass(&[0.0], 3.0), 0.5);
    }

    #[test]
    fn heaviest_ball_examples() {
        let d0 = LayeredMeasure::single(PointMeasure::on_line(&[(0.0, 1.0)]).unwrap()).unwrap();
        for r in [0.1, 1.0, 7.0] {
            let (_, c, m) = heaviest_ball(&d0, r).unwrap();
            assert_eq!((c[0], m), (0.0, 1.0));
        }
        let two = LayeredMeasure::single(PointMeasure::on_line(&[(0.0, 0.5), (3.0, 0.5)]).unwrap()).unwrap();
        assert_eq!(heaviest_ball(&two, 1.0).unwrap().2, 0.5);
        let close = LayeredMeasure::single(PointMeasure::on_line(&[(0.0, 0.5), (0.5, 0.5)]).unwrap()).unwrap();
        assert_eq!(heaviest_ball(&close, 1.0).unwrap().2, 1.0);
        assert!(heaviest_ball(&LayeredMeasure::zero(), 1.0).is_none());
    }

    #[test]
    fn heaviest_ball_2d_matches_scan() {
        let p = PointMeasure::new(
            2,
            vec![(vec![0.0, 0.0], 0.2), (vec![0.5, 0.5], 0.3), (vec![3.0, 0.0], 0.4)],
        )
        .unwrap();
        let (_, m) = heaviest_ball_points(&p, 1.0);
        assert!((m - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trim_removes_tails() {
        let g = GridMeasure::on_line(0.0, 1.0, vec![1e-20, 0.5, 0.5, 1e-19]).unwrap();
        let (t, removed) = g.trim(1e-16);
        assert_eq!(t.values(), &[0.5, 0.5]);
        assert_eq!(t.origin(), &[1.0]);
        assert!(removed > 0.0 && removed < 1e-18);
    }
}
