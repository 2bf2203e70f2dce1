//! Stationary `M`-dependent random potentials and their log moment
//! generating function.
//!
//! A slice `X(n, ·)` is a normalized moving average of white noise on a
//! lattice of spacing `mesh`:
//!
//! `X(x) = σ Σ_j k(x - z_j) ξ_j / sqrt(Σ_j k(x - z_j)²)`,
//!
//! with `k` supported in the open ball of radius `M/2`, so values at points
//! more than `M` apart share no noise. The lattice is offset by a uniform
//! random vector drawn per slice; averaged over the offset the law is
//! invariant under every translation, and the normalization makes every
//! marginal exactly `N(0, σ²)`. The bounded law maps the same Gaussian field
//! through its marginal CDF onto a uniform law on `[-a, a]`, `a = sqrt(3σ²)`.
//!
//! Noise is counter-based: node `k` of stream `s` under `seed` is always
//! drawn from the same ChaCha8 words, so any window can be regenerated and
//! overlapping windows agree.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest white-noise block generated at once.
const MAX_NODES: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldLaw {
    Gaussian,
    Bounded,
}

/// Radial kernel profile on `[0, M/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// `exp(1 - 1 / (1 - (2|x|/M)²))`.
    Bump,
    /// Values at equally spaced radii from 0 to `M/2`, linearly
    /// interpolated; the last value must be 0.
    Profile(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub law: FieldLaw,
    pub kernel: Kernel,
    /// Dependence range `M`.
    pub range: f64,
    pub variance: f64,
    /// White-noise lattice spacing.
    pub mesh: f64,
    pub dim: usize,
    /// `|κ|` allowed in [`log_mgf`] for the bounded law.
    pub kappa_limit: f64,
}

impl FieldSpec {
    pub fn gaussian(dim: usize, range: f64, variance: f64, mesh: f64) -> Result<Self> {
        let s = Self {
            law: FieldLaw::Gaussian,
            kernel: Kernel::Bump,
            range,
            variance,
            mesh,
            dim,
            kappa_limit: f64::INFINITY,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidField(m));
        if self.dim == 0 || self.dim > 3 {
            return bad(format!("dimension {} not in 1..=3", self.dim));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return bad(format!("range {} must be positive", self.range));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return bad(format!("variance {} must be positive", self.variance));
        }
        // every point must see a node strictly inside the kernel support
        if !(self.mesh > 0.0) || self.mesh * (self.dim as f64).sqrt() >= self.range {
            return bad(format!(
                "mesh {} does not resolve a kernel of radius {}",
                self.mesh,
                self.range / 2.0
            ));
        }
        if !(self.kappa_limit > 0.0) {
            return bad("kappa limit must be positive".into());
        }
        if let Kernel::Profile(v) = &self.kernel {
            if v.len() < 2 || v.iter().any(|x| !x.is_finite() || *x < 0.0) || v[0] <= 0.0 {
                return bad("profile needs >= 2 nonnegative samples with a positive center".into());
            }
            if *v.last().unwrap() != 0.0 {
                return bad("profile must vanish at radius M/2".into());
            }
        }
        Ok(())
    }

    pub fn kernel_value(&self, radius: f64) -> f64 {
        let half = 0.5 * self.range;
        if radius >= half {
            return 0.0;
        }
        match &self.kernel {
            Kernel::Bump => {
                let t = radius / half;
                (1.0 - 1.0 / (1.0 - t * t)).exp()
            }
            Kernel::Profile(v) => {
                let pos = radius / half * (v.len() - 1) as f64;
                let i = (pos.floor() as usize).min(v.len() - 2);
                let f = pos - i as f64;
                v[i] * (1.0 - f) + v[i + 1] * f
            }
        }
    }

    /// Half-width of the bounded law's uniform marginal.
    pub fn bounded_half_width(&self) -> f64 {
        (3.0 * self.variance).sqrt()
    }
}

/// Axis-aligned grid of evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub shape: Vec<usize>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat row-major list of point coordinates.
    pub fn points(&self) -> Vec<f64> {
        let d = self.shape.len();
        let mut out = Vec::with_capacity(self.len() * d);
        let mut idx = vec![0usize; d];
        for _ in 0..self.len() {
            for (o, i) in self.origin.iter().zip(&idx) {
                out.push(o + *i as f64 * self.spacing);
            }
            for ax in (0..d).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub n: u64,
    pub window: Window,
    pub values: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
}

/// Stream of time slice `n` for layer copy `layer` (0 for the polymer's own
/// environment). Distinct pairs give distinct streams for `n < 2^40`.
pub fn stream_id(n: u64, layer: u32) -> u64 {
    n | ((layer as u64) << 40)
}

/// Child seed `index` of `master`: the SplitMix64 output at position
/// `index + 1` of the sequence started at `master`. Used for every derived
/// seed (per-run seeds from a master seed, fresh fields for estimators).
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn zigzag(i: i64) -> u128 {
    ((i << 1) ^ (i >> 63)) as u64 as u128
}

struct Noise {
    rng: ChaCha8Rng,
    offset: Vec<f64>,
}

impl Noise {
    fn new(seed: u64, stream: u64, spec: &FieldSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng.set_word_pos(0);
        let offset = (0..spec.dim)
            .map(|_| unit_open(rng.next_u64()) * spec.mesh)
            .collect();
        Self { rng, offset }
    }

    /// Standard normal at lattice node `k`: exactly two 64-bit words of the
    /// node's private counter range feed one Box-Muller draw.
    fn node(&mut self, k: &[i64]) -> f64 {
        let bits = 64 / k.len() as u32;
        let mut code: u128 = 0;
        for &c in k {
            code = (code << bits) | zigzag(c);
        }
        self.rng.set_word_pos(8 + 4 * code);
        let u1 = unit_open(self.rng.next_u64());
        let u2 = unit_open(self.rng.next_u64());
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Uniform on `(0, 1]` from the top 53 bits.
fn unit_open(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Field values at arbitrary points (flat coordinates, `spec.dim` per
/// point) for `(seed, stream)`.
pub fn field_at(spec: &FieldSpec, seed: u64, stream: u64, points: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    let d = spec.dim;
    if !points.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: points.len() % d,
        });
    }
    let npts = points.len() / d;
    if npts == 0 {
        return Ok(Vec::new());
    }
    let mut noise = Noise::new(seed, stream, spec);
    let half = 0.5 * spec.range;
    let h = spec.mesh;
    // lattice block covering all points
    let mut kmin = vec![i64::MAX; d];
    let mut kmax = vec![i64::MIN; d];
    for p in points.chunks(d) {
        for ax in 0..d {
            if !p[ax].is_finite() {
                return Err(Error::InvalidField("non-finite evaluation point".into()));
            }
            let lo = ((p[ax] - noise.offset[ax] - half) / h).ceil() as i64;
            let hi = ((p[ax] - noise.offset[ax] + half) / h).floor() as i64;
            kmin[ax] = kmin[ax].min(lo);
            kmax[ax] = kmax[ax].max(hi);
        }
    }
    // node codes pack into 64 bits, within the generator's counter range
    let bits = 64 / d as u32;
    if (0..d).any(|ax| bits < 64 && (zigzag(kmin[ax]) >> bits != 0 || zigzag(kmax[ax]) >> bits != 0)) {
        return Err(Error::InvalidField("window too far from the origin for the noise lattice".into()));
    }
    let extent: Vec<usize> = (0..d).map(|ax| (kmax[ax] - kmin[ax] + 1) as usize).collect();
    let total: usize = extent.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).unwrap_or(usize::MAX);
    if total > MAX_NODES {
        return Err(Error::InvalidField(format!("{total} noise nodes exceed the block limit")));
    }
    let mut xi = vec![0.0; total];
    let mut k = kmin.clone();
    for v in xi.iter_mut() {
        *v = noise.node(&k);
        for ax in (0..d).rev() {
            k[ax] += 1;
            if k[ax] <= kmax[ax] {
                break;
            }
            k[ax] = kmin[ax];
        }
    }
    let sigma = spec.variance.sqrt();
    let a = spec.bounded_half_width();
    let mut out = Vec::with_capacity(npts);
    let mut lo = vec![0i64; d];
    let mut hi = vec![0i64; d];
    let mut kk = vec![0i64; d];
    for p in points.chunks(d) {
        for ax in 0..d {
            lo[ax] = ((p[ax] - noise.offset[ax] - half) / h).ceil() as i64;
            hi[ax] = ((p[ax] - noise.offset[ax] + half) / h).floor() as i64;
        }
        let (mut num, mut den) = (0.0, 0.0);
        kk.copy_from_slice(&lo);
        'nodes: loop {
            let mut r2 = 0.0;
            let mut flat = 0usize;
            for ax in 0..d {
                let z = noise.offset[ax] + kk[ax] as f64 * h;
                r2 += (p[ax] - z) * (p[ax] - z);
                flat = flat * extent[ax] + (kk[ax] - kmin[ax]) as usize;
            }
            let kv = spec.kernel_value(r2.sqrt());
            if kv > 0.0 {
                num += kv * xi[flat];
                den += kv * kv;
            }
            for ax in (0..d).rev() {
                kk[ax] += 1;
                if kk[ax] <= hi[ax] {
                    continue 'nodes;
                }
                kk[ax] = lo[ax];
            }
            break;
        }
        if den <= 0.0 {
            return Err(Error::InvalidField("point sees no noise node".into()));
        }
        let z = num / den.sqrt();
        out.push(match spec.law {
            FieldLaw::Gaussian => sigma * z,
            FieldLaw::Bounded => a * (1.0 - erfc(z / std::f64::consts::SQRT_2)),
        });
    }
    Ok(out)
}

/// One time slice on a window, using the polymer's own stream.
pub fn sample_field(spec: &FieldSpec, n: u64, window: &Window, seed: u64) -> Result<FieldSample> {
    if window.shape.len() != spec.dim || window.origin.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            found: window.shape.len(),
        });
    }
    if !(window.spacing > 0.0) {
        return Err(Error::InvalidField("window spacing must be positive".into()));
    }
    let stream = stream_id(n, 0);
    let values = field_at(spec, seed, stream, &window.points())?;
    Ok(FieldSample {
        n,
        window: window.clone(),
        values,
        seed,
        stream,
    })
}

/// `c(κ) = log E e^{κ X}`.
pub fn log_mgf(spec: &FieldSpec, kappa: f64) -> Result<f64> {
    match spec.law {
        FieldLaw::Gaussian => Ok(0.5 * kappa * kappa * spec.variance),
        FieldLaw::Bounded => {
            if kappa.abs() > spec.kappa_limit {
                return Err(Error::KappaOutOfDomain {
                    kappa,
                    limit: spec.kappa_limit,
                });
            }
            if kappa == 0.0 {
                return Ok(0.0);
            }
            let a = spec.bounded_half_width();
            // E e^{κX} for X uniform on [-a, a], scaled by e^{-|κ|a} for range
            let shift = kappa.abs() * a;
            let f = |u: f64| (kappa * a * (2.0 * u - 1.0) - shift).exp();
            Ok(adaptive_simpson(&f, 0.0, 1.0, 1e-14).ln() + shift)
        }
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 40)
}

const MAGIC: &[u8; 4] = b"MVPF";

impl FieldSample {
    /// Little-endian flat export: magic, dim (u32), shape (u64 each),
    /// origin and spacing (f64), then the values in row-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let w = &self.window;
        let mut out = Vec::with_capacity(16 + 16 * w.shape.len() + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(w.shape.len() as u32).to_le_bytes());
        for &s in &w.shape {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for &o in &w.origin {
            out.extend_from_slice(&o.to_le_bytes());
        }
        out.extend_from_slice(&w.spacing.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`FieldSample::to_bytes`]; returns the window and values.
    pub fn read_bytes(bytes: &[u8]) -> Result<(Window, Vec<f64>)> {
        let err = || Error::Serialization("malformed field slice".into());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(err)?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(err());
        }
        let d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(d);
        for _ in 0..d {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let mut origin = Vec::with_capacity(d);
        for _ in 0..d {
            origin.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        let spacing = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        if pos != bytes.len() {
            return Err(err());
        }
        Ok((Window { origin, spacing, shape }, values))
    }
}
