//! `selftest`: randomized invariant checks of the transport solver and the
//! metric, plus the separated-matching worked example.

use mvpolymer::environment::split_seed;
use mvpolymer::measures::{convolve, heaviest_ball, LayeredMeasure, Measure, PointMeasure, StepDistribution};
use mvpolymer::mvmetric::{
    concentration, metric_exact, metric_upper, separation, worked_example, SearchBudget,
};
use mvpolymer::serialize::{layered_to_json, measure_to_json, Encoding};
use mvpolymer::transport::{dual_lower_bound, generalized_wasserstein, wasserstein};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

pub const DEFAULT_BUDGET: usize = 100;
const SELFTEST_SEED: u64 = 0x5e1f_7e57;

/// Deliberate defects for checking that the suite notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injection {
    /// Adds mass to the first entry of every computed transport plan.
    BrokenPlan,
}

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub name: &'static str,
    pub instances: usize,
    /// `(instance index, instance, message)` of the first failure.
    pub failure: Option<(usize, Value, String)>,
}

type Check = fn(&mut ChaCha8Rng, Option<Injection>) -> Result<(), (Value, String)>;

fn points(rng: &mut ChaCha8Rng, max_atoms: usize, mass: f64, spread: f64) -> PointMeasure {
    let k = rng.gen_range(1..=max_atoms);
    points_k(rng, k, mass, spread)
}

fn points_k(rng: &mut ChaCha8Rng, k: usize, mass: f64, spread: f64) -> PointMeasure {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let atoms: Vec<(f64, f64)> = raw.iter().map(|w| (rng.gen_range(-spread..spread), w / s * mass)).collect();
    PointMeasure::on_line(&atoms).unwrap()
}

fn layered(rng: &mut ChaCha8Rng, max_layers: usize, max_atoms: usize, spread: f64) -> LayeredMeasure {
    let layers = rng.gen_range(1..=max_layers);
    let total = rng.gen_range(0.2..=1.0);
    let raw: Vec<f64> = (0..layers).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    LayeredMeasure::from_points(raw.iter().map(|w| points(rng, max_atoms, w / s * total, spread)).collect()).unwrap()
}

fn pm(p: &PointMeasure) -> Value {
    measure_to_json(&Measure::Point(p.clone()), Encoding::Decimal)
}

fn pair(a: &PointMeasure, g: &PointMeasure) -> Value {
    json!({"a": pm(a), "g": pm(g)})
}

fn lm(m: &LayeredMeasure) -> Value {
    layered_to_json(m, Encoding::Decimal)
}

fn fail<T>(instance: Value, msg: impl Into<String>) -> Result<T, (Value, String)> {
    Err((instance, msg.into()))
}

fn transport_plan(rng: &mut ChaCha8Rng, inject: Option<Injection>) -> Result<(), (Value, String)> {
    let mass = rng.gen_range(0.1..=1.0);
    let (a, g) = (points(rng, 6, mass, 3.0), points(rng, 6, mass, 3.0));
    let mh = rng.gen_range(0.1..=1.0);
    let h = points(rng, 6, mh, 3.0);
    let inst = json!({"a": pm(&a), "g": pm(&g), "h": pm(&h)});
    let (_, mut plan) = wasserstein(&a, &g).or_else(|e| fail(inst.clone(), e.to_string()))?;
    let mut unequal = generalized_wasserstein(&a, &h).or_else(|e| fail(inst.clone(), e.to_string()))?.plan;
    if inject == Some(Injection::BrokenPlan) {
        for p in [&mut plan, &mut unequal] {
            if let Some(first) = p.pairs.first_mut() {
                first.2 += 0.1;
            }
        }
    }
    plan.validate(&a, &g, true).or_else(|m| fail(inst.clone(), m))?;
    unequal.validate(&a, &h, false).or_else(|m| fail(inst, m))
}

fn transport_symmetry(rng: &mut ChaCha8Rng, _: Option<Injection>) -> Result<(), (Value, String)> {
    let mass = rng.gen_range(0.1..=1.0);
    let (a, g) = (points(rng, 5, mass, 3.0), points(rng, 5, mass, 3.0));
    let inst = pair(&a, &g);
    let ab = wasserstein(&a, &g).or_else(|e| fail(inst.clone(), e.to_string()))?.0;
    let ba = wasserstein(&g, &a).or_else(|e| fail(inst.clone(), e.to_string()))?.0;
    if (ab - ba).abs() > 1e-12 {
        return fail(inst, format!("W(a, g) = {ab} but W(g, a) = {ba}"));
    }
    if !(0.0..=mass + 1e-12).contains(&ab) {
        return fail(inst, format!("W = {ab} outside [0, mass = {mass}]"));
    }
    Ok(())
}

fn transport_triangle(rng: &mut ChaCha8Rng, _: Option<Injection>) -> Result<(), (Value, String)> {
    let mass = rng.gen_range(0.1..=1.0);
    let m: Vec<PointMeasure> = (0..3).map(|_| points(rng, 4, mass, 3.0)).collect();
    let inst = json!({"a": pm(&m[0]), "b": pm(&m[1]), "c": pm(&m[2])});
    let w = |i: usize, j: usize| wasserstein(&m[i], &m[j]).map(|x| x.0);
    let (ac, ab, bc) = match (w(0, 2), w(0, 1), w(1, 2)) {
        (Ok(x), Ok(y), Ok(z)) => (x, y, z),
        _ => return fail(inst, "solver error"),
    };
    if ac > ab + bc + 1e-9 {
        return fail(inst, format!("W(a, c) = {ac} > W(a, b) + W(b, c) = {}", ab + bc));
    }
    Ok(())
}

fn transport_unequal(rng: &mut ChaCha8Rng, _: Option<Injection>) -> Result<(), (Value, String)> {
    let (ma, mg): (f64, f64) = (rng.gen_range(0.1..=1.0), rng.gen_range(0.1..=1.0));
    let (a, g) = (points(rng, 5, ma, 3.0), points(rng, 5, mg, 3.0));
    let inst = pair(&a, &g);
    let gw = generalized_wasserstein(&a, &g).or_else(|e| fail(inst.clone(), e.to_string()))?;
    gw.plan.validate(&a, &g, false).or_else(|m| fail(inst.clone(), m))?;
    let (ma, mg) = (a.total_mass(), g.total_mass());
    if gw.value < (ma - mg).abs() - 1e-12 || gw.value > ma + mg + 1e-12 {
        return fail(inst, format!("generalized distance {} outside [|Δmass|, total mass]", gw.value));
    }
    let b = g.scaled(ma / mg);
    let w = wasserstein(&a, &b).or_else(|e| fail(pair(&a, &b), e.to_string()))?.0;
    let gb = generalized_wasserstein(&a, &b).or_else(|e| fail(pair(&a, &b), e.to_string()))?.value;
    if gb > w + 1e-12 {
        return fail(pair(&a, &b), format!("generalized distance {gb} exceeds balanced distance {w}"));
    }
    Ok(())
}

fn transport_dual(rng: &mut ChaCha8Rng, _: Option<Injection>) -> Result<(), (Value, String)> {
    let mass = rng.gen_range(0.1..=1.0);
    let (a, g) = (points(rng, 6, mass, 3.0), points(rng, 6, mass, 3.0));
    let inst = pair(&a, &g);
    let w = wasserstein(&a, &g).or_else(|e| fail(inst.clone(), e.to_string()))?.0;
    for _ in 0..20 {
        let c: f64 = rng.gen_range(-3.0..3.0);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let f = move |x: &[f64]| sign * (x[0] - c).abs().min(1.0);
        let d = dual_lower_bound(&a, &g, f).or_else(|e| fail(inst.clone(), e.to_string()))?;
        if d > w + 1e-9 {
            return fail(inst, format!("dual bound {d} exceeds primal {w} for test function centered at {c}"));
        }
    }
    Ok(())
}

fn concentration_sandwich(rng: &mut ChaCha8Rng, _: Option<Injection>) -> Result<(), (Value, String)> {
    let mu = layered(rng, 3, 6, 4.0);
    let r = rng.gen_range(0.0..3.0);
    let inst = json!({"mu": lm(&mu), "r": r});
    let i = concentration(&mu, r);
    let lo = heaviest_ball(&mu, r).map_or(0.0, |b| b.2);
    let hi = heaviest_ball(&mu, r + 1.0).map_or(0.0, |b| b.2);
    if !(lo <= i && i <= hi) {
        return fail(inst, format!("ball mass {lo} <= I_r = {i} <= ball mass {hi} fails"));
    }
    let s = r + rng.gen_range(0.0..2.0);
    let j = concentration(&mu, s);
    if j < i {
        return fail(inst, format!("I_r not monotone: I({r}) = {i} > I({s}) = {j}"));
    }
    let lambda = StepDistribution::uniform_on_line(&[-1.0, 0.0, 1.0]).unwrap();
    let conv = mu.convolve(&lambda).or_else(|e| fail(inst.clone(), e.to_string()))?;
    let k = concentration(&conv, r);
    if k > i + 1e-12 {
        return fail(inst, format!("convolution raised I_r from {i} to {k}"));
    }
    Ok(())
}

fn concentration_lipschitz(rng: &mut ChaCha8Rng, _: Option<Injection>) -> Result<(), (Value, String)> {
    let mass = rng.gen_range(0.1..=1.0);
    let (a, g) = (points(rng, 6, mass, 3.0), points(rng, 6, mass, 3.0));
    let r = rng.gen_range(0.0..2.0);
    let inst = json!({"a": pm(&a), "g": pm(&g), "r": r});
    let w = wasserstein(&a, &g).or_else(|e| fail(inst.clone(), e.to_string()))?.0;
    let ia = concentration(&LayeredMeasure::single(a.clone()).unwrap(), r);
    let ig = concentration(&LayeredMeasure::single(g.clone()).unwrap(), r);
    if (ia - ig).abs() > w + 1e-12 {
        return fail(inst, format!("|I_r(a) - I_r(g)| = {} exceeds W = {w}", (ia - ig).abs()));
    }
    Ok(())
}

fn metric_axioms(rng: &mut ChaCha8Rng, _: Option<Injection>) -> Result<(), (Value, String)> {
    let m: Vec<LayeredMeasure> = (0..3).map(|_| layered(rng, 2, 2, 2.0)).collect();
    let inst = json!({"mu": lm(&m[0]), "nu": lm(&m[1]), "xi": lm(&m[2])});
    let mut d = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] = metric_exact(&m[i], &m[j]).or_else(|e| fail(inst.clone(), e.to_string()))?.value;
        }
    }
    if d[0][1] != d[1][0] {
        return fail(inst, format!("d(mu, nu) = {} but d(nu, mu) = {}", d[0][1], d[1][0]));
    }
    if d[0][0] > 1e-6 {
        return fail(inst, format!("d(mu, mu) = {}", d[0][0]));
    }
    if d[0][1] > d[0][2] + d[2][1] + 2e-6 {
        return fail(inst, format!("triangle: d(mu, nu) = {} > {}", d[0][1], d[0][2] + d[2][1]));
    }
    if d.iter().flatten().any(|x| !(0.0..=2.0).contains(x)) {
        return fail(inst, "a distance lies outside [0, 2]");
    }
    let up = metric_upper(&m[0], &m[1], &SearchBudget::default())
        .or_else(|e| fail(inst.clone(), e.to_string()))?
        .value;
    if up < d[0][1] - 1e-9 {
        return fail(inst, format!("upper bound {up} below exact value {}", d[0][1]));
    }
    Ok(())
}

/// `∫ |F^-1 - G^-1|` for equal-mass 1-d measures with equally many atoms
/// of equal weight.
fn quantile_coupling_cost(a: &PointMeasure, g: &PointMeasure) -> f64 {
    let mut xs: Vec<f64> = a.positions().to_vec();
    let mut ys: Vec<f64> = g.positions().to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let w = a.total_mass() / xs.len() as f64;
    xs.iter().zip(&ys).map(|(x, y)| w * (x - y).abs()).sum()
}

fn worked(_: &mut ChaCha8Rng, _: Option<Injection>) -> Result<(), (Value, String)> {
    let n = 200;
    let inst = json!({"atoms_per_piece": n});
    let ex = worked_example(n).or_else(|e| fail(inst.clone(), e.to_string()))?;
    let sep = separation(&ex.triple.matching);
    if sep != 8.0 {
        return fail(inst, format!("separation {sep}, expected 8"));
    }
    let mut transport = 0.0;
    for (p, x) in ex.triple.matching.pairs.iter().zip(&ex.triple.shifts) {
        transport += wasserstein(&p.mu_part, &p.nu_part.translated(x))
            .or_else(|e| fail(inst.clone(), e.to_string()))?
            .0;
    }
    let tol = 2.0 * ex.quantization_bound;
    if (transport - 1.0 / 18.0).abs() > tol {
        return fail(inst, format!("matched transport {transport}, expected 1/18 within {tol}"));
    }
    let p = &ex.triple.matching.pairs[1];
    let untruncated = quantile_coupling_cost(&p.mu_part, &p.nu_part.translated(&ex.triple.shifts[1]));
    if (untruncated - 1.0 / 16.0).abs() > tol {
        return fail(inst, format!("untruncated coupling cost {untruncated}, expected 1/16 within {tol}"));
    }
    Ok(())
}

fn convolution_mass(rng: &mut ChaCha8Rng, _: Option<Injection>) -> Result<(), (Value, String)> {
    let ma = rng.gen_range(0.1..=1.0);
    let a = points(rng, 6, ma, 3.0);
    let k = rng.gen_range(2..=4);
    let lambda = StepDistribution::new(Measure::Point(points_k(rng, k, 1.0, 2.0))).unwrap();
    let inst = json!({"a": pm(&a), "lambda": measure_to_json(lambda.measure(), Encoding::Decimal)});
    let c = convolve(&Measure::Point(a.clone()), &lambda).or_else(|e| fail(inst.clone(), e.to_string()))?;
    if (c.total_mass() - a.total_mass()).abs() > 1e-12 {
        return fail(inst, format!("convolution changed the mass from {} to {}", a.total_mass(), c.total_mass()));
    }
    Ok(())
}

/// `(name, check, instances per unit of budget / 100)`.
const PROPERTIES: &[(&str, Check, usize)] = &[
    ("TransportPlan marginals and cost", transport_plan, 100),
    ("transport symmetry and range", transport_symmetry, 100),
    ("transport triangle inequality", transport_triangle, 100),
    ("unequal-mass transport bounds", transport_unequal, 100),
    ("Kantorovich dual below primal", transport_dual, 100),
    ("convolution preserves mass", convolution_mass, 100),
    ("concentration sandwich, monotonicity, convolution", concentration_sandwich, 100),
    ("concentration Lipschitz in transport distance", concentration_lipschitz, 100),
    ("metric axioms and upper bound", metric_axioms, 20),
    ("separated matching worked example", worked, 0),
];

/// Runs every property on `budget`-scaled random instances. Properties stop
/// at their first failing instance.
pub fn run_selftest(budget: usize, inject: Option<Injection>) -> Vec<PropertyReport> {
    PROPERTIES
        .iter()
        .enumerate()
        .map(|(k, &(name, check, weight))| {
            let instances = (budget * weight).div_ceil(100).max(1);
            let mut failure = None;
            for i in 0..instances {
                let mut rng = ChaCha8Rng::seed_from_u64(split_seed(split_seed(SELFTEST_SEED, k as u64), i as u64));
                if let Err((inst, msg)) = check(&mut rng, inject) {
                    failure = Some((i, inst, msg));
                    break;
                }
            }
            PropertyReport {
                name,
                instances,
                failure,
            }
        })
        .collect()
}

/// Prints the report; fails with exit code 3 if any property failed.
pub fn cmd_selftest(budget: usize, inject: Option<Injection>) -> CliResult<()> {
    let reports = run_selftest(budget, inject);
    let mut failed = Vec::new();
    for r in &reports {
        match &r.failure {
            None => println!("PASS {} ({} instances)", r.name, r.instances),
            Some((i, inst, msg)) => {
                println!("FAIL {}: instance {i}: {msg}", r.name);
                println!("     instance: {inst}");
                failed.push(r.name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Property(format!("{} failed", failed.join(", "))))
    }
}
