mod common;

use std::collections::BTreeMap;

use mvpolymer::environment::{field_at, log_mgf, split_seed, stream_id, FieldSpec};
use mvpolymer::functionals::{
    cluster_functional_j, clustering_mass, density_clustering_mass, empirical_energy, energy_r, in_geometric_set,
    lifted_distance_bound, localization_functionals, localization_radius, mass_defect_stats, tent_density,
    update_sample,
};
use mvpolymer::measures::{convolve, GridMeasure, LayeredMeasure, Measure, PointMeasure, StepDistribution};
use mvpolymer::mvmetric::{concentration, metric_exact, SearchBudget};
use mvpolymer::polymer::{run, step, Mode, PolymerConfig, WindowPolicy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec() -> FieldSpec {
    FieldSpec::gaussian(1, 1.0, 1.0, 0.125).unwrap()
}

fn lattice() -> StepDistribution {
    StepDistribution::uniform_on_line(&[-1.0, 0.0, 1.0]).unwrap()
}

fn points(atoms: &[(f64, f64)]) -> Measure {
    Measure::Point(PointMeasure::on_line(atoms).unwrap())
}

fn single(atoms: &[(f64, f64)]) -> LayeredMeasure {
    LayeredMeasure::single(points(atoms)).unwrap()
}

#[test]
fn zero_measure_update() {
    let u = update_sample(&LayeredMeasure::zero(), 1.5, &spec(), &lattice(), 3, 4).unwrap();
    assert!(u.output.is_zero());
    assert_eq!(u.log_normalizer, log_mgf(&spec(), 1.5).unwrap());
}

#[test]
fn probability_update_is_polymer_step() {
    let rho = points(&[(-1.0, 0.25), (0.5, 0.5), (2.0, 0.25)]);
    let (time, seed) = (7, 99);
    let u = update_sample(&LayeredMeasure::single(rho.clone()).unwrap(), 1.2, &spec(), &lattice(), time, seed).unwrap();
    let s = step(&rho, &lattice(), 1.2, |p| field_at(&spec(), seed, stream_id(time, 0), p)).unwrap();
    assert_eq!(u.output.layer(1).unwrap(), &s.rho);
    assert_eq!(u.log_normalizer, s.log_ratio);
    assert!((u.output.total_mass() - 1.0).abs() < 1e-12);
}

#[test]
fn zero_temperature_update() {
    let mu = LayeredMeasure::from_points(vec![
        PointMeasure::on_line(&[(0.0, 0.2), (1.0, 0.1)]).unwrap(),
        PointMeasure::on_line(&[(5.0, 0.3)]).unwrap(),
    ])
    .unwrap();
    let u = update_sample(&mu, 0.0, &spec(), &lattice(), 1, 1).unwrap();
    assert_eq!(u.normalizer, 1.0);
    assert_eq!(u.output, mu.convolve(&lattice()).unwrap());
}

#[test]
fn two_layer_update_against_formula() {
    let mu = LayeredMeasure::from_points(vec![
        PointMeasure::on_line(&[(0.0, 0.2), (1.0, 0.1)]).unwrap(),
        PointMeasure::on_line(&[(5.0, 0.3)]).unwrap(),
    ])
    .unwrap();
    let (beta, time, seed) = (0.9, 11, 5);
    let u = update_sample(&mu, beta, &spec(), &lattice(), time, seed).unwrap();
    let c = log_mgf(&spec(), beta).unwrap();
    let mut a = 0.4 * c.exp();
    let mut unnorm = Vec::new();
    for (j, (_, layer)) in mu.point_layers().iter().enumerate() {
        let conv = convolve(&Measure::Point(layer.clone()), &lattice()).unwrap().to_points();
        let x = field_at(&spec(), seed, stream_id(time, j as u32), conv.positions()).unwrap();
        let w: Vec<f64> = conv.weights().iter().zip(&x).map(|(m, v)| m * (beta * v).exp()).collect();
        a += w.iter().sum::<f64>();
        unnorm.push(w);
    }
    assert!((u.normalizer - a).abs() < 1e-12 * a);
    for (j, (_, out)) in u.output.point_layers().iter().enumerate() {
        for (k, w) in out.weights().iter().enumerate() {
            assert!((w - unnorm[j][k] / a).abs() < 1e-15);
        }
    }
    assert_eq!(u.output.support(), vec![1, 2]);
}

#[test]
fn mass_defect_boundaries_and_strict_decrease() {
    let s = spec();
    assert_eq!(mass_defect_stats(&LayeredMeasure::zero(), 1.0, &s, &lattice(), 100, 1).unwrap(), (0.0, 0.0));
    let one = single(&[(0.0, 1.0)]);
    assert_eq!(mass_defect_stats(&one, 1.0, &s, &lattice(), 100, 1).unwrap(), (1.0, 0.0));
    let half = single(&[(0.0, 0.5)]);
    assert_eq!(mass_defect_stats(&half, 0.0, &s, &lattice(), 100, 1).unwrap(), (0.5, 0.0));
    let (m, se) = mass_defect_stats(&half, 1.0, &s, &lattice(), 4000, 2).unwrap();
    assert!(m < 0.5 - 3.0 * se, "{m} {se}");
}

#[test]
fn energy_functional() {
    let s = spec();
    let beta = 1.0;
    let c = log_mgf(&s, beta).unwrap();
    assert_eq!(energy_r(&LayeredMeasure::zero(), beta, &s, &lattice(), 10, 1).unwrap(), (c, 0.0));
    let p = single(&[(0.0, 0.6), (3.0, 0.4)]);
    assert_eq!(energy_r(&p, 0.0, &s, &lattice(), 10, 1).unwrap(), (0.0, 0.0));
    let (r, se) = energy_r(&p, beta, &s, &lattice(), 4000, 3).unwrap();
    assert!(r < c - 3.0 * se);
    let bound = f64::max(c, 2f64.ln() + log_mgf(&s, -beta).unwrap());
    assert!(r.abs() <= bound);
    let sub = single(&[(0.0, 0.3)]);
    let (r2, _) = energy_r(&sub, beta, &s, &lattice(), 2000, 3).unwrap();
    assert!(r2.abs() <= bound && r2 < c);
}

#[test]
fn empirical_energy_zero_temperature() {
    let step = lattice();
    let cfg = PolymerConfig {
        beta: 0.0,
        window: WindowPolicy::for_step(&step, 1.0),
        step: step.clone(),
        field: spec(),
        n_steps: 5,
        mode: Mode::Point { max_atoms: 1000 },
    };
    let t = run(&cfg, 1).unwrap();
    assert_eq!(empirical_energy(&t, &spec(), &step, 10, 1).unwrap(), (0.0, 0.0));
}

#[test]
fn tent_density_examples() {
    let r = 0.8;
    let d0 = points(&[(0.0, 1.0)]);
    assert!((tent_density(&d0, &[0.0], r) - 1.0 / (2.0 * r)).abs() < 1e-15);
    assert!((tent_density(&d0, &[r / 2.0], r) - 0.5 / (2.0 * r)).abs() < 1e-15);
    assert_eq!(tent_density(&Measure::Point(PointMeasure::zero(1)), &[0.0], r), 0.0);
    let d2 = Measure::Point(PointMeasure::dirac(vec![0.0, 0.0], 1.0).unwrap());
    assert!((tent_density(&d2, &[0.0, 0.0], r) - 1.0 / (std::f64::consts::PI * r * r)).abs() < 1e-15);
}

#[test]
fn cluster_functional_examples() {
    assert_eq!(cluster_functional_j(&LayeredMeasure::zero(), 1.0, 0.1), 0.0);
    let d0 = single(&[(0.0, 1.0)]);
    // D = 1/(2r) at the atom; ramp saturates when 1/(2r) > 2ε
    assert_eq!(cluster_functional_j(&d0, 1.0, 0.2), 1.0);
    assert_eq!(cluster_functional_j(&d0, 1.0, 10.0), 0.0);
    // halfway up the ramp: D = 0.5, ε = 1/3 gives f = 0.5
    assert!((cluster_functional_j(&d0, 1.0, 1.0 / 3.0) - 0.5).abs() < 1e-15);
}

#[test]
fn clustering_mass_examples() {
    let r = 1.0;
    assert_eq!(clustering_mass(&points(&[(0.0, 1.0)]), 0.49, r), 1.0);
    let n = 5;
    let atoms: Vec<(f64, f64)> = (0..2 * n).map(|k| (3.0 * k as f64, 1.0 / (2 * n) as f64)).collect();
    let spread = points(&atoms);
    // each ball holds one atom of mass 1/(2n) = 0.1; level ε V_1 r = 2ε
    assert_eq!(clustering_mass(&spread, 0.051, r), 0.0);
    assert!((clustering_mass(&spread, 0.049, r) - 1.0).abs() < 1e-12);
    assert!((clustering_mass(&spread, 1e-300, r) - 1.0).abs() < 1e-12);
}

#[test]
fn density_clustering_examples() {
    let h = 0.5;
    let uniform = Measure::Grid(GridMeasure::on_line(0.0, h, vec![0.25; 4]).unwrap());
    assert_eq!(density_clustering_mass(&uniform, 0.4).unwrap(), 1.0);
    assert_eq!(density_clustering_mass(&uniform, 0.6).unwrap(), 0.0);
    // half the mass at density 2ε₀ (one cell), half at ε₀/2 (four cells)
    let e0 = 0.25;
    let two = Measure::Grid(GridMeasure::on_line(0.0, 1.0, vec![0.5, 0.125, 0.125, 0.125, 0.125]).unwrap());
    assert_eq!(density_clustering_mass(&two, e0).unwrap(), 0.5);
    assert!(density_clustering_mass(&points(&[(0.0, 1.0)]), 0.1).is_err());
}

/// `I_r` of a 1-d measure by scanning centers on a fine grid plus the atoms.
fn scan_concentration(p: &PointMeasure, r: f64) -> f64 {
    let xs = p.positions();
    let (lo, hi) = (xs[0] - r - 1.0, xs[xs.len() - 1] + r + 1.0);
    let m = 20_000;
    (0..=m)
        .map(|k| lo + (hi - lo) * k as f64 / m as f64)
        .chain(xs.iter().copied())
        .map(|c| p.atoms().map(|(x, w)| w * (r + 1.0 - (x[0] - c).abs()).clamp(0.0, 1.0)).sum::<f64>())
        .fold(0.0, f64::max)
}

#[test]
fn localization_examples() {
    let d0 = single(&[(0.0, 1.0)]);
    let l = localization_functionals(&d0, &[0.1, 0.5, 0.9], &[1.0]);
    assert!(l.w.iter().all(|w| w.1 == 0.0));
    assert_eq!(l.g, 1.0);
    assert_eq!(l.q, f64::INFINITY);
    assert!(l.indicators.iter().all(|i| i.2));

    // with the center free, I_r(½δ_0 + ½δ_3) = ½ + ½ (2r - 2)^+ ∧ 1 for r ≤ 1.5
    let two = single(&[(0.0, 0.5), (3.0, 0.5)]);
    let w = localization_radius(&two, 0.4);
    assert!((w - 1.1).abs() < 1e-6, "{w}");
    let p = two.point_layers()[0].1.clone();
    assert!(scan_concentration(&p, 1.1 + 1e-4) > 0.6);
    assert!(scan_concentration(&p, 1.1 - 1e-4) < 0.6);

    let thirds = LayeredMeasure::from_points(vec![
        PointMeasure::on_line(&[(0.0, 1.0 / 3.0)]).unwrap(),
        PointMeasure::on_line(&[(4.0, 1.0 / 3.0)]).unwrap(),
    ])
    .unwrap();
    let l = localization_functionals(&thirds, &[0.5], &[2.0]);
    assert!((l.g - 1.0 / 3.0).abs() < 1e-15);
    assert!((l.q - 1.0).abs() < 1e-14);
    assert_eq!(l.w[0].1, f64::INFINITY);
    assert!(!l.indicators[0].2);
}

#[test]
fn lifted_bound_is_at_most_two() {
    let step = lattice();
    for beta in [0.0, 1.5] {
        let cfg = PolymerConfig {
            beta,
            window: WindowPolicy::for_step(&step, 1.0),
            step: step.clone(),
            field: spec(),
            n_steps: 6,
            mode: Mode::Point { max_atoms: 1000 },
        };
        let t = run(&cfg, 8).unwrap();
        let b = lifted_distance_bound(&t, &spec(), &step, 3, &SearchBudget::default()).unwrap();
        assert!((0.0..=2.0).contains(&b), "{b}");
        if beta == 0.0 {
            assert_eq!(b, lifted_distance_bound(&t, &spec(), &step, 4, &SearchBudget::default()).unwrap());
        }
    }
}

#[test]
fn layer_mass_lower_semicontinuity_spot_check() {
    // moving one atom slightly keeps the heaviest layer heavy
    let mu = LayeredMeasure::from_points(vec![
        PointMeasure::on_line(&[(0.0, 0.4), (1.0, 0.2)]).unwrap(),
        PointMeasure::on_line(&[(0.0, 0.3)]).unwrap(),
    ])
    .unwrap();
    let nu = LayeredMeasure::from_points(vec![
        PointMeasure::on_line(&[(0.0, 0.4), (1.01, 0.2)]).unwrap(),
        PointMeasure::on_line(&[(0.0, 0.3)]).unwrap(),
    ])
    .unwrap();
    let d = metric_exact(&mu, &nu).unwrap().value;
    let g = |m: &LayeredMeasure| localization_functionals(m, &[], &[]).g;
    assert!(d < 0.01);
    assert!(g(&nu) > g(&mu) - 0.05);
}

#[test]
fn split_seed_reference_value() {
    // first SplitMix64 output for state 0
    assert_eq!(split_seed(0, 0), 0xe220_a839_7b1d_cdaf);
    assert_ne!(split_seed(1, 0), split_seed(0, 1));
}

fn random_probability(rng: &mut ChaCha8Rng) -> LayeredMeasure {
    let k = rng.gen_range(1..6);
    let mut m = BTreeMap::new();
    m.insert(1, Measure::Point(common::random_points(rng, k, 1.0, 6.0)));
    LayeredMeasure::new(m).unwrap()
}

#[test]
fn geometric_sandwich() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let mu = random_probability(&mut rng);
        let delta = rng.gen_range(0.05..0.95);
        let k = rng.gen_range(0.1..4.0);
        let w = localization_radius(&mu, delta);
        if in_geometric_set(&mu, delta, k) {
            assert!(w < k);
        }
        if w < k {
            assert!(in_geometric_set(&mu, delta, k + 1.0));
        }
        let w2 = localization_radius(&mu, (delta + 0.04).min(0.99));
        assert!(w2 <= w);
        let r = if w.is_finite() { w + 1e-8 } else { 0.0 };
        if w.is_finite() {
            assert!(concentration(&mu, r) > 1.0 - delta - 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clustering_monotone_in_eps(seed in any::<u64>(), r in 0.1f64..3.0, e1 in 1e-4f64..1.0, e2 in 1e-4f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = random_probability(&mut rng);
        let rho = mu.layer(1).unwrap();
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(clustering_mass(rho, hi, r) <= clustering_mass(rho, lo, r));
        prop_assert!((clustering_mass(rho, 1e-300, r) - rho.total_mass()).abs() < 1e-12);
        let j = cluster_functional_j(&mu, r, lo);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&j));
    }

    #[test]
    fn tent_density_lipschitz(seed in any::<u64>(), r in 0.1f64..3.0, u in -5.0f64..5.0, v in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = random_probability(&mut rng);
        let rho = mu.layer(1).unwrap();
        let diff = (tent_density(rho, &[u], r) - tent_density(rho, &[v], r)).abs();
        prop_assert!(diff <= (u - v).abs() / (2.0 * r * r) + 1e-12);
    }

    #[test]
    fn update_preserves_layers(seed in any::<u64>(), beta in 0.0f64..2.0, scale in 0.1f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<PointMeasure> = (0..2)
            .map(|_| common::random_points(&mut rng, 3, 0.5 * scale, 4.0))
            .collect();
        let mu = LayeredMeasure::from_points(layers).unwrap();
        let u = update_sample(&mu, beta, &spec(), &lattice(), split_seed(seed, 0) >> 30, seed).unwrap();
        prop_assert!(u.output.total_mass() <= 1.0 + 1e-12);
        prop_assert!(u.normalizer > 0.0);
        prop_assert_eq!(u.output.support(), mu.support());
    }
}
