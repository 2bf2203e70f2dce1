mod common;

use common::{bruteforce_generalized, bruteforce_wasserstein, random_points, random_points_nd};
use mvpolymer::measures::PointMeasure;
use mvpolymer::transport::{dual_lower_bound, generalized_wasserstein, wasserstein};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_bruteforce_lp() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (k1, k2) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let mass = rng.gen_range(0.1..1.0);
        let a = random_points(&mut rng, k1, mass, 1.5);
        let g = random_points(&mut rng, k2, mass, 1.5);
        let (w, plan) = wasserstein(&a, &g).unwrap();
        plan.validate(&a, &g, true).unwrap();
        let oracle = bruteforce_wasserstein(&a, &g);
        assert!((w - oracle).abs() <= 1e-9, "{w} vs {oracle}");

        let m2 = rng.gen_range(0.0..1.0);
        let g2 = random_points(&mut rng, k2, m2, 1.5);
        let gw = generalized_wasserstein(&a, &g2).unwrap();
        gw.plan.validate(&a, &g2, false).unwrap();
        let oracle = bruteforce_generalized(&a, &g2);
        assert!((gw.value - oracle).abs() <= 1e-9, "{} vs {oracle}", gw.value);
        assert!(gw.value <= a.total_mass() + g2.total_mass() + 1e-12);
    }
}

#[test]
fn metric_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let mass = rng.gen_range(0.2..1.0);
        let dim = rng.gen_range(1..=2);
        let ks: Vec<usize> = (0..3).map(|_| rng.gen_range(1..6)).collect();
        let a = random_points_nd(&mut rng, dim, ks[0], mass, 2.0);
        let b = random_points_nd(&mut rng, dim, ks[1], mass, 2.0);
        let c = random_points_nd(&mut rng, dim, ks[2], mass, 2.0);
        let ab = wasserstein(&a, &b).unwrap().0;
        let ba = wasserstein(&b, &a).unwrap().0;
        let ac = wasserstein(&a, &c).unwrap().0;
        let cb = wasserstein(&c, &b).unwrap().0;
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab <= ac + cb + 1e-9);
        assert!(wasserstein(&a, &a).unwrap().0 < 1e-12);
        assert!(generalized_wasserstein(&a, &b).unwrap().value <= ab + 1e-12);
    }
}

#[test]
fn splitting_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let m1 = rng.gen_range(0.1..0.5);
        let m2 = rng.gen_range(0.1..0.5);
        let mu1 = random_points(&mut rng, 3, m1, 2.0);
        let nu1 = random_points(&mut rng, 3, m1, 2.0);
        let mu2 = random_points(&mut rng, 3, m2, 2.0);
        let nu2 = random_points(&mut rng, 3, m2, 2.0);
        let whole = wasserstein(&mu1.add(&mu2).unwrap(), &nu1.add(&nu2).unwrap()).unwrap().0;
        let parts = wasserstein(&mu1, &nu1).unwrap().0 + wasserstein(&mu2, &nu2).unwrap().0;
        assert!(whole <= parts + 1e-12);
    }
}

fn power(p: &PointMeasure, k: usize) -> PointMeasure {
    let mut atoms: Vec<(Vec<f64>, f64)> = vec![(vec![], 1.0)];
    for _ in 0..k {
        atoms = atoms
            .iter()
            .flat_map(|(x, w)| {
                p.atoms().map(move |(y, v)| {
                    let mut z = x.clone();
                    z.extend_from_slice(y);
                    (z, w * v)
                })
            })
            .collect();
    }
    PointMeasure::new(p.dim() * k, atoms).unwrap()
}

#[test]
fn product_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..30 {
        let a = random_points(&mut rng, 3, 1.0, 1.0);
        let g = random_points(&mut rng, 3, 1.0, 1.0);
        let w1 = wasserstein(&a, &g).unwrap().0;
        for k in [2, 3] {
            let wk = wasserstein(&power(&a, k), &power(&g, k)).unwrap().0;
            assert!(wk <= k as f64 * w1 + 1e-9, "k={k}: {wk} > {k} * {w1}");
        }
    }
}

#[test]
fn dual_bound_random_tents() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let mass = rng.gen_range(0.2..1.0);
        let a = random_points(&mut rng, 4, mass, 2.0);
        let g = random_points(&mut rng, 4, mass, 2.0);
        let w = wasserstein(&a, &g).unwrap().0;
        for _ in 0..5 {
            let r = rng.gen_range(0.0..2.0);
            let x0 = rng.gen_range(-2.0..2.0);
            let f = |x: &[f64]| mvpolymer::mvmetric::tent_weight(&[x[0] - x0], r);
            let v = dual_lower_bound(&a, &g, f).unwrap();
            assert!(v <= w + 1e-9);
            assert!(-v <= w + 1e-9);
        }
    }
}
