//! `sweep`: free energy, Lyapunov exponent and localization statistics
//! across inverse temperatures.

use std::path::Path;

use mvpolymer::environment::log_mgf;
use mvpolymer::functionals::{in_geometric_set, mean_stderr};
use mvpolymer::measures::LayeredMeasure;
use mvpolymer::polymer::{free_energy, run_with, PolymerConfig};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::{create_dir, num, write_csv, write_manifest};
use crate::simulate::observe;

/// Named per-seed statistics, in a fixed order.
type Stats = Vec<(String, f64)>;

/// Empirical `q`-quantile: the value at index `⌊q·len⌋` of the sorted
/// sample, clamped to the last index.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let i = ((q * v.len() as f64) as usize).min(v.len() - 1);
    v[i]
}

fn seed_stats(config: &RunConfig, polymer: &PolymerConfig, seed: u64) -> CliResult<Stats> {
    let grids = &config.grids;
    let run = observe(polymer, grids, 0, seed)?;
    let n = run.records.len() as f64;
    let avg = |f: &dyn Fn(usize) -> f64| (0..run.records.len()).map(f).sum::<f64>() / n;
    let recs = &run.records;
    let mut s: Stats = vec![("F_n".into(), free_energy(&run.trajectory)?)];
    s.push(("ball_stat".into(), avg(&|i| recs[i].max_ball)));
    let mut k = 0;
    for e in &grids.eps {
        for r in &grids.r {
            let idx = k;
            s.push((format!("clustering_eps={}_r={}", num(*e), num(*r)), avg(&|i| recs[i].clustering[idx].2)));
            k += 1;
        }
    }
    if !recs.is_empty() && !recs[0].density_clustering.is_empty() {
        for (j, e) in grids.density_eps.iter().enumerate() {
            s.push((format!("density_clustering_eps={}", num(*e)), avg(&|i| recs[i].density_clustering[j].1)));
        }
    }
    let mut k = 0;
    for d in &grids.delta {
        for kk in &grids.k {
            let idx = k;
            let v = avg(&|i| f64::from(u8::from(recs[i].localization.indicators[idx].2)));
            s.push((format!("loc_density_delta={}_K={}", num(*d), num(*kk)), v));
            k += 1;
        }
    }
    if !config.k_quantiles.is_empty() {
        // K from this seed's own W_δ sample, then a second pass for the indicators
        let mut levels = Vec::new();
        for (j, d) in grids.delta.iter().enumerate() {
            let w: Vec<f64> = recs.iter().map(|r| r.localization.w[j].1).collect();
            for q in &config.k_quantiles {
                levels.push((*d, *q, empirical_quantile(&w, *q)));
            }
        }
        let mut hits = vec![0usize; levels.len()];
        let steps = polymer.n_steps;
        let mut failure = None;
        run_with(polymer, seed, |i, rho| {
            if i == steps || failure.is_some() {
                return;
            }
            match LayeredMeasure::single(rho.clone()) {
                Ok(mu) => {
                    for (h, (d, _, k)) in hits.iter_mut().zip(&levels) {
                        *h += usize::from(in_geometric_set(&mu, *d, *k));
                    }
                }
                Err(e) => failure = Some(e),
            }
        })?;
        if let Some(e) = failure {
            return Err(e.into());
        }
        for ((d, q, k), h) in levels.iter().zip(hits) {
            s.push((format!("K_delta={}_q={}", num(*d), num(*q)), *k));
            s.push((format!("loc_density_delta={}_q={}", num(*d), num(*q)), h as f64 / n));
        }
    }
    Ok(s)
}

struct BetaSummary {
    beta: f64,
    c: f64,
    p: f64,
    p_se: f64,
    variance: f64,
    /// `(name, mean, stderr)` for every statistic other than `F_n`.
    stats: Vec<(String, f64, f64)>,
}

pub fn cmd_sweep(config: &RunConfig, config_text: &str, out: &Path) -> CliResult<()> {
    let mut betas = config.betas.clone();
    betas.sort_by(f64::total_cmp);
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    let jobs: Vec<(f64, u64)> = betas.iter().flat_map(|&b| seeds.iter().map(move |&s| (b, s))).collect();
    let per_seed: Vec<Stats> = jobs
        .par_iter()
        .map(|&(b, s)| seed_stats(config, &config.at_beta(b), s))
        .collect::<CliResult<_>>()?;
    create_dir(out)?;

    let n = config.polymer.n_steps;
    let k = seeds.len();
    let mut summaries = Vec::new();
    let mut long = Vec::new();
    for (bi, &beta) in betas.iter().enumerate() {
        let rows = &per_seed[bi * k..(bi + 1) * k];
        for (seed, st) in seeds.iter().zip(rows) {
            for (name, v) in st {
                long.push(vec!["sweep".into(), seed.to_string(), num(beta), n.to_string(), name.clone(), num(*v), String::new()]);
            }
        }
        let column = |j: usize| rows.iter().map(|r| r[j].1).collect::<Vec<f64>>();
        let f = column(0);
        let (p, p_se) = mean_stderr(&f);
        let variance = f.iter().map(|x| (x - p).powi(2)).sum::<f64>() / (k as f64 - 1.0);
        let c = log_mgf(&config.polymer.field, beta)?;
        let stats = (1..rows[0].len())
            .map(|j| {
                let (m, se) = mean_stderr(&column(j));
                (rows[0][j].0.clone(), m, se)
            })
            .collect();
        let s = BetaSummary {
            beta,
            c,
            p,
            p_se,
            variance,
            stats,
        };
        let agg = |name: &str, v: f64, se: Option<f64>| {
            let se = se.map_or(String::new(), num);
            vec!["sweep".into(), "all".into(), num(beta), n.to_string(), name.into(), num(v), se]
        };
        long.push(agg("p_hat", s.p, Some(s.p_se)));
        long.push(agg("lyapunov", s.c - s.p, Some(s.p_se)));
        long.push(agg("F_variance", s.variance, None));
        for (name, m, se) in &s.stats {
            long.push(agg(name, *m, Some(*se)));
        }
        summaries.push(s);
    }

    let mut header: Vec<String> = [
        "beta", "seeds", "n", "c_beta", "p_hat", "p_hat_stderr", "lyapunov", "lyapunov_stderr", "F_variance",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for (name, _, _) in &summaries[0].stats {
        header.push(name.clone());
        header.push(format!("{name}_stderr"));
    }
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let mut r = vec![
                num(s.beta),
                k.to_string(),
                n.to_string(),
                num(s.c),
                num(s.p),
                num(s.p_se),
                num(s.c - s.p),
                num(s.p_se),
                num(s.variance),
            ];
            for (_, m, se) in &s.stats {
                r.push(num(*m));
                r.push(num(*se));
            }
            r
        })
        .collect();
    write_csv(&out.join("summary.csv"), &header, &rows)?;

    let long_header: Vec<String> = ["experiment", "seed", "beta", "n", "statistic", "value", "stderr"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(&out.join("results.csv"), &long_header, &long)?;

    // Λ is nondecreasing in β: flag consecutive pairs that drop by more
    // than three combined standard errors
    let mut mono = Vec::new();
    for w in summaries.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (la, lb) = (a.c - a.p, b.c - b.p);
        let tol = 3.0 * (a.p_se.powi(2) + b.p_se.powi(2)).sqrt();
        let ok = lb >= la - tol;
        println!(
            "lyapunov {} -> {}: {} -> {} (tolerance {}) {}",
            num(a.beta),
            num(b.beta),
            num(la),
            num(lb),
            num(tol),
            if ok { "ok" } else { "DECREASING" }
        );
        mono.push(vec![num(a.beta), num(b.beta), num(la), num(lb), num(tol), ok.to_string()]);
    }
    let mono_header: Vec<String> = ["beta_lo", "beta_hi", "lyapunov_lo", "lyapunov_hi", "tolerance", "nondecreasing"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(&out.join("monotonicity.csv"), &mono_header, &mono)?;
    let files = ["summary.csv", "results.csv", "monotonicity.csv"].map(String::from);
    write_manifest(out, "sweep", config_text, &seeds, &files)
}
