//! `simulate`: one trajectory per seed with per-step diagnostics.

use std::path::Path;

use mvpolymer::environment::split_seed;
use mvpolymer::functionals::{diagnostics, energy_r, DiagnosticGrids, DiagnosticsRecord};
use mvpolymer::measures::{LayeredMeasure, Measure};
use mvpolymer::polymer::{free_energy, run_with, PolymerConfig, Trajectory};
use mvpolymer::serialize::{measure_to_json, Encoding};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{create_dir, num, write_csv, write_json, write_manifest};

/// A finished run: the trajectory (without stored measures), diagnostics of
/// `rho_0..rho_{n-1}` and the final measure `rho_n`.
pub struct ObservedRun {
    pub trajectory: Trajectory,
    pub records: Vec<DiagnosticsRecord>,
    pub last: Measure,
}

/// Runs the recursion computing diagnostics on the fly. With
/// `energy_samples > 0`, `R̂(rho_i)` uses fields under `split_seed(seed, i)`.
pub fn observe(config: &PolymerConfig, grids: &DiagnosticGrids, energy_samples: usize, seed: u64) -> CliResult<ObservedRun> {
    let n = config.n_steps;
    let mut records = Vec::with_capacity(n);
    let mut failure = None;
    let mut last = None;
    let trajectory = run_with(config, seed, |i, rho| {
        if failure.is_some() {
            return;
        }
        if i == n {
            last = Some(rho.clone());
            return;
        }
        let rec = diagnostics(i, rho, grids).and_then(|mut rec| {
            if energy_samples > 0 {
                let mu = LayeredMeasure::single(rho.clone())?;
                rec.energy = Some(energy_r(
                    &mu,
                    config.beta,
                    &config.field,
                    &config.step,
                    energy_samples,
                    split_seed(seed, i as u64),
                )?);
            }
            Ok(rec)
        });
        match rec {
            Ok(r) => records.push(r),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let last = last.ok_or_else(|| CliError::Numeric("run ended before the last step".into()))?;
    Ok(ObservedRun {
        trajectory,
        records,
        last,
    })
}

/// Column names for [`diagnostic_cells`].
pub fn diagnostic_columns(grids: &DiagnosticGrids, energy: bool) -> Vec<String> {
    let mut h = vec!["max_ball".to_string()];
    h.extend(grids.r.iter().map(|r| format!("I_r={}", num(*r))));
    for e in &grids.eps {
        h.extend(grids.r.iter().map(|r| format!("clustering_eps={}_r={}", num(*e), num(*r))));
    }
    h.extend(grids.density_eps.iter().map(|e| format!("density_clustering_eps={}", num(*e))));
    h.extend(grids.delta.iter().map(|d| format!("W_delta={}", num(*d))));
    h.push("G".into());
    h.push("Q".into());
    for d in &grids.delta {
        h.extend(grids.k.iter().map(|k| format!("in_G_delta={}_K={}", num(*d), num(*k))));
    }
    if energy {
        h.push("R_hat".into());
        h.push("R_hat_stderr".into());
    }
    h
}

/// Cells matching [`diagnostic_columns`]; density cells are empty for point
/// measures.
pub fn diagnostic_cells(rec: &DiagnosticsRecord, grids: &DiagnosticGrids, energy: bool) -> Vec<String> {
    let mut c = vec![num(rec.max_ball)];
    c.extend(rec.concentration.iter().map(|x| num(x.1)));
    c.extend(rec.clustering.iter().map(|x| num(x.2)));
    if rec.density_clustering.is_empty() {
        c.extend(grids.density_eps.iter().map(|_| String::new()));
    } else {
        c.extend(rec.density_clustering.iter().map(|x| num(x.1)));
    }
    let loc = &rec.localization;
    c.extend(loc.w.iter().map(|x| num(x.1)));
    c.push(num(loc.g));
    c.push(num(loc.q));
    c.extend(loc.indicators.iter().map(|x| u8::from(x.2).to_string()));
    if energy {
        let (r, se) = rec.energy.unwrap_or((f64::NAN, f64::NAN));
        c.push(num(r));
        c.push(num(se));
    }
    c
}

pub fn cmd_simulate(config: &RunConfig, config_text: &str, out: &Path) -> CliResult<()> {
    let polymer = config.at_beta(config.betas[0]);
    let energy = config.energy_samples > 0;
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    let runs: Vec<(u64, ObservedRun)> = seeds
        .par_iter()
        .map(|&s| observe(&polymer, &config.grids, config.energy_samples, s).map(|r| (s, r)))
        .collect::<CliResult<_>>()?;
    create_dir(out)?;

    let mut header: Vec<String> = ["seed", "beta", "i", "log_ratio", "F", "pruned", "support"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(diagnostic_columns(&config.grids, energy));
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut files = vec!["diagnostics.csv".to_string(), "summary.csv".to_string()];
    for (seed, run) in &runs {
        let t = &run.trajectory;
        let mut log_z = 0.0;
        for (i, rec) in run.records.iter().enumerate() {
            log_z += t.log_ratios[i];
            let mut row = vec![
                seed.to_string(),
                num(t.beta),
                i.to_string(),
                num(t.log_ratios[i]),
                num(log_z / (i + 1) as f64),
                num(t.diagnostics[i].pruned),
                t.diagnostics[i].support.to_string(),
            ];
            row.extend(diagnostic_cells(rec, &config.grids, energy));
            rows.push(row);
        }
        summary.push(vec![
            seed.to_string(),
            num(t.beta),
            t.len().to_string(),
            num(free_energy(t)?),
            num(t.log_partition()),
        ]);
        let name = format!("rho_final_{seed}.json");
        write_json(&out.join(&name), &measure_to_json(&run.last, Encoding::Hex))?;
        files.push(name);
    }
    write_csv(&out.join("diagnostics.csv"), &header, &rows)?;
    let summary_header: Vec<String> = ["seed", "beta", "n", "F_n", "log_Z_n"].iter().map(|s| s.to_string()).collect();
    write_csv(&out.join("summary.csv"), &summary_header, &summary)?;
    write_manifest(out, "simulate", config_text, &seeds, &files)
}
