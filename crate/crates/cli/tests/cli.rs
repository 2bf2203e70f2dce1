use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const GAUSSIAN: &str = r#"
[step]
kind = "gaussian"
variance = 1.0
spacing = 0.125

[field]
law = "gaussian"
range = 1.0
variance = 1.0
"#;

fn mvpolymer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvpolymer")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column<'a>(header: &[String], rows: &'a [Vec<String>], name: &str) -> Vec<&'a str> {
    let j = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[j].as_str()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate_config(beta: f64, n: usize, seeds: &str) -> String {
    format!(
        "[model]\nbeta = {beta}\nn_steps = {n}\nmode = \"grid\"\n{GAUSSIAN}\n[seeds]\n{seeds}\n\n[grids]\nr = [1.0]\neps = [1e-3]\ndensity_eps = [0.01]\ndelta = [0.3]\nk = [2.0]\n"
    )
}

#[test]
fn zero_temperature_run_has_one_row_per_step() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", &simulate_config(0.0, 10, "list = [5]"));
    let out = dir.path().join("out");
    let o = mvpolymer(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = csv_rows(&out.join("diagnostics.csv"));
    assert_eq!(rows.len(), 10);
    assert!(column(&h, &rows, "F").iter().all(|f| *f == "0"));
    assert_eq!(column(&h, &rows, "i"), (0..10).map(|i| i.to_string()).collect::<Vec<_>>());
    assert!(out.join("manifest.json").exists());
    assert!(out.join("rho_final_5.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", &simulate_config(1.0, 40, "master = 3\ncount = 2"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = mvpolymer(&["simulate", "--config", &cfg, "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut files: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files.len(), 5);
    for f in files {
        let (x, y) = (fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
        if f == "manifest.json" {
            let strip = |bytes: &[u8]| {
                let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
                v.as_object_mut().unwrap().remove("created_unix").unwrap();
                v
            };
            assert_eq!(strip(&x), strip(&y));
        } else {
            assert_eq!(x, y, "{f:?}");
        }
    }
}

#[test]
fn narrow_field_window_names_the_step() {
    let dir = TempDir::new().unwrap();
    let text = r#"
[model]
beta = 1.0
n_steps = 5
mode = "point"

[step]
kind = "atoms"
positions = [-1.0, 0.0, 1.0]

[field]
law = "gaussian"
range = 1.0
variance = 1.0

[window]
margin = 0.5
growth = 0.5

[seeds]
list = [1]
"#;
    let cfg = write(dir.path(), "c.toml", text);
    let o = mvpolymer(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("step 2"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_code_one_and_a_line() {
    let dir = TempDir::new().unwrap();
    let bad = simulate_config(1.0, 10, "list = [1]").replace("variance = 1.0\nspacing", "variance = -1.0\nspacing");
    let cfg = write(dir.path(), "bad.toml", &bad);
    let o = mvpolymer(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let line = bad.lines().position(|l| l.contains("-1.0")).unwrap() + 1;
    assert!(stderr(&o).contains(&format!("bad.toml:{line}:")), "{}", stderr(&o));
    assert!(!dir.path().join("o").exists());

    let o = mvpolymer(&["simulate", "--config", "/nonexistent.toml", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_reports_exact_zero_and_monotone_lyapunov() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "[model]\nbetas = [2.0, 0.0]\nn_steps = 150\nmode = \"grid\"\n{GAUSSIAN}\n[seeds]\nlist = [11, 12, 13]\n\n[grids]\nr = [1.0]\neps = [1e-3]\ndelta = [0.3]\nk = [2.0]\nk_quantile = [0.9]\n"
    );
    let cfg = write(dir.path(), "s.toml", &text);
    let out = dir.path().join("out");
    let o = mvpolymer(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = csv_rows(&out.join("summary.csv"));
    assert_eq!(column(&h, &rows, "beta"), ["0", "2"]);
    let lyap: Vec<f64> = column(&h, &rows, "lyapunov").iter().map(|x| x.parse().unwrap()).collect();
    let se: Vec<f64> = column(&h, &rows, "lyapunov_stderr").iter().map(|x| x.parse().unwrap()).collect();
    assert_eq!(lyap[0], 0.0);
    assert!(lyap[1] >= lyap[0] - 3.0 * se[1]);
    for name in ["loc_density_delta=0.3_K=2", "loc_density_delta=0.3_q=0.9"] {
        for v in column(&h, &rows, name) {
            let v: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "{name} = {v}");
        }
    }
    let (lh, long) = csv_rows(&out.join("results.csv"));
    assert_eq!(lh, ["experiment", "seed", "beta", "n", "statistic", "value", "stderr"]);
    assert!(long.iter().all(|r| r[5] == "inf" || r[5].parse::<f64>().is_ok_and(f64::is_finite)));
    let (_, mono) = csv_rows(&out.join("monotonicity.csv"));
    assert_eq!(mono.len(), 1);
    assert_eq!(mono[0][5], "true");
}

#[test]
fn sweep_needs_two_betas_and_two_seeds() {
    let dir = TempDir::new().unwrap();
    for (betas, seeds) in [("[0.0]", "[1, 2]"), ("[0.0, 1.0]", "[1]"), ("[1.0, 1.0]", "[1, 2]")] {
        let text = format!("[model]\nbetas = {betas}\nn_steps = 5\nmode = \"grid\"\n{GAUSSIAN}\n[seeds]\nlist = {seeds}\n");
        let cfg = write(dir.path(), "s.toml", &text);
        let o = mvpolymer(&["sweep", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{betas} {seeds}");
    }
}

#[test]
fn selftest_passes_and_catches_a_broken_plan() {
    let o = mvpolymer(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report = String::from_utf8(o.stdout).unwrap();
    assert!(report.lines().count() >= 10);
    assert!(report.lines().all(|l| l.starts_with("PASS")));

    let o = mvpolymer(&["selftest", "--budget", "3", "--inject", "broken-plan"]);
    assert_eq!(o.status.code(), Some(3));
    let report = String::from_utf8(o.stdout).unwrap();
    let fail = report.lines().find(|l| l.starts_with("FAIL")).unwrap();
    assert!(fail.contains("TransportPlan"), "{fail}");
    assert!(report.contains("instance: {"));
}

#[test]
fn diagnose_reads_a_saved_snapshot() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", &simulate_config(1.0, 20, "list = [9]"));
    let out = dir.path().join("out");
    assert!(mvpolymer(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let snap = out.join("rho_final_9.json");
    let o = mvpolymer(&["diagnose", "--snapshot", snap.to_str().unwrap(), "--grids", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("layer,statistic,value\n"));
    let mass: f64 = text
        .lines()
        .find(|l| l.starts_with(",total_mass,"))
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((mass - 1.0).abs() < 1e-12);
    assert!(text.contains("1,density_clustering_eps=0.01,"));

    let empty = write(dir.path(), "g.toml", "[grids]\nk = [1.0]\n");
    let o = mvpolymer(&["diagnose", "--snapshot", snap.to_str().unwrap(), "--grids", &empty]);
    assert_eq!(o.status.code(), Some(1));
    let junk = write(dir.path(), "j.json", "{\"kind\": \"blob\"}");
    let o = mvpolymer(&["diagnose", "--snapshot", &junk, "--grids", &cfg]);
    assert_eq!(o.status.code(), Some(1));
}
