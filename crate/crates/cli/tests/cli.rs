use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use latent_adjust_cli::{adjust_data, load_data, parse_methods, AdjustConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latent-adjust"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is a JSON error object")
}

fn column(table: &str, name: &str) -> Vec<String> {
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let j = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split('\t').nth(j).unwrap().to_string()).collect()
}

/// Ten features, six samples, one latent factor orthogonal to the design and
/// effects orthogonal to its loadings.
fn write_toy(dir: &Path) -> Vec<f64> {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let c = [1.0, -2.0, 1.0, 0.0, 0.0, 0.0];
    let l = [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let b = vec![1.0, -1.0, 0.0, 0.0, 0.0, 2.0, 0.0, -0.5, 0.0, 0.0];
    let mut y = String::from("gene\ts1\ts2\ts3\ts4\ts5\ts6\n");
    for g in 0..10 {
        y.push_str(&format!("g{g}"));
        for i in 0..6 {
            y.push_str(&format!("\t{}", b[g] * x[i] + l[g] * c[i]));
        }
        y.push('\n');
    }
    fs::write(dir.join("y.tsv"), y).unwrap();
    // Rows deliberately out of order: they are matched by sample id.
    let mut xs = String::from("sample\tdose\n");
    for i in (0..6).rev() {
        xs.push_str(&format!("s{}\t{}\n", i + 1, x[i]));
    }
    fs::write(dir.join("x.tsv"), xs).unwrap();
    b
}

#[test]
fn noiseless_toy_recovers_the_effects() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_toy(dir.path());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let out = run(&[
        "adjust", "--y", &p("y.tsv"), "--x", &p("x.tsv"), "--k", "1",
        "--out", &p("table.tsv"), "--summary", &p("summary.json"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("table.tsv")).unwrap();
    assert_eq!(column(&table, "feature_id")[0], "g0");
    let beta: Vec<f64> = column(&table, "beta_hat.dose").iter().map(|s| s.parse().unwrap()).collect();
    for (got, want) in beta.iter().zip(&b) {
        assert!((got - want).abs() < 1e-10, "{beta:?}");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["n"], 6);
    assert_eq!(summary["p"], 10);
}

#[test]
fn zero_factors_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let out = run(&[
        "adjust", "--y", &p("y.tsv"), "--x", &p("x.tsv"), "--k", "0",
        "--out", &p("table.tsv"), "--summary", &p("summary.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
    assert!(!dir.path().join("table.tsv").exists());
}

#[test]
fn missing_flag_and_bad_input_are_reported_as_json() {
    let out = run(&["adjust", "--k", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");

    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("y.tsv"), "id\ta\tb\ng1\t1\tNA\n").unwrap();
    fs::write(dir.path().join("x.tsv"), "id\tx\na\t1\nb\t2\n").unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let out = run(&[
        "adjust", "--y", &p("y.tsv"), "--x", &p("x.tsv"), "--k", "1",
        "--out", &p("t.tsv"), "--summary", &p("s.json"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert!(err["error"]["message"].as_str().unwrap().contains("line 2"), "{err}");
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = run(&["validate", "--suite", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
}

fn simulate(dir: &Path, name: &str) -> PathBuf {
    let config = dir.join("sim.cfg");
    fs::write(&config, "# small study\nn = 30\np = 300\nk = 4\nwrite_data = true\n").unwrap();
    let out_dir = dir.join(name);
    let out = run(&[
        "simulate", "--config", config.to_str().unwrap(), "--reps", "1", "--seed", "7",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out_dir
}

#[test]
fn simulation_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a");
    let b = simulate(dir.path(), "b");
    for name in ["report.json", "rep_000.tsv", "rep_000/y.tsv", "rep_000/x.tsv", "rep_000/z.tsv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let report: Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 7);
    assert_eq!(report["reps"].as_array().unwrap().len(), 1);
}

#[test]
fn adjusting_simulated_files_matches_the_in_memory_fit() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), "sim");
    let data_dir = sim.join("rep_000");
    let table = dir.path().join("table.tsv");
    let summary = dir.path().join("summary.json");
    let out = run(&[
        "adjust",
        "--y", data_dir.join("y.tsv").to_str().unwrap(),
        "--x", data_dir.join("x.tsv").to_str().unwrap(),
        "--z", data_dir.join("z.tsv").to_str().unwrap(),
        "--k", "4",
        "--methods", "adjusted_uncorrected,unadjusted",
        "--out", table.to_str().unwrap(),
        "--summary", summary.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let from_cli = fs::read_to_string(&table).unwrap();

    let mut cfg = AdjustConfig::new(data_dir.join("y.tsv"), data_dir.join("x.tsv"), 4);
    cfg.z = Some(data_dir.join("z.tsv"));
    cfg.methods = parse_methods("adjusted_uncorrected,unadjusted").unwrap();
    let in_memory = adjust_data(&load_data(&cfg).unwrap(), &cfg).unwrap();
    assert_eq!(from_cli, in_memory.table_tsv);

    // The experiment fitted the same data before writing it out.
    let rep = fs::read_to_string(sim.join("rep_000.tsv")).unwrap();
    assert_eq!(column(&from_cli, "beta_hat.group"), column(&rep, "adjusted_bias_corrected.beta"));
    assert_eq!(
        column(&from_cli, "adjusted_uncorrected.p.group"),
        column(&rep, "adjusted_uncorrected.p")
    );
}

#[test]
fn validate_runs_a_suite() {
    let out = run(&["validate", "--suite", "combinatorial", "--seed", "3"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.starts_with("PASS [9]"), "{stdout}");
}
