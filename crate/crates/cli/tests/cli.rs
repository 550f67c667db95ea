use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tscc::modelgen::Dataset;

fn tscc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tscc"))
        .current_dir(dir)
        .env_remove("TSCC_OUTPUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tscc(dir, args);
    assert!(
        out.status.success(),
        "tscc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn clean_lines(dir: &Path) {
    ok(dir, &["generate", "--model", "three_lines", "--noise", "0", "--seed", "7", "-o", "lines.csv"]);
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate", "--model", "three_lines", "--noise", "0", "--seed", "7", "-o", "a.csv"]);
    ok(dir.path(), &["generate", "--model", "three_lines", "--noise", "0", "--seed", "7", "-o", "b.csv"]);
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());

    let data = Dataset::read_csv(a.as_slice(), "a").unwrap();
    assert_eq!(data.n(), 75);
    assert_eq!(data.truth.unwrap().sizes(), vec![25, 25, 25]);
}

#[test]
fn generate_from_written_model_file_reproduces_data() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate", "--model", "two_lines_80_20", "--noise", "0.01", "--seed", "3", "-o", "m.csv"]);
    ok(dir.path(), &["generate", "--config", "m.model.toml", "-o", "again.csv"]);
    assert_eq!(
        fs::read(dir.path().join("m.csv")).unwrap(),
        fs::read(dir.path().join("again.csv")).unwrap()
    );
}

#[test]
fn cluster_clean_three_lines_without_errors() {
    let dir = TempDir::new().unwrap();
    clean_lines(dir.path());
    ok(dir.path(), &["cluster", "--input", "lines.csv", "--d", "1", "--K", "3", "--sigma", "1e-5"]);
    let m = json(dir.path().join("lines.metrics.json"));
    assert_eq!(m["misclassification"]["count"], 0);
    assert_eq!(m["cluster_sizes"], serde_json::json!([25, 25, 25]));

    let labels = fs::read(dir.path().join("lines.labels.csv")).unwrap();
    let back = Dataset::read_csv(labels.as_slice(), "labels").unwrap();
    assert_eq!(back.n(), 75);
}

#[test]
fn cluster_is_deterministic() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate", "--model", "three_lines", "--noise", "0.025", "--seed", "7", "-o", "noisy.csv"]);
    let args = ["cluster", "--input", "noisy.csv", "--d", "1", "--K", "3", "--sigma", "0.184", "--seed", "4"];
    ok(dir.path(), &args);
    let first = fs::read(dir.path().join("noisy.labels.csv")).unwrap();
    let first_metrics = fs::read(dir.path().join("noisy.metrics.json")).unwrap();
    ok(dir.path(), &args);
    assert_eq!(first, fs::read(dir.path().join("noisy.labels.csv")).unwrap());
    assert_eq!(first_metrics, fs::read(dir.path().join("noisy.metrics.json")).unwrap());
}

#[test]
fn sweep_writes_one_run_per_grid_point() {
    let dir = TempDir::new().unwrap();
    clean_lines(dir.path());
    ok(
        dir.path(),
        &[
            "cluster", "--input", "lines.csv", "--d", "1", "--K", "3", "--sigma", "1",
            "--sweep", "sigma=0.05,0.1", "--sweep", "seed=1,2",
        ],
    );
    let summary = json(dir.path().join("lines.sweep.json"));
    let entries = summary.as_array().unwrap();
    assert_eq!(entries.len(), 4);
    for e in entries {
        assert!(e.get("error").is_none());
        assert_eq!(e["files"].as_array().unwrap().len(), 2);
    }
    assert!(dir.path().join("lines.sigma-0.1.seed-2.metrics.json").exists());
}

#[test]
fn diagnose_reports_identities_on_clean_lines() {
    let dir = TempDir::new().unwrap();
    clean_lines(dir.path());
    ok(dir.path(), &["diagnose", "--input", "lines.csv", "--d", "1", "--K", "3", "--sigma", "1e-5"]);
    let r = json(dir.path().join("lines.diagnose.json"));
    let tv = r["total_variation"].as_f64().unwrap();
    let dist = r["subspace_distance"].as_f64().unwrap();
    assert!((dist * dist - 2.0 * tv).abs() < 1e-9);
    let sines: f64 = r["principal_angles"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_f64().unwrap().sin().powi(2))
        .sum();
    assert!((dist * dist - 2.0 * sines).abs() < 1e-9);
    assert_ne!(r["perturbation"]["status"]["status"], "violated");
    assert!(r["epsilon2_ball"]["holds"].as_bool().unwrap());
}

#[test]
fn incidence_orthogonal_lines_within_bound() {
    let dir = TempDir::new().unwrap();
    ok(
        dir.path(),
        &["incidence", "--example", "orthogonal-lines-tscc", "--L", "1", "--sigma", "0.1", "--samples", "100000"],
    );
    let rows = json(dir.path().join("incidence-orthogonal_lines_tscc.json"));
    let row = &rows[0];
    let value = row["value"].as_f64().unwrap();
    let se = row["std_error"].as_f64().unwrap();
    assert!(value <= 0.070711 + 3.0 * se, "{value} +- {se}");
    assert!((row["bound"].as_f64().unwrap() - 0.0707107).abs() < 1e-6);
    assert_eq!(row["holds"], true);
}

#[test]
fn incidence_single_measure_gives_moments() {
    let dir = TempDir::new().unwrap();
    ok(
        dir.path(),
        &["incidence", "--measure", "segment:L=1", "--d", "0", "--samples", "20000", "-o", "m.json"],
    );
    let r = json(dir.path().join("m.json"));
    let polar = r["moments"][0]["value"].as_f64().unwrap();
    assert!((polar - 1.0 / 3f64.sqrt()).abs() < 0.02, "{polar}");
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tscc"))
        .current_dir(dir.path())
        .env("TSCC_OUTPUT_DIR", "results")
        .args(["generate", "--model", "three_lines", "--seed", "7"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("results/three_lines.csv").exists());
}

#[test]
fn exit_codes_follow_the_documented_map() {
    let dir = TempDir::new().unwrap();
    clean_lines(dir.path());
    let code = |args: &[&str]| tscc(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["cluster", "--input", "lines.csv", "--d", "1"]), 1);
    assert_eq!(code(&["cluster", "--input", "lines.csv", "--d", "1", "--K", "3", "--sigma", "-1"]), 2);
    assert_eq!(code(&["generate", "--model", "nonsense"]), 2);
    assert_eq!(code(&["cluster", "--input", "missing.csv", "--d", "1", "--K", "3", "--sigma", "1"]), 4);

    ok(dir.path(), &["generate", "--model", "three_lines", "--seed", "7", "-o", "raw.csv"]);
    let text = fs::read_to_string(dir.path().join("raw.csv")).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| l.rsplitn(2, ',').nth(1).unwrap().to_string() + "\n")
        .collect();
    fs::write(dir.path().join("unlabelled.csv"), stripped).unwrap();
    assert_eq!(code(&["diagnose", "--input", "unlabelled.csv", "--d", "1", "--K", "3", "--sigma", "1"]), 2);

    // every point coincides: all curvatures vanish and so do all affinities
    fs::write(dir.path().join("same.csv"), "x1,x2\n0,0\n0,0\n0,0\n0,0\n").unwrap();
    let c = code(&["cluster", "--input", "same.csv", "--d", "1", "--K", "2", "--sigma", "1"]);
    assert!(c == 2 || c == 3, "exit {c}");
}

#[test]
fn reproduce_fig1_eigenvalues() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["reproduce", "fig1"]);
    let text = fs::read_to_string(dir.path().join("fig1/eigenvalues.csv")).unwrap();
    let ev: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(ev[..3].iter().all(|&x| x > 0.999));
    assert!(ev[3] < 0.1);
    let r = json(dir.path().join("fig1/report.json"));
    assert_eq!(r["diagnostics"]["run"]["misclassification"]["count"], 0);
}

#[test]
fn reproduce_ex51_rows_respect_the_bound() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["reproduce", "ex51"]);
    let rows = json(dir.path().join("ex51/table.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let v = r["value"].as_f64().unwrap();
        let b = r["bound"].as_f64().unwrap();
        let se = r["std_error"].as_f64().unwrap();
        assert!(v <= b + 3.0 * se);
    }
    assert!(dir.path().join("ex51/table.csv").exists());
}

#[test]
fn reproduce_utv_records_the_ordering() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["reproduce", "utv"]);
    let r = json(dir.path().join("utv/report.json"));
    assert!(r["ordering_holds"].is_boolean());
    for space in ["u", "t", "v"] {
        assert!(r[space]["beta"].as_f64().unwrap() >= 0.0);
        assert!(dir.path().join(format!("utv/embedding_{space}.csv")).exists());
    }
}

#[test]
fn reproduce_spectra_matches_dense_eigenvalues() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["reproduce", "spectra"]);
    let cases = json(dir.path().join("spectra/spectra.json"));
    let cases = cases.as_array().unwrap();
    assert!(!cases.is_empty());
    for c in cases {
        let scale = c["trace_dense"].as_f64().unwrap().abs().max(1.0);
        assert!(c["max_abs_error"].as_f64().unwrap() <= 1e-9 * scale, "{c}");
        assert!((c["trace_closed_form"].as_f64().unwrap() - c["trace_dense"].as_f64().unwrap()).abs() <= 1e-8 * scale);
    }
}
