use std::path::{Path, PathBuf};
use std::process::Command;

use bimlta::simulation::{generate, Scenario};
use bimlta_cli::{run, save_incidence};
use serde_json::Value;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run_with(config: &Path, extra: &[&str]) -> i32 {
    let mut argv = vec!["bimlta".to_string(), "--config".into(), config.display().to_string()];
    argv.extend(extra.iter().map(|s| s.to_string()));
    run(argv)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_on_the_toy_matrix() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "y.csv", "id,c1,c2\na,1,0\nb,0,1\n");
    let config = write(
        dir.path(),
        "run.toml",
        "mode = \"fit\"\nincidence = \"y.csv\"\noutput = \"report.json\"\n",
    );
    assert_eq!(run_with(&config, &["--G", "1", "--D", "1", "--starts", "2", "--tol", "1e-12"]), 0);
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["schema"], "bimlta.fit_report");
    assert_eq!(report["config"]["n_starts"], 2);
    assert_eq!(report["sending"][1]["label"], "b");
    assert_eq!(report["sending"][1]["component"], 1);
    // one success in each row and column: the fitted block probability is 1/2
    let mean = report["blocks"][0]["mean_probability"].as_f64().unwrap();
    assert!((mean - 0.5).abs() < 1e-6, "{mean}");
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "y.csv", "id,c1,c2,c3\na,1,0,1\nb,0,1,1\nc,1,1,0\n");
    let config = write(
        dir.path(),
        "run.toml",
        "mode = \"fit\"\nincidence = \"y.csv\"\n[model]\ncomponents = 1\nsegments = 1\nn_starts = 1\nseed = 5\n",
    );
    let out = dir.path().join("o.json");
    let out_arg = out.display().to_string();
    assert_eq!(
        run_with(&config, &["--Q", "4", "--seed", "11", "--tol", "1e-6", "--out", &out_arg]),
        0
    );
    let report = read_json(&out);
    assert_eq!(report["config"]["quadrature_points"], 4);
    assert_eq!(report["config"]["seed"], 11);
    assert_eq!(report["config"]["tol"], 1e-6);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let output = Command::new(env!("CARGO_BIN_EXE_bimlta"))
        .args(["--config", "run.toml", "--bogus"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("Usage"));
}

#[test]
fn missing_mode_and_bad_settings_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "y.csv", "id,c1,c2\na,1,0\nb,0,1\n");
    let config = write(dir.path(), "run.toml", "incidence = \"y.csv\"\n");
    assert_eq!(run_with(&config, &[]), 1);
    assert_eq!(run_with(&config, &["--mode", "fit", "--D", "3"]), 1);
    let typo = write(
        dir.path(),
        "typo.toml",
        "mode = \"fit\"\nincidence = \"y.csv\"\n[model]\ncomponent = 2\n",
    );
    assert_eq!(run_with(&typo, &[]), 1);
}

#[test]
fn file_problems_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "run.toml", "mode = \"fit\"\nincidence = \"absent.csv\"\n");
    assert_eq!(run_with(&config, &[]), 3);
    write(dir.path(), "bad.csv", "id,c1\na,2\n");
    let config = write(dir.path(), "bad.toml", "mode = \"fit\"\nincidence = \"bad.csv\"\n");
    assert_eq!(run_with(&config, &[]), 3);
    assert_eq!(run_with(&dir.path().join("no_such.toml"), &["--mode", "fit"]), 3);
}

#[test]
fn select_reports_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&Scenario::three_by_two(60, 8).with_seed(3), 0).unwrap();
    save_incidence(&data.y, &dir.path().join("y.csv")).unwrap();
    let config = write(
        dir.path(),
        "run.toml",
        "mode = \"select\"\nincidence = \"y.csv\"\noutput = \"grid.json\"\n[model]\nn_starts = 2\n[select]\ncomponents = [1, 2]\nsegments = [1, 2]\n",
    );
    assert_eq!(run_with(&config, &[]), 0);
    let grid = read_json(&dir.path().join("grid.json"));
    assert_eq!(grid["schema"], "bimlta.selection_report");
    assert_eq!(grid["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn binarize_mode_writes_an_incidence_file() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "raw.csv", "patient,Alvarado,WBC\np1,4,7.0\np2,,12\np3,2,15\n");
    write(
        dir.path(),
        "rules.json",
        r#"[{"column": "Alvarado", "kind": "greater_than", "threshold": 3},
            {"column": "WBC", "kind": "outside_range", "lower": 4.5, "upper": 11}]"#,
    );
    let config = write(
        dir.path(),
        "run.toml",
        "mode = \"binarize\"\noutput = \"y.csv\"\n[binarize]\ntable = \"raw.csv\"\nrules = \"rules.json\"\n",
    );
    assert_eq!(run_with(&config, &[]), 0);
    let y = bimlta_cli::load_incidence(&dir.path().join("y.csv")).unwrap();
    assert_eq!(y.sending_labels(), ["p1", "p3"]);
    assert_eq!(y.data(), &ndarray::array![[1u8, 0], [0, 1]]);
}

#[test]
fn simulate_mode_runs_a_small_study() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "run.toml",
        "mode = \"simulate\"\noutput = \"study.json\"\n[model]\nn_starts = 2\n\
         [simulate]\nn_sending = 40\nn_receiving = 6\ncomponents = 2\nsegments = 2\nb = [-1.0, 1.0]\nmu = [-1.0, 1.0]\n\
         beta = [[0.5, -0.2]]\nn_replicates = 2\nseed = 9\n",
    );
    assert_eq!(run_with(&config, &[]), 0);
    let first = std::fs::read(dir.path().join("study.json")).unwrap();
    let study: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(study["study"]["replicates"].as_array().unwrap().len(), 2);
    assert_eq!(run_with(&config, &[]), 0);
    assert_eq!(std::fs::read(dir.path().join("study.json")).unwrap(), first);
}
