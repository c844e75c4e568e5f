use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bpire(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpire")).args(args).env_remove("BPIRE_OUT_DIR").output().expect("spawn bpire")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn poisson_model(dir: &Path, offspring: f64, immigration: f64) -> PathBuf {
    write(
        dir,
        "model.json",
        &json!({"atoms": [{"weight": 1.0,
            "offspring": {"kind": "poisson", "mean": offspring},
            "immigration": {"kind": "poisson", "mean": immigration}}]}),
    )
}

fn reference_model(dir: &Path) -> PathBuf {
    write(
        dir,
        "mstar.json",
        &json!({"atoms": [
            {"weight": 0.5, "offspring": {"kind": "linear_fractional", "a": 0.3, "b": 0.55},
             "immigration": {"kind": "poisson", "mean": 0.4}},
            {"weight": 0.5, "offspring": {"kind": "poisson", "mean": 2.2},
             "immigration": {"kind": "poisson", "mean": 0.4}}]}),
    )
}

fn config(dir: &Path, name: &str, model: &Path, experiment: &str, parameters: Value) -> PathBuf {
    write(dir, name, &json!({"model_file": model, "experiment": experiment, "parameters": parameters, "seed": 7}))
}

/// `(parameter, x, estimate)` rows and the trailing hash.
fn read_csv(path: &Path) -> (Vec<(String, f64, f64)>, String) {
    let body = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<&str> = body.lines().collect();
    let hash = lines.pop().unwrap().strip_prefix("# config_hash=").expect("trailing hash line").to_string();
    assert_eq!(lines[0], "experiment,parameter,x,estimate,std_error");
    let rows = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    (rows, hash)
}

#[test]
fn exactlaw_one_step_poisson_reproduces_poisson_masses() {
    let dir = tempfile::tempdir().unwrap();
    let model = poisson_model(dir.path(), 1.0, 0.5);
    let cfg = config(dir.path(), "exact.json", &model, "exactlaw", json!({"k": 1, "n": 1, "K": 30, "M": 64}));
    let out = dir.path().join("out");
    // Poisson(1) offspring is critical, so the assumption check must be bypassed.
    let refused = bpire(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&refused), 2, "{}", text(&refused.stderr));
    assert!(text(&refused.stderr).contains("--force"));

    let o = bpire(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--force"]);
    assert_eq!(code(&o), 0, "{}{}", text(&o.stdout), text(&o.stderr));
    assert!(text(&o.stdout).starts_with("PASS exactlaw"));
    let (rows, _) = read_csv(&out.join("exact.csv"));
    for route in ["series", "dft"] {
        let mut p = (-1.5f64).exp();
        let mut seen = 0;
        for (_, x, est) in rows.iter().filter(|r| r.0 == route) {
            if *x > 0.0 {
                p *= 1.5 / x;
            }
            if *x <= 20.0 {
                assert!((est - p).abs() < 1e-12, "{route} j={x}: {est} vs {p}");
                seen += 1;
            }
        }
        assert_eq!(seen, 21, "{route}");
    }
    let verdict: Value = serde_json::from_str(&std::fs::read_to_string(out.join("exact.json")).unwrap()).unwrap();
    assert_eq!(verdict["pass"], json!(true));
    assert_eq!(verdict["experiment"], json!("exactlaw"));
    assert_eq!(verdict["artifacts"].as_array().unwrap().len(), 2);
}

#[test]
fn rerun_gives_identical_hash_and_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let model = reference_model(dir.path());
    let cfg =
        config(dir.path(), "ext.json", &model, "extinction", json!({"k": 1, "n_list": {"from": 2, "to": 8}, "R": 300}));
    let mut seen = Vec::new();
    for (sub, workers) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(sub);
        let o =
            bpire(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers]);
        assert!(code(&o) <= 1, "{}", text(&o.stderr));
        seen.push(std::fs::read(out.join("ext.csv")).unwrap());
    }
    assert_eq!(seen[0], seen[1]);
    let (_, hash) = read_csv(&dir.path().join("a/ext.csv"));
    assert_eq!(hash.len(), 64);

    // Key order and whitespace in the config do not change the digest.
    let reordered = dir.path().join("reordered.json");
    std::fs::write(
        &reordered,
        format!(
            r#"{{ "seed": 7, "parameters": {{"R": 300, "n_list": {{"to": 8, "from": 2}}, "k": 1}},
                 "experiment": "extinction", "model_file": {:?} }}"#,
            model.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("c");
    bpire(&["run", "--config", reordered.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(read_csv(&out.join("reordered.csv")).1, hash);

    let o = bpire(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "8"]);
    assert!(code(&o) <= 1);
    assert_ne!(read_csv(&out.join("ext.csv")).1, hash);
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let model = poisson_model(dir.path(), 2.0, 0.5);
    let cfg = config(dir.path(), "law.json", &model, "exactlaw", json!({"k": 1, "n": 2, "K": 64, "M": 128}));
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_bpire"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("BPIRE_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(target.join("law.csv").exists() && target.join("law.json").exists());
}

#[test]
fn unknown_experiment_lists_registry() {
    let dir = tempfile::tempdir().unwrap();
    let model = reference_model(dir.path());
    let cfg = config(dir.path(), "foo.json", &model, "foo", json!({}));
    let o = bpire(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = text(&o.stderr);
    for name in bpire_cli::experiments::REGISTRY {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn missing_and_unknown_parameters_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let model = reference_model(dir.path());
    let cfg = config(dir.path(), "d.json", &model, "decay", json!({"k": 1}));
    let o = bpire(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = text(&o.stderr);
    assert!(err.contains("n_list") && err.contains("R"), "{err}");

    let cfg =
        config(dir.path(), "e.json", &model, "extinction", json!({"k": 1, "n_list": [2, 3], "R": 10, "theta": 1}));
    let o = bpire(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("theta"));
}

#[test]
fn seed_is_mandatory() {
    let dir = tempfile::tempdir().unwrap();
    let model = reference_model(dir.path());
    let cfg = write(
        dir.path(),
        "noseed.json",
        &json!({"model_file": model, "experiment": "exactlaw", "parameters": {"k": 1, "n": 2}}),
    );
    let o = bpire(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("seed"));
    let o = bpire(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bpire(&["validate", "--model", reference_model(dir.path()).to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
    let last = text(&ok.stdout).lines().last().unwrap().to_string();
    let report: Value = serde_json::from_str(&last).unwrap();
    assert_eq!(report["a_holds"], json!(true));

    let point = write(
        dir.path(),
        "point.json",
        &json!({"atoms": [{"weight": 1.0, "offspring": {"kind": "point_mass", "count": 1},
            "immigration": {"kind": "poisson", "mean": 0.4}}]}),
    );
    let bad = bpire(&["validate", "--model", point.to_str().unwrap()]);
    assert_eq!(code(&bad), 1);
    assert!(text(&bad.stdout).contains("failed: ") && text(&bad.stdout).contains("Assumption (A)"));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\n  \"atoms\": [\n    {\"weight\": 1.0,,}\n  ]\n}\n").unwrap();
    let o = bpire(&["validate", "--model", broken.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("line 3"), "{}", text(&o.stderr));
}

#[test]
fn suite_exit_code_counts_failures() {
    let dir = tempfile::tempdir().unwrap();
    let model = reference_model(dir.path());
    let out = dir.path().join("out");
    let run = |suite: &Path| bpire(&["suite", "--config", suite.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let empty = write(dir.path(), "empty.json", &json!({"configs": []}));
    let o = run(&empty);
    assert_eq!(code(&o), 0);
    assert_eq!(text(&o.stdout).lines().count(), 1);

    let a = config(dir.path(), "a.json", &model, "exactlaw", json!({"k": 1, "n": 5}));
    let b = config(dir.path(), "b.json", &model, "exactlaw", json!({"k": 2, "n": 8, "K": 256, "M": 256}));
    let c = config(dir.path(), "c.json", &model, "delta", json!({"k": 1, "n_list": [2, 12], "R": 2000, "p": 2}));
    let three = write(dir.path(), "three.json", &json!({"configs": [a, b, c]}));
    let o = run(&three);
    assert_eq!(code(&o), 0, "{}", text(&o.stdout));
    assert_eq!(text(&o.stdout).lines().filter(|l| l.contains(" pass ")).count(), 3);

    // A decreasing trend cannot come out of a reversed grid.
    let d = config(dir.path(), "d.json", &model, "delta", json!({"k": 1, "n_list": [12, 2], "R": 2000, "p": 2}));
    let failing = write(dir.path(), "failing.json", &json!({"configs": [a, d, b]}));
    let o = run(&failing);
    assert_eq!(code(&o), 1, "{}", text(&o.stdout));
    assert!(out.join("b.csv").exists());
}
