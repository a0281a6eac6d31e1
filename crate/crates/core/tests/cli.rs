use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fraccusum"));
    c.env_remove("FRACCUSUM_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("JSON on stdout")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

const PRE_CHANGE_CONFIG: &str = r#"
hurst = 0.5
regime = "pre_change"
replicates = 10000
master_seed = 2024

[grid]
step = 0.005
count = 4000

[drift]
family = "polynomial"
theta = 1.0
alpha = 0.0

[detector]
threshold = 1.0
"#;

#[test]
fn generate_writes_expected_rows() {
    let o = run(&[
        "generate", "--hurst", "0.5", "--steps", "1000", "--dt", "0.01", "--seed", "7",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,value"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1001);
    let first: Vec<f64> = rows[0].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first, vec![0.0, 0.0]);
    let last_t: f64 = rows[1000].split(',').next().unwrap().parse().unwrap();
    assert!((last_t - 10.0).abs() < 1e-12);
}

#[test]
fn generate_is_deterministic_and_reads_seed_from_env() {
    let args = [
        "generate", "--hurst", "0.3", "--steps", "200", "--dt", "0.05", "--seed", "11",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
    let env = bin()
        .args([
            "generate", "--hurst", "0.3", "--steps", "200", "--dt", "0.05",
        ])
        .env("FRACCUSUM_SEED", "11")
        .output()
        .unwrap();
    assert!(env.status.success());
    assert_eq!(env.stdout, a.stdout);
}

#[test]
fn generate_without_hurst_is_usage_error() {
    let o = run(&["generate", "--steps", "10", "--dt", "0.1", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn calibrate_examples() {
    let o = run(&["calibrate", "--gamma", "0.718281828"]);
    assert!(o.status.success());
    let c = json(&o)["c"].as_f64().unwrap();
    assert!((c - 1.0).abs() < 1e-8, "{c}");

    let o = run(&["calibrate", "--gamma", "1e-6"]);
    let v = json(&o);
    let c = v["c"].as_f64().unwrap();
    assert!((c / (2e-6f64).sqrt() - 1.0).abs() < 1e-3, "{c}");
    assert!((v["h"].as_f64().unwrap() - 1e-6).abs() < 1e-18);

    assert_eq!(run(&["calibrate", "--gamma", "0"]).status.code(), Some(2));
    assert_eq!(run(&["calibrate", "--gamma", "-3"]).status.code(), Some(2));
}

#[test]
fn detect_alarms_on_drifted_path_and_not_on_noise() {
    let dir = tempfile::tempdir().unwrap();
    let drifted = dir.path().join("drift.csv");
    let o = run(&[
        "generate",
        "--hurst",
        "0.7",
        "--steps",
        "2000",
        "--dt",
        "0.005",
        "--seed",
        "3",
        "--tau",
        "0",
        "--theta",
        "2",
        "--alpha",
        "0.2",
        "--out",
        drifted.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let o = run(&[
        "detect",
        drifted.to_str().unwrap(),
        "--hurst",
        "0.7",
        "--theta",
        "2",
        "--alpha",
        "0.2",
        "--threshold",
        "1",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v = json(&o);
    assert_eq!(v["stopped"], true);
    assert!(v["stop_time"].as_f64().unwrap() > 0.0);

    let noise = dir.path().join("noise.csv");
    run(&[
        "generate",
        "--hurst",
        "0.7",
        "--steps",
        "500",
        "--dt",
        "0.01",
        "--seed",
        "4",
        "--out",
        noise.to_str().unwrap(),
    ]);
    let o = run(&[
        "detect",
        noise.to_str().unwrap(),
        "--hurst",
        "0.7",
        "--threshold",
        "1e6",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(json(&o)["stopped"], false);
}

#[test]
fn detect_bridge_mode_and_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.csv");
    run(&[
        "generate",
        "--hurst",
        "0.5",
        "--steps",
        "4000",
        "--dt",
        "0.005",
        "--seed",
        "9",
        "--tau",
        "0",
        "--out",
        file.to_str().unwrap(),
    ]);
    let args = [
        "detect",
        file.to_str().unwrap(),
        "--hurst",
        "0.5",
        "--gamma",
        "5",
        "--monitoring",
        "bridge",
        "--seed",
        "1",
    ];
    let a = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, run(&args).stdout);
    let v = json(&a);
    assert_eq!(v["monitoring"], "bridge");
}

#[test]
fn detect_reports_line_of_truncated_row() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.csv");
    std::fs::write(&file, "time,value\n0,0\n0.1,0.3\n0.2\n0.3,0.1\n").unwrap();
    let o = run(&[
        "detect",
        file.to_str().unwrap(),
        "--hurst",
        "0.5",
        "--threshold",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":4:"));
}

#[test]
fn experiment_reports_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &PRE_CHANGE_CONFIG.replace("replicates = 10000", "replicates = 300"),
    );
    let mut reports = Vec::new();
    for w in ["1", "8"] {
        let out = dir.path().join(format!("w{w}"));
        let o = run(&[
            "experiment",
            &cfg,
            "--workers",
            w,
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(std::fs::read(out.join("report.json")).unwrap());
        assert!(out.join("report.csv").exists());
        assert!(out.join("replicates.csv").exists());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn experiment_pre_change_matches_h() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PRE_CHANGE_CONFIG);
    let out = dir.path().join("out");
    let o = run(&[
        "experiment",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "--workers",
        "4",
    ]);
    assert!(o.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let est = report["estimands"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["name"] == "half_qv_at_stop")
        .unwrap();
    let z = est["z_score"].as_f64().unwrap();
    assert!(z.abs() < 3.0, "z = {z}");
    assert!(stdout(&o).contains("half_qv_at_stop"));
    assert_eq!(report["config"]["horizon"].as_f64(), Some(20.0));
}

#[test]
fn experiment_flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PRE_CHANGE_CONFIG);
    let out = dir.path().join("out");
    let o = run(&[
        "experiment",
        &cfg,
        "--replicates",
        "20",
        "--grid-count",
        "500",
        "--gamma",
        "2",
        "--regime",
        "post-change-at-zero",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_replicates"], 20);
    assert_eq!(report["config"]["grid"]["count"], 500);
    assert_eq!(report["config"]["regime"], "post_change_at_zero");
    assert!(report["config"]["detector"]["gamma"].is_number());
}

#[test]
fn experiment_error_exits() {
    assert_eq!(
        run(&["experiment", "/nonexistent/exp.toml"]).status.code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &format!("{PRE_CHANGE_CONFIG}\nhorizon = 3.0\n"));
    let bad = {
        // `horizon` after a table would belong to [detector]; rewrite it at the top.
        let text = std::fs::read_to_string(&bad)
            .unwrap()
            .replace("\nhorizon = 3.0\n", "");
        std::fs::write(&bad, format!("horizon = 3.0\n{text}")).unwrap();
        bad
    };
    let o = run(&[
        "experiment",
        &bad,
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));

    let cfg = write_config(
        dir.path(),
        &PRE_CHANGE_CONFIG.replace("replicates = 10000", "replicates = 200"),
    );
    let o = run(&[
        "experiment",
        &cfg,
        "--strict",
        "0",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn validate_fast_with_hurst_list() {
    let o = run(&["validate", "--fast", "--hurst-list", "0.3,0.5,0.75"]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    for h in ["0.3", "0.5", "0.75"] {
        assert!(text.contains(&format!("zeta_variance[H={h}]")), "{text}");
    }
    assert!(!text.contains("FAIL"));
}
