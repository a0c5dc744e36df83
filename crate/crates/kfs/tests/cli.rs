//! End-to-end checks of the command-line interface: exit codes, output
//! files, determinism, and input handling.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kfs_bin() -> &'static str {
    env!("CARGO_BIN_EXE_kfs")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kfs-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(kfs_bin())
        .args(args)
        .output()
        .expect("spawn kfs")
}

fn write_planted_csv(path: &Path, n: usize) {
    // feature f1 carries the response, f2..f4 are noise
    let mut s = String::from("f1,f2,f3,f4,y\n");
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
    };
    for _ in 0..n {
        let f: Vec<f64> = (0..4).map(|_| next()).collect();
        let y = f[0] + 0.1 * next();
        s.push_str(&format!("{},{},{},{},{}\n", f[0], f[1], f[2], f[3], y));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn missing_lambda_exits_2_with_usage() {
    let dir = tmp_dir("nolambda");
    let csv = dir.join("data.csv");
    write_planted_csv(&csv, 20);
    let out = run(&["select", csv.to_str().unwrap(), "--target", "y"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lambda"), "stderr: {stderr}");
    assert!(stderr.contains("Usage"), "stderr: {stderr}");
}

#[test]
fn select_tiny_csv_writes_result_and_manifest() {
    let dir = tmp_dir("select");
    let csv = dir.join("data.csv");
    write_planted_csv(&csv, 20);
    let before = fs::read(&csv).unwrap();
    let out = run(&[
        "select",
        csv.to_str().unwrap(),
        "--target",
        "y",
        "--lambda",
        "0.1",
        "--gamma",
        "0.05",
        "--seed",
        "3",
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/result.json")).unwrap()).unwrap();
    assert_eq!(result["schema"], "kfs/1");
    let support: Vec<u64> = result["support"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert!(!support.is_empty());
    assert!(
        support.iter().all(|&s| (1..=4).contains(&s)),
        "support {support:?}"
    );

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], "kfs/1");
    assert_eq!(manifest["command"], "select");
    assert!(manifest["input_digests"][0]["fnv64"].is_string());

    // inputs are never mutated
    assert_eq!(before, fs::read(&csv).unwrap());
}

#[test]
fn huge_gamma_selects_nothing() {
    let dir = tmp_dir("hugegamma");
    let csv = dir.join("data.csv");
    write_planted_csv(&csv, 20);
    let out = run(&[
        "select",
        csv.to_str().unwrap(),
        "--target",
        "y",
        "--lambda",
        "0.1",
        "--gamma",
        "1e9",
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/result.json")).unwrap()).unwrap();
    assert_eq!(result["support"].as_array().unwrap().len(), 0);
}

#[test]
fn select_is_idempotent_for_fixed_seed() {
    let dir = tmp_dir("idem");
    let csv = dir.join("data.csv");
    write_planted_csv(&csv, 20);
    for tag in ["a", "b"] {
        let out = run(&[
            "select",
            csv.to_str().unwrap(),
            "--target",
            "y",
            "--lambda",
            "0.1",
            "--seed",
            "11",
            "--out",
            dir.join(tag).to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read(dir.join("a/result.json")).unwrap();
    let b = fs::read(dir.join("b/result.json")).unwrap();
    assert_eq!(a, b, "result.json must be byte-identical across reruns");

    // manifests agree modulo the timing fields
    let mut ma: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("a/manifest.json")).unwrap()).unwrap();
    let mut mb: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("b/manifest.json")).unwrap()).unwrap();
    for m in [&mut ma, &mut mb] {
        let obj = m.as_object_mut().unwrap();
        obj.remove("started_unix");
        obj.remove("wall_clock_secs");
        obj.remove("outputs"); // paths differ by output directory
    }
    assert_eq!(ma, mb);
}

#[test]
fn hier_writes_rounds() {
    let dir = tmp_dir("hier");
    let csv = dir.join("data.csv");
    write_planted_csv(&csv, 30);
    let out = run(&[
        "hier",
        csv.to_str().unwrap(),
        "--target",
        "y",
        "--lambda",
        "0.1",
        "--gamma",
        "0.05",
        "--tau",
        "0.8",
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/result.json")).unwrap()).unwrap();
    assert_eq!(result["command"], "hier");
    assert!(!result["rounds"].as_array().unwrap().is_empty());
    assert!((result["config"]["tau"].as_f64().unwrap() - 0.8).abs() < 1e-15);
}

#[test]
fn hier_missing_lambda_exits_2() {
    let dir = tmp_dir("hiernolambda");
    let csv = dir.join("data.csv");
    write_planted_csv(&csv, 20);
    let out = run(&["hier", csv.to_str().unwrap(), "--target", "y"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_csv_reports_row_number() {
    let dir = tmp_dir("badcsv");
    let csv = dir.join("data.csv");
    fs::write(&csv, "a,b,y\n1.0,2.0,0.5\n1.0,oops,0.2\n").unwrap();
    let out = run(&[
        "select",
        csv.to_str().unwrap(),
        "--target",
        "y",
        "--lambda",
        "0.1",
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 3"), "stderr: {stderr}");

    fs::write(&csv, "a,b,y\n1.0,inf,0.5\n").unwrap();
    let out = run(&[
        "select",
        csv.to_str().unwrap(),
        "--target",
        "y",
        "--lambda",
        "0.1",
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn missing_target_column_exits_2() {
    let dir = tmp_dir("notarget");
    let csv = dir.join("data.csv");
    write_planted_csv(&csv, 10);
    let out = run(&[
        "select",
        csv.to_str().unwrap(),
        "--target",
        "nope",
        "--lambda",
        "0.1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tmp_dir("config");
    let csv = dir.join("data.csv");
    write_planted_csv(&csv, 20);
    fs::write(
        dir.join("kfs.conf"),
        "# selection settings\nlambda = 0.1\ngamma = 0.5\ntarget = y\nmax-iters = 40\n",
    )
    .unwrap();
    let out = run(&[
        "select",
        csv.to_str().unwrap(),
        "--config",
        dir.join("kfs.conf").to_str().unwrap(),
        "--gamma",
        "0.01",
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/result.json")).unwrap()).unwrap();
    // lambda came from the file, gamma from the flag
    assert!((result["config"]["lambda"].as_f64().unwrap() - 0.1).abs() < 1e-15);
    assert!((result["config"]["gamma"].as_f64().unwrap() - 0.01).abs() < 1e-15);
    assert_eq!(result["config"]["max_iters"].as_u64().unwrap(), 40);
}

#[test]
fn experiment_fig1_smoke_under_a_minute() {
    let dir = tmp_dir("fig1");
    let start = std::time::Instant::now();
    let out = run(&[
        "experiment",
        "--protocol",
        "fig1",
        "--n",
        "50",
        "--p",
        "20",
        "--trials",
        "2",
        "--seed",
        "5",
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    let elapsed = start.elapsed();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(elapsed.as_secs() < 60, "fig1 smoke took {elapsed:?}");
    let csv = fs::read_to_string(dir.join("run/results.csv")).unwrap();
    assert!(csv.starts_with("kernel,q,gamma,fpr,tpr_1,tpr_2,trials\n"));
    assert!(dir.join("run/results.json").exists());
    assert!(dir.join("run/manifest.json").exists());
}

#[test]
fn experiment_unknown_protocol_exits_2() {
    let out = run(&["experiment", "--protocol", "fig9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiment_rerun_is_byte_identical() {
    let dir = tmp_dir("rerun");
    for tag in ["a", "b"] {
        let out = run(&[
            "experiment",
            "--protocol",
            "fig2",
            "--n",
            "40",
            "--p",
            "6",
            "--trials",
            "2",
            "--seed",
            "9",
            "--out",
            dir.join(tag).to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(
        fs::read(dir.join("a/results.csv")).unwrap(),
        fs::read(dir.join("b/results.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir.join("a/results.json")).unwrap(),
        fs::read(dir.join("b/results.json")).unwrap()
    );
}

#[test]
fn experiment_trend_smoke() {
    let dir = tmp_dir("trend");
    let out = run(&[
        "experiment",
        "--protocol",
        "trend",
        "--p",
        "4",
        "--n-list",
        "40,80",
        "--n-ref",
        "320",
        "--trend-seeds",
        "2",
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.join("run/results.csv")).unwrap();
    assert!(csv.starts_with("n,sup_dev,seeds\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn gradcheck_defaults_pass() {
    let out = run(&["gradcheck"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("q=1"));
    assert!(stdout.contains("q=2"));
}

#[test]
fn gradcheck_single_point_is_trivially_ok() {
    let out = run(&["gradcheck", "--n", "1"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn mixture_kernel_flag_is_parsed() {
    let dir = tmp_dir("mixture");
    let csv = dir.join("data.csv");
    write_planted_csv(&csv, 20);
    let out = run(&[
        "select",
        csv.to_str().unwrap(),
        "--target",
        "y",
        "--kernel",
        "mixture:1:0.5,2:0.5",
        "--q",
        "1",
        "--lambda",
        "0.1",
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/result.json")).unwrap()).unwrap();
    assert_eq!(result["kernel"]["name"], "mixture");
    assert_eq!(result["kernel"]["atoms"].as_array().unwrap().len(), 2);

    // mixtures without --q are rejected
    let out = run(&[
        "select",
        csv.to_str().unwrap(),
        "--target",
        "y",
        "--kernel",
        "mixture:1:0.5",
        "--lambda",
        "0.1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn threads_flag_and_env_are_accepted() {
    let dir = tmp_dir("threads");
    let csv = dir.join("data.csv");
    write_planted_csv(&csv, 15);
    let out = run(&[
        "select",
        csv.to_str().unwrap(),
        "--target",
        "y",
        "--lambda",
        "0.1",
        "--threads",
        "1",
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let out = Command::new(kfs_bin())
        .env("KFS_THREADS", "1")
        .args([
            "select",
            csv.to_str().unwrap(),
            "--target",
            "y",
            "--lambda",
            "0.1",
            "--out",
            dir.join("run2").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    // same seed, different thread settings: identical results
    assert_eq!(
        fs::read(dir.join("run/result.json")).unwrap(),
        fs::read(dir.join("run2/result.json")).unwrap()
    );
}
