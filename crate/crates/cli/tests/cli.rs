use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rfvlc-alloc"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rfvlc-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("scenario.json");
    fs::write(
        &path,
        r#"{"seed": 99, "user_count": 6, "subchannels_per_ap": 8}"#,
    )
    .unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} ")))
        .unwrap_or_else(|| panic!("no '{key}' in output:\n{text}"))
        .to_string()
}

#[test]
fn run_prints_metrics_and_writes_dumps() {
    let dir = scratch("run");
    let scenario = small_scenario(&dir);
    let out = bin()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .args(["--scheme", "proposed-iterative", "--seed", "4"])
        .arg("--dump-channels")
        .arg(dir.join("ch.csv"))
        .arg("--dump-matching")
        .arg(dir.join("m.csv"))
        .arg("--dump-pareto")
        .arg(dir.join("p.csv"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert_eq!(field(&text, "seed"), "4");
    let ee: f64 = field(&text, "ee").parse().unwrap();
    let rate: f64 = field(&text, "sum_rate_bps").parse().unwrap();
    let power: f64 = field(&text, "total_power_w").parse().unwrap();
    assert!(ee > 0.0);
    assert!((ee - rate / power).abs() <= 1e-9 * ee);

    let ch = fs::read_to_string(dir.join("ch.csv")).unwrap();
    assert!(ch.starts_with("ap_kind,ap_idx,user_idx,subch_idx,gain,rho"));
    let m = fs::read_to_string(dir.join("m.csv")).unwrap();
    assert_eq!(m.lines().count(), 1 + 6);
    let p = fs::read_to_string(dir.join("p.csv")).unwrap();
    assert!(p.starts_with("lambda,"));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn seed_flag_overrides_file_and_is_reproducible() {
    let dir = scratch("seed");
    let scenario = small_scenario(&dir);
    let go = |seed: &str| {
        let out = bin()
            .args(["run", "--scenario"])
            .arg(&scenario)
            .args(["--scheme", "scg-scg-epa", "--seed", seed])
            .output()
            .unwrap();
        assert!(out.status.success());
        let text = stdout(&out);
        (field(&text, "seed"), field(&text, "ee"))
    };
    let a = go("11");
    assert_eq!(a.0, "11");
    assert_eq!(a, go("11"));
    assert_ne!(a.1, go("12").1);
    fs::remove_dir_all(dir).ok();
}

#[test]
fn sweep_writes_one_row_per_run() {
    let dir = scratch("sweep");
    let scenario = small_scenario(&dir);
    let csv = dir.join("out.csv");
    let out = bin()
        .args(["sweep", "--param", "circuit", "--values", "0.5,1"])
        .args([
            "--schemes",
            "scg-scg-epa,proposed-oneshot",
            "--seeds",
            "0..3",
        ])
        .arg("--scenario")
        .arg(&scenario)
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep_param,sweep_value,scheme,seed,sum_rate_bps,total_power_w,ee,outage_count,iterations,wall_time_s"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 2 * 3);
    assert!(rows.iter().all(|r| r[0] == "circuit" && r.len() == 10));
    assert_eq!(rows[0][1..4], ["0.5", "scg-scg-epa", "0"]);
    assert_eq!(rows[3][1..4], ["0.5", "proposed-oneshot", "0"]);
    fs::remove_dir_all(dir).ok();
}

#[test]
fn oracle_compares_and_refuses_large_grids() {
    let out = bin()
        .args(["oracle", "--levels", "3", "--seed", "2"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(field(&text, "oracle_ee").parse::<f64>().unwrap() > 0.0);

    let out = bin().args(["oracle", "--levels", "50"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));

    let dir = scratch("oracle");
    let big = small_scenario(&dir);
    let out = bin()
        .args(["oracle", "--levels", "3", "--scenario"])
        .arg(&big)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn bad_input_fails_without_special_code() {
    let out = bin()
        .args([
            "run",
            "--scenario",
            "/nonexistent.json",
            "--scheme",
            "scg-scg-epa",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin()
        .args([
            "sweep",
            "--param",
            "bogus",
            "--values",
            "1",
            "--schemes",
            "scg-scg-epa",
        ])
        .args(["--seeds", "0..1", "--out", "/dev/null"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
