use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aoi_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi-sim")).args(args).output().unwrap()
}

fn write_spec(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
name = "small"
seed = 3
horizon = 300
replications = 4
m = 2
service = "exp(rate=1)"
sweep = { axis = "rho", values = [0.5, 1.5] }
policies = [{ name = "prmp-lgfs-r", r = [1, 2] }, { name = "non-prmp-lgfs-r", buffer = [1] }]
metrics = ["time_avg", "avg_peak", "penalty(indicator,d=2)"]
"#;

#[test]
fn run_writes_csv_into_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("results");
    let o = aoi_sim(&["run", &spec, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("small.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("sweep_value,policy,r,B,metric,mean,se,replications,seed_base")
    );
    // 2 sweep values x 3 policy cells x 3 metrics
    assert_eq!(lines.count(), 18);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "small.toml", SMALL);
    let one = aoi_sim(&["run", &spec, "--threads", "1"]);
    let two = aoi_sim(&["run", &spec, "--threads", "2"]);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, two.stdout);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(aoi_sim(&["run", "/nonexistent/spec.toml"]).status.code(), Some(2));

    let bad_dist = write_spec(dir.path(), "bad.toml", &SMALL.replace("exp(rate=1)", "exp(rate=-1)"));
    assert_eq!(aoi_sim(&["run", &bad_dist]).status.code(), Some(2));

    let lcfs = SMALL.replace(
        r#"{ name = "non-prmp-lgfs-r", buffer = [1] }"#,
        r#"{ name = "lcfs-p", r = [2] }"#,
    );
    let lcfs = write_spec(dir.path(), "lcfs.toml", &lcfs);
    assert_eq!(aoi_sim(&["run", &lcfs]).status.code(), Some(2));

    assert_eq!(aoi_sim(&["verify", "no-such-suite"]).status.code(), Some(2));
    let small = write_spec(dir.path(), "small.toml", SMALL);
    assert_eq!(aoi_sim(&["trace", &small, "--cell", "99"]).status.code(), Some(2));
    assert_eq!(aoi_sim(&["run"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_1() {
    // an overloaded FCFS queue drives the age far beyond where exp(age) is finite
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
name = "overflow"
horizon = 3000
replications = 1
m = 1
service = "exp(rate=1)"
sweep = { axis = "rho", values = [2.0] }
policies = [{ name = "fcfs" }]
metrics = ["penalty(exp)"]
"#;
    let spec = write_spec(dir.path(), "overflow.toml", body);
    let o = aoi_sim(&["run", &spec]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_prints_claims() {
    let o = aoi_sim(&["verify", "nbu-presets", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("[PASS]")).count() >= 10);
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn trace_emits_age_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "small.toml", SMALL);
    let o = aoi_sim(&["trace", &spec, "--cell", "1", "--emit-age-csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let (t, a) = l.split_once(',').unwrap();
            (t.parse().unwrap(), a.parse().unwrap())
        })
        .collect();
    assert!(text.starts_with("t,age\n"));
    assert_eq!(rows[0], (0.0, 0.0));
    assert!(rows.windows(2).all(|w| w[1].0 >= w[0].0));
    assert_eq!(rows.last().unwrap().0, 300.0);

    let json = aoi_sim(&["trace", &spec, "--cell", "1"]);
    let value: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(value["config"]["r"], 2);
}
