use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn emdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const USERS: &str = "user_id,point_index\n1,0\n1,1\n1,3\n2,2\n2,2\n2,0\n3,3\n3,1\n3,1\n";

const CONFIG: &str = r#"
[scenario]
name = "smoke"
kind = "frequency"
model = "local"
mechanisms = ["gkrr", "hadamard"]
space = "clustered:2,2,0.3"

[grid]
n = [50, 100]
m = [10]
trials = 3

[budget]
alpha = 4.0
delta = 1e-6
calibration = "exact"
"#;

#[test]
fn calibrate_prints_csv() {
    let o = emdp(&[
        "calibrate",
        "--alpha",
        "25",
        "--delta",
        "1e-12",
        "--m",
        "1000",
        "--n",
        "100000",
        "--model",
        "central",
        "--mode",
        "exact",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("alpha0,alpha_eff,delta_eff,w_star"));
    let v: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((2.1..=3.9).contains(&v[0]));
    assert!(v[1] <= 25.0);
}

#[test]
fn calibrate_central_needs_n() {
    let o = emdp(&[
        "calibrate",
        "--alpha",
        "25",
        "--delta",
        "1e-12",
        "--m",
        "1000",
        "--model",
        "central",
    ]);
    assert!(!o.status.success());
}

#[test]
fn linear_query_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "users.csv", USERS);
    let query = write(dir.path(), "q.csv", "1,0,0,-1\n0,0.5,-0.5,0\n");
    let args = [
        "linear-query",
        "--space",
        "clustered:2,2,0.3",
        "--data",
        &data,
        "--query",
        &query,
        "--alpha",
        "5",
        "--noise",
        "gamma",
        "--seed",
        "9",
    ];
    let a = emdp(&args);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&emdp(&args)));
    // One noisy vector of dimension 2 per user.
    assert_eq!(stdout(&a).lines().count(), 3);
    assert!(stdout(&a).lines().all(|l| l.split(',').count() == 2));
}

#[test]
fn linear_query_rejects_small_lipschitz() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "users.csv", USERS);
    let query = write(dir.path(), "q.csv", "1,0,0,-1\n");
    let base = [
        "linear-query",
        "--space",
        "clustered:2,2,0.3",
        "--data",
        &data,
        "--query",
        &query,
        "--alpha",
        "5",
    ];
    let o = emdp(&[&base[..], &["--noise", "gamma", "--lipschitz", "0.1"]].concat());
    assert!(!o.status.success());
    let o = emdp(&[&base[..], &["--noise", "gamma", "--lipschitz", "0.1", "--unchecked"]].concat());
    assert!(o.status.success());
}

#[test]
fn freq_est_writes_trials() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "users.csv", USERS);
    let out = dir.path().join("out.csv");
    let o = emdp(&[
        "freq-est",
        "--space",
        "clustered:2,2,0.3",
        "--data",
        &data,
        "--mechanism",
        "gkrr",
        "--alpha",
        "4",
        "--trials",
        "4",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "trial,emd_error,l1_error");
    assert_eq!(lines.len(), 5);
    for l in &lines[1..] {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[1] >= 0.0 && v[1] <= 1.0 && v[2] >= v[1]);
    }
}

#[test]
fn freq_est_rejects_unequal_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "users.csv", "user_id,point_index\n1,0\n2,1\n2,1\n");
    let o = emdp(&[
        "freq-est",
        "--space",
        "clustered:2,2,0.3",
        "--data",
        &data,
        "--mechanism",
        "gkrr",
        "--alpha",
        "4",
    ]);
    assert!(!o.status.success());
}

#[test]
fn reduce_runs_inner_command() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "users.csv", "user_id,point_index\n1,0\n2,1\n2,1\n2,3\n");
    let o = emdp(&[
        "reduce",
        "--data",
        &data,
        "--samples",
        "5",
        "--epsilon",
        "1",
        "--delta",
        "1e-6",
        "--radius",
        "0.3",
        "--inner",
        "freq-est",
        "--space",
        "clustered:2,2,0.3",
        "--mechanism",
        "gkrr",
        "--trials",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
    let o = emdp(&[
        "reduce",
        "--data",
        &data,
        "--samples",
        "5",
        "--epsilon",
        "1",
        "--delta",
        "1e-6",
        "--radius",
        "0.3",
        "--inner",
        "calibrate",
        "--alpha",
        "1",
        "--delta",
        "1e-6",
        "--m",
        "5",
    ]);
    assert!(!o.status.success());
}

#[test]
fn audit_exit_codes() {
    let pass = emdp(&[
        "audit",
        "--space",
        "clustered:2,2,0.3",
        "--mechanism",
        "gkrr",
        "--alpha0",
        "1.0",
    ]);
    assert!(pass.status.success());
    assert!(stdout(&pass).starts_with("result: pass"));
    let fail = emdp(&[
        "audit",
        "--space",
        "clustered:2,2,0.3",
        "--mechanism",
        "gkrr",
        "--alpha0",
        "1.0",
        "--alpha",
        "0.9",
    ]);
    assert_eq!(fail.status.code(), Some(2));
    assert!(stdout(&fail).contains("worst pair"));
    let multi = emdp(&[
        "audit",
        "--space",
        "clustered:1,2,0.3",
        "--mechanism",
        "gkrr",
        "--alpha0",
        "0.5",
        "--m",
        "2",
        "--delta",
        "1e-6",
    ]);
    assert!(multi.status.success());
    assert!(stdout(&multi).contains("pairs checked: 6"));
}

#[test]
fn audit_custom_channel() {
    let dir = tempfile::tempdir().unwrap();
    let chan = write(dir.path(), "chan.csv", "0.5,0.5\n0.5,0.5\n");
    let o = emdp(&[
        "audit",
        "--space",
        "discrete:2",
        "--mechanism",
        "channel",
        "--channel",
        &chan,
        "--alpha",
        "0",
    ]);
    assert!(o.status.success());
}

#[test]
fn experiment_reproducible_and_skip_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", CONFIG);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    // Exact calibration is infeasible at m = 10, so gkrr cells are skipped.
    let strict = emdp(&[
        "experiment",
        "--config",
        &cfg,
        "--out",
        a.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert!(!strict.status.success());
    let ok = emdp(&[
        "experiment",
        "--config",
        &cfg,
        "--out",
        a.to_str().unwrap(),
        "--seed",
        "4",
        "--allow-skip",
    ]);
    assert!(ok.status.success());
    let ok = emdp(&[
        "experiment",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "4",
        "--jobs",
        "3",
        "--allow-skip",
    ]);
    assert!(ok.status.success());
    let (a, b) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(
        text.starts_with("scenario,mechanism,n,m,k,alpha,epsilon,delta,trial_count,mean_error,std_error,bound,seed\n")
    );
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("gkrr/exact"));
}

#[test]
fn experiment_zero_trials_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", &CONFIG.replace("trials = 3", "trials = 0"));
    let o = emdp(&["experiment", "--config", &cfg]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn experiment_bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        &CONFIG.replace("kind = \"frequency\"", "kind = \"other\""),
    );
    assert!(!emdp(&["experiment", "--config", &cfg]).status.success());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            emdp::experiment::ExperimentConfig::from_file(&path).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
