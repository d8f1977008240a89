use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn asg(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_asg"));
    cmd.args(args).env_remove("ASG_OUT_DIR");
    if let Some(d) = out_dir {
        cmd.env("ASG_OUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const MODEL: &str = "# two types\nd = 2\ntheta = 1.0\nP = 0.9, 0.1, 0.2, 0.8\ngamma = 0, 0\n";

#[test]
fn exact_prints_one_sixth() {
    let o = asg(&["exact", "--pim", "--theta", "2", "--q", "0.5,0.5", "--n", "3,2"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("# exact params_hash="));
    let rows = data_rows(&text);
    let log_p: f64 = rows[0][2].parse().unwrap();
    assert!((log_p - (1.0f64 / 6.0).ln()).abs() < 1e-14);
}

#[test]
fn exact_json() {
    let o = asg(&["exact", "--pim", "--theta", "2", "--q", "0.5,0.5", "--n", "3,2", "--format", "json"], None);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["p"].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-14);
}

#[test]
fn solve_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("m.cfg");
    fs::write(&cfg, MODEL).unwrap();
    let out = tmp.path().join("table.csv");
    let o = asg(&["solve", "--config", cfg.to_str().unwrap(), "--max-size", "20", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().next().unwrap().contains("params_hash="));
    let norm: Vec<&str> = text.lines().filter(|l| l.starts_with("# normalization")).collect();
    assert_eq!(norm.len(), 20);
    for line in norm {
        let sum: f64 = line.rsplit("sum_p=").next().unwrap().parse().unwrap();
        assert!((sum - 1.0).abs() < 1e-10);
    }
    // 17 significant digits round-trip
    let table = asg_core::cli::read_table(&out).unwrap();
    let direct = asg_core::recursion::solve(&asg_core::config::parse_params(MODEL).unwrap(), 20, None).unwrap();
    assert_eq!(table.values(), direct.values());
}

#[test]
fn out_dir_environment_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let o = asg(&["exact", "--pim", "--theta", "1", "--q", "0.3,0.7", "--n", "1,1"], Some(tmp.path()));
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert!(tmp.path().join("exact.csv").exists());
}

#[test]
fn exit_codes() {
    assert_eq!(asg(&["nonsense"], None).status.code(), Some(1));
    assert_eq!(asg(&["exact", "--n", "1,1"], None).status.code(), Some(1));
    let bad_rows = asg(&["solve", "--theta", "1", "--p", "0.9,0.2,0.2,0.8", "--max-size", "3"], None);
    assert_eq!(bad_rows.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_rows.stderr).contains("row"));
    let wrong_dim = asg(&["exact", "--pim", "--theta", "1", "--q", "0.5,0.5", "--n", "1,1,1"], None);
    assert_eq!(wrong_dim.status.code(), Some(1));
    let unconverged = asg(
        &["solve", "--theta", "1", "--p", "0.9,0.1,0.2,0.8", "--gamma", "-4,0", "--max-size", "3", "--n-max", "4", "--truncation-tol", "1e-14"],
        None,
    );
    assert_eq!(unconverged.status.code(), Some(2));
}

#[test]
fn usage_error_names_the_flag() {
    let o = asg(&["solve", "--max-size", "3", "--bogus"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--bogus"));
}

#[test]
fn simulate_chain_writes_one_file_per_replicate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("m.cfg");
    fs::write(&cfg, MODEL).unwrap();
    let out = tmp.path().join("chains");
    let o = asg(
        &["simulate-chain", "--config", cfg.to_str().unwrap(), "--start", "5,3", "--reps", "10", "--seed", "7", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.iter().filter(|f| f.to_string_lossy().starts_with("trajectory_")).count(), 10);
    let t = fs::read_to_string(out.join("trajectory_00003.csv")).unwrap();
    assert!(t.starts_with("# chain-trajectory params_hash="));
    assert!(t.contains("seed=7"));
    let last = t.lines().last().unwrap();
    let cols: Vec<&str> = last.split(',').collect();
    assert_eq!(cols[1].parse::<u32>().unwrap() + cols[2].parse::<u32>().unwrap(), 1);
}

#[test]
fn diffusion_estimate_carries_se() {
    let o = asg(
        &["diffusion", "--theta", "1", "--p", "0.9,0.1,0.2,0.8", "--samples", "2000", "--replicas", "10", "--burn-in", "5", "--estimate-p", "2,2"],
        None,
    );
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().contains("seed=0"));
    let rows = data_rows(&text);
    let se: f64 = rows[0][3].parse().unwrap();
    assert!(se > 0.0 && se < 0.5);
}

#[test]
fn dirichlet_limit_gap_decreases() {
    let o = asg(&["dirichlet-limit", "--alpha", "2,3,5", "--grid", "50:3200"], None);
    assert!(o.status.success());
    let gaps: Vec<f64> = data_rows(&stdout(&o)).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(gaps.len(), 7);
    assert!(gaps.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn asymptotics_writes_report_and_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report.csv");
    let o = asg(
        &["asymptotics", "--check", "theorem-p", "--y", "1,1", "--grid", "25:3200", "--source", "pim", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&out).unwrap().contains("n,observed,target,abs_err,rel_err"));
    let verdict: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["pass"], serde_json::Value::Bool(true));
}

#[test]
fn asymptotics_pi_limit_from_recursion_table() {
    let o = asg(
        &["asymptotics", "--check", "pi-limit", "--theta", "1", "--p", "0.9,0.1,0.2,0.8", "--y", "1,1", "--grid", "10:80", "--source", "recursion", "--format", "json"],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
