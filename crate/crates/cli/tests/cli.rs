use std::path::Path;
use std::process::{Command, Output};

fn entctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entctl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Stdout minus the "wrote <path>" lines, which echo the per-run temp dir.
fn checks_only(stdout: &[u8]) -> String {
    String::from_utf8_lossy(stdout)
        .lines()
        .filter(|l| !l.starts_with("wrote "))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn gibbs_passes_and_reports_json_schema() {
    let out = entctl(&["gibbs", "--format", "json", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["command"], "gibbs");
    assert_eq!(v["pass"], true);
    assert_eq!(v["config"]["seed"], 3);
    let checks = v["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    for c in checks {
        for key in ["name", "estimate", "std_error", "oracle", "tolerance", "pass"] {
            assert!(c.get(key).is_some(), "missing {key}");
        }
    }
}

#[test]
fn beta_zero_is_a_usage_error() {
    let out = entctl(&["gibbs", "--beta", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = entctl(&["bridge", "--beta", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = entctl(&["bridge", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bridge_same_seed_twice_is_bit_identical() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let args = ["bridge", "--seed", "7", "--paths", "2000", "--steps", "100"];
    let o1 = entctl(&[&args[..], &["--out", d1.path().to_str().unwrap()]].concat());
    let o2 = entctl(&[&args[..], &["--out", d2.path().to_str().unwrap()]].concat());
    assert!(o1.status.success() && o2.status.success());
    assert_eq!(checks_only(&o1.stdout), checks_only(&o2.stdout));
    assert_eq!(read(d1.path(), "bridge_paths.csv"), read(d2.path(), "bridge_paths.csv"));
}

#[test]
fn outputs_identical_across_worker_counts() {
    for cmd in [
        vec!["bridge", "--paths", "2000", "--steps", "100"],
        vec!["jumps", "--paths", "5000"],
        vec!["maxbm", "--paths", "2000", "--steps", "100"],
    ] {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let mut a1 = cmd.clone();
        a1.extend(["--threads", "1", "--out", d1.path().to_str().unwrap()]);
        let mut a2 = cmd.clone();
        a2.extend(["--threads", "8", "--out", d2.path().to_str().unwrap()]);
        let o1 = entctl(&a1);
        let o2 = entctl(&a2);
        assert!(o1.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o1.stderr));
        assert_eq!(
            checks_only(&o1.stdout),
            checks_only(&o2.stdout),
            "{cmd:?} stdout differs across worker counts"
        );
        let mut names: Vec<_> = std::fs::read_dir(d1.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for n in names {
            let n = n.to_str().unwrap();
            assert_eq!(read(d1.path(), n), read(d2.path(), n), "{cmd:?}: {n} differs");
        }
    }
}

#[test]
fn jump_csvs_are_per_beta_step_functions() {
    let dir = tempfile::tempdir().unwrap();
    let out = entctl(&[
        "jumps",
        "--paths",
        "3000",
        "--betas",
        "0,1,2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for b in ["0", "1", "2"] {
        let body = String::from_utf8(read(dir.path(), &format!("jumps_beta_{b}.csv"))).unwrap();
        assert!(body.starts_with("# schema v1: path_id,t,x"));
    }
}

#[test]
fn maxbm_emits_path_and_control_csv_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = entctl(&[
        "maxbm",
        "--paths",
        "2000",
        "--steps",
        "100",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let paths = String::from_utf8(read(dir.path(), "maxbm_paths.csv")).unwrap();
    assert!(paths.starts_with("# schema v1: path_id,t,state"));
    let ctrl = String::from_utf8(read(dir.path(), "maxbm_control.csv")).unwrap();
    assert!(ctrl.starts_with("# schema v1: t,w,m,u"));
}
