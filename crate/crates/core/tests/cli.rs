use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duelcluster"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "run", "--users", "4", "--clusters", "2", "--arms", "4", "--dim", "3", "--horizon",
        "15", "--seeds", "0,1", "--out", out,
    ];
    v.extend_from_slice(extra);
    v
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("regret.csv");
    let o = run(&small(out.to_str().unwrap(), &["--algo", "coldb,ldb_ind", "--summary"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&out);
    assert_eq!(rows[0], "algo,seed,t,inst_regret,cum_regret");
    assert_eq!(rows.len(), 1 + 2 * 2 * 15);
    assert!(rows.iter().any(|r| r.starts_with("ldb_ind,1,15,")));
    let summary = lines(&dir.path().join("regret_summary.csv"));
    assert_eq!(summary[0], "algo,t,mean_cum_regret,stderr_cum_regret,trials");
    assert_eq!(summary.len(), 1 + 2 * 15);
    assert!(summary[1].ends_with(",2"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let extra = ["--algo", "condb", "--env", "square", "--width", "8"];
    assert!(run(&small(a.to_str().unwrap(), &extra)).status.success());
    assert!(run(&small(b.to_str().unwrap(), &extra)).status.success());
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"algo": "ldb_ind", "users": 3, "dim": 2, "arms": 3, "horizon": 9, "seeds": [4]}"#)
        .unwrap();
    let out = dir.path().join("r.csv");
    let o = run(&[
        "run", "--config", cfg.to_str().unwrap(), "--horizon", "5", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&out);
    assert_eq!(rows.len(), 6);
    assert!(rows[5].starts_with("ldb_ind,4,5,"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = out.to_str().unwrap();
    for extra in [
        &["--algo", "coldb", "--env", "square"][..],
        &["--algo", "nope"],
        &["--horizon", "0"],
        &["--env", "sphere"],
        &["--clusters", "9", "--dim", "1"],
    ] {
        let r = run(&small(o, extra));
        assert_eq!(r.status.code(), Some(2), "{extra:?}");
    }
    let missing = dir.path().join("absent.json");
    let r = run(&["run", "--config", missing.to_str().unwrap(), "--out", o]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn misspecified_runs_are_allowed_by_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let r = run(&small(
        out.to_str().unwrap(),
        &["--algo", "coldb", "--env", "square", "--allow-misspecified"],
    ));
    assert!(r.status.success());
}

#[test]
fn runtime_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = dir.path().join("r.csv");
    let artifacts = blocker.join("sub");
    let r = run(&small(
        out.to_str().unwrap(),
        &["--algo", "coldb", "--artifacts", artifacts.to_str().unwrap()],
    ));
    assert_eq!(r.status.code(), Some(3));
    let bad_out = blocker.join("r.csv");
    let r = run(&small(bad_out.to_str().unwrap(), &["--algo", "coldb"]));
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn artifacts_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let art = dir.path().join("art");
    let r = run(&small(
        out.to_str().unwrap(),
        &["--algo", "condb", "--env", "square", "--width", "8", "--artifacts", art.to_str().unwrap()],
    ));
    assert!(r.status.success());
    for name in ["condb_seed0_env.json", "condb_seed1_snapshot.json", "condb_seed0_deletions.csv", "condb_seed1_user3.nn"] {
        assert!(art.join(name).is_file(), "{name}");
    }
    let nn = std::fs::read(art.join("condb_seed0_user0.nn")).unwrap();
    duelcluster::neural::parse_checkpoint(&nn).unwrap();
}
