use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/config.toml")
}

fn pairmine(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairmine"))
        .arg("--config")
        .arg(toy_config())
        .arg("--workdir")
        .arg(work)
        .args(["--stage-override", "biencoder.steps=30", "--stage-override", "cross.steps=40"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_all_twice_gives_identical_exports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = pairmine(a.path(), &["run-all"]);
    let ob = pairmine(b.path(), &["run-all"]);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(ob.status.success());
    assert!(stdout(&oa).contains("evaluate: crossencoder recall@1"));
    for file in ["export/mined.jsonl", "export/manifest.json", "evaluate/metrics.json"] {
        let fa = std::fs::read(a.path().join(file)).unwrap();
        let fb = std::fs::read(b.path().join(file)).unwrap();
        assert!(fa == fb, "{file} differs");
    }
}

#[test]
fn resume_after_success_runs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    assert!(pairmine(dir.path(), &["run-all"]).status.success());
    let o = pairmine(dir.path(), &["run-all", "--resume"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).matches(": current").count(), 9);
}

#[test]
fn missing_index_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["ingest", "train-biencoder", "embed", "index"] {
        let o = pairmine(dir.path(), &[stage]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    std::fs::remove_dir_all(dir.path().join("index")).unwrap();
    let o = pairmine(dir.path(), &["mine"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("index"));
}

#[test]
fn changed_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["ingest", "train-biencoder", "embed", "index"] {
        assert!(pairmine(dir.path(), &[stage]).status.success());
    }
    let o = pairmine(dir.path(), &["--stage-override", "retention=0.5", "mine"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stale"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = pairmine(dir.path(), &["--stage-override", "no_such_key=1", "ingest"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pairmine(dir.path(), &["--stage-override", "margin.k=0", "ingest"]);
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_pairmine")).arg("ingest").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_writes_a_runnable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pairmine"))
        .args(["synth", "--preset", "lexical-trap", "--num-seeds", "50", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("1000 inputs"));
    let gold = std::fs::read_to_string(dir.path().join("gold.jsonl")).unwrap();
    assert_eq!(gold.lines().count(), 950);
    let seeds = std::fs::read_to_string(dir.path().join("seeds.jsonl")).unwrap();
    assert_eq!(seeds.lines().count(), 50);
}

#[test]
fn report_lists_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    assert!(pairmine(dir.path(), &["ingest"]).status.success());
    let o = pairmine(dir.path(), &["report"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("ingest: inputs 200 -> 200"));
    assert!(out.contains("evaluate: not run"));
}
