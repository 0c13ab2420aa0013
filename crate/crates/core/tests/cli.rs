use std::path::Path;
use std::process::{Command, Output};

fn archadapt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_archadapt"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CLASS_PLAN: &[&str] = &[
    "--set",
    "plan.scenario=class",
    "--set",
    "plan.steps=2,4,8",
    "--set",
    "plan.max_classes=8",
    "--set",
    "space.preset=toy",
];

fn with_plan<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(CLASS_PLAN).copied().collect()
}

#[test]
fn simulate_distance_and_gate() {
    let dir = tempfile::tempdir().unwrap();
    let o = archadapt(dir.path(), &with_plan(&["simulate", "--out", "snaps"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
    for t in 1..=3 {
        for ext in ["csv", "labels", "meta"] {
            assert!(dir.path().join(format!("snaps/snapshot_t{t}.{ext}")).exists());
        }
    }

    let same = archadapt(dir.path(), &["distance", "snaps/snapshot_t1.csv", "snaps/snapshot_t1.csv"]);
    assert_eq!(stdout(&same), "d=0.000000\n");
    let apart = archadapt(dir.path(), &["distance", "snaps/snapshot_t1.csv", "snaps/snapshot_t3.csv", "--js", "2000"]);
    let text = stdout(&apart);
    let d: f64 = text.lines().next().unwrap().strip_prefix("d=").unwrap().parse().unwrap();
    assert!(d > 0.0);
    assert!(text.lines().nth(1).unwrap().starts_with("js="));

    let g = archadapt(
        dir.path(),
        &["gate", "snaps/snapshot_t1.csv", "snaps/snapshot_t1.csv", "--set", "space.preset=toy", "--set", "gate.epsilon=0.02"],
    );
    assert_eq!(stdout(&g), "H_t=0.0000 adapt=false\n");
    let g = archadapt(
        dir.path(),
        &["gate", "snaps/snapshot_t1.csv", "snaps/snapshot_t3.csv", "--arch", "k3e3,k3e3;k3e3,k3e3", "--set", "space.preset=toy"],
    );
    assert!(stdout(&g).ends_with("adapt=true\n"), "{}", stdout(&g));
}

#[test]
fn adapt_writes_records_and_report_renders_them() {
    let dir = tempfile::tempdir().unwrap();
    let o = archadapt(
        dir.path(),
        &with_plan(&["adapt", "--out", "run", "--set", "trainer.iterations=50", "--set", "run.init=min"]),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    for f in ["records.json", "timings.txt", "controller.axpt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("records.json")).unwrap()).unwrap();
    let records = json["records"].as_array().unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(json["initial_arch"], "k3e3,k3e3;k3e3,k3e3");
    for r in records {
        if let Some(t) = r["trace"].as_str() {
            let csv = std::fs::read_to_string(run.join(t)).unwrap();
            assert_eq!(csv.lines().count(), 51);
        }
    }
    let rep = archadapt(dir.path(), &["report", "run/records.json"]);
    assert!(rep.status.success());
    assert_eq!(stdout(&rep).lines().count(), 4);
}

#[test]
fn oracle_sweep_and_ablation_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = archadapt(dir.path(), &with_plan(&["oracle", "--step", "3"]));
    assert_eq!(stdout(&o), "arch=k5e3,k3e3,k3e3;k5e3,k5e3,k5e3 value=0.909991 V=0.909991 madds=65.724\n");
    let reward = archadapt(dir.path(), &with_plan(&["oracle", "--prev", "k3e3,k3e3;k3e3,k3e3", "--d-t", "1"]));
    assert!(reward.status.success());

    let s = archadapt(
        dir.path(),
        &with_plan(&["sweep-lambda", "--lambdas", "0,1e-2", "--set", "trainer.iterations=20", "--out", "sw"]),
    );
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    assert_eq!(stdout(&s).lines().count(), 4);
    assert!(dir.path().join("sw/sweep.json").exists());

    let a = archadapt(dir.path(), &with_plan(&["ablate-wd", "--set", "trainer.iterations=20"]));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a).lines().count(), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = archadapt(dir.path(), &["frobnicate"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("Usage"));
    assert_eq!(archadapt(dir.path(), &["adapt", "--bogus"]).status.code(), Some(1));
    assert_eq!(archadapt(dir.path(), &["--help"]).status.code(), Some(0));

    std::fs::write(dir.path().join("run.cfg"), "run.seed=3\ntrainer.lamda=1\n").unwrap();
    let cfg = archadapt(dir.path(), &["adapt", "--config", "run.cfg"]);
    assert_eq!(cfg.status.code(), Some(2));
    let err = String::from_utf8_lossy(&cfg.stderr);
    assert!(err.contains("line 2") && err.contains("trainer.lamda"), "{err}");

    let missing = archadapt(dir.path(), &["distance", "nope.csv", "nope.csv"]);
    assert_eq!(missing.status.code(), Some(2));
}
