use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use overlap_rd::config::{emit, parse_config};
use overlap_rd::{builtin as builtin_model, BuiltinParams};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_overlap-rd"));
    c.env_remove("RD_OUTDIR");
    c
}

fn run_with_stdin(args: &[&str], input: &str, cwd: &Path) -> Output {
    let mut child = bin()
        .args(args)
        .current_dir(cwd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn builtin(name: &str, sets: &[&str]) -> String {
    let mut c = bin();
    c.args(["builtin", name]);
    for s in sets {
        c.args(["--set", s]);
    }
    let out = c.output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

/// Builtin text with its `solve` line replaced.
fn with_solve(name: &str, solve: &str) -> String {
    builtin(name, &[])
        .lines()
        .map(|l| if l.starts_with("solve") { solve } else { l })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin().arg("nonsense").output().unwrap().status.code(), Some(2));
    assert_eq!(bin().args(["run", "/definitely/not/here.cfg"]).output().unwrap().status.code(), Some(2));
    let out = run_with_stdin(&["check", "-"], "domain 1 = [0,1]\nspecies 1 on 2 init const 1\n", dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let ok = run_with_stdin(&["check", "-", "--out", "rep"], &builtin("ex2", &[]), dir.path());
    assert_eq!(ok.status.code(), Some(0));
    assert!(dir.path().join("rep/report.json").exists());
    assert!(bin().arg("--help").output().unwrap().status.success());
}

#[test]
fn zero_horizon_writes_one_snapshot_per_species() {
    let dir = tempfile::tempdir().unwrap();
    let text = with_solve("ex1", "solve dt=0.01 T=0 cells=8,8");
    let out = run_with_stdin(&["run", "-", "--out", "z"], &text, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("z/manifest.json")).unwrap()).unwrap();
    let snaps = manifest["snapshots"].as_array().unwrap();
    assert_eq!(snaps.len(), 1);
    assert_eq!(snaps[0]["files"].as_array().unwrap().len(), 6);
    for k in 1..=6 {
        let csv = std::fs::read_to_string(dir.path().join(format!("z/snap_0_{k}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 65);
    }
    let ledger = std::fs::read_to_string(dir.path().join("z/ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 2);
}

#[test]
fn run_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let text = with_solve("ex1", "solve dt=0.01 T=0.2 cells=8,8 every=10");
    std::fs::write(dir.path().join("ex1.cfg"), &text).unwrap();
    for out in ["a", "b"] {
        let o = bin().args(["run", "ex1.cfg", "--out", out]).current_dir(dir.path()).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    // steps 0, 10, 20: three snapshots of six species, plus the ledger
    assert_eq!(files.len(), 19);
    for f in &files {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(!a.is_empty(), "{f} is empty");
        assert_eq!(a, b, "{f} differs between runs");
    }
    let verdict = &manifest["verdict"];
    assert_eq!(verdict["ok"], true);
    assert_eq!(verdict["mass_witness_source"], "checker");
    assert_eq!(verdict["below_envelope"], true);

    let energy = bin().args(["energy", "a", "--p", "2"]).current_dir(dir.path()).output().unwrap();
    assert!(energy.status.success(), "{}", String::from_utf8_lossy(&energy.stderr));
    let csv = std::fs::read_to_string(dir.path().join("a/energy.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,L_2"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn outdir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let text = with_solve("ex3", "solve dt=0.01 T=0.05 cells=20");
    let mut child = bin()
        .args(["run", "-"])
        .env("RD_OUTDIR", "from-env")
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
    assert!(child.wait().unwrap().success());
    assert!(dir.path().join("from-env/manifest.json").exists());
    let plain = run_with_stdin(&["run", "-"], &text, dir.path());
    assert!(plain.status.success());
    assert!(dir.path().join("rd-out/ledger.csv").exists());
}

#[test]
fn sweep_epsilon_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let text = with_solve("ex2", "solve dt=0.01 T=0.2 cells=8,8");
    let out = run_with_stdin(&["sweep-epsilon", "-", "--out", "s"], &text, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s/epsilon.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn builtin_configs_round_trip() {
    for name in ["ex1", "ex2", "ex3"] {
        let text = builtin(name, &[]);
        let doc = parse_config(&text).unwrap();
        let again = parse_config(&emit(&doc)).unwrap();
        assert_eq!(emit(&again), emit(&doc));
        assert_eq!(again.model, doc.model);
        assert_eq!(doc.model, builtin_model(name, &BuiltinParams::new()).unwrap());
    }
    let tweaked = builtin("ex3", &["k=2"]);
    assert!(tweaked.contains("react 1 += 2 * u2^2 gate 1 2"), "{tweaked}");
}
