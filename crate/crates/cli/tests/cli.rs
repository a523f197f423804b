use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qnetsim"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qnetsim-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn run_prints_summary_and_writes_outputs() {
    let (metrics, trace) = (scratch("rc.csv"), scratch("rc.ndjson"));
    let out = bin()
        .arg("run")
        .arg(scenario("repeater-chain.scenario"))
        .arg("--metrics")
        .arg(&metrics)
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("repeater-chain: stopped at t=35 (goals)"), "{stdout}");
    assert!(stdout.contains("pair-delivered: 20"));
    let csv = std::fs::read_to_string(&metrics).unwrap();
    assert!(csv.starts_with("time,kind,node_a,node_b,uuid,seq,fidelity,latency,detail\n"));
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert!(trace.lines().all(|l| l.starts_with('{') && l.ends_with('}')));
}

#[test]
fn same_seed_gives_identical_trace_files() {
    let mut files = Vec::new();
    for i in 0..2 {
        let t = scratch(&format!("det{i}.ndjson"));
        let st = bin().arg("run").arg(scenario("qtcp-line.scenario")).arg("--trace").arg(&t).output().unwrap().status;
        assert!(st.success());
        files.push(std::fs::read(&t).unwrap());
    }
    assert!(!files[0].is_empty());
    assert_eq!(files[0], files[1]);

    let other = scratch("det-other.ndjson");
    let st = bin().arg("run").arg(scenario("purify-pair.scenario")).args(["--seed", "99", "--trace"]).arg(&other).output().unwrap().status;
    assert!(st.success());
}

#[test]
fn overrides_apply() {
    let out = bin()
        .arg("run")
        .arg(scenario("cluster-square.scenario"))
        .args(["--backend", "dense", "--until", "0.5"])
        .output()
        .unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("(t_end)"), "{stdout}");
}

#[test]
fn exit_codes() {
    let missing = bin().args(["run", "/nonexistent.scenario"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("io:"));

    let bad = scratch("bad.scenario");
    std::fs::write(&bad, "name = \"x\"\n[stop]\nquiescence = true\n").unwrap();
    let out = bin().arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("topology: missing"));

    let bad_backend = bin().arg("run").arg(scenario("cluster-square.scenario")).args(["--backend", "gpu"]).output().unwrap();
    assert_eq!(bad_backend.status.code(), Some(2), "clap usage errors exit with 2");

    // memories too small for the windows: both flows stall
    let text = std::fs::read_to_string(scenario("qtcp-line.scenario"))
        .unwrap()
        .replace("slots = 8", "slots = 3")
        .replace("success_prob = 1.0", "success_prob = 0.4");
    let stall = scratch("stall.scenario");
    std::fs::write(&stall, text).unwrap();
    let out = bin().arg("run").arg(&stall).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invariant breach: liveness"));
}

#[test]
fn sweep_writes_csv() {
    let csv = scratch("sweep.csv");
    let st = bin()
        .arg("sweep")
        .arg(scenario("purify-pair.scenario"))
        .args(["--param", "link.fidelity", "--grid", "0.7,0.9", "--metric", "purify.fidelity", "--out"])
        .arg(&csv)
        .status()
        .unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "link.fidelity,mean,stderr,n");
    assert!(lines[2].starts_with("0.9,0.926395939"), "{text}");

    let out = bin()
        .arg("sweep")
        .arg(scenario("purify-pair.scenario"))
        .args(["--param", "link.nope", "--grid", "1", "--metric", "purify.fidelity"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
