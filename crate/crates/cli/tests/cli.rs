use std::fs;

use speckernel_cli::run_cli_with;

fn run(args: &[&str]) -> (i32, String) {
    let argv: Vec<String> = std::iter::once("speckernel").chain(args.iter().copied()).map(String::from).collect();
    let mut out = Vec::new();
    let code = run_cli_with(&argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn scenarios_exit_with_their_expected_codes() {
    for sc in speckernel::scenarios::SCENARIOS {
        let (code, out) = run(&["scenario", sc.name]);
        assert_eq!(code, sc.expected_exit, "{}\n{out}", sc.name);
    }
    let (code, out) = run(&["scenario"]);
    assert_eq!(code, 0);
    assert!(out.contains("spectre-search"));
}

#[test]
fn run_reports_unsafe_and_err() {
    let (code, out) = run(&["run", "--system", "s_scope", "--attacker", "syscall s1(); syscall s2();", "--trace"]);
    assert_eq!(code, 1);
    assert!(out.contains("Call-Unsafe"), "{out}");
    let (code, out) = run(&["run", "--system", "s_probe", "--attacker", "syscall probe(11);"]);
    assert_eq!(code, 0);
    assert!(out.contains("outcome: err"), "{out}");
}

#[test]
fn checks_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("ret.sys");
    fs::write(&sys, speckernel::scenarios::RET_F).unwrap();
    let sys = sys.to_str().unwrap();
    assert_eq!(run(&["check-ni", "--system", sys, "--syscall", "s"]).0, 1);
    assert_eq!(run(&["check-ni", "--system", sys, "--syscall", "z", "--enumerate"]).0, 0);
    assert_eq!(run(&["check-ni", "--system", sys, "--syscall", "z", "--samples", "20"]).0, 0);
    assert_eq!(run(&["check-slni", "--system", "s_ff", "--syscall", "s", "--depth", "4"]).0, 1);
    assert_eq!(run(&["check-slni", "--system", "slni_tiny", "--syscall", "t"]).0, 0);
}

#[test]
fn unknown_when_the_budget_is_too_small() {
    let (code, _) = run(&["check-ni", "--system", "s_msg", "--syscall", "recv", "--budget", "3"]);
    assert_eq!(code, 3);
    let (code, out) = run(&["run", "--system", "s_leak", "--attacker", "c := 0; while true @w { c := (c + 1); }", "--fuel", "50"]);
    assert_eq!(code, 2, "{out}");
}

#[test]
fn usage_and_parse_errors_exit_three() {
    assert_eq!(run(&["frobnicate"]).0, 3);
    assert_eq!(run(&["run", "--system", "s_scope"]).0, 3);
    assert_eq!(run(&["run", "--system", "s_scope", "--attacker", "syscall nope();"]).0, 3);
    assert_eq!(run(&["check-ni", "--system", "s_scope", "--syscall", "nope"]).0, 3);
    assert_eq!(run(&["run", "--system", "/no/such/file", "--attacker", "skip;"]).0, 3);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sys");
    fs::write(&bad, "system { kernel array a[1] }").unwrap();
    assert_eq!(run(&["run", "--system", bad.to_str().unwrap(), "--attacker", "skip;"]).0, 3);
}

#[test]
fn json_reports_replay() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--format", "json", "scenario", "spectre-search"],
        vec!["--format", "json", "run", "--system", "s_scope", "--attacker", "syscall s1(); syscall s2();", "--trace"],
        vec!["--format", "json", "--seed", "3", "experiment", "--system", "s_probe", "--attacker", "syscall probe(2);", "--trials", "500"],
        vec!["--format", "json", "estimate-delta", "--system", "s_probe", "--trials", "500"],
        vec!["--format", "json", "run", "--system", "s_msg", "--attacker", "syscall init();", "--sample"],
    ] {
        let (_, out) = run(&args);
        let path = dir.path().join("r.json");
        fs::write(&path, &out).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["version"], "speckernel-report/1");
        let (code, text) = run(&["replay", path.to_str().unwrap()]);
        assert_eq!(code, 0, "{args:?}: {text}");
    }
}

#[test]
fn seed_comes_from_the_environment() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_speckernel"))
        .args(["--format", "json", "estimate-delta", "--system", "s_probe", "--trials", "100"])
        .env("SPECKERNEL_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 99);
}

#[test]
fn transform_writes_a_parseable_system() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fenced.sys");
    let (code, text) = run(&[
        "transform", "--system", "s_msg", "--coalesced", "--trials", "100", "--depth", "4", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{text}");
    let src = fs::read_to_string(&out).unwrap();
    assert!(src.contains("fence;"));
    let sys = speckernel::syntax::parse_system(&src).unwrap();
    // The branch splits recv's load from its store, so each keeps a fence.
    assert_eq!(speckernel::transform::fence_counts(&sys)["syscall recv"], 2);
    let (code, _) = run(&["search", "--system", out.to_str().unwrap(), "--syscall", "recv", "--depth", "6"]);
    assert_eq!(code, 0);
    let (code, _) = run(&["--jobs", "2", "search", "--system", "s_msg", "--syscall", "recv", "--depth", "6"]);
    assert_eq!(code, 1);
}
