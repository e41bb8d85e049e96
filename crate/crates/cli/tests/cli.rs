//! End-to-end checks of the command-line contract: verdicts, exit codes and
//! the replayability of printed witnesses.

use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    format!(
        "{}/../../fixtures/{}.dpn",
        env!("CARGO_MANIFEST_DIR"),
        name
    )
}

fn mdpn(args: &[&str]) -> Output {
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_mdpn"));
    Command::new(bin)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn check_clean_model() {
    let out = mdpn(&["check", &fixture("ex3")]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("8 rules"));
}

#[test]
fn check_flags_returning_start_frame() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.dpn");
    std::fs::write(&path, "init q g\nrule r1 ret q g -> q\n").unwrap();
    let out = mdpn(&["check", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("(q, g)"));
}

#[test]
fn check_missing_file_is_io_error() {
    let out = mdpn(&["check", "/nonexistent/model.dpn"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn check_syntax_error_is_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.dpn");
    std::fs::write(&path, "init q g\nrule r1 warp q g -> q h\n").unwrap();
    let out = mdpn(&["check", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_error_exits_three() {
    let out = mdpn(&["race", &fixture("ex3")]);
    assert_eq!(code(&out), 3);
}

#[test]
fn race_verdicts_and_witness_replays() {
    for (name, read, write, expect) in [
        ("ex3", "b1", "b0,c0", 0),
        ("ex5", "b2", "b1,c1", 0),
        ("ex6", "c9", "d0,b1,f0", 1),
    ] {
        let out = mdpn(&["race", &fixture(name), "--read", read, "--write", write]);
        assert_eq!(code(&out), expect, "{name}: {}", stdout(&out));
    }

    // The printed step lines replay through the library.
    let out = mdpn(&[
        "race",
        &fixture("ex6"),
        "--read",
        "c9",
        "--write",
        "d0,b1,f0",
        "--tree",
    ]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.contains("race: found"));
    let steps: String = text
        .lines()
        .filter(|l| l.starts_with("step "))
        .map(|l| format!("{l}\n"))
        .collect();
    let dpn = mdpn_core::parse_dpn(&std::fs::read_to_string(fixture("ex6")).unwrap()).unwrap();
    let execution = mdpn_core::Execution::from_text(&dpn, &steps).unwrap();
    assert!(mdpn_core::replay(&dpn, &execution, mdpn_core::Sensitivity::LockSensitive).is_ok());
    let tree_line = text
        .lines()
        .find(|l| l.starts_with("witness tree: "))
        .expect("--tree prints the tree");
    let tree = mdpn_core::parse_tree(&dpn, tree_line.trim_start_matches("witness tree: "))
        .expect("printed tree parses back");
    assert_eq!(
        mdpn_core::strip_cuts(&tree),
        mdpn_core::tree_of_execution(&dpn, &execution).unwrap()
    );
}

#[test]
fn race_insensitive_flag_matters_on_ex5() {
    let out = mdpn(&[
        "race",
        &fixture("ex5"),
        "--read",
        "b2",
        "--write",
        "b1,c1",
        "--insensitive",
    ]);
    assert_eq!(code(&out), 1, "{}", stdout(&out));
}

#[test]
fn undeclared_symbol_is_diagnostic() {
    let out = mdpn(&["race", &fixture("ex3"), "--read", "nope", "--write", "b0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn defuse_verdicts() {
    let out = mdpn(&[
        "defuse",
        &fixture("ex3"),
        "--gen",
        "c1",
        "--kill",
        "r3",
        "--use",
        "b1",
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("defuse: infeasible"));

    let out = mdpn(&["defuse", &fixture("ex4"), "--gen", "b1", "--use", "c0"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("defuse: feasible"));
}

#[test]
fn reach_composes_stages() {
    let out = mdpn(&[
        "reach",
        &fixture("ex4"),
        "--stage",
        "b1",
        "--stage",
        "c1",
        "--stage",
        "b1",
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("reach: empty"));

    let out = mdpn(&["reach", &fixture("ex4"), "--stage", "b1", "--stage", "c1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn mhp_patterns() {
    // The two sinks of spawntoy can hold in parallel.
    let out = mdpn(&["mhp", &fixture("spawntoy"), "--pattern", "h", "--pattern", "s"]);
    assert_eq!(code(&out), 1);
    // But the pre-spawn symbol cannot coexist with the spawned thread.
    let out = mdpn(&["mhp", &fixture("spawntoy"), "--pattern", "g", "--pattern", "s"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn simulate_counts() {
    let out = mdpn(&["simulate", &fixture("toy"), "--steps", "5"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("configs: 2"));

    let out = mdpn(&["simulate", &fixture("toy"), "--steps", "0"]);
    assert!(stdout(&out).starts_with("configs: 1"));

    // Lock-sensitivity changes the reachable count on ex3.
    let insens = mdpn(&["simulate", &fixture("ex3"), "--steps", "12"]);
    let sens = mdpn(&["simulate", &fixture("ex3"), "--steps", "12", "--sensitive"]);
    let count = |o: &Output| -> usize {
        stdout(o)
            .lines()
            .next()
            .unwrap()
            .trim_start_matches("configs: ")
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(count(&insens) > count(&sens));
}

#[test]
fn dump_tree_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exec.txt");
    std::fs::write(&path, "step 0 r1\nstep 0 r2\n").unwrap();
    let out = mdpn(&["dump-tree", &fixture("montoy"), path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        stdout(&out).trim(),
        "(USE r1 a nr (RET r2) (NIL q h))"
    );

    let out = mdpn(&[
        "dump-tree",
        &fixture("montoy"),
        path.to_str().unwrap(),
        "--cut",
        "1",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        stdout(&out).trim(),
        "(USE r1 a nr (CUT q g2 1 (RET r2)) (NIL q h))"
    );
}
