//! End-to-end checks of the command-line surface and its exit codes.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtlc"))
}

fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn check_accepts_corpus_and_rejects_mutants() {
    let out = run(&["check", corpus("sieve.mtlc").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{out:?}");

    let out = run(&["check", corpus("reject/dup_use.mtlc").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("E-LIN-REUSE"), "diagnostic line: {err}");
    // one finding per line: LEVEL file:line:col CODE message
    let first = err.lines().next().unwrap();
    assert!(first.starts_with("error "), "{first}");
    assert!(first.contains(".mtlc:"), "{first}");

    let out = run(&["check", "/no/such/file.mtlc"]);
    assert_eq!(code(&out), 5);
}

#[test]
fn run_exit_codes_follow_outcomes() {
    let out = run(&[
        "run",
        corpus("pingpong.mtlc").to_str().unwrap(),
        "--seed",
        "7",
        "--monitor-all",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("outcome=final value=true"), "{stdout}");

    let out = run(&[
        "run",
        corpus("create2_deadlock.mtlc").to_str().unwrap(),
        "--allow-create2",
    ]);
    assert_eq!(code(&out), 2, "{out:?}");

    let out = run(&[
        "run",
        corpus("sieve.mtlc").to_str().unwrap(),
        "--steps",
        "10",
    ]);
    assert_eq!(code(&out), 3, "{out:?}");

    let out = run(&[
        "run",
        corpus("create2_deadlock.mtlc").to_str().unwrap(),
        "--allow-create2",
        "--monitor-df",
    ]);
    assert_eq!(code(&out), 4, "{out:?}");

    // without the flag the counterexample does not typecheck
    let out = run(&["run", corpus("create2_deadlock.mtlc").to_str().unwrap()]);
    assert_eq!(code(&out), 1, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("E-UNKNOWN-CONST"));
}

#[test]
fn trace_lines_are_deterministic() {
    let demo = corpus("link_demo.mtlc");
    let args = [
        "run",
        demo.to_str().unwrap(),
        "--seed",
        "13",
        "--trace",
        "--monitor-df",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(
        a.stdout, b.stdout,
        "identical invocations must emit identical bytes"
    );
    let stdout = String::from_utf8_lossy(&a.stdout);
    let first = stdout.lines().next().unwrap();
    assert!(
        first.starts_with("step=0 rule=") && first.contains("tids=") && first.contains("chan="),
        "{first}"
    );
    assert!(
        stdout.contains("rule=LINK-"),
        "forwarding steps traced: {stdout}"
    );
}

#[test]
fn df_check_verdicts() {
    let dir = std::env::temp_dir();
    let red = dir.join("mtlc_red.txt");
    std::fs::write(&red, "+1\n-1 +2\n-2\n").unwrap();
    let out = run(&["df-check", red.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("reducible"));

    let cyc = dir.join("mtlc_cyc.txt");
    std::fs::write(&cyc, "{+1 -2}\n{+2 -1}\n").unwrap();
    let out = run(&["df-check", cyc.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("non-reducible"));
    assert!(stdout.contains("witness"), "{stdout}");

    // an unpaired endpoint is a regularity failure, not a parse error
    let unp = dir.join("mtlc_unp.txt");
    std::fs::write(&unp, "+1\n").unwrap();
    let out = run(&["df-check", unp.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("no dual"));

    let bad = dir.join("mtlc_bad.txt");
    std::fs::write(&bad, "+1 oops\n").unwrap();
    let out = run(&["df-check", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 5);
}

#[test]
fn demos_match_their_oracles() {
    let out = run(&["demo", "sieve", "10"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("2 3 5 7 11 13 17 19 23 29"), "{stdout}");
    assert!(stdout.contains("oracle: match"), "{stdout}");

    let out = run(&["demo", "queue", "--ops", "40", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("oracle: match"));
}
