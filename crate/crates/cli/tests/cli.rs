use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

fn ehrbench(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehrbench"))
        .args(args)
        .current_dir(dir)
        .env_remove("LLM_ENDPOINT")
        .env_remove("EMBED_ENDPOINT")
        .env_remove("CACHE_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Corpus and datasets for 40 patients under `dir`.
fn prepare(dir: &Path) {
    let gen = ehrbench(
        &[
            "gen-data",
            "--out",
            "corpus",
            "--patients",
            "40",
            "--seed",
            "3",
        ],
        dir,
    );
    assert!(
        gen.status.success(),
        "{}",
        String::from_utf8_lossy(&gen.stderr)
    );
    let build = ehrbench(
        &["build-datasets", "--corpus", "corpus", "--out", "data"],
        dir,
    );
    assert!(
        build.status.success(),
        "{}",
        String::from_utf8_lossy(&build.stderr)
    );
    assert!(stdout(&build).contains("extraction"));
}

#[test]
fn mock_runs_succeed_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let base = [
        "--corpus",
        "corpus",
        "--dataset",
        "data",
        "--results",
        "res",
    ];

    let ext = ehrbench(
        &[
            &["run-extract", "--mock", "echo-gold", "--cache", "cache"][..],
            &base,
        ]
        .concat(),
        dir,
    );
    assert_eq!(
        ext.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ext.stderr)
    );
    assert!(stdout(&ext).contains("100.00"), "{}", stdout(&ext));

    let again = ehrbench(
        &[
            &["run-extract", "--mock", "echo-gold", "--cache", "cache"][..],
            &base,
        ]
        .concat(),
        dir,
    );
    assert!(
        stdout(&again).contains("cache hit rate 1.00"),
        "{}",
        stdout(&again)
    );

    let args = [
        &[
            "run-retrieve",
            "--mock",
            "needle",
            "--limit",
            "5",
            "--depth",
            "20",
            "--run-file",
            "run.txt",
        ][..],
        &base,
    ]
    .concat();
    let ret = ehrbench(&args, dir);
    assert_eq!(
        ret.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ret.stderr)
    );
    let run = std::fs::read_to_string(dir.join("run.txt")).unwrap();
    assert_eq!(run.lines().count(), 5 * 20);

    let dense = [
        &[
            "run-retrieve",
            "--mock",
            "needle",
            "--limit",
            "3",
            "--depth",
            "10",
            "--first-stage",
            "dense",
        ][..],
        &base,
    ]
    .concat();
    let o = ehrbench(&dense, dir);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let rep = ehrbench(
        &[
            "report",
            "--results",
            "res",
            "--fixtures",
            "--csv",
            "report.csv",
        ],
        dir,
    );
    assert_eq!(rep.status.code(), Some(0));
    assert!(stdout(&rep).contains("+26.79"));
    assert!(std::fs::read_to_string(dir.join("report.csv"))
        .unwrap()
        .starts_with("setting,config"));

    let dump = ehrbench(
        &[
            &[
                "dump-prompts",
                "--task",
                "extraction",
                "--out",
                "p.jsonl",
                "--k",
                "1",
                "--limit",
                "3",
                "--mock",
                "echo",
            ][..],
            &base,
        ]
        .concat(),
        dir,
    );
    assert_eq!(
        dump.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&dump.stderr)
    );
    assert_eq!(
        std::fs::read_to_string(dir.join("p.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn configuration_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let base = [
        "--corpus",
        "corpus",
        "--dataset",
        "data",
        "--results",
        "res",
        "--mock",
        "needle",
    ];
    let bad = [
        vec!["run-retrieve", "--demo", "patient", "--k", "1"],
        vec!["run-extract", "--k", "4"],
        vec!["run-extract", "--keep-ratio", "0"],
        vec!["run-extract", "--selection", "most"],
    ];
    for args in bad {
        let o = ehrbench(&[&args[..], &base].concat(), dir);
        assert_eq!(
            o.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert_eq!(ehrbench(&["run-extract"], dir).status.code(), Some(1));
    assert_eq!(ehrbench(&["frobnicate"], dir).status.code(), Some(1));
}

#[test]
fn unreachable_endpoint_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let o = Command::new(env!("CARGO_BIN_EXE_ehrbench"))
        .args([
            "run-extract",
            "--corpus",
            "corpus",
            "--dataset",
            "data",
            "--results",
            "res",
            "--limit",
            "2",
        ])
        .current_dir(dir)
        .env("LLM_ENDPOINT", format!("http://127.0.0.1:{port}"))
        .env_remove("EMBED_ENDPOINT")
        .env_remove("CACHE_DIR")
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
