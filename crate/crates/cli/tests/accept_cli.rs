use std::path::Path;
use std::process::{Command, Output};

fn did(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_did"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const SCORES: &str = "\
#classes: egy,lev
u1\t2.5\tegy\t0.75\t0.25
u2\t7.5\tlev\t0.75\t0.25
u3\t12.5\tlev\t0.125\t0.875
u4\t21.5\tegy\t0.375\t0.625
";

#[test]
fn evaluate_prints_accuracy_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.tsv"), SCORES).unwrap();
    let o = did(
        dir.path(),
        &["evaluate", "--scores", "s.tsv", "--out", "r.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let overall = table.lines().find(|l| l.starts_with("Overall")).unwrap();
    assert!(overall.contains("50.00%"), "{overall}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(json["overall"]["correct"], 2);
    assert_eq!(json["overall"]["count"], 4);
}

#[test]
fn fusing_a_file_with_itself_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.tsv"), SCORES).unwrap();
    let o = did(dir.path(), &["fuse", "s.tsv", "s.tsv", "--out", "f.tsv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("f.tsv")).unwrap(),
        SCORES
    );
}

#[test]
fn errors_map_to_kinds_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.tsv"), "u1\t2.5\tegy\t0.5\n").unwrap();
    std::fs::write(dir.path().join("s.tsv"), SCORES).unwrap();
    std::fs::write(dir.path().join("other.tsv"), SCORES.replace("u4", "u5")).unwrap();
    let cases: [(&[&str], i32, &str); 6] = [
        (&["evaluate", "--scores", "missing.tsv"], 10, "missing-file"),
        (&["evaluate", "--scores", "bad.tsv"], 6, "format"),
        (
            &["fuse", "s.tsv", "other.tsv", "--out", "x.tsv"],
            7,
            "alignment",
        ),
        (&["--train.bogus", "1", "config"], 4, "config"),
        (&["--train.learning_rate", "fast", "config"], 4, "config"),
        (&["--transformer.input_dim", "100", "config"], 4, "config"),
    ];
    for (args, code, kind) in cases {
        let o = did(dir.path(), args);
        assert_eq!(o.status.code(), Some(code), "{args:?}: {}", stderr(&o));
        assert!(
            stderr(&o).starts_with(&format!("error: kind={kind} ")),
            "{}",
            stderr(&o)
        );
    }
    assert!(!dir.path().join("x.tsv").exists());
}

#[test]
fn config_dump_round_trips_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let first = did(
        dir.path(),
        &["--train.epochs", "7", "--cnn.kernels=5,5,3,3", "config"],
    );
    assert!(first.status.success(), "{}", stderr(&first));
    let text = stdout(&first);
    assert!(text.contains("epochs = 7\n") && text.contains("kernels = 5,5,3,3\n"));
    std::fs::write(dir.path().join("run.cfg"), &text).unwrap();
    let second = did(dir.path(), &["--config", "run.cfg", "config"]);
    assert_eq!(stdout(&second), text);
    // An override beats the file.
    let third = did(
        dir.path(),
        &["--config", "run.cfg", "--train.epochs", "3", "config"],
    );
    assert!(stdout(&third).contains("epochs = 3\n"));
}

#[test]
fn gradcheck_passes_for_primitives_and_models() {
    let dir = tempfile::tempdir().unwrap();
    for scope in ["ops", "model"] {
        let o = did(dir.path(), &["gradcheck", "--scope", scope]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        assert!(out.lines().count() >= 3);
        assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
    }
}
