use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_selfneg"));
    cmd.env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("SELFNEG_ENDPOINT")
        .env_remove("RUST_BACKTRACE");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Two names, two professions, three verbs.
fn toy(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let names = dir.join("names.tsv");
    let profs = dir.join("professions.tsv");
    let verbs = dir.join("verbs.txt");
    fs::write(&names, "Jessica\tfeminine\nJohn\tmasculine\n").unwrap();
    fs::write(&profs, "architect\ndancer\n").unwrap();
    fs::write(&verbs, "#tokenizer=mock:blind\nsail\nsmoke\nswim\n").unwrap();
    (names, profs, verbs)
}

fn lex_args<'a>(cmd: &'a mut Command, t: &(PathBuf, PathBuf, PathBuf)) -> &'a mut Command {
    cmd.arg("--names").arg(&t.0).arg("--professions").arg(&t.1)
}

#[test]
fn select_prints_stats_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let t = toy(dir.path());
    for backend in ["mock:blind", "mock:perfect"] {
        let out_file = dir.path().join(format!("{backend}.jsonl"));
        let o = run(lex_args(bin().args(["select", "--backend", backend, "--max-verbs-per-pair", "2"]), &t)
            .arg("--verbs")
            .arg(&t.2)
            .arg("--out")
            .arg(&out_file));
        let text = stdout(&o);
        let values: Vec<&str> = text.lines().map(|l| l.split_whitespace().last().unwrap()).collect();
        assert_eq!(values, ["3", "4", "12", "12", "100.0", "8"], "{backend}");
        assert!(out_file.exists());
    }
}

#[test]
fn empty_lexicon_fails() {
    let dir = tempfile::tempdir().unwrap();
    let t = toy(dir.path());
    fs::write(&t.2, "#tokenizer=mock:blind\n").unwrap();
    let o = lex_args(bin().args(["select", "--backend", "mock:blind"]), &t)
        .arg("--verbs")
        .arg(&t.2)
        .arg("--out")
        .arg(dir.path().join("s.jsonl"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty lexicon"));
}

#[test]
fn eval_scnt_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let t = toy(dir.path());
    let out = dir.path().join("run");
    let o = run(lex_args(bin().args(["eval", "scnt", "--backend", "mock:perfect"]), &t)
        .arg("--verbs")
        .arg(&t.2)
        .arg("--out")
        .arg(&out));
    assert!(stdout(&o).contains("| CnTp | 100.0 |"));
    assert_eq!(
        fs::read_to_string(out.join("table5.csv")).unwrap(),
        "pattern,drop\nCpTn,100.0\nCnTp,100.0\nCnTn,0.0\nCpTv,0.0\n"
    );
    for f in ["selection.jsonl", "report.json", "report.csv", "table5.md", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    // rerun is byte-identical
    let out2 = dir.path().join("run2");
    run(lex_args(bin().args(["eval", "scnt", "--backend", "mock:perfect", "--workers", "16"]), &t)
        .arg("--verbs")
        .arg(&t.2)
        .arg("--out")
        .arg(&out2));
    for f in ["selection.jsonl", "report.json", "manifest.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f}");
    }

    // a selection from another backend is refused
    let o = bin()
        .args(["eval", "scnt", "--backend", "mock:blind", "--selection"])
        .arg(out.join("selection.jsonl"))
        .arg("--out")
        .arg(dir.path().join("refused"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("provenance mismatch"));
}

#[test]
fn eval_gh22_blind_rates_are_all_100() {
    let dir = tempfile::tempdir().unwrap();
    let t = toy(dir.path());
    let out = dir.path().join("gh22");
    run(lex_args(bin().args(["eval", "gh22", "--backend", "mock:blind"]), &t).arg("--out").arg(&out));
    let csv = fs::read_to_string(out.join("table2.csv")).unwrap();
    let rates: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(rates, ["100.0"; 8]);
}

#[test]
fn coref_suite_table_and_diff() {
    let dir = tempfile::tempdir().unwrap();
    let t = toy(dir.path());
    fs::write(&t.0, "Jessica\tfeminine\nJohn\tmasculine\nMaria\tfeminine\nDavid\tmasculine\n").unwrap();
    let out = dir.path().join("coref");
    let o = run(lex_args(bin().args(["eval", "coref", "--backend", "mock:perfect"]), &t)
        .arg("--verbs")
        .arg(&t.2)
        .arg("--out")
        .arg(&out));
    assert!(stdout(&o).contains("| # | 24 | 24 | 24 |"));

    let o = run(bin()
        .args(["table", "--shape", "table5", "--format", "csv", "--report"])
        .arg(out.join("report-repeat.json")));
    assert!(stdout(&o).starts_with("pattern,drop\nCpTn,100.0"));

    let o = run(bin()
        .args(["diff", "--strict"])
        .arg(out.join("report-repeat.json"))
        .arg(out.join("report-repeat.json")));
    assert!(stdout(&o).contains("(same setup)"));
}

#[test]
fn names_limit_takes_a_prefix_per_gender() {
    let dir = tempfile::tempdir().unwrap();
    let t = toy(dir.path());
    fs::write(&t.0, "Jessica\tfeminine\nMaria\tfeminine\nJohn\tmasculine\nDavid\tmasculine\n").unwrap();
    let o = run(lex_args(bin().args(["select", "--backend", "mock:blind", "--names-limit", "1", "--profs-limit", "1"]), &t)
        .arg("--verbs")
        .arg(&t.2)
        .arg("--out")
        .arg(dir.path().join("s.jsonl")));
    assert!(stdout(&o).contains("available pairs     2"));
    let sel = fs::read_to_string(dir.path().join("s.jsonl")).unwrap();
    assert!(sel.contains("Jessica") && sel.contains("John"));
    assert!(!sel.contains("Maria") && !sel.contains("David"));
}

#[test]
fn remote_run_through_serve_mock_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let t = toy(dir.path());
    let server = format!(
        "stdio:{} serve-mock --kind perfect --backend-id toy-perfect",
        env!("CARGO_BIN_EXE_selfneg")
    );
    let remote = dir.path().join("remote");
    let cache = dir.path().join("cache.jsonl");
    for _ in 0..2 {
        run(lex_args(bin().args(["eval", "scnt", "--backend", "toy-perfect"]), &t)
            .env("SELFNEG_ENDPOINT", &server)
            .arg("--cache")
            .arg(&cache)
            .arg("--verbs")
            .arg(&t.2)
            .arg("--out")
            .arg(&remote));
    }
    let local = dir.path().join("local");
    run(lex_args(bin().args(["eval", "scnt", "--backend", "mock:perfect"]), &t)
        .arg("--verbs")
        .arg(&t.2)
        .arg("--out")
        .arg(&local));
    assert_eq!(
        fs::read(remote.join("table5.csv")).unwrap(),
        fs::read(local.join("table5.csv")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(remote.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cache"]["misses"], 0, "second run is served from the cache");
}

#[test]
fn mock_with_endpoint_is_rejected() {
    let o = bin()
        .args(["render", "--name", "Jessica", "--profession", "dancer", "--verb", "smoke"])
        .output()
        .unwrap();
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).lines().count(),
        1,
        "render works without a backend"
    );
    let dir = tempfile::tempdir().unwrap();
    let t = toy(dir.path());
    let o = lex_args(bin().args(["eval", "gh22", "--backend", "mock:blind", "--endpoint", "http://127.0.0.1:9/"]), &t)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!o.status.success());
}
