use std::path::Path;
use std::process::{Command, Output};

use fha_core::harness::parse_results;

fn fha(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fha"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn fha")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SHORT_CONFIG: &str = r#"{"tohan": {"max_epochs": 30, "pretrain_epochs": 10, "adapt_epochs": 10}}"#;

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = fha(&["gen-data", "--task", "rot40", "--seed", "4", "--out", "a"], dir.path());
    let b = fha(&["gen-data", "--task", "rot40", "--seed", "4", "--out", "b"], dir.path());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    for name in ["source.fhd", "target.fhd", "target_test.fhd"] {
        assert!(dir.path().join("a").join(name).is_file());
    }
    let sums = |o: &Output| -> Vec<String> {
        stdout(o).lines().map(|l| l.split_whitespace().next().unwrap().to_string()).collect()
    };
    assert_eq!(sums(&a).len(), 3);
    assert_eq!(sums(&a), sums(&b));
    let c = fha(&["gen-data", "--task", "rot40", "--seed", "5", "--out", "c"], dir.path());
    assert_ne!(sums(&a), sums(&c));
}

#[test]
fn bad_rotation_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fha(&["gen-data", "--rotation", "40rad", "--out", "x"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("x").exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fha(&["frobnicate"], dir.path())), 2);
}

#[test]
fn run_with_missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fha(&["run", "--config", "nope.json"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn run_rejects_unknown_config_fields_and_bad_shots() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"shots": [1], "learning_rate": 3}"#).unwrap();
    assert_eq!(code(&fha(&["run", "--config", "c.json"], dir.path())), 2);
    let o = fha(&["run", "--method", "wa", "--shots", "8", "--seed", "0"], dir.path());
    assert_eq!(code(&o), 2);
    let o = fha(&["run", "--method", "fada", "--seed", "0"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn run_writes_one_line_per_shot_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SHORT_CONFIG).unwrap();
    let o = fha(
        &[
            "run", "--config", "c.json", "--method", "tohan", "--shots", "1,3,7", "--seeds", "0..9",
            "--jobs", "2", "--out", "r.jsonl", "--trace-dir", "traces",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let parsed = parse_results(&std::fs::read_to_string(dir.path().join("r.jsonl")).unwrap());
    assert_eq!(parsed.results.len(), 30);
    assert!(parsed.results.iter().all(|r| r.task == "rot40"));
    assert_eq!(std::fs::read_dir(dir.path().join("traces")).unwrap().count(), 30);
}

#[test]
fn run_on_saved_data_names_the_task_after_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fha(&["gen-data", "--out", "rot40-data"], dir.path())), 0);
    let o = fha(
        &["run", "--data", "rot40-data", "--method", "wa,ft", "--shots", "1", "--seed", "0", "--out", "r.jsonl"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let parsed = parse_results(&std::fs::read_to_string(dir.path().join("r.jsonl")).unwrap());
    assert_eq!(parsed.results.len(), 2);
    assert!(parsed.results.iter().all(|r| r.task == "rot40-data"));
    let missing = fha(&["run", "--data", "absent", "--method", "wa", "--seed", "0"], dir.path());
    assert_eq!(code(&missing), 2);
}

#[test]
fn summarize_formats_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let lines = [
        r#"{"method":"wa","task":"t","n_t":1,"seed":0,"accuracy":0.5,"wa_accuracy":0.5,"wall_ms":1}"#,
        r#"{"method":"wa","task":"t","n_t":1,"seed":1,"accuracy":0.75,"wa_accuracy":0.75,"wall_ms":1}"#,
        r#"{"method":"tohan","task":"t","n_t":1,"seed":0,"error":"diverged"}"#,
    ];
    std::fs::write(dir.path().join("ok.jsonl"), lines.join("\n")).unwrap();
    let table = fha(&["summarize", "ok.jsonl"], dir.path());
    assert_eq!(code(&table), 0);
    let text = stdout(&table);
    assert!(text.starts_with("method"));
    assert!(text.contains("62.5±17.7"), "{text}");

    let csv = fha(&["summarize", "ok.jsonl", "--format", "csv"], dir.path());
    assert_eq!(code(&csv), 0);
    let csv = stdout(&csv);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "method,n_t,mean_pct,std_pct,seeds");
    assert!(rows[1].starts_with("wa,1,62.5"));
    assert!(rows[1].ends_with(",2"));

    std::fs::write(dir.path().join("bad.jsonl"), format!("{}\n{{oops\n", lines[0])).unwrap();
    let bad = fha(&["summarize", "bad.jsonl"], dir.path());
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("50.0±NA"));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bad.jsonl:2"));

    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    assert_eq!(code(&fha(&["summarize", "empty.jsonl"], dir.path())), 1);
    assert_eq!(code(&fha(&["summarize", "absent.jsonl"], dir.path())), 2);
}

#[test]
fn train_source_then_dump_embedding() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fha(&["gen-data", "--out", "d"], dir.path())), 0);
    let t = fha(&["train-source", "--data", "d", "--seed", "1", "--out", "h.json"], dir.path());
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    let e = fha(&["dump-embed", "--model", "h.json", "--data", "d", "--out", "e.csv"], dir.path());
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    let csv = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert!(csv.starts_with("x,y,label,domain\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 600);
    for domain in ["source", "target", "target_test"] {
        assert!(csv.lines().any(|l| l.ends_with(&format!(",{domain}"))));
    }
    std::fs::write(dir.path().join("junk.json"), "{}").unwrap();
    let junk = fha(&["dump-embed", "--model", "junk.json", "--data", "d"], dir.path());
    assert_eq!(code(&junk), 2);
}
