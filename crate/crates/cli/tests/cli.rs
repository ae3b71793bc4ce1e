use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_latent-mle"));
    c.env_remove("LATENT_MLE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_str(&stdout(o)).unwrap()
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const COUNTS: &str = r#"{"dims":[2,2,2],"entries":[37,12,9,21,14,30,25,52]}"#;

#[test]
fn mle_on_all_ones_is_interior_and_uniform() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "u.json", r#"{"dims":[2,2,2],"entries":[1,1,1,1,1,1,1,1]}"#);
    let v = json(&run(&["mle", "--counts", s(&f)]));
    assert_eq!(v["stratum"], "0");
    for x in v["estimate"]["entries"].as_array().unwrap() {
        assert!((x.as_f64().unwrap() - 0.125).abs() < 1e-15);
    }
    assert!(v.get("candidates").is_none());
}

#[test]
fn ledger_lists_every_stratum() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "u.json", COUNTS);
    let v = json(&run(&["mle", "--counts", s(&f), "--ledger"]));
    assert!(v["candidates"].as_array().unwrap().len() >= 34);
}

#[test]
fn malformed_input_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "u.json", r#"{"dims":[2,2,2],"entries":[1,2"#);
    assert_eq!(run(&["mle", "--counts", s(&f)]).status.code(), Some(2));
    let f = write(&dir, "v.json", r#"{"dims":[2,2],"entries":[1,2,3,4]}"#);
    assert_eq!(run(&["mle", "--counts", s(&f)]).status.code(), Some(2));
    assert_eq!(run(&["mle", "--counts", "/nonexistent/u.json"]).status.code(), Some(2));
}

#[test]
fn strict_mode_flags_degenerate_data() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "u.json", r#"{"dims":[2,2,2],"entries":[0,0,3,4,5,6,7,8]}"#);
    let o = run(&["mle", "--counts", s(&f), "--strict"]);
    assert_eq!(o.status.code(), Some(3));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["degenerate_input"], true);
    assert!(run(&["mle", "--counts", s(&f)]).status.success());
}

#[test]
fn em_agrees_with_exact_fit_and_repeats() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "u.json", COUNTS);
    let exact = json(&run(&["mle", "--counts", s(&f)]));
    let args = ["em", "--counts", s(&f), "--restarts", "50", "--seed", "4"];
    let a = stdout(&run(&args));
    let b = stdout(&run(&args));
    assert_eq!(a, b);
    let em: Value = serde_json::from_str(&a).unwrap();
    let gap = exact["loglik"].as_f64().unwrap() - em["best"]["loglik"].as_f64().unwrap();
    assert!(gap.abs() < 1e-6, "{gap}");
}

#[test]
fn em_handles_three_classes_on_wider_tables() {
    let dir = TempDir::new().unwrap();
    let entries: Vec<String> = (1..=18).map(|x| (x * 7 % 11 + 1).to_string()).collect();
    let body = format!(r#"{{"dims":[3,3,2],"entries":[{}]}}"#, entries.join(","));
    let f = write(&dir, "u.json", &body);
    let v = json(&run(&["em", "--counts", s(&f), "--rank", "3", "--restarts", "3", "--trace"]));
    assert_eq!(v["best"]["params"]["lambda"].as_array().unwrap().len(), 3);
    assert!(!v["best"]["trace"].as_array().unwrap().is_empty());
    assert_eq!(run(&["em", "--counts", s(&f), "--rank", "0"]).status.code(), Some(2));
}

#[test]
fn table1_csv_has_one_column_per_class() {
    let o = run(&["simulate", "table1", "--iters", "1000", "--seed", "1"]);
    let text = stdout(&o);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[..2], ["n", "iters"]);
    assert_eq!(header.len(), 2 + 7 + 1);
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    let total: f64 = row[2..9].iter().sum();
    assert!((total - 100.0).abs() < 0.01);
}

#[test]
fn epsilon_near_truth_stays_interior() {
    let text = stdout(&run(&["simulate", "epsilon", "--eps", "0.2", "--iters", "300"]));
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row[0], 0.2);
    assert!(row[3] > 99.0, "{text}");
}

#[test]
fn invalid_epsilon_is_an_input_error() {
    let o = run(&["simulate", "epsilon", "--eps", "0.7", "--iters", "10"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["simulate", "epsilon", "--eps", "abc"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn volume_reports_standard_error() {
    let text = stdout(&run(&["simulate", "volume", "--iters", "10000", "--seed", "2"]));
    let header = text.lines().next().unwrap();
    assert!(header.contains("se"), "{header}");
}

#[test]
fn output_file_and_metadata_do_not_depend_on_threads() {
    let dir = TempDir::new().unwrap();
    let mut csvs = Vec::new();
    for t in ["1", "3"] {
        let out = dir.path().join(format!("t{t}.csv"));
        let o = run(&["--threads", t, "simulate", "table1", "--iters", "400", "--seed", "9", "--out", s(&out)]);
        stdout(&o);
        let meta: Value = serde_json::from_str(&fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
        assert_eq!(meta["threads"].as_u64().unwrap().to_string(), t);
        assert_eq!(meta["report"]["seed"], 9);
        csvs.push(fs::read_to_string(&out).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn strata_list_has_the_full_catalog() {
    let v = json(&run(&["strata", "list"]));
    let all = v.as_array().unwrap();
    assert_eq!(all.len(), 34);
    assert_eq!(all[0]["id"], "0");
    assert_eq!(all[33]["id"], "123456");
}

#[test]
fn membership_command() {
    let dir = TempDir::new().unwrap();
    let ones = write(&dir, "t.json", r#"{"dims":[2,2,2],"entries":[1,1,1,1,1,1,1,1]}"#);
    let v = json(&run(&["membership", "--tensor", s(&ones)]));
    assert_eq!(v["member"], true);
    assert!(v["flattening_rank"].is_null());
    let off = write(&dir, "o.json", r#"{"dims":[2,2,2],"entries":[0,1,1,0,1,0,0,1]}"#);
    let v = json(&run(&["membership", "--tensor", s(&off)]));
    assert_eq!(v["member"], false);
    let wide = write(&dir, "w.json", r#"{"dims":[3,2],"entries":[1,1,1,1,1,1]}"#);
    assert_eq!(run(&["membership", "--tensor", s(&wide)]).status.code(), Some(2));
}
