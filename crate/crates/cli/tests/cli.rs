use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use winoprobe::backend::StubOracleSpec;
use winoprobe::corpus::ProfessionLexicon;
use winoprobe::report::{EvalVariant, RunConfig, BACKEND_URL_ENV};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_winoprobe"));
    c.env_remove(BACKEND_URL_ENV);
    c
}

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn stub_config() -> RunConfig {
    let mut c = RunConfig::new(vec!["stub".into()]);
    c.test_sets.t2_pro = Some(core_fixture("pro_stereotyped_type2.txt.test"));
    c.test_sets.t2_anti = Some(core_fixture("anti_stereotyped_type2.txt.test"));
    c.stub = Some(StubOracleSpec::stereotyped(&ProfessionLexicon::winobias_default(), 0.8));
    c.output_dir = "out".into();
    c
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn evaluate_writes_outputs_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &stub_config());
    let out = bin().args(["evaluate", "--config"]).arg(&config).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("stub,standard,T2,100.0,0.0,100.0,0.0,100.0,0.0"));
    let table = fs::read_to_string(dir.path().join("out/tables/table2.csv")).unwrap();
    assert_eq!(table, stdout);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &stub_config());
    let out_dir = dir.path().join("elsewhere");
    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .args(["--threshold", "0.9", "--models", "a,b", "--variant", "standard,online", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("tables/table2.csv")).unwrap();
    // Margin 0.8 is under the 0.9 threshold, so everything abstains.
    assert!(table.contains("a,standard,T2,0.0,0.0,0.0,0.0,0.0,0.0"));
    assert!(table.contains("b,online,T2,"));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = stub_config();
    c.threshold = 1.5;
    let config = write_config(dir.path(), &c);
    let out = bin().args(["evaluate", "--config"]).arg(&config).output().unwrap();
    assert_eq!(code(&out), 1);

    let config = write_config(dir.path(), &stub_config());
    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .args(["--variant", "bogus"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn unreachable_backend_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let config = write_config(dir.path(), &stub_config());
    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .env(BACKEND_URL_ENV, format!("http://127.0.0.1:{port}"))
        .args(["--retries", "0", "--timeout-ms", "500"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreadable_test_set_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = stub_config();
    c.test_sets.t2_pro = Some(dir.path().join("missing.txt"));
    let config = write_config(dir.path(), &c);
    let out = bin().args(["evaluate", "--config"]).arg(&config).output().unwrap();
    assert_eq!(code(&out), 3);
}

#[test]
fn augment_doubles_and_swaps() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("train.jsonl");
    let out = bin()
        .args(["augment", "--input"])
        .arg(fixture("annotated.jsonl"))
        .arg("--output")
        .arg(&output)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<String> = fs::read_to_string(&output)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(
        lines[0],
        r#"{"tokens":["King","[E1]","said","[MASK]","would","visit","his","mother","."],"label":"he"}"#
    );
    assert_eq!(
        lines[2],
        r#"{"tokens":["Queen","[E1]","said","[MASK]","would","visit","her","father","."],"label":"she"}"#
    );

    let plain = bin()
        .args(["augment", "--no-swap", "--input"])
        .arg(fixture("annotated.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&plain), 0);
    assert_eq!(String::from_utf8(plain.stdout).unwrap().lines().count(), 4);
}

#[test]
fn competency_table_from_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = stub_config();
    c.variants = vec![EvalVariant::PersonProbe];
    let config = write_config(dir.path(), &c);
    let out = bin().args(["evaluate", "--config"]).arg(&config).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin()
        .args(["competency", "--labels"])
        .arg(core_fixture("competency_labels.tsv"))
        .arg("--run")
        .arg(dir.path().join("out/raw/run_result.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("competency,stub\n"), "{csv}");
    assert_eq!(csv.lines().count(), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("fleiss kappa"));
}

#[test]
fn chart_from_run_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &stub_config());
    let out = bin().args(["evaluate", "--config"]).arg(&config).output().unwrap();
    assert_eq!(code(&out), 0);
    let svg = dir.path().join("chart.svg");
    let out = bin()
        .arg("chart")
        .arg(dir.path().join("out/raw/run_result.json"))
        .arg("--out")
        .arg(&svg)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(svg).unwrap();
    assert_eq!(text.matches(r#"data-label="stub""#).count(), 2);
}

#[test]
fn validate_corpus_reports_violations() {
    let out = bin()
        .args(["validate-corpus", "--task", "t2", "--pro"])
        .arg(core_fixture("pro_stereotyped_type2.txt.test"))
        .arg("--anti")
        .arg(core_fixture("anti_stereotyped_type2.txt.test"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("\"n_pairs\": 40"));

    // T1 lines with the referent first are not valid T2 data.
    let out = bin()
        .args(["validate-corpus", "--task", "t2", "--pro"])
        .arg(core_fixture("pro_stereotyped_type1.txt.test"))
        .arg("--anti")
        .arg(core_fixture("anti_stereotyped_type1.txt.test"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
}
