use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn selpred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selpred")).args(args).output().expect("spawn selpred")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["simulate", "--out", path.to_str().unwrap(), "--records", "200"];
    args.extend_from_slice(extra);
    let out = selpred(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path
}

#[test]
fn validate_reports_line_of_bad_record() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(
        &path,
        concat!(
            "{\"labels\":[\"a\",\"b\"]}\n",
            "{\"id\":\"r1\",\"truth\":[0,1],\"samples\":[[0.2,0.9],[0.3,0.8]]}\n",
            "{\"id\":\"r2\",\"truth\":[0,1,1],\"samples\":[[0.2,0.9],[0.3,0.8]]}\n",
        ),
    )
    .unwrap();
    let out = selpred(&["validate", "--input", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bad.jsonl:3:"), "{}", stderr(&out));
}

#[test]
fn missing_input_and_bad_flags_exit_2() {
    assert_eq!(code(&selpred(&["validate", "--input", "/nonexistent/x.jsonl"])), 2);
    assert_eq!(code(&selpred(&["eval", "--input", "/nonexistent/x.jsonl"])), 2);
    assert_eq!(code(&selpred(&["eval", "--estimator", "entropy", "--input", "x"])), 2);
}

#[test]
fn eval_writes_tables_curves_and_run_record() {
    let dir = TempDir::new().unwrap();
    let log = simulate(dir.path(), "log.jsonl", &["--labels", "3", "--samples", "5"]);
    let out_dir = dir.path().join("out");
    let out = selpred(&[
        "eval",
        "--input",
        log.to_str().unwrap(),
        "--estimator",
        "pv",
        "--scale",
        "100",
        "--format",
        "csv,jsonl,svg",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[3][0], "macro");
    let aurcc: f64 = rows[0][1].parse().unwrap();
    assert!(aurcc > 1.0 && aurcc <= 100.0, "scaled AURCC {aurcc}");

    let jsonl = fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(first["aurcc"].to_string(), rows[0][1].to_string());

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["estimator"], "pv");
    assert_eq!(run["scale"], 100.0);
    assert_eq!(run["decision_source"], "det");
    assert_eq!(run["n_samples"], 5);

    for l in 0..3 {
        assert!(out_dir.join(format!("curves/curve_{l}.csv")).is_file());
        let svg = fs::read_to_string(out_dir.join(format!("curves/curve_{l}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn sample_estimators_refuse_single_sample_logs() {
    let dir = TempDir::new().unwrap();
    let log = simulate(dir.path(), "n1.jsonl", &["--labels", "2", "--samples", "1"]);
    let log = log.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out = selpred(&["eval", "--input", log, "--estimator", "bald", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("N ≥ 2"), "{}", stderr(&out));
    let ok = selpred(&["eval", "--input", log, "--estimator", "sr", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
}

#[test]
fn expect_samples_mismatch_fails() {
    let dir = TempDir::new().unwrap();
    let log = simulate(dir.path(), "log.jsonl", &["--labels", "2", "--samples", "4"]);
    let out = selpred(&[
        "eval",
        "--input",
        log.to_str().unwrap(),
        "--expect-samples",
        "10",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn curve_to_stdout_for_one_label() {
    let dir = TempDir::new().unwrap();
    let log = simulate(dir.path(), "log.jsonl", &[]);
    let out = selpred(&["curve", "--input", log.to_str().unwrap(), "--label", "P1-1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# label P1-1"));
    assert_eq!(lines.next(), Some("coverage,risk,confidence"));
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("1.0,"), "{last}");

    let unknown = selpred(&["curve", "--input", log.to_str().unwrap(), "--label", "99"]);
    assert_eq!(code(&unknown), 2);
}

#[test]
fn bucket_groups_configurations() {
    let dir = TempDir::new().unwrap();
    let a = simulate(dir.path(), "a.jsonl", &["--loss-tag", "bce", "--model-tag", "m1"]);
    let b = simulate(dir.path(), "b.jsonl", &["--loss-tag", "cer", "--model-tag", "m1", "--seed", "9"]);
    let out_dir = dir.path().join("bucket");
    let freq = fixture("ecthr_frequencies.csv");
    let out = selpred(&[
        "bucket",
        "--input",
        a.to_str().unwrap(),
        "--input",
        b.to_str().unwrap(),
        "--buckets",
        freq.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[5, 4, 4, 1]"));

    let report = fs::read_to_string(out_dir.join("bucket_report.csv")).unwrap();
    let rows: Vec<csv::StringRecord> =
        csv::Reader::from_reader(report.as_bytes()).records().map(Result::unwrap).collect();
    // 4 buckets × (4 estimators + 2 losses + 1 model)
    assert_eq!(rows.len(), 28);
    assert!(rows.iter().any(|r| &r[3] == "loss" && &r[4] == "cer"));

    let summary = fs::read_to_string(out_dir.join("summary.jsonl")).unwrap();
    for line in summary.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn bucket_requires_every_label_frequency() {
    let dir = TempDir::new().unwrap();
    let a = simulate(dir.path(), "a.jsonl", &[]);
    let freq = dir.path().join("freq.csv");
    fs::write(&freq, "label,fraction\n2,0.1\n3,0.2\n").unwrap();
    let out = selpred(&["bucket", "--input", a.to_str().unwrap(), "--buckets", freq.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing frequency"), "{}", stderr(&out));
}

#[test]
fn losscheck_catches_injected_fault() {
    let ok = selpred(&["losscheck", "--batches", "5"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = selpred(&["losscheck", "--batches", "5", "--inject-fault"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}
