use std::path::Path;
use std::process::{Command, Output};

fn osgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osgd")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn gamma_table_for_small_triple() {
    let o = osgd(&["gamma", "--n", "4", "--s", "2", "--q", "1", "--exact"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "j,gamma_exact_num,gamma_exact_den,gamma_float");
    assert_eq!(&lines[1..4], &["1,3,6,5e-1", "2,2,6,3.333333333333333e-1", "3,1,6,1.6666666666666666e-1"]);
    assert_eq!(lines[4], "4,0,6,0e0");
}

#[test]
fn float_weights_leave_exact_columns_empty() {
    let o = osgd(&["gamma", "--n", "30", "--s", "6", "--q", "2", "--float"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 30);
    assert!(rows.iter().all(|r| r[1].is_empty() && r[2].is_empty()));
    let sum: f64 = rows.iter().map(|r| r[3].parse::<f64>().unwrap()).sum();
    assert!((sum - 2.0).abs() < 1e-12);
}

#[test]
fn gamma_curve_columns() {
    let o = osgd(&["gamma-curve", "--n", "2000", "--s", "10", "--q", "3", "--points", "9"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("z,n_gamma,gamma_limit,beta_gap\n"));
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn verify_passes_and_corruption_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let ok = osgd(&["verify", "--report", report.to_str().unwrap()]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(std::fs::read_to_string(&report).unwrap().contains("\"passed\": true"));

    let bad = osgd(&["verify", "--corrupt-gamma"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL  gamma-sum"));
}

#[test]
fn verify_unbiasedness_reports_deviation() {
    let o = osgd(&["verify", "unbiasedness", "--n", "8", "--s", "4", "--q", "2", "--trials", "3", "--seed", "4"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("max componentwise deviation over 3 instances"));
    let refused = osgd(&["verify", "unbiasedness", "--n", "40", "--s", "20", "--q", "2", "--trials", "1"]);
    assert_eq!(refused.status.code(), Some(2));
}

#[test]
fn bound_term_csv() {
    let o = osgd(&["analyze", "bound-term", "--m", "1", "--s", "8", "--q", "4", "--n", "1000", "--delta", "0.05"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let expect = 2.0 * ((1.0f64 / 0.05).ln() / 2000.0).sqrt();
    assert!((row[5].parse::<f64>().unwrap() - expect).abs() < 1e-12);
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let gen = osgd(&["data", "gen-clusters", "--seed", "2", "--out", dir.join("c.bin").to_str().unwrap()]);
    assert!(gen.status.success());
    let cfg = r#"
config_id = "cli-run"
epochs = 3
seeds = [0, 1]

[dataset]
test_fraction = 0.25
[dataset.source]
kind = "cache"
path = "c.bin"

[model]
kind = "linear"

[loss]
kind = "cross-entropy"

[opt]
kind = "osgd"
batch_size = 16
lr = 0.05
"#;
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn train_with_baseline_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let o = osgd(&["train", "--config", cfg.to_str().unwrap(), "--baseline", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Improve (%)"));
    let records = std::fs::read_to_string(out.join("cli-run.csv")).unwrap();
    assert!(records.starts_with("seed,epoch,step,q,lr,train_avg_loss,train_ordered_loss,train_acc,test_error_pct,epoch_seconds\n"));
    assert_eq!(records.lines().count(), 1 + 2 * 4);
    let summary = std::fs::read_to_string(out.join("cli-run-summary.csv")).unwrap();
    assert!(summary.starts_with("config_id,mean_test_err,std_test_err,rel_improvement_pct\n"));
    assert!(summary.contains("cli-run-sgd,"));

    let gap = osgd(&["analyze", "gap", "--records", out.join("cli-run.csv").to_str().unwrap(), "--star", "0"]);
    assert!(gap.status.success());
    assert_eq!(stdout(&gap).lines().count(), 1 + 2 * 4);
}

#[test]
fn sweep_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = osgd(&["sweep-q", "--config", cfg.to_str().unwrap(), "--q", "1,16", "--override", "epochs=1", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("cli-run-q1") && text.contains("cli-run-q16"));
    let bad = osgd(&["sweep-q", "--config", cfg.to_str().unwrap(), "--q", "17"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn missing_data_is_reported_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    std::fs::remove_file(dir.path().join("c.bin")).unwrap();
    let o = osgd(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("c.bin"));
}
