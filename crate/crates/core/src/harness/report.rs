use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::run::{ExperimentResult, RunRecord, Summary};

/// Per-run CSV: one row per record.
pub fn write_records_csv<'a, W: Write>(records: impl IntoIterator<Item = &'a RunRecord>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<RunRecord>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_id: String,
    pub mean_test_err: Option<f64>,
    pub std_test_err: Option<f64>,
    pub rel_improvement_pct: Option<f64>,
}

impl From<&Summary> for SummaryRow {
    fn from(s: &Summary) -> Self {
        SummaryRow {
            config_id: s.config_id.clone(),
            mean_test_err: s.mean_test_err,
            std_test_err: s.std_test_err,
            rel_improvement_pct: s.rel_improvement_pct,
        }
    }
}

pub fn write_summary_csv<'a, W: Write>(summaries: impl IntoIterator<Item = &'a Summary>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in summaries {
        out.serialize(SummaryRow::from(s))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: std::io::Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?)
}

fn cell(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.2} ({s:.2})"),
        (Some(m), None) => format!("{m:.2}"),
        _ => "-".into(),
    }
}

/// Plain-text comparison table, one row per `(label, baseline, ordered)`:
/// mean test error (std) of each method and the relative improvement.
pub fn comparison_table(rows: &[(String, &Summary, &Summary)]) -> String {
    let header = ["Data / model", "mini-batch", "ordered", "Improve (%)"];
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|(label, base, ord)| {
            let imp = match (base.mean_test_err, ord.mean_test_err) {
                (Some(b), Some(o)) if b != 0.0 => format!("{:.2}", 100.0 * (b - o) / b),
                _ => "-".into(),
            };
            [
                label.clone(),
                cell(base.mean_test_err, base.std_test_err),
                cell(ord.mean_test_err, ord.std_test_err),
                imp,
            ]
        })
        .collect();
    render(&header, &body)
}

/// Table of summaries, one row each.
pub fn summary_table<'a>(summaries: impl IntoIterator<Item = &'a Summary>) -> String {
    let header = ["Config", "Test error (%)", "Failed", "Improve (%)"];
    let body: Vec<[String; 4]> = summaries
        .into_iter()
        .map(|s| {
            [
                s.config_id.clone(),
                cell(s.mean_test_err, s.std_test_err),
                s.failed_seeds.len().to_string(),
                s.rel_improvement_pct.map_or("-".into(), |v| format!("{v:.2}")),
            ]
        })
        .collect();
    render(&header, &body)
}

fn render(header: &[&str; 4], body: &[[String; 4]]) -> String {
    let mut widths = header.map(str::len);
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: [&str; 4]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(k, (c, w))| if k == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, *header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in body {
        line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
    }
    out
}

/// Writes `<id>.csv` with every record and `<id>-summary.csv` into `dir`.
pub fn write_outputs(dir: &Path, results: &[&ExperimentResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for res in results {
        let f = std::fs::File::create(dir.join(format!("{}.csv", res.summary.config_id)))?;
        write_records_csv(res.records(), std::io::BufWriter::new(f))?;
    }
    if let Some(first) = results.first() {
        let f = std::fs::File::create(dir.join(format!("{}-summary.csv", first.summary.config_id)))?;
        write_summary_csv(results.iter().map(|r| &r.summary), std::io::BufWriter::new(f))?;
    }
    Ok(())
}
