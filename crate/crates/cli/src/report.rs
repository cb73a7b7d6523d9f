//! Summary tables as CSV, JSON or Markdown.

use std::fmt::Write as _;
use std::str::FromStr;

use repro_logit::stats_util::SummaryTable;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(CliError::Invalid(format!("unknown report format `{other}`"))),
        }
    }
}

pub const CSV_HEADER: [&str; 6] = ["scenario", "method", "metric", "mean", "std", "n_reps"];

pub fn report_tables(table: &SummaryTable, format: ReportFormat) -> CliResult<String> {
    if table.rows.is_empty() {
        return Err(CliError::EmptyReport);
    }
    match format {
        ReportFormat::Csv => Ok(to_csv(table)),
        ReportFormat::Json => serde_json::to_string_pretty(table).map_err(|e| CliError::Invalid(e.to_string())),
        ReportFormat::Markdown => Ok(to_markdown(table)),
    }
}

fn to_csv(table: &SummaryTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in &table.rows {
        w.write_record([
            r.scenario.clone(),
            r.method.clone(),
            r.metric.clone(),
            r.mean.to_string(),
            r.std.to_string(),
            r.n_reps.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 fields")
}

/// One table per scenario; rows grouped by method, metric order preserved.
fn to_markdown(table: &SummaryTable) -> String {
    let mut scenarios: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    let mut out = String::new();
    for sc in scenarios {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.scenario == sc).collect();
        let mut methods: Vec<&str> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let _ = writeln!(out, "### {sc}\n");
        let _ = writeln!(out, "| method | metric | mean(std) | reps |");
        let _ = writeln!(out, "|---|---|---|---|");
        for m in methods {
            for r in rows.iter().filter(|r| r.method == m) {
                let _ = writeln!(out, "| {} | {} | {:.3}({:.3}) | {} |", r.method, r.metric, r.mean, r.std, r.n_reps);
            }
        }
        out.push('\n');
    }
    out
}

/// Reads back a CSV summary written by [`report_tables`].
pub fn parse_summary_csv(text: &str) -> CliResult<SummaryTable> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut table = SummaryTable::default();
    for rec in rdr.deserialize() {
        let row = rec.map_err(|e| CliError::Parse(e.to_string()))?;
        table.rows.push(row);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SummaryTable {
        let mut t = SummaryTable::default();
        t.push("M2s", "Repro-Logistic", "candidate_coverage", &[1.0, 1.0, 0.0]);
        t.push("M2s", "Oracle", "joint_coverage", &[1.0]);
        t.push("M2s", "Repro-Logistic", "coef_length_support", &[0.7, 0.9]);
        t
    }

    #[test]
    fn empty_report_is_an_error() {
        let t = SummaryTable::default();
        assert!(matches!(report_tables(&t, ReportFormat::Csv), Err(CliError::EmptyReport)));
    }

    #[test]
    fn csv_round_trips() {
        let t = sample();
        let text = report_tables(&t, ReportFormat::Csv).unwrap();
        assert!(text.starts_with("scenario,method,metric,mean,std,n_reps\n"));
        assert_eq!(parse_summary_csv(&text).unwrap(), t);
    }

    #[test]
    fn single_record_has_zero_std() {
        let text = report_tables(&sample(), ReportFormat::Markdown).unwrap();
        assert!(text.contains("| Oracle | joint_coverage | 1.000(0.000) | 1 |"));
    }

    #[test]
    fn markdown_groups_by_method() {
        let text = report_tables(&sample(), ReportFormat::Markdown).unwrap();
        let a = text.find("candidate_coverage").unwrap();
        let b = text.find("coef_length_support").unwrap();
        let c = text.find("joint_coverage").unwrap();
        assert!(a < b && b < c);
    }

    #[test]
    fn json_is_parseable() {
        let text = report_tables(&sample(), ReportFormat::Json).unwrap();
        let back: SummaryTable = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sample());
    }
}
