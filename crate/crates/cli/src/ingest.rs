//! CSV ingestion: numeric covariates plus a binary label column, with the
//! zero-fraction and variance filters used for expression data.

use std::path::Path;

use nalgebra::DMatrix;
use repro_logit::{standardize_columns, validate_dataset, Dataset, Standardization};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub label_column: String,
    pub delimiter: u8,
    /// Drop columns whose fraction of exact zeros exceeds this.
    pub zero_fraction: Option<f64>,
    /// Keep this fraction of the remaining columns, highest variance first.
    pub top_variance: Option<f64>,
    pub standardize: bool,
}

impl IngestOptions {
    /// Plain parse: no filters, no standardization.
    pub fn raw(label_column: &str) -> Self {
        IngestOptions {
            label_column: label_column.to_string(),
            delimiter: b',',
            zero_fraction: None,
            top_variance: None,
            standardize: false,
        }
    }

    /// The expression-data pipeline: drop mostly-zero genes, keep the top
    /// 10% by variance, standardize.
    pub fn expression(label_column: &str) -> Self {
        IngestOptions {
            zero_fraction: Some(0.8),
            top_variance: Some(0.1),
            standardize: true,
            ..Self::raw(label_column)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Ingested {
    #[serde(skip)]
    pub dataset: Dataset,
    /// Header name of each retained column, in dataset order.
    pub names: Vec<String>,
    pub standardization: Option<Standardization>,
    pub dropped_zero: usize,
    pub dropped_variance: usize,
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> CliResult<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    ingest_reader(file, opts).map_err(|e| match e {
        CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn ingest_reader<R: std::io::Read>(reader: R, opts: &IngestOptions) -> CliResult<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let label_pos = headers
        .iter()
        .position(|h| h == opts.label_column)
        .ok_or_else(|| CliError::MissingColumn(opts.label_column.clone()))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_pos)
        .map(|(_, h)| h.to_string())
        .collect();
    let p = names.len();
    if p == 0 {
        return Err(CliError::Parse("no covariate columns".into()));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = r + 2;
        for (i, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::Parse(format!("line {line}, column `{}`: cannot parse `{cell}`", &headers[i])))?;
            if i == label_pos {
                if v != 0.0 && v != 1.0 {
                    return Err(repro_logit::Error::NonBinaryLabel {
                        row: r,
                        value: if v.is_finite() { v as i64 } else { i64::MAX },
                    }
                    .into());
                }
                labels.push(v as i64);
            } else {
                values.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(CliError::Parse("no data rows".into()));
    }
    let x = DMatrix::from_row_slice(n, p, &values);
    let (keep, dropped_zero, dropped_variance) = select_columns(&x, opts)?;
    let x = x.select_columns(&keep);
    let names = keep.iter().map(|&j| names[j].clone()).collect();
    let data = validate_dataset(x, &labels)?;
    let (dataset, standardization) = if opts.standardize {
        let (d, s) = standardize_columns(&data)?;
        (d, Some(s))
    } else {
        (data, None)
    };
    Ok(Ingested {
        dataset,
        names,
        standardization,
        dropped_zero,
        dropped_variance,
    })
}

fn csv_error(e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io("<csv>", io),
            _ => unreachable!("checked io kind"),
        }
    } else {
        CliError::Parse(e.to_string())
    }
}

/// Indices kept by the zero-fraction filter followed by the variance filter.
fn select_columns(x: &DMatrix<f64>, opts: &IngestOptions) -> CliResult<(Vec<usize>, usize, usize)> {
    let (n, p) = x.shape();
    let mut keep: Vec<usize> = (0..p).collect();
    if let Some(z) = opts.zero_fraction {
        if !(0.0..=1.0).contains(&z) {
            return Err(CliError::Invalid(format!("zero fraction must lie in [0,1], got {z}")));
        }
        keep.retain(|&j| {
            let zeros = x.column(j).iter().filter(|v| **v == 0.0).count();
            zeros as f64 / n as f64 <= z
        });
    }
    let dropped_zero = p - keep.len();
    let before = keep.len();
    if let Some(f) = opts.top_variance {
        if !(f > 0.0 && f <= 1.0) {
            return Err(CliError::Invalid(format!("variance fraction must lie in (0,1], got {f}")));
        }
        let target = ((f * keep.len() as f64).ceil() as usize).min(keep.len());
        let var = |j: usize| {
            let c = x.column(j);
            let mu = c.mean();
            c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>()
        };
        let mut ranked: Vec<(usize, f64)> = keep.iter().map(|&j| (j, var(j))).collect();
        // stable: equal variances keep file order
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut chosen: Vec<usize> = ranked.into_iter().take(target).map(|(j, _)| j).collect();
        chosen.sort_unstable();
        keep = chosen;
    }
    if keep.is_empty() {
        return Err(CliError::Invalid("every column was filtered out".into()));
    }
    let dropped_variance = before - keep.len();
    Ok((keep, dropped_zero, dropped_variance))
}
