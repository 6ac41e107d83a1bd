//! CSV datasets: feature columns first, the last `n_targets` columns are targets.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use csv::{ReaderBuilder, Trim};
use ndarray::{Array2, ArrayView1};
use thiserror::Error;

use crate::grad_check::Sample;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no rows")]
    NoRows,
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: u64, expected: usize, found: usize },
    #[error("line {line}: need at least {needed} fields ({n_targets} target(s) plus one feature), found {found}")]
    TooFewFields {
        line: u64,
        needed: usize,
        n_targets: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: cannot parse `{value}` as a finite number")]
    Parse { line: u64, column: usize, value: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    /// Header row, when the file had one.
    pub columns: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, targets: Array2<f64>) -> Self {
        assert_eq!(features.nrows(), targets.nrows(), "feature/target row counts differ");
        Dataset {
            features,
            targets,
            columns: None,
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_width(&self) -> usize {
        self.features.ncols()
    }

    pub fn target_width(&self) -> usize {
        self.targets.ncols()
    }

    pub fn sample(&self, i: usize) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
        (self.features.row(i), self.targets.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ArrayView1<'_, f64>, ArrayView1<'_, f64>)> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    pub fn to_samples(&self) -> Vec<Sample> {
        self.iter().map(|(x, t)| (x.to_owned(), t.to_owned())).collect()
    }

    /// Serializes with 17 significant digits per value, so parsing the result
    /// reproduces every entry exactly.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        if let Some(cols) = &self.columns {
            s.push_str(&cols.join(","));
            s.push('\n');
        }
        for (x, t) in self.iter() {
            let mut first = true;
            for v in x.iter().chain(t.iter()) {
                if !first {
                    s.push(',');
                }
                first = false;
                write!(s, "{v:.16e}").expect("writing to a String");
            }
            s.push('\n');
        }
        s
    }
}

/// Parses CSV text. Decimal points only; no locale handling.
pub fn parse_csv(text: &str, n_targets: usize, has_header: bool) -> Result<Dataset, DataError> {
    parse_reader(text.as_bytes(), n_targets, has_header)
}

pub fn load_csv(path: impl AsRef<Path>, n_targets: usize, has_header: bool) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_reader(file, n_targets, has_header)
}

fn parse_reader<R: std::io::Read>(input: R, n_targets: usize, has_header: bool) -> Result<Dataset, DataError> {
    let mut reader = ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(input);
    let columns = if has_header {
        Some(reader.headers()?.iter().map(str::to_owned).collect::<Vec<_>>())
    } else {
        None
    };

    let mut width: Option<usize> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => {
                if record.len() < n_targets + 1 {
                    return Err(DataError::TooFewFields {
                        line,
                        needed: n_targets + 1,
                        n_targets,
                        found: record.len(),
                    });
                }
                width = Some(record.len());
            }
            Some(w) if w != record.len() => {
                return Err(DataError::Ragged {
                    line,
                    expected: w,
                    found: record.len(),
                })
            }
            Some(_) => {}
        }
        for (col, field) in record.iter().enumerate() {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(DataError::Parse {
                        line,
                        column: col + 1,
                        value: field.to_owned(),
                    })
                }
            }
        }
        rows += 1;
    }
    let width = width.ok_or(DataError::NoRows)?;
    let all = Array2::from_shape_vec((rows, width), values).expect("row-major values match shape");
    let d = width - n_targets;
    Ok(Dataset {
        features: all.slice(ndarray::s![.., ..d]).to_owned(),
        targets: all.slice(ndarray::s![.., d..]).to_owned(),
        columns,
    })
}
