use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const LABEL_COLUMN: &str = "label";

/// Row-major feature matrix with named columns and one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::invalid(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != columns.len()) {
            return Err(Error::ShapeMismatch {
                op: "feature table",
                expected: vec![columns.len()],
                found: vec![r.len()],
            });
        }
        Ok(FeatureTable { columns, rows, labels })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Table restricted to `names`, in that order.
    pub fn select(&self, names: &[String]) -> Result<FeatureTable> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::invalid(format!("column '{n}' not found in {:?}", self.columns)))
            })
            .collect::<Result<_>>()?;
        Ok(FeatureTable {
            columns: names.to_vec(),
            rows: self.rows.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect(),
            labels: self.labels.clone(),
        })
    }

    /// Same rows with every label replaced.
    pub fn with_label(mut self, label: usize) -> Self {
        self.labels.iter_mut().for_each(|l| *l = label);
        self
    }
}

fn format_value(v: f64) -> String {
    // Both forms print the shortest string that parses back to the same bits.
    if v == 0.0 || (1e-4..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Writes `label,<columns...>` followed by one line per row.
pub fn write_features(path: impl AsRef<Path>, table: &FeatureTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![LABEL_COLUMN.to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    for (row, label) in table.rows.iter().zip(&table.labels) {
        let mut rec = vec![label.to_string()];
        rec.extend(row.iter().map(|&v| format_value(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: u64, reason: String| Error::MalformedRow { path: path.to_path_buf(), line, reason };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.get(0) != Some(LABEL_COLUMN) {
        return Err(malformed(1, format!("first column must be '{LABEL_COLUMN}'")));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != columns.len() + 1 {
            return Err(malformed(line, format!("expected {} fields, found {}", columns.len() + 1, rec.len())));
        }
        let label = rec[0].trim().parse::<usize>().map_err(|_| malformed(line, format!("bad label '{}'", &rec[0])))?;
        let row = rec
            .iter()
            .skip(1)
            .zip(&columns)
            .map(|(field, col)| {
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| malformed(line, format!("bad value '{field}' in column '{col}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
        labels.push(label);
    }
    FeatureTable::new(columns, rows, labels)
}
