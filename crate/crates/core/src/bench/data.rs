//! CSV ingestion for binary regression datasets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

/// How to turn a CSV file into features and labels.
///
/// All columns other than the label and `drop_columns` become features in
/// header order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestionSpec {
    pub label_column: String,
    /// Label cells equal to this literal map to `+1` and all others to `-1`.
    /// Without it, labels must be `{0, 1}` or `{-1, +1}`.
    #[serde(default)]
    pub positive_value: Option<String>,
    /// Append an all-ones feature after standardization.
    #[serde(default)]
    pub add_intercept: bool,
    #[serde(default)]
    pub drop_columns: Vec<String>,
}

impl IngestionSpec {
    pub fn new(label_column: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            positive_value: None,
            add_intercept: false,
            drop_columns: Vec::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("missing value at row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("non-numeric value `{value}` at row {row}, column `{column}`")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("invalid label `{value}` at row {row}; expected 0/1 or -1/+1")]
    InvalidLabel { row: usize, value: String },
    #[error("labels contain a single class ({0}); AUC is undefined")]
    SingleClass(f64),
    #[error("duplicate header name `{0}`")]
    DuplicateHeader(String),
    #[error("column `{0}` not found in header")]
    UnknownColumn(String),
    #[error("dataset has no rows")]
    Empty,
    #[error("dataset has no feature columns")]
    NoFeatures,
}

/// Features are kept raw; standardization happens per training fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: DMatrix<f64>,
    /// Entries in `{-1, +1}`.
    pub labels: DVector<f64>,
    pub feature_names: Vec<String>,
    pub intercept: bool,
}

impl Dataset {
    /// Validates labels and shapes.
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<f64>,
        labels: DVector<f64>,
        feature_names: Vec<String>,
        intercept: bool,
    ) -> Result<Self, DatasetError> {
        if features.nrows() == 0 {
            return Err(DatasetError::Empty);
        }
        if features.ncols() == 0 {
            return Err(DatasetError::NoFeatures);
        }
        assert_eq!(features.nrows(), labels.len(), "feature and label counts differ");
        assert_eq!(features.ncols(), feature_names.len(), "feature name count differs");
        for (i, &l) in labels.iter().enumerate() {
            if l != 1.0 && l != -1.0 {
                return Err(DatasetError::InvalidLabel {
                    row: i + 1,
                    value: l.to_string(),
                });
            }
        }
        if labels.iter().all(|&l| l == labels[0]) {
            return Err(DatasetError::SingleClass(labels[0]));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            feature_names,
            intercept,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature count before any intercept column.
    pub fn raw_features(&self) -> usize {
        self.features.ncols()
    }

    /// Model dimension `N`, including the intercept if requested.
    pub fn dimension(&self) -> usize {
        self.features.ncols() + usize::from(self.intercept)
    }

    /// Same data with the labels replaced.
    pub fn with_labels(&self, labels: DVector<f64>) -> Result<Self, DatasetError> {
        Self::new(
            self.name.clone(),
            self.features.clone(),
            labels,
            self.feature_names.clone(),
            self.intercept,
        )
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "?")
}

fn parse_label(cell: &str, row: usize, spec: &IngestionSpec) -> Result<f64, DatasetError> {
    if let Some(pos) = &spec.positive_value {
        return Ok(if cell == pos { 1.0 } else { -1.0 });
    }
    match cell.parse::<f64>() {
        Ok(v) if v == 1.0 => Ok(1.0),
        Ok(v) if v == 0.0 || v == -1.0 => Ok(-1.0),
        _ => Err(DatasetError::InvalidLabel {
            row,
            value: cell.to_string(),
        }),
    }
}

/// Parses a dataset from CSV text with a header row.
pub fn parse_dataset<R: Read>(reader: R, name: &str, spec: &IngestionSpec) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DatasetError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(DatasetError::DuplicateHeader(h.clone()));
        }
    }
    let position = |col: &str| {
        header
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| DatasetError::UnknownColumn(col.to_string()))
    };
    let label_idx = position(&spec.label_column)?;
    let mut dropped = vec![false; header.len()];
    dropped[label_idx] = true;
    for col in &spec.drop_columns {
        dropped[position(col)?] = true;
    }
    let feature_idx: Vec<usize> = (0..header.len()).filter(|&j| !dropped[j]).collect();
    if feature_idx.is_empty() {
        return Err(DatasetError::NoFeatures);
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DatasetError::Csv(e.to_string()))?;
        let label_cell = record.get(label_idx).unwrap_or("");
        if is_missing(label_cell) {
            return Err(DatasetError::MissingValue {
                row,
                column: spec.label_column.clone(),
            });
        }
        labels.push(parse_label(label_cell, row, spec)?);
        for &j in &feature_idx {
            let cell = record.get(j).unwrap_or("");
            if is_missing(cell) {
                return Err(DatasetError::MissingValue {
                    row,
                    column: header[j].clone(),
                });
            }
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DatasetError::NonNumeric {
                row,
                column: header[j].clone(),
                value: cell.to_string(),
            })?;
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(DatasetError::Empty);
    }
    let features = DMatrix::from_row_slice(labels.len(), feature_idx.len(), &values);
    let names = feature_idx.iter().map(|&j| header[j].clone()).collect();
    Dataset::new(name, features, DVector::from_vec(labels), names, spec.add_intercept)
}

/// Loads a CSV file; the dataset is named after the file stem.
pub fn load_dataset(path: &Path, spec: &IngestionSpec) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_dataset(std::io::BufReader::new(file), &name, spec)
}
