//! Dataset ingestion, standardization and synthetic data generation.
//!
//! A [`Dataset`] couples a feature matrix with hidden ground-truth labels.
//! Training code only ever sees [`Dataset::features`]; labels are reachable
//! through [`Dataset::ground_truth`], which the simulated oracle and the
//! evaluator use.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::scalar::Scalar;

/// Columns whose standard deviation falls below this are treated as constant.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Inner and outer radius of the shell anomalies are drawn from.
pub const SHELL_RADII: (f64, f64) = (4.0, 6.0);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing header row")]
    MissingHeader,
    #[error("duplicate header column `{0}`")]
    DuplicateColumn(String),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column `{column}`: `{value}` is not a finite number")]
    NonNumeric {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: label `{value}` is not 0 or 1")]
    NonBinaryLabel { line: u64, value: String },
    #[error("dataset has no rows")]
    Empty,
    #[error("every sample is labeled abnormal")]
    AllAbnormal,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature matrix contains a non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid synthetic configuration: {0}")]
    InvalidSynthetic(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Per-sample ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Label::Normal
        } else {
            Label::Abnormal
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }
}

/// Read access to hidden labels, handed out only to oracles and evaluators.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruth<'a>(&'a [u8]);

impl<'a> GroundTruth<'a> {
    pub fn label(&self, index: usize) -> Option<Label> {
        self.0.get(index).map(|&b| Label::from_bit(b))
    }

    pub fn bits(&self) -> &'a [u8] {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    name: String,
    columns: Vec<String>,
    features: Array2<T>,
    labels: Vec<u8>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        name: impl Into<String>,
        columns: Vec<String>,
        features: Array2<T>,
        labels: Vec<u8>,
    ) -> Result<Self, DataError> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if labels.len() != n {
            return Err(DataError::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if columns.len() != d {
            return Err(DataError::DimensionMismatch {
                expected: d,
                found: columns.len(),
            });
        }
        if let Some(((row, col), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::NonFinite { row, col });
        }
        if let Some(pos) = labels.iter().position(|&b| b > 1) {
            return Err(DataError::NonBinaryLabel {
                line: pos as u64 + 2,
                value: labels[pos].to_string(),
            });
        }
        if labels.iter().all(|&b| b == 1) {
            return Err(DataError::AllAbnormal);
        }
        Ok(Self {
            name: name.into(),
            columns,
            features,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// The label-free view handed to training code.
    pub fn features(&self) -> ArrayView2<'_, T> {
        self.features.view()
    }

    pub fn ground_truth(&self) -> GroundTruth<'_> {
        GroundTruth(&self.labels)
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&b| b == 1).count()
    }

    pub fn anomaly_ratio(&self) -> f64 {
        self.anomaly_count() as f64 / self.n() as f64
    }

    /// Writes the dataset as CSV with a trailing `label` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = self.columns.clone();
        header.push("label".to_string());
        out.write_record(&header)?;
        let mut record = Vec::with_capacity(self.d() + 1);
        for (row, label) in self.features.rows().into_iter().zip(&self.labels) {
            record.clear();
            record.extend(row.iter().map(|v| format!("{v:?}")));
            record.push(label.to_string());
            out.write_record(&record)?;
        }
        out.flush().map_err(|source| DataError::Io {
            path: PathBuf::from("<writer>"),
            source,
        })
    }
}

/// Loads a CSV file with a header row, a binary label column and optional
/// categorical columns that are one-hot expanded into `<col>=<value>` columns.
pub fn load_csv<T: Scalar>(
    path: impl AsRef<Path>,
    label_column: &str,
    categorical_columns: &[String],
) -> Result<Dataset<T>, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    read_csv(file, &name, label_column, categorical_columns)
}

/// Same as [`load_csv`] over any reader.
pub fn read_csv<T: Scalar, R: Read>(
    reader: R,
    name: &str,
    label_column: &str,
    categorical_columns: &[String],
) -> Result<Dataset<T>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => return Err(DataError::MissingHeader),
    };
    let header: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(String::is_empty) {
        return Err(DataError::MissingHeader);
    }
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(DataError::DuplicateColumn(h.clone()));
        }
    }
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingColumn(label_column.to_string()))?;
    let mut is_categorical = vec![false; header.len()];
    for c in categorical_columns {
        let idx = header
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| DataError::MissingColumn(c.clone()))?;
        is_categorical[idx] = true;
    }

    let mut rows: Vec<(u64, Vec<String>)> = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(DataError::RaggedRow {
                line,
                expected: header.len(),
                found: rec.len(),
            });
        }
        rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    // Categorical levels in sorted order.
    let levels: Vec<Vec<String>> = (0..header.len())
        .map(|c| {
            if is_categorical[c] {
                let set: BTreeSet<&str> = rows.iter().map(|(_, r)| r[c].as_str()).collect();
                set.into_iter().map(str::to_string).collect()
            } else {
                Vec::new()
            }
        })
        .collect();

    let mut columns = Vec::new();
    for (c, h) in header.iter().enumerate() {
        if c == label_idx {
            continue;
        }
        if is_categorical[c] {
            columns.extend(levels[c].iter().map(|v| format!("{h}={v}")));
        } else {
            columns.push(h.clone());
        }
    }

    let d = columns.len();
    let mut features = Array2::<T>::zeros((rows.len(), d));
    let mut labels = Vec::with_capacity(rows.len());
    for (r, (line, fields)) in rows.iter().enumerate() {
        let mut col = 0;
        for (c, value) in fields.iter().enumerate() {
            if c == label_idx {
                labels.push(parse_label(value, *line)?);
                continue;
            }
            if is_categorical[c] {
                let level = levels[c]
                    .iter()
                    .position(|l| l == value)
                    .expect("level collected above");
                features[[r, col + level]] = T::one();
                col += levels[c].len();
            } else {
                let parsed = value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DataError::NonNumeric {
                        line: *line,
                        column: header[c].clone(),
                        value: value.clone(),
                    })?;
                features[[r, col]] = T::lit(parsed);
                col += 1;
            }
        }
    }
    Dataset::new(name, columns, features, labels)
}

fn parse_label(value: &str, line: u64) -> Result<u8, DataError> {
    match value.parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(DataError::NonBinaryLabel {
            line,
            value: value.to_string(),
        }),
    }
}

/// Per-column mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalerParams<T> {
    pub mean: Array1<T>,
    pub std: Array1<T>,
}

pub fn fit_standardizer<T: Scalar>(ds: &Dataset<T>) -> Result<ScalerParams<T>, DataError> {
    ScalerParams::fit(ds.features())
}

pub fn apply_standardizer<T: Scalar>(
    ds: &Dataset<T>,
    scaler: &ScalerParams<T>,
) -> Result<Dataset<T>, DataError> {
    let features = scaler.transform(ds.features())?;
    Ok(Dataset {
        name: ds.name.clone(),
        columns: ds.columns.clone(),
        features,
        labels: ds.labels.clone(),
    })
}

/// Fits a scaler on `ds` and applies it.
pub fn standardize<T: Scalar>(ds: &Dataset<T>) -> Result<Dataset<T>, DataError> {
    apply_standardizer(ds, &fit_standardizer(ds)?)
}

impl<T: Scalar> ScalerParams<T> {
    pub fn fit(x: ArrayView2<'_, T>) -> Result<Self, DataError> {
        let n = x.nrows();
        if n == 0 {
            return Err(DataError::Empty);
        }
        let n_t = T::from_usize(n).expect("row count fits scalar");
        let mean = x.sum_axis(Axis(0)) / n_t;
        let mut var = Array1::<T>::zeros(x.ncols());
        for row in x.rows() {
            for ((v, &xi), &mu) in var.iter_mut().zip(row).zip(&mean) {
                let dev = xi - mu;
                *v += dev * dev;
            }
        }
        let floor = T::lit(DEGENERATE_STD);
        let std = var.mapv(|v| {
            let s = (v / n_t).sqrt();
            if s < floor {
                T::one()
            } else {
                s
            }
        });
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>, DataError> {
        if x.ncols() != self.dim() {
            return Err(DataError::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, &mu), &sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
        Ok(out)
    }
}

/// Draws `n` points in `d` dimensions: normals from a standard Gaussian at the
/// origin and exactly `round(n * anomaly_ratio)` anomalies uniformly (by
/// volume) from the shell with radii [`SHELL_RADII`]. Anomaly positions are
/// shuffled into the index range.
pub fn generate_synthetic<T: Scalar>(
    n: usize,
    d: usize,
    anomaly_ratio: f64,
    seed: u64,
) -> Result<Dataset<T>, DataError> {
    if d == 0 {
        return Err(DataError::InvalidSynthetic("dimension must be positive".into()));
    }
    if !(anomaly_ratio > 0.0 && anomaly_ratio < 0.5) {
        return Err(DataError::InvalidSynthetic(format!(
            "anomaly ratio {anomaly_ratio} outside (0, 0.5)"
        )));
    }
    if (n as f64) * anomaly_ratio < 1.0 {
        return Err(DataError::InvalidSynthetic(format!(
            "n = {n} with ratio {anomaly_ratio} yields no anomaly"
        )));
    }
    let n_anomalies = ((n as f64) * anomaly_ratio).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut labels = vec![0u8; n];
    labels[..n_anomalies].fill(1);
    labels.shuffle(&mut rng);

    let (inner, outer) = SHELL_RADII;
    let growth = (outer / inner).powi(d as i32) - 1.0;
    let mut features = Array2::<T>::zeros((n, d));
    let mut direction = vec![0.0f64; d];
    for (mut row, &label) in features.rows_mut().into_iter().zip(&labels) {
        if label == 0 {
            for v in row.iter_mut() {
                *v = T::lit(rng.sample::<f64, _>(StandardNormal));
            }
            continue;
        }
        let norm = loop {
            for v in direction.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break norm;
            }
        };
        let u: f64 = rng.random();
        let radius = (inner * (1.0 + u * growth).powf(1.0 / d as f64)).clamp(inner, outer);
        for (v, &dir) in row.iter_mut().zip(&direction) {
            *v = T::lit(radius * dir / norm);
        }
    }
    let columns = (0..d).map(|j| format!("x{j}")).collect();
    Dataset::new(
        format!("synthetic-n{n}-d{d}-r{anomaly_ratio}-s{seed}"),
        columns,
        features,
        labels,
    )
}
