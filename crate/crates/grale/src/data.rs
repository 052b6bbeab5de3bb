//! Dataset ingestion, synthetic data generation, stratified folding, and
//! evaluation metrics.
//!
//! Datasets are headerless CSV: an m×d numeric feature file (or an m×m
//! precomputed Gram matrix) paired with an m×k file of {0,1} labels. The
//! synthetic generator samples points in the unit square and labels them
//! by membership in k random circles.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use std::path::Path;

use crate::error::{Error, Result};

/// Input representation: raw feature vectors or a precomputed Gram matrix.
#[derive(Debug, Clone)]
pub enum Inputs {
    Features(Array2<f64>),
    Gram(Array2<f64>),
}

#[derive(Debug, Clone)]
pub struct MultilabelDataset {
    pub name: String,
    pub inputs: Inputs,
    pub labels: Array2<usize>,
}

impl MultilabelDataset {
    pub fn new(name: impl Into<String>, inputs: Inputs, labels: Array2<usize>) -> Result<Self> {
        let m = match &inputs {
            Inputs::Features(f) => f.nrows(),
            Inputs::Gram(g) => g.nrows(),
        };
        if m == 0 {
            return Err(Error::invalid("dataset has no examples"));
        }
        if labels.nrows() != m {
            return Err(Error::dimensions("label rows", m, labels.nrows()));
        }
        if labels.ncols() == 0 {
            return Err(Error::invalid("dataset has no label columns"));
        }
        Ok(MultilabelDataset {
            name: name.into(),
            inputs,
            labels,
        })
    }

    pub fn m(&self) -> usize {
        self.labels.nrows()
    }

    pub fn k(&self) -> usize {
        self.labels.ncols()
    }

    /// Mean number of positive microlabels per example.
    pub fn cardinality(&self) -> f64 {
        let positives = self.labels.iter().filter(|&&y| y == 1).count();
        positives as f64 / self.m() as f64
    }

    /// Cardinality divided by the number of labels.
    pub fn density(&self) -> f64 {
        self.cardinality() / self.k() as f64
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: line as usize,
        message: message.into(),
    }
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    parse_error(path, line, err.to_string())
}

fn read_csv_matrix<T, F>(path: &Path, mut parse: F) -> Result<Vec<Vec<T>>>
where
    F: FnMut(&str, u64) -> Result<T>,
{
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: Vec<T> = record
            .iter()
            .map(|cell| parse(cell.trim(), line))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn to_array<T>(path: &Path, rows: Vec<Vec<T>>) -> Result<Array2<T>> {
    let m = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let flat: Vec<T> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((m, d), flat)
        .map_err(|_| parse_error(path, 0, "rows have inconsistent lengths"))
}

/// Reads a headerless CSV of real numbers.
pub fn read_features_csv(path: &Path) -> Result<Array2<f64>> {
    let rows = read_csv_matrix(path, |cell, line| {
        cell.parse::<f64>()
            .map_err(|_| parse_error(path, line, format!("not a number: {cell:?}")))
    })?;
    to_array(path, rows)
}

/// Reads a headerless CSV of {0,1} labels.
pub fn read_labels_csv(path: &Path) -> Result<Array2<usize>> {
    let rows = read_csv_matrix(path, |cell, line| {
        let v = cell
            .parse::<usize>()
            .map_err(|_| parse_error(path, line, format!("not a label: {cell:?}")))?;
        if v > 1 {
            return Err(parse_error(path, line, format!("label {v} is not in {{0,1}}")));
        }
        Ok(v)
    })?;
    to_array(path, rows)
}

/// Reads a precomputed kernel matrix; squareness is checked downstream
/// where the matrix is interpreted.
pub fn read_gram_csv(path: &Path) -> Result<Array2<f64>> {
    read_features_csv(path)
}

pub fn write_features_csv(path: &Path, values: &Array2<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in values.rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writer.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_labels_csv(path: &Path, values: &Array2<usize>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in values.rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writer.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    writer.flush()?;
    Ok(())
}

/// Loads a feature/label CSV pair into a dataset.
pub fn load_dataset(
    name: impl Into<String>,
    features_path: &Path,
    labels_path: &Path,
) -> Result<MultilabelDataset> {
    let features = read_features_csv(features_path)?;
    let labels = read_labels_csv(labels_path)?;
    MultilabelDataset::new(name, Inputs::Features(features), labels)
}

/// Loads a precomputed Gram matrix and labels into a dataset.
pub fn load_gram_dataset(
    name: impl Into<String>,
    gram_path: &Path,
    labels_path: &Path,
) -> Result<MultilabelDataset> {
    let gram = read_gram_csv(gram_path)?;
    let labels = read_labels_csv(labels_path)?;
    MultilabelDataset::new(name, Inputs::Gram(gram), labels)
}

/// Geometry of the synthetic circle generator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CircleGeometry {
    pub center_low: f64,
    pub center_high: f64,
    pub radius: f64,
}

impl Default for CircleGeometry {
    fn default() -> Self {
        CircleGeometry {
            center_low: 0.35,
            center_high: 0.65,
            radius: 0.45,
        }
    }
}

/// Samples m points uniformly in the unit square; label j is 1 iff the
/// point falls inside circle j, whose center is drawn uniformly from
/// [center_low, center_high]^2. Features are (x, y, 1). Centers are drawn
/// before points, so the same seed yields the same circles at any m.
pub fn generate_circle(
    m: usize,
    k: usize,
    seed: u64,
    geometry: CircleGeometry,
) -> Result<MultilabelDataset> {
    if m == 0 || k == 0 {
        return Err(Error::invalid("circle data needs m >= 1 and k >= 1"));
    }
    if !(geometry.radius >= 0.0) || !geometry.radius.is_finite() {
        return Err(Error::invalid(format!(
            "circle radius must be non-negative, got {}",
            geometry.radius
        )));
    }
    if !(geometry.center_low <= geometry.center_high) {
        return Err(Error::invalid(format!(
            "circle center range is empty: [{}, {}]",
            geometry.center_low, geometry.center_high
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<(f64, f64)> = (0..k)
        .map(|_| {
            let span = geometry.center_high - geometry.center_low;
            let cx = geometry.center_low + span * rng.random::<f64>();
            let cy = geometry.center_low + span * rng.random::<f64>();
            (cx, cy)
        })
        .collect();
    let r2 = geometry.radius * geometry.radius;

    let mut features = Array2::zeros((m, 3));
    let mut labels = Array2::zeros((m, k));
    for i in 0..m {
        let x = rng.random::<f64>();
        let y = rng.random::<f64>();
        features[(i, 0)] = x;
        features[(i, 1)] = y;
        features[(i, 2)] = 1.0;
        for (j, &(cx, cy)) in centers.iter().enumerate() {
            let dx = x - cx;
            let dy = y - cy;
            labels[(i, j)] = ((dx * dx + dy * dy <= r2) as usize) & 1;
        }
    }
    MultilabelDataset::new(format!("circle{k}"), Inputs::Features(features), labels)
}

/// Fold index per example for stratified cross validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub n_folds: usize,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }
}

/// Groups examples by their number of positive labels, shuffles each group
/// with the seeded generator, and deals the groups round-robin into folds,
/// so per-fold counts within a group differ by at most one.
pub fn stratified_folds(
    labels: &Array2<usize>,
    n_folds: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    let m = labels.nrows();
    if n_folds < 2 {
        return Err(Error::invalid(format!(
            "cross validation needs at least 2 folds, got {n_folds}"
        )));
    }
    if m < n_folds {
        return Err(Error::invalid(format!(
            "cannot split {m} examples into {n_folds} folds"
        )));
    }
    let k = labels.ncols();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
    for i in 0..m {
        let positives = labels.row(i).iter().filter(|&&y| y == 1).count();
        groups[positives].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; m];
    let mut next = 0usize;
    for group in &mut groups {
        group.shuffle(&mut rng);
        for &i in group.iter() {
            fold_of[i] = next % n_folds;
            next += 1;
        }
    }
    Ok(FoldAssignment { fold_of, n_folds })
}

/// Accuracy and pooled F1 of a block of multilabel predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub microlabel_accuracy: f64,
    pub multilabel_accuracy: f64,
    /// `None` when there are no positive predictions, rendered as "-".
    pub micro_f1: Option<f64>,
}

impl Serialize for MetricsReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("MetricsReport", 3)?;
        s.serialize_field("microlabel_accuracy", &self.microlabel_accuracy)?;
        s.serialize_field("multilabel_accuracy", &self.multilabel_accuracy)?;
        match self.micro_f1 {
            Some(f1) => s.serialize_field("micro_f1", &f1)?,
            None => s.serialize_field("micro_f1", "-")?,
        }
        s.end()
    }
}

/// Microlabel accuracy over all cells, multilabel accuracy over whole
/// rows, and micro-F1 with counts pooled over all cells.
pub fn evaluate(predictions: &Array2<usize>, truth: &Array2<usize>) -> Result<MetricsReport> {
    if predictions.dim() != truth.dim() {
        return Err(Error::dimensions(
            "prediction shape",
            format!("{:?}", truth.dim()),
            format!("{:?}", predictions.dim()),
        ));
    }
    let (m, k) = truth.dim();
    if m == 0 || k == 0 {
        return Err(Error::invalid("cannot evaluate an empty prediction block"));
    }
    let mut cell_hits = 0usize;
    let mut row_hits = 0usize;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for i in 0..m {
        let mut all = true;
        for j in 0..k {
            let p = predictions[(i, j)];
            let t = truth[(i, j)];
            if p == t {
                cell_hits += 1;
            } else {
                all = false;
            }
            match (p, t) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
        }
        if all {
            row_hits += 1;
        }
    }
    let micro_f1 = if tp + fp == 0 {
        None
    } else if tp == 0 {
        Some(0.0)
    } else {
        let pre = tp as f64 / (tp + fp) as f64;
        let rec = tp as f64 / (tp + fn_) as f64;
        Some(2.0 * pre * rec / (pre + rec))
    };
    Ok(MetricsReport {
        microlabel_accuracy: cell_hits as f64 / (m * k) as f64,
        multilabel_accuracy: row_hits as f64 / m as f64,
        micro_f1,
    })
}
