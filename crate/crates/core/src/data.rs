//! Datasets: synthetic Gaussian blobs, CSV ingestion and seeded splits.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{check_finite, Matrix};
use crate::rng::{stream, Stream};

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Blobs {
        seed: u64,
        num_classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        spread: f64,
    },
    Csv {
        path: String,
        label_column: String,
        sha256: String,
    },
    Derived {
        parent: Box<Provenance>,
        operation: String,
    },
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if labels.len() != features.rows() {
            return Err(crate::error::shape_err(
                "dataset labels",
                features.rows(),
                labels.len(),
            ));
        }
        check_finite(features.as_slice(), "dataset features")?;
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `indices` in the given order, with a derived provenance.
    pub fn subset(&self, indices: &[usize], operation: impl Into<String>) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            provenance: Provenance::Derived {
                parent: Box::new(self.provenance.clone()),
                operation: operation.into(),
            },
        }
    }

    /// Per-dimension `(min, max)` of the features.
    pub fn feature_range(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|c| {
                (0..self.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    let v = self.features.get(r, c);
                    (lo.min(v), hi.max(v))
                })
            })
            .collect()
    }

    /// SHA-256 over labels and the bit patterns of the features.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_classes as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for (i, &l) in self.labels.iter().enumerate() {
            h.update((l as u64).to_le_bytes());
            for v in self.sample(i) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Isotropic Gaussian blobs around the scaled axis vectors.
///
/// Class `c < dim` is centred at `separation * e_c`; class `c >= dim` at
/// `-separation * e_{c - dim}`. Samples are ordered class by class.
pub fn gen_blobs(
    seed: u64,
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    spread: f64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidConfig(
            "blob counts and dimension must be positive".into(),
        ));
    }
    if !(spread > 0.0 && spread.is_finite()) || !separation.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "spread must be positive and finite, got {spread}"
        )));
    }
    if num_classes > 2 * dim {
        return Err(Error::InvalidConfig(format!(
            "{num_classes} classes need dim >= {}, got {dim}",
            num_classes.div_ceil(2)
        )));
    }
    let mut rng = stream(seed, Stream::Data);
    let n = num_classes * per_class;
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        let mut center = vec![0.0; dim];
        if c < dim {
            center[c] = separation;
        } else {
            center[c - dim] = -separation;
        }
        for _ in 0..per_class {
            for &m in &center {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Matrix::from_vec(n, dim, values)?,
        labels,
        num_classes,
        Provenance::Blobs {
            seed,
            num_classes,
            per_class,
            dim,
            separation,
            spread,
        },
    )
}

/// Loads a comma-separated file with a header row.
///
/// Every column except `label_column` must hold numbers. Labels that all
/// parse as non-negative integers are used as class indices directly
/// (`C = max + 1`); otherwise distinct strings are numbered in order of
/// first appearance. Rows in diagnostics are 1-based data rows (the header
/// is not counted).
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let display = path.display().to_string();
    let err = |message: String| Error::Data {
        path: display.clone(),
        message,
    };
    let bytes = fs::read(path).map_err(|e| err(format!("cannot read file: {e}")))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| err(format!("not valid UTF-8: {e}")))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| err("empty file (no header row)".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let label_idx = header
        .iter()
        .position(|h| *h == label_column)
        .ok_or_else(|| err(format!("no column named '{label_column}' in header")))?;
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(err("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(err(format!(
                "row {row}: expected {} fields, found {}",
                header.len(),
                cells.len()
            )));
        }
        for (c, cell) in cells.iter().enumerate() {
            if c == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                err(format!(
                    "row {row}, column '{}': cannot parse '{cell}' as a number",
                    header[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(err(format!(
                    "row {row}, column '{}': non-finite value '{cell}'",
                    header[c]
                )));
            }
            values.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(err("empty file (header only)".into()));
    }

    let numeric: Option<Vec<usize>> = raw_labels.iter().map(|s| s.parse().ok()).collect();
    let (labels, num_classes) = match numeric {
        Some(labels) => {
            let c = labels.iter().max().map_or(0, |m| m + 1);
            (labels, c)
        }
        None => {
            let mut index: HashMap<&str, usize> = HashMap::new();
            let labels = raw_labels
                .iter()
                .map(|s| {
                    let next = index.len();
                    *index.entry(s.as_str()).or_insert(next)
                })
                .collect();
            (labels, index.len())
        }
    };

    let n = raw_labels.len();
    Dataset::new(
        Matrix::from_vec(n, dim, values)?,
        labels,
        num_classes,
        Provenance::Csv {
            path: display.clone(),
            label_column: label_column.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        },
    )
}

/// Result of [`train_test_split`], with the source row indices of each side.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Seeded split. Both sides keep the source row order.
///
/// In stratified mode each class contributes `round(n_c * test_fraction)`
/// rows to the test side (at least one, and at least one left for training).
pub fn train_test_split(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = stream(seed, Stream::Split);
    let mut test_indices = Vec::new();
    if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
        for (i, &l) in data.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        for (c, mut rows) in by_class.into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            if rows.len() < 2 {
                return Err(Error::InvalidConfig(format!(
                    "class {c} has {} sample(s); stratified split needs at least 2",
                    rows.len()
                )));
            }
            let k = ((rows.len() as f64 * test_fraction).round() as usize).clamp(1, rows.len() - 1);
            rows.shuffle(&mut rng);
            test_indices.extend_from_slice(&rows[..k]);
        }
    } else {
        if data.len() < 2 {
            return Err(Error::InvalidConfig("cannot split a single sample".into()));
        }
        let mut rows: Vec<usize> = (0..data.len()).collect();
        rows.shuffle(&mut rng);
        let k = ((data.len() as f64 * test_fraction).round() as usize).clamp(1, data.len() - 1);
        test_indices.extend_from_slice(&rows[..k]);
    }
    test_indices.sort_unstable();
    let mut in_test = vec![false; data.len()];
    for &i in &test_indices {
        in_test[i] = true;
    }
    let train_indices: Vec<usize> = (0..data.len()).filter(|&i| !in_test[i]).collect();
    Ok(Split {
        train: data.subset(&train_indices, format!("split train (seed {seed})")),
        test: data.subset(&test_indices, format!("split test (seed {seed})")),
        train_indices,
        test_indices,
    })
}
