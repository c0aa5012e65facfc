//! Datasets, the data-module contract and seeded Gaussian blobs.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::rng::{derive_seed, SplitMix64};

const VALIDATION_STREAM: u64 = 0x76_61_6c;

/// Feature matrix (one row per sample) with integer class labels in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl DatasetSplit {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self, BackendError> {
        if features.nrows() != labels.len() {
            return Err(BackendError::ShapeMismatch {
                what: "label count",
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if n_classes == 0 {
            return Err(BackendError::InvalidConfig("n_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(BackendError::InvalidConfig(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Mutable access for deliberate fault injection in data-analysis tests.
    pub fn features_mut(&mut self) -> &mut Array2<f64> {
        &mut self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> DatasetSplit {
        DatasetSplit {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// CSV with header `f0..f{d-1},label`, one row per sample, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.n_features() {
            let _ = write!(out, "f{j},");
        }
        out.push_str("label\n");
        for (row, label) in self.features.rows().into_iter().zip(&self.labels) {
            for x in row {
                let _ = write!(out, "{x},");
            }
            let _ = writeln!(out, "{label}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// Provides the training and validation splits a step works on.
pub trait DataModule {
    fn train_split(&self) -> &DatasetSplit;
    fn validation_split(&self) -> &DatasetSplit;

    fn n_classes(&self) -> usize {
        self.train_split().n_classes()
    }

    fn n_features(&self) -> usize {
        self.train_split().n_features()
    }
}

/// Owned pair of splits.
#[derive(Debug, Clone, PartialEq)]
pub struct InMemoryData {
    pub train: DatasetSplit,
    pub validation: DatasetSplit,
}

impl InMemoryData {
    pub fn new(train: DatasetSplit, validation: DatasetSplit) -> Self {
        Self { train, validation }
    }
}

impl DataModule for InMemoryData {
    fn train_split(&self) -> &DatasetSplit {
        &self.train
    }

    fn validation_split(&self) -> &DatasetSplit {
        &self.validation
    }
}

/// Serializable description of a blobs task, stored in the project manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsSpec {
    pub n_per_class: usize,
    pub features: usize,
    pub classes: usize,
    pub spread: f64,
    pub center_scale: f64,
    pub seed: u64,
}

impl BlobsSpec {
    pub fn generate(&self) -> Result<InMemoryData, BackendError> {
        let (train, validation) = make_blobs(
            self.n_per_class,
            self.features,
            self.classes,
            self.spread,
            self.center_scale,
            self.seed,
        )?;
        Ok(InMemoryData { train, validation })
    }

    pub fn centers(&self) -> Array2<f64> {
        blob_centers(self.features, self.classes, self.center_scale, self.seed)
    }
}

/// Class centers drawn as `center_scale * N(0, I)` from `seed`.
pub fn blob_centers(d: usize, n_classes: usize, center_scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = SplitMix64::new(seed);
    Array2::from_shape_fn((n_classes, d), |_| center_scale * rng.gaussian())
}

/// Gaussian blobs around seeded random centers. The validation split reuses the
/// centers with noise drawn from a seed derived from `seed + 1`.
pub fn make_blobs(
    n_per_class: usize,
    d: usize,
    n_classes: usize,
    spread: f64,
    center_scale: f64,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit), BackendError> {
    if d == 0 || n_classes == 0 || n_per_class == 0 {
        return Err(BackendError::InvalidConfig(
            "blobs need positive sample, feature and class counts".into(),
        ));
    }
    let centers = blob_centers(d, n_classes, center_scale, seed);
    make_blobs_around(&centers, n_per_class, spread, seed)
}

/// Gaussian blobs around the given centers (one row per class).
pub fn make_blobs_around(
    centers: &Array2<f64>,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit), BackendError> {
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(BackendError::InvalidConfig(format!(
            "spread must be finite and non-negative, got {spread}"
        )));
    }
    let train = sample_split(centers, n_per_class, spread, derive_seed(seed, 0))?;
    let validation = sample_split(
        centers,
        n_per_class,
        spread,
        derive_seed(seed.wrapping_add(1), VALIDATION_STREAM),
    )?;
    Ok((train, validation))
}

fn sample_split(
    centers: &Array2<f64>,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<DatasetSplit, BackendError> {
    let (n_classes, d) = centers.dim();
    let n = n_per_class * n_classes;
    let mut rng = SplitMix64::new(seed);
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let class = i / n_per_class;
        for (x, &c) in row.iter_mut().zip(centers.row(class)) {
            let noise = rng.gaussian();
            *x = if spread == 0.0 { c } else { c + spread * noise };
        }
        labels.push(class);
    }
    DatasetSplit::new(features, labels, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn blob_counts() {
        let (train, val) = make_blobs(10, 4, 3, 1.0, 2.0, 9).unwrap();
        assert_eq!(train.n_samples(), 30);
        assert_eq!(train.class_counts(), vec![10, 10, 10]);
        assert_eq!(val.class_counts(), vec![10, 10, 10]);
        assert_eq!(train.n_features(), 4);
    }

    #[test]
    fn zero_spread_hits_centers_exactly() {
        let centers = blob_centers(3, 2, 5.0, 11);
        let (train, val) = make_blobs(4, 3, 2, 0.0, 5.0, 11).unwrap();
        for split in [&train, &val] {
            for i in 0..split.n_samples() {
                assert_eq!(split.row(i), centers.row(split.labels()[i]));
            }
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = make_blobs(7, 3, 4, 0.7, 3.0, 123).unwrap();
        let b = make_blobs(7, 3, 4, 0.7, 3.0, 123).unwrap();
        assert_eq!(a, b);
        let c = make_blobs(7, 3, 4, 0.7, 3.0, 124).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn validation_differs_from_train() {
        let (train, val) = make_blobs(5, 2, 2, 1.0, 1.0, 0).unwrap();
        assert_ne!(train.features(), val.features());
    }

    #[test]
    fn rejects_bad_labels() {
        let err = DatasetSplit::new(array![[0.0], [1.0]], vec![0, 2], 2).unwrap_err();
        assert!(matches!(err, BackendError::InvalidConfig(_)));
        let err = DatasetSplit::new(array![[0.0], [1.0]], vec![0], 2).unwrap_err();
        assert!(matches!(err, BackendError::ShapeMismatch { .. }));
    }

    #[test]
    fn csv_layout() {
        let split = DatasetSplit::new(array![[1.5, -2.0], [0.0, 3.25]], vec![1, 0], 2).unwrap();
        assert_eq!(split.to_csv(), "f0,f1,label\n1.5,-2,1\n0,3.25,0\n");
    }
}
