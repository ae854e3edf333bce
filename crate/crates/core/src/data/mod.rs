//! Labelled classification datasets and their partitioning across servers.

mod idx;
mod partition;

pub use idx::{load_idx, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{partition_heterogeneous, partition_iid, MinorClasses, Partition};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Row-major feature matrix with integer labels in `[0, num_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch(
                "feature dimension must be positive".into(),
            ));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} samples of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (
            &self.features[i * self.dim..(i + 1) * self.dim],
            self.labels[i],
        )
    }

    /// Widens the label space, e.g. when a test split lacks the top class.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if self.labels.iter().any(|&y| y >= num_classes) {
            return Err(Error::Contract(format!(
                "cannot narrow label space to {num_classes} classes"
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Copies the given rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (x, y) = self.sample(i);
            features.extend_from_slice(x);
            labels.push(y);
        }
        Self {
            features,
            labels,
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Concatenation of several datasets with the same shape.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or(Error::EmptyDataset("concatenation"))?
            .clone();
        iter.try_fold(first, |mut acc, ds| {
            if ds.dim != acc.dim || ds.num_classes != acc.num_classes {
                return Err(Error::DimensionMismatch(
                    "cannot concatenate datasets of different shape".into(),
                ));
            }
            acc.features.extend_from_slice(&ds.features);
            acc.labels.extend_from_slice(&ds.labels);
            Ok(acc)
        })
    }

    /// Sample count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Splits off the last `test_per_class` samples of each class as a test
    /// set; everything else stays in the training set in original order.
    pub fn split_per_class(&self, test_per_class: usize) -> Result<(Dataset, Dataset)> {
        let mut seen = vec![0usize; self.num_classes];
        let counts = self.class_counts();
        if let Some(c) = (0..self.num_classes).find(|&c| counts[c] < test_per_class) {
            return Err(Error::Allocation {
                class: c,
                detail: format!("{} samples, {test_per_class} requested for test", counts[c]),
            });
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &y) in self.labels.iter().enumerate() {
            seen[y] += 1;
            if seen[y] > counts[y] - test_per_class {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((self.subset(&train), self.subset(&test)))
    }
}

/// Parameters for [`generate_blobs`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub seed: u64,
}

/// Half-width of the cube class means are drawn from.
pub const BLOB_MEAN_RANGE: f64 = 1.0;

/// Isotropic Gaussian clusters, one per class, with means drawn uniformly from
/// `[-1, 1]^dim`. Samples are ordered class by class.
pub fn generate_blobs(spec: BlobSpec) -> Result<Dataset> {
    let BlobSpec {
        num_classes,
        dim,
        per_class,
        spread,
        seed,
    } = spec;
    if num_classes < 2 || dim < 2 || per_class < 1 || !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::InvalidSize {
            what: "blobs",
            reason: format!(
                "need num_classes >= 2, dim >= 2, per_class >= 1, spread > 0 \
                 (got {num_classes}, {dim}, {per_class}, {spread})"
            ),
        });
    }
    let mut rng = stream_rng(Stream::Data, &[seed]);
    let means: Vec<f64> = (0..num_classes * dim)
        .map(|_| rng.random_range(-BLOB_MEAN_RANGE..=BLOB_MEAN_RANGE))
        .collect();
    let noise = Normal::new(0.0, spread).expect("spread validated above");

    let mut features = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        let mean = &means[c * dim..(c + 1) * dim];
        for _ in 0..per_class {
            features.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    Dataset::new(features, labels, dim, num_classes)
}
