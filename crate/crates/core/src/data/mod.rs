//! Dataset ingestion and handling: MNIST-format IDX files, a fast synthetic
//! fixture for tests, stratified subsampling, and a columnar container for
//! exporting datasets (including poisoned ones with provenance).

mod container;
mod idx;

pub use container::{load_dataset, load_poisoned_dataset, save_dataset, save_poisoned_dataset};
pub use idx::{load_idx, IMAGE_MAGIC, LABEL_MAGIC};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const FEATURE_DIM: usize = 784;
pub const IMAGE_SIDE: usize = 28;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub(crate) fn tag(self) -> u8 {
        match self {
            SplitTag::Train => 0,
            SplitTag::Test => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(SplitTag::Train),
            1 => Some(SplitTag::Test),
            _ => None,
        }
    }
}

/// Labeled feature vectors: `N x 784` values in `[0, 1]` with digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    split: SplitTag,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<u8>, split: SplitTag) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape {
                expected: format!("{} labels", features.nrows()),
                got: format!("{}", labels.len()),
            });
        }
        if features.ncols() != FEATURE_DIM {
            return Err(Error::Shape {
                expected: format!("{FEATURE_DIM} feature columns"),
                got: format!("{}", features.ncols()),
            });
        }
        if features.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Numeric("features must lie in [0, 1]".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label: usize::from(bad),
                num_classes: NUM_CLASSES,
            });
        }
        Ok(Dataset {
            features,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    /// Indices of all samples carrying `label`.
    pub fn indices_of_label(&self, label: u8) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// New dataset keeping only the given row indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Array2::zeros((indices.len(), FEATURE_DIM));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            if idx >= self.len() {
                return Err(Error::Config(format!(
                    "selection index {idx} out of range for {} samples",
                    self.len()
                )));
            }
            features.row_mut(row).assign(&self.features.row(idx));
            labels.push(self.labels[idx]);
        }
        Dataset::new(features, labels, self.split)
    }

    pub(crate) fn features_mut(&mut self) -> &mut Array2<f64> {
        &mut self.features
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }
}

/// Deterministic 10-class separable fixture: each class gets a horizontal
/// two-row band at a class-specific position, over a low uniform noise
/// floor. Fast stand-in for MNIST in unit and integration tests.
pub fn synthetic_fixture(n_per_class: usize, seed: u64) -> Dataset {
    assert!(n_per_class >= 1, "n_per_class must be at least 1");
    let n = n_per_class * NUM_CLASSES;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "fixture", 0));
    let mut features = Array2::zeros((n, FEATURE_DIM));
    let mut labels = Vec::with_capacity(n);
    for class in 0..NUM_CLASSES {
        for sample in 0..n_per_class {
            let row = class * n_per_class + sample;
            let intensity = 0.75 + 0.2 * rand::Rng::random_range(&mut rng, 0.0..1.0);
            for j in 0..FEATURE_DIM {
                features[[row, j]] = rand::Rng::random_range(&mut rng, 0.0..0.08);
            }
            // Class band at rows 7+2c and 8+2c of the 28x28 grid, clear of
            // the top-left region used by image triggers.
            for band_row in [7 + 2 * class, 8 + 2 * class] {
                for col in 4..24 {
                    features[[row, band_row * IMAGE_SIDE + col]] = intensity;
                }
            }
            labels.push(class as u8);
        }
    }
    Dataset::new(features, labels, SplitTag::Train).expect("fixture construction is valid")
}

/// Reproducible subsample of `n` samples, either uniform without
/// replacement or label-stratified (equal per-class allocation, remainder
/// spread over the lowest labels).
pub fn subsample(data: &Dataset, n: usize, stratified: bool, seed: u64) -> Result<Dataset> {
    if n > data.len() {
        return Err(Error::Config(format!(
            "cannot subsample {n} from {} samples",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "subsample", 0));
    let mut chosen: Vec<usize> = if stratified {
        let base = n / NUM_CLASSES;
        let remainder = n % NUM_CLASSES;
        let mut all = Vec::with_capacity(n);
        for label in 0..NUM_CLASSES as u8 {
            let want = base + usize::from((label as usize) < remainder);
            let mut idx = data.indices_of_label(label);
            if idx.len() < want {
                return Err(Error::Config(format!(
                    "label {label} has only {} samples, need {want} for a stratified subsample",
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            all.extend_from_slice(&idx[..want]);
        }
        all
    } else {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx
    };
    chosen.sort_unstable();
    data.select(&chosen)
}
