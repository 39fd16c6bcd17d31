//! Datasets, synthetic two-domain tasks and few-shot target sampling.

mod format;
mod task;

use rand::seq::index;

pub use format::{load_dataset, read_dataset, save_dataset, write_dataset, MAGIC};
pub use task::{make_synthetic_task, parse_rotation, ClassGaussian, SplitSizes, TaskSpec};

use crate::error::{FhaError, Result};
use crate::nn::Matrix;
use crate::rng;

/// Most labeled target samples per class the protocol allows.
pub const MAX_SHOTS: usize = 7;

/// Feature matrix in `[0,1]^d` (row-major f32) with labels in `[0, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    features: Vec<f32>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn new(dim: usize, num_classes: usize, features: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        if dim == 0 {
            return Err(FhaError::InvalidArgument("feature dimension must be >= 1".into()));
        }
        if num_classes < 2 {
            return Err(FhaError::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if features.len() != labels.len() * dim {
            return Err(FhaError::shape(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(FhaError::InvalidArgument(format!(
                "feature {} of sample {} is {} (outside [0,1])",
                i % dim,
                i / dim,
                features[i]
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y as usize >= num_classes) {
            return Err(FhaError::InvalidArgument(format!(
                "label {} of sample {i} outside [0, {num_classes})",
                labels[i]
            )));
        }
        Ok(Self {
            dim,
            num_classes,
            features,
            labels,
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

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Features widened to f64.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.len(),
            self.dim,
            self.features.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("dataset shape is consistent")
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&y| y as usize).collect()
    }

    /// Sample indices of each class, ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y as usize].push(i);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.class_indices().iter().map(Vec::len).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            dim: self.dim,
            num_classes: self.num_classes,
            features,
            labels,
        }
    }
}

/// `n_t` labeled target samples for each class.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSet {
    n_t: usize,
    /// Indices into the target training split, per class, ascending.
    indices: Vec<Vec<usize>>,
    /// The selected samples, class-major.
    samples: Dataset,
}

impl FewShotSet {
    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn num_classes(&self) -> usize {
        self.samples.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn samples(&self) -> &Dataset {
        &self.samples
    }

    /// Samples of one class as an `n_t x d` matrix.
    pub fn class_matrix(&self, class: usize) -> Matrix {
        let rows: Vec<usize> = (class * self.n_t..(class + 1) * self.n_t).collect();
        self.samples.to_matrix().select_rows(&rows)
    }
}

/// Stratified sampling without replacement: exactly `n_t` target samples per
/// class.
pub fn sample_few_shot(target: &Dataset, n_t: usize, seed: u64) -> Result<FewShotSet> {
    if n_t == 0 || n_t > MAX_SHOTS {
        return Err(FhaError::Protocol(format!(
            "n_t must lie in 1..={MAX_SHOTS}, got {n_t}"
        )));
    }
    let by_class = target.class_indices();
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < n_t {
            return Err(FhaError::InsufficientData {
                class,
                available: members.len(),
                required: n_t,
            });
        }
    }
    let mut rng = rng::stream(seed, "few-shot", n_t as u64);
    let mut indices = Vec::with_capacity(by_class.len());
    for members in &by_class {
        let mut picked: Vec<usize> = index::sample(&mut rng, members.len(), n_t)
            .into_iter()
            .map(|k| members[k])
            .collect();
        picked.sort_unstable();
        indices.push(picked);
    }
    let flat: Vec<usize> = indices.iter().flatten().copied().collect();
    Ok(FewShotSet {
        n_t,
        samples: target.subset(&flat),
        indices,
    })
}
