//! Datasets, non-IID partitioning and label-flipping poisoning.

mod idx;
mod partition;

pub use idx::{find_pair, load_mnist_dir, load_mnist_idx, parse_images, parse_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{
    apply_label_flip, choose_malicious, label_pure_groups, partition_sorted_groups, AttackSpec, Partition,
};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::RngStream;

/// Dense feature matrix (row-major) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<u8>,
    num_classes: usize,
}

impl Dataset {
    /// # Panics
    /// If `features.len() != labels.len() * dim` or a label is out of range.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<u8>, num_classes: usize) -> Self {
        assert_eq!(features.len(), labels.len() * dim, "feature/label count mismatch");
        assert!(
            labels.iter().all(|&l| (l as usize) < num_classes),
            "label out of range"
        );
        Self {
            features,
            dim,
            labels,
            num_classes,
        }
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

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label_counts(&self) -> Vec<usize> {
        label_counts(&self.labels, self.num_classes)
    }

    /// Copies the rows at `indices` into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        Dataset {
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Uniform subsample of `n` rows (the whole set if `n >= len`).
    pub fn subsample(&self, n: usize, rng: &mut RngStream) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut picked = index::sample(rng, self.len(), n).into_vec();
        picked.sort_unstable();
        self.subset(&picked)
    }
}

pub fn label_counts(labels: &[u8], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &l in labels {
        counts[l as usize] += 1;
    }
    counts
}

/// Gaussian class clusters: each class mean has N(0, 2^2) coordinates and
/// samples add unit-variance noise. Labels cycle `0, 1, .., C-1, 0, ..`.
pub fn generate_synthetic(num_classes: usize, per_class: usize, dim: usize, rng: &mut RngStream) -> Dataset {
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            (0..dim)
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let n = num_classes * per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % num_classes;
        for mean in &means[c] {
            features.push(mean + rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(c as u8);
    }
    Dataset::new(features, dim, labels, num_classes)
}

/// Stratified split into `(train, test)`.
///
/// The test set gets `round(fraction * n)` samples in total, apportioned
/// across classes by largest remainder so each class is within one sample
/// of its exact share.
pub fn split_test(dataset: &Dataset, fraction: f64, rng: &mut RngStream) -> (Dataset, Dataset) {
    let c = dataset.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }

    let total = (fraction * dataset.len() as f64).round() as usize;
    let exact: Vec<f64> = by_class.iter().map(|v| v.len() as f64 * fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..c).collect();
    // largest fractional part first, lower class id on ties
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(quota.iter().sum());
    for &k in order.iter().cycle().take(c * 2) {
        if missing == 0 {
            break;
        }
        if quota[k] < by_class[k].len() {
            quota[k] += 1;
            missing -= 1;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (members, q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(rng);
        test.extend_from_slice(&members[..*q]);
        train.extend_from_slice(&members[*q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (dataset.subset(&train), dataset.subset(&test))
}
