//! Data-quality scoring: reputation, dataset diversity and their blend.

use crate::error::{Error, Result};

/// `1 - sum_c p_c^2` over a label histogram.
pub fn gini_simpson(label_counts: &[usize]) -> Result<f64> {
    let n: usize = label_counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = n as f64;
    Ok(1.0 - label_counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

/// Normalized per-UE metrics, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiversityMetrics {
    /// Gini-Simpson index divided by its maximum `1 - 1/C`.
    pub elements: f64,
    /// Dataset size relative to the largest dataset in the population.
    pub size: f64,
    /// Freshness `1 / (1 + participations)`.
    pub age: f64,
}

impl DiversityMetrics {
    pub fn as_array(&self) -> [f64; 3] {
        [self.elements, self.size, self.age]
    }
}

/// Population-wide normalizers for the current round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationStats {
    pub max_dataset_size: usize,
    pub num_classes: usize,
}

/// Normalized metrics of one UE. An empty dataset scores zero diversity.
pub fn diversity_metrics(
    label_counts: &[usize],
    participation: u32,
    population: &PopulationStats,
) -> DiversityMetrics {
    let size: usize = label_counts.iter().sum();
    let max_gs = 1.0 - 1.0 / population.num_classes as f64;
    let elements = match gini_simpson(label_counts) {
        Ok(gs) if max_gs > 0.0 => (gs / max_gs).clamp(0.0, 1.0),
        _ => 0.0,
    };
    let size = if population.max_dataset_size == 0 {
        0.0
    } else {
        size as f64 / population.max_dataset_size as f64
    };
    DiversityMetrics {
        elements,
        size,
        age: 1.0 / (1.0 + participation as f64),
    }
}

/// Weighted sum of the metrics.
pub fn diversity_index(metrics: &DiversityMetrics, gammas: &[f64; 3]) -> f64 {
    metrics
        .as_array()
        .iter()
        .zip(gammas)
        .map(|(v, g)| v * g)
        .sum()
}

/// Weights of the reputation update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReputationWeights {
    /// Reputation rate.
    pub eta: f64,
    /// Weight of the gap to the round's mean reported accuracy.
    pub beta1: f64,
    /// Weight of the gap between reported and server-measured accuracy.
    pub beta2: f64,
}

/// One reputation step, clamped to `[0, 1]`.
pub fn update_reputation(
    previous: f64,
    acc_local: f64,
    avg_acc: f64,
    acc_test: f64,
    weights: &ReputationWeights,
) -> f64 {
    let penalty = weights.beta1 * (acc_local - avg_acc) + weights.beta2 * (acc_local - acc_test);
    (previous - weights.eta * penalty).clamp(0.0, 1.0)
}

pub fn quality_value(reputation: f64, diversity: f64, omega1: f64, omega2: f64) -> f64 {
    omega1 * reputation + omega2 * diversity
}

/// Server-side quality bookkeeping for every UE.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityState {
    pub reputation: Vec<f64>,
    pub diversity: Vec<f64>,
    pub value: Vec<f64>,
    pub metrics: Vec<DiversityMetrics>,
}

impl QualityState {
    /// Every reputation starts at 1.
    pub fn new(num_ues: usize) -> Self {
        Self {
            reputation: vec![1.0; num_ues],
            diversity: vec![0.0; num_ues],
            value: vec![0.0; num_ues],
            metrics: vec![DiversityMetrics::default(); num_ues],
        }
    }

    /// Recomputes `I_k` and `V_k` for every UE from its reported labels and age.
    pub fn refresh(
        &mut self,
        label_counts: &[Vec<usize>],
        participation: &[u32],
        num_classes: usize,
        gammas: &[f64; 3],
        omega: (f64, f64),
    ) {
        let population = PopulationStats {
            max_dataset_size: label_counts
                .iter()
                .map(|c| c.iter().sum::<usize>())
                .max()
                .unwrap_or(0),
            num_classes,
        };
        for k in 0..self.reputation.len() {
            let m = diversity_metrics(&label_counts[k], participation[k], &population);
            self.metrics[k] = m;
            self.diversity[k] = diversity_index(&m, gammas);
            self.value[k] = quality_value(self.reputation[k], self.diversity[k], omega.0, omega.1);
        }
    }
}
