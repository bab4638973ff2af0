//! Simulation configuration.
//!
//! One JSON file fully determines a run. Fields are in SI units unless the
//! name says otherwise (`tx_power_dbm`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance applied to the "weights sum to one" invariants.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Environment variable that overrides the MNIST directory of a config.
pub const DATA_DIR_ENV: &str = "FEEL_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub name: String,
    /// Number of communication rounds.
    pub rounds_max: u32,
    /// Round deadline in seconds.
    pub deadline_s: f64,
    /// Total uplink bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Size of one model update in bits.
    pub model_size_bits: f64,
    pub local_epochs: u32,
    /// Best-effort minimum number of UEs per round.
    pub min_selected: usize,
    /// Noise power spectral density in W/Hz.
    pub noise_psd_w_per_hz: f64,
    pub reputation_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Weights of elements diversity, dataset size and age.
    pub gamma_weights: [f64; 3],
    pub omega: OmegaSchedule,
    pub seed: u64,
    /// Seeds used for multi-run experiments. Empty means just `seed`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub selection: SelectionMode,
    pub learner: LearnerConfig,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    pub topology: TopologyConfig,
    pub data: DataConfig,
}

/// Reputation / diversity weights, constant or given per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaSchedule {
    Constant { omega1: f64, omega2: f64 },
    /// Entry `t - 1` applies to round `t`; the last entry repeats.
    PerRound(Vec<[f64; 2]>),
}

impl OmegaSchedule {
    /// Weights `(omega1, omega2)` in effect for 1-based `round`.
    pub fn at(&self, round: u32) -> (f64, f64) {
        match self {
            OmegaSchedule::Constant { omega1, omega2 } => (*omega1, *omega2),
            OmegaSchedule::PerRound(table) => {
                let idx = (round.max(1) as usize - 1).min(table.len() - 1);
                (table[idx][0], table[idx][1])
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectionMode {
    /// Joint selection and bandwidth allocation under the deadline.
    #[default]
    Dqs,
    /// The `k` highest-valued UEs, ignoring the wireless constraints.
    TopK { k: usize },
    /// `min_selected` UEs drawn uniformly among those that fit the deadline
    /// and bandwidth budget.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_hidden() -> usize {
    64
}

fn default_lr() -> f64 {
    0.05
}

fn default_batch() -> usize {
    32
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub num_malicious: usize,
    pub source_label: u8,
    pub target_label: u8,
    #[serde(default = "default_flip_fraction")]
    pub flip_fraction: f64,
    #[serde(default)]
    pub report: AccuracyReport,
}

fn default_flip_fraction() -> f64 {
    1.0
}

/// How malicious UEs report their local accuracy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AccuracyReport {
    /// Accuracy measured on their own (poisoned) labels.
    #[default]
    Honest,
    /// Measured accuracy plus a fixed inflation, capped at 1.
    Inflated(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub num_ues: usize,
    /// Side of the square cell in meters; the base station sits at its center.
    pub cell_side_m: f64,
    pub pathloss_exponent: f64,
    pub tx_power_dbm: f64,
    /// UE CPU frequencies are drawn uniformly from this range (cycles/s).
    pub cpu_hz: [f64; 2],
    /// CPU cycles needed per unit of training work (see `zeta_unit`).
    pub cycles_per_unit: f64,
    #[serde(default)]
    pub zeta_unit: ZetaUnit,
}

impl TopologyConfig {
    pub fn tx_power_w(&self) -> f64 {
        10f64.powf((self.tx_power_dbm - 30.0) / 10.0)
    }
}

/// Unit of the per-UE compute cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ZetaUnit {
    #[default]
    PerSample,
    /// Cost is per bit; a sample counts as `bits_per_sample` bits.
    PerBit { bits_per_sample: f64 },
}

impl ZetaUnit {
    pub fn units_per_sample(&self) -> f64 {
        match self {
            ZetaUnit::PerSample => 1.0,
            ZetaUnit::PerBit { bits_per_sample } => *bits_per_sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub test_fraction: f64,
    pub group_size: usize,
    pub min_groups: usize,
    pub max_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Mnist {
        /// Directory holding `train-images-idx3-ubyte[.gz]` and
        /// `train-labels-idx1-ubyte[.gz]`. Relative paths are resolved
        /// against the config file's directory.
        #[serde(default)]
        dir: Option<PathBuf>,
        /// Uniformly subsample the loaded pool to this many samples.
        #[serde(default)]
        pool_size: Option<usize>,
    },
    Synthetic {
        num_classes: usize,
        per_class: usize,
        dim: usize,
    },
}

impl SimulationConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Number of classes implied by the data source.
    pub fn num_classes(&self) -> usize {
        match &self.data.source {
            DataSource::Mnist { .. } => 10,
            DataSource::Synthetic { num_classes, .. } => *num_classes,
        }
    }

    /// Seeds for a multi-run experiment.
    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Checks every invariant; the error names the first one violated.
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &str, reason: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::validation(field, reason))
            }
        }
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;

        check(self.rounds_max >= 1, "rounds_max", "must be at least 1")?;
        check(finite_pos(self.deadline_s), "deadline_s", "must be positive")?;
        check(finite_pos(self.bandwidth_hz), "bandwidth_hz", "must be positive")?;
        check(
            finite_pos(self.model_size_bits),
            "model_size_bits",
            "must be positive",
        )?;
        check(self.local_epochs >= 1, "local_epochs", "must be at least 1")?;
        check(
            finite_pos(self.noise_psd_w_per_hz),
            "noise_psd_w_per_hz",
            "must be positive",
        )?;
        check(
            (0.0..=1.0).contains(&self.reputation_rate),
            "reputation_rate",
            "must lie in [0, 1]",
        )?;
        check(finite_nonneg(self.beta1), "beta1", "must be non-negative")?;
        check(finite_nonneg(self.beta2), "beta2", "must be non-negative")?;
        check(
            self.gamma_weights.iter().all(|&g| finite_nonneg(g)),
            "gamma_weights",
            "must be non-negative",
        )?;
        check(
            (self.gamma_weights.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOLERANCE,
            "gamma_weights",
            "must sum to 1",
        )?;
        let omega_ok = |w1: f64, w2: f64| {
            finite_nonneg(w1) && finite_nonneg(w2) && (w1 + w2 - 1.0).abs() <= WEIGHT_SUM_TOLERANCE
        };
        match &self.omega {
            OmegaSchedule::Constant { omega1, omega2 } => check(
                omega_ok(*omega1, *omega2),
                "omega",
                "omega1 and omega2 must be non-negative and sum to 1",
            )?,
            OmegaSchedule::PerRound(table) => {
                check(!table.is_empty(), "omega", "per-round table must not be empty")?;
                check(
                    table.iter().all(|w| omega_ok(w[0], w[1])),
                    "omega",
                    "every per-round pair must be non-negative and sum to 1",
                )?
            }
        }

        let l = &self.learner;
        check(l.hidden >= 1, "learner.hidden", "must be at least 1")?;
        check(
            finite_nonneg(l.learning_rate),
            "learner.learning_rate",
            "must be non-negative",
        )?;
        check(l.batch_size >= 1, "learner.batch_size", "must be at least 1")?;

        if let SelectionMode::TopK { k } = self.selection {
            check(k >= 1, "selection.k", "must be at least 1")?;
        }

        let t = &self.topology;
        check(t.num_ues >= 1, "topology.num_ues", "must be at least 1")?;
        check(finite_pos(t.cell_side_m), "topology.cell_side_m", "must be positive")?;
        check(
            finite_pos(t.pathloss_exponent),
            "topology.pathloss_exponent",
            "must be positive",
        )?;
        check(
            t.tx_power_dbm.is_finite(),
            "topology.tx_power_dbm",
            "must be finite",
        )?;
        check(
            finite_pos(t.cpu_hz[0]) && finite_pos(t.cpu_hz[1]) && t.cpu_hz[0] <= t.cpu_hz[1],
            "topology.cpu_hz",
            "must be a positive [min, max] range",
        )?;
        check(
            finite_pos(t.cycles_per_unit),
            "topology.cycles_per_unit",
            "must be positive",
        )?;
        if let ZetaUnit::PerBit { bits_per_sample } = t.zeta_unit {
            check(
                finite_pos(bits_per_sample),
                "topology.zeta_unit.bits_per_sample",
                "must be positive",
            )?;
        }

        let d = &self.data;
        check(
            d.test_fraction > 0.0 && d.test_fraction < 1.0,
            "data.test_fraction",
            "must lie in (0, 1)",
        )?;
        check(d.group_size >= 1, "data.group_size", "must be at least 1")?;
        check(d.min_groups >= 1, "data.min_groups", "must be at least 1")?;
        check(
            d.max_groups >= d.min_groups,
            "data.max_groups",
            "must be at least min_groups",
        )?;
        if let DataSource::Synthetic {
            num_classes,
            per_class,
            dim,
        } = d.source
        {
            check(num_classes >= 2, "data.source.num_classes", "must be at least 2")?;
            check(per_class >= 1, "data.source.per_class", "must be at least 1")?;
            check(dim >= 1, "data.source.dim", "must be at least 1")?;
        }

        if let Some(a) = &self.attack {
            let classes = self.num_classes();
            check(
                a.num_malicious <= t.num_ues,
                "attack.num_malicious",
                "cannot exceed topology.num_ues",
            )?;
            check(
                (a.source_label as usize) < classes,
                "attack.source_label",
                "must be a valid class id",
            )?;
            check(
                (a.target_label as usize) < classes,
                "attack.target_label",
                "must be a valid class id",
            )?;
            check(
                a.source_label != a.target_label,
                "attack.target_label",
                "must differ from source_label",
            )?;
            check(
                (0.0..=1.0).contains(&a.flip_fraction),
                "attack.flip_fraction",
                "must lie in [0, 1]",
            )?;
            if let AccuracyReport::Inflated(x) = a.report {
                check(finite_nonneg(x), "attack.report", "inflation must be non-negative")?;
            }
        }
        Ok(())
    }
}

/// Reads, parses and validates a configuration file.
///
/// A relative MNIST directory is rewritten to be relative to the config
/// file's location.
pub fn load_config(path: impl AsRef<Path>) -> Result<SimulationConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = SimulationConfig::from_json(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    config.validate()?;
    if let DataSource::Mnist { dir: Some(dir), .. } = &mut config.data.source {
        if dir.is_relative() {
            if let Some(parent) = path.parent() {
                *dir = parent.join(&*dir);
            }
        }
    }
    Ok(config)
}

/// Directory to read MNIST from: `FEEL_DATA_DIR` wins over the config.
pub fn resolve_mnist_dir(configured: Option<&Path>) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => configured
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("data/mnist")),
    }
}
