//! The round loop.
//!
//! Per round: draw channels, work out who can meet the deadline, score every
//! UE, schedule, train the selected UEs from the current global model, score
//! each update on the server test split, aggregate with FedAvg, update the
//! participants' reputations and ages, and record the outcome.

use std::path::Path;

use rand::Rng;

use crate::channel::{draw_channel, training_time, upload_time, Feasibility, LinkBudget};
use crate::config::{resolve_mnist_dir, AccuracyReport, DataSource, SelectionMode, SimulationConfig};
use crate::data::{
    apply_label_flip, choose_malicious, generate_synthetic, label_counts, load_mnist_dir, partition_sorted_groups,
    split_test, AttackSpec, Dataset, Partition,
};
use crate::error::Result;
use crate::learner::{evaluate, fedavg, init_params, local_train, ModelDims, ModelParams, Samples, TrainSettings};
use crate::metrics::{write_run, RunSummary};
use crate::quality::{update_reputation, QualityState, ReputationWeights};
use crate::rng::{derive_stream, NO_UE};
use crate::scheduler::{
    greedy_schedule, random_schedule, top_k_schedule, Candidate, ScheduleDecision, SchedulingInstance,
};

/// Static facts about one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct UeProfile {
    pub id: usize,
    pub position: (f64, f64),
    pub distance_m: f64,
    pub tx_power_w: f64,
    pub cpu_hz: f64,
    /// CPU cycles per unit of training work.
    pub zeta: f64,
    pub malicious: bool,
}

/// Per-UE outcome of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct UeRecord {
    pub id: usize,
    pub selected: bool,
    pub alpha: f64,
    /// Reputation, diversity index and value used for this round's schedule.
    pub reputation: f64,
    pub diversity: f64,
    pub value: f64,
    pub acc_local: Option<f64>,
    pub acc_test: Option<f64>,
    pub training_time: f64,
    pub min_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub skipped: bool,
    pub selected: Vec<usize>,
    /// Bandwidth fractions aligned with `selected`.
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub global_accuracy: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub ues: Vec<UeRecord>,
    /// Slowest selected UE's training plus upload time, in seconds.
    pub round_time: f64,
}

impl RoundRecord {
    /// Training plus upload time of each selected UE at its assigned share.
    pub fn completion_times(&self, sim: &Simulation) -> Vec<f64> {
        self.selected
            .iter()
            .zip(&self.alpha)
            .map(|(&id, &a)| sim.completion_time(id, self.round, a))
            .collect()
    }
}

/// Complete simulator state for one seed.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimulationConfig,
    seed: u64,
    train: Dataset,
    test: Dataset,
    test_indices: Vec<usize>,
    profiles: Vec<UeProfile>,
    partition: Partition,
    /// Labels each UE trains on and reports; flipped for malicious UEs.
    local_labels: Vec<Vec<u8>>,
    quality: QualityState,
    global: ModelParams,
    link: LinkBudget,
    round: u32,
}

/// Loads the dataset a config points at (MNIST files or the synthetic generator).
pub fn load_dataset(config: &SimulationConfig, seed: u64) -> Result<Dataset> {
    match &config.data.source {
        DataSource::Mnist { dir, .. } => load_mnist_dir(&resolve_mnist_dir(dir.as_deref())),
        DataSource::Synthetic {
            num_classes,
            per_class,
            dim,
        } => Ok(generate_synthetic(
            *num_classes,
            *per_class,
            *dim,
            &mut derive_stream(seed, "synthetic", 0, NO_UE),
        )),
    }
}

impl Simulation {
    /// Builds the simulation from the config's own data source.
    pub fn from_config(config: &SimulationConfig, seed: u64) -> Result<Self> {
        let dataset = load_dataset(config, seed)?;
        Self::with_dataset(config, seed, &dataset)
    }

    /// Builds the simulation on an already loaded pool. Performs the round-0
    /// initialization: model parameters drawn and reputations set to 1.
    pub fn with_dataset(config: &SimulationConfig, seed: u64, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        let pool = match config.data.source {
            DataSource::Mnist {
                pool_size: Some(n), ..
            } => dataset.subsample(n, &mut derive_stream(seed, "pool", 0, NO_UE)),
            _ => dataset.clone(),
        };
        let (train, test) = split_test(
            &pool,
            config.data.test_fraction,
            &mut derive_stream(seed, "split", 0, NO_UE),
        );
        let topo = &config.topology;
        let partition = partition_sorted_groups(
            &train,
            topo.num_ues,
            config.data.group_size,
            config.data.min_groups,
            config.data.max_groups,
            &mut derive_stream(seed, "partition", 0, NO_UE),
        )?;

        let malicious = match &config.attack {
            Some(a) => choose_malicious(
                topo.num_ues,
                a.num_malicious,
                &mut derive_stream(seed, "malicious", 0, NO_UE),
            ),
            None => Vec::new(),
        };
        let half = topo.cell_side_m / 2.0;
        let profiles: Vec<UeProfile> = (0..topo.num_ues)
            .map(|id| {
                let mut rng = derive_stream(seed, "topology", 0, id as u64);
                let x = rng.random_range(0.0..=topo.cell_side_m);
                let y = rng.random_range(0.0..=topo.cell_side_m);
                let cpu_hz = if topo.cpu_hz[0] < topo.cpu_hz[1] {
                    rng.random_range(topo.cpu_hz[0]..=topo.cpu_hz[1])
                } else {
                    topo.cpu_hz[0]
                };
                UeProfile {
                    id,
                    position: (x, y),
                    distance_m: (x - half).hypot(y - half),
                    tx_power_w: topo.tx_power_w(),
                    cpu_hz,
                    zeta: topo.cycles_per_unit,
                    malicious: malicious.binary_search(&id).is_ok(),
                }
            })
            .collect();

        let local_labels = partition
            .indices
            .iter()
            .zip(&profiles)
            .map(|(idx, profile)| {
                let labels: Vec<u8> = idx.iter().map(|&i| train.labels()[i]).collect();
                match (&config.attack, profile.malicious) {
                    (Some(a), true) => apply_label_flip(
                        &labels,
                        &AttackSpec {
                            source_label: a.source_label,
                            target_label: a.target_label,
                            flip_fraction: a.flip_fraction,
                        },
                        &mut derive_stream(seed, "flip", 0, profile.id as u64),
                    ),
                    _ => labels,
                }
            })
            .collect();

        let dims = ModelDims {
            input: train.dim(),
            hidden: config.learner.hidden,
            classes: train.num_classes(),
        };
        let global = init_params(dims, &mut derive_stream(seed, "init", 0, NO_UE));
        Ok(Self {
            config: config.clone(),
            seed,
            test_indices: (0..test.len()).collect(),
            train,
            test,
            quality: QualityState::new(topo.num_ues),
            profiles,
            partition,
            local_labels,
            global,
            link: LinkBudget::from_config(config),
            round: 0,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn profiles(&self) -> &[UeProfile] {
        &self.profiles
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn quality(&self) -> &QualityState {
        &self.quality
    }

    pub fn global_model(&self) -> &ModelParams {
        &self.global
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn local_labels(&self, ue: usize) -> &[u8] {
        &self.local_labels[ue]
    }

    /// Number of rounds executed so far.
    pub fn rounds_done(&self) -> u32 {
        self.round
    }

    pub fn malicious_ids(&self) -> Vec<usize> {
        self.profiles.iter().filter(|p| p.malicious).map(|p| p.id).collect()
    }

    fn training_time(&self, ue: usize) -> f64 {
        let p = &self.profiles[ue];
        let work = self.partition.indices[ue].len() as f64 * self.config.topology.zeta_unit.units_per_sample();
        training_time(self.config.local_epochs, work, p.zeta, p.cpu_hz)
    }

    fn gain_sq(&self, ue: usize, round: u32) -> f64 {
        let mut rng = derive_stream(self.seed, "fading", round as u64, ue as u64);
        draw_channel(
            self.profiles[ue].distance_m,
            self.config.topology.pathloss_exponent,
            &mut rng,
        )
        .gain_sq
    }

    /// Training plus upload time of `ue` in `round` with bandwidth share `alpha`.
    pub fn completion_time(&self, ue: usize, round: u32, alpha: f64) -> f64 {
        let r = self
            .link
            .rate(alpha, self.gain_sq(ue, round), self.profiles[ue].tx_power_w);
        self.training_time(ue) + upload_time(self.config.model_size_bits, r)
    }

    /// Deadline feasibility of every UE for `round`.
    pub fn feasibility(&self, round: u32) -> Vec<Feasibility> {
        (0..self.profiles.len())
            .map(|k| {
                self.link
                    .min_bandwidth_fraction(self.training_time(k), self.gain_sq(k, round), self.profiles[k].tx_power_w)
            })
            .collect()
    }

    fn schedule(&self, round: u32, feasibility: &[Feasibility]) -> ScheduleDecision {
        let instance = || SchedulingInstance {
            candidates: feasibility
                .iter()
                .enumerate()
                .map(|(id, f)| Candidate {
                    id,
                    value: self.quality.value[id],
                    min_alpha: f.min_alpha(),
                })
                .collect(),
            min_selected: self.config.min_selected,
        };
        match self.config.selection {
            SelectionMode::Dqs => greedy_schedule(&instance()),
            SelectionMode::TopK { k } => top_k_schedule(&self.quality.value, k),
            SelectionMode::Random => random_schedule(
                &instance(),
                self.config.min_selected,
                &mut derive_stream(self.seed, "random-select", round as u64, NO_UE),
            ),
        }
    }

    fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.config.local_epochs,
            learning_rate: self.config.learner.learning_rate,
            batch_size: self.config.learner.batch_size,
        }
    }

    fn reported_accuracy(&self, ue: usize, measured: f64) -> f64 {
        match (&self.config.attack, self.profiles[ue].malicious) {
            (Some(a), true) => match a.report {
                AccuracyReport::Honest => measured,
                AccuracyReport::Inflated(extra) => (measured + extra).min(1.0),
            },
            _ => measured,
        }
    }

    /// Executes the next round.
    pub fn run_round(&mut self) -> RoundRecord {
        let round = self.round + 1;
        let num_ues = self.profiles.len();
        let feasibility = self.feasibility(round);

        let counts: Vec<Vec<usize>> = self
            .local_labels
            .iter()
            .map(|l| label_counts(l, self.train.num_classes()))
            .collect();
        self.quality.refresh(
            &counts,
            &self.partition.participation,
            self.train.num_classes(),
            &self.config.gamma_weights,
            self.config.omega.at(round),
        );
        let decision = self.schedule(round, &feasibility);

        let mut ues: Vec<UeRecord> = (0..num_ues)
            .map(|k| UeRecord {
                id: k,
                selected: false,
                alpha: 0.0,
                reputation: self.quality.reputation[k],
                diversity: self.quality.diversity[k],
                value: self.quality.value[k],
                acc_local: None,
                acc_test: None,
                training_time: feasibility[k].training_time(),
                min_alpha: feasibility[k].min_alpha(),
            })
            .collect();

        let test_samples = Samples::new(&self.test, &self.test_indices, self.test.labels());
        let mut round_time: f64 = 0.0;
        if !decision.is_empty() {
            let settings = self.train_settings();
            let mut updates = Vec::with_capacity(decision.selected.len());
            for (&k, &alpha) in decision.selected.iter().zip(&decision.alpha) {
                let samples = Samples::new(&self.train, &self.partition.indices[k], &self.local_labels[k]);
                let mut rng = derive_stream(self.seed, "train", round as u64, k as u64);
                let (model, measured) = local_train(&self.global, &samples, &settings, &mut rng);
                let acc_test = evaluate(&model, &test_samples).accuracy;
                let reported = self.reported_accuracy(k, measured);
                ues[k].selected = true;
                ues[k].alpha = alpha;
                ues[k].acc_local = Some(reported);
                ues[k].acc_test = Some(acc_test);
                round_time = round_time.max(self.completion_time(k, round, alpha));
                updates.push((k, model));
            }

            let weighted: Vec<(&ModelParams, usize)> = updates
                .iter()
                .map(|(k, m)| (m, self.partition.indices[*k].len()))
                .collect();
            self.global = fedavg(&weighted).expect("at least one update");

            let avg_acc = decision
                .selected
                .iter()
                .map(|&k| ues[k].acc_local.unwrap_or(0.0))
                .sum::<f64>()
                / decision.selected.len() as f64;
            let weights = ReputationWeights {
                eta: self.config.reputation_rate,
                beta1: self.config.beta1,
                beta2: self.config.beta2,
            };
            for &k in &decision.selected {
                self.quality.reputation[k] = update_reputation(
                    self.quality.reputation[k],
                    ues[k].acc_local.unwrap_or(0.0),
                    avg_acc,
                    ues[k].acc_test.unwrap_or(0.0),
                    &weights,
                );
                self.partition.participation[k] += 1;
            }
        }

        let eval = evaluate(&self.global, &test_samples);
        self.round = round;
        RoundRecord {
            round,
            skipped: decision.is_empty(),
            selected: decision.selected,
            alpha: decision.alpha,
            objective: decision.objective,
            global_accuracy: eval.accuracy,
            per_class_recall: eval.per_class_recall,
            ues,
            round_time,
        }
    }

    /// Runs the remaining rounds up to `rounds_max`.
    pub fn run(&mut self) -> Vec<RoundRecord> {
        (self.round..self.config.rounds_max).map(|_| self.run_round()).collect()
    }
}

/// Runs a whole simulation for `seed` and writes its metrics to `out_dir`.
pub fn run_simulation(config: &SimulationConfig, seed: u64, out_dir: &Path) -> Result<RunSummary> {
    let mut sim = Simulation::from_config(config, seed)?;
    let records = sim.run();
    write_run(&sim, &records, out_dir)
}

/// Runs every seed, writing each run to `out_dir/seed-<seed>`, with at most
/// `jobs` simulations in flight. Summaries come back in seed order.
pub fn run_seeds(config: &SimulationConfig, seeds: &[u64], out_dir: &Path, jobs: usize) -> Result<Vec<RunSummary>> {
    // MNIST is loaded once and shared; the synthetic source depends on the seed.
    let shared = match config.data.source {
        DataSource::Mnist { .. } => Some(load_dataset(config, seeds.first().copied().unwrap_or(config.seed))?),
        DataSource::Synthetic { .. } => None,
    };
    let run_one = |seed: u64| -> Result<RunSummary> {
        let mut sim = match &shared {
            Some(ds) => Simulation::with_dataset(config, seed, ds)?,
            None => Simulation::from_config(config, seed)?,
        };
        let records = sim.run();
        write_run(&sim, &records, &out_dir.join(format!("seed-{seed}")))
    };
    let jobs = jobs.max(1);
    let mut results = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(jobs) {
        let batch: Vec<Result<RunSummary>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&seed| s.spawn(move || run_one(seed))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation thread panicked"))
                .collect()
        });
        results.extend(batch);
    }
    results.into_iter().collect()
}
