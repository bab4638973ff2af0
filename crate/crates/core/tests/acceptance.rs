//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::Path;
use std::time::Instant;

use feel_core::channel::{rate, Feasibility, LinkBudget};
use feel_core::config::SelectionMode;
use feel_core::data::{generate_synthetic, Dataset};
use feel_core::engine::load_dataset;
use feel_core::learner::{init_params, loss_and_gradient, ModelDims, Samples};
use feel_core::metrics::{mean_recall_last3, mean_std, rounds_csv, ues_csv};
use feel_core::quality::{update_reputation, ReputationWeights};
use feel_core::rng::NO_UE;
use feel_core::scheduler::{exact_schedule, greedy_schedule, Candidate, SchedulingInstance};
use feel_core::{derive_stream, load_config, RoundRecord, Simulation, SimulationConfig};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn preset(name: &str) -> SimulationConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name);
    load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ---- 1: gradient oracle --------------------------------------------------

/// Mean cross-entropy computed from scratch on the flat `[W1|b1|W2|b2]` layout.
fn reference_loss(p: &[f64], d: ModelDims, ds: &Dataset) -> f64 {
    let (w1, rest) = p.split_at(d.hidden * d.input);
    let (b1, rest) = rest.split_at(d.hidden);
    let (w2, b2) = rest.split_at(d.classes * d.hidden);
    let mut total = 0.0;
    for i in 0..ds.len() {
        let x = ds.features(i);
        let h: Vec<f64> = (0..d.hidden)
            .map(|j| (b1[j] + (0..d.input).map(|k| w1[j * d.input + k] * x[k]).sum::<f64>()).max(0.0))
            .collect();
        let z: Vec<f64> = (0..d.classes)
            .map(|c| b2[c] + (0..d.hidden).map(|j| w2[c * d.hidden + j] * h[j]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[ds.labels()[i] as usize];
    }
    total / ds.len() as f64
}

fn gradient_oracle() -> Outcome {
    const STEP: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    for net in 0..20u64 {
        let mut rng = derive_stream(net, "acceptance-gradient", 0, NO_UE);
        let dims = ModelDims {
            input: rng.random_range(2..=8),
            hidden: rng.random_range(2..=8),
            classes: rng.random_range(2..=5),
        };
        let per_class = rng.random_range(2..=4);
        let ds = generate_synthetic(dims.classes, per_class, dims.input, &mut rng);
        let mut params = init_params(dims, &mut rng);
        for b in params.as_mut_slice().iter_mut() {
            *b += rng.random_range(-0.1..0.1);
        }
        let idx: Vec<usize> = (0..ds.len()).collect();
        let samples = Samples::new(&ds, &idx, ds.labels());
        let (loss, grad) = loss_and_gradient(&params, &samples, &idx);
        let base = params.as_slice().to_vec();
        if (loss - reference_loss(&base, dims, &ds)).abs() > 1e-12 {
            return outcome(false, format!("net {net}: loss disagrees with the reference"));
        }
        for (i, &analytic) in grad.as_slice().iter().enumerate() {
            let mut p = base.clone();
            p[i] = base[i] + STEP;
            let up = reference_loss(&p, dims, &ds);
            p[i] = base[i] - STEP;
            let down = reference_loss(&p, dims, &ds);
            let numeric = (up - down) / (2.0 * STEP);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    outcome(worst < 1e-5, format!("20 nets, max relative error {worst:.2e} (limit 1e-5)"))
}

// ---- 2: scheduler oracle ---------------------------------------------------

fn brute_force(inst: &SchedulingInstance) -> f64 {
    let items: Vec<(f64, f64)> = inst
        .candidates
        .iter()
        .filter_map(|c| c.min_alpha.map(|a| (c.value, a)))
        .collect();
    (0u32..1 << items.len())
        .filter_map(|mask| {
            let (v, a) = items
                .iter()
                .enumerate()
                .filter(|(b, _)| mask & (1 << b) != 0)
                .fold((0.0, 0.0), |(v, a), (_, it)| (v + it.0, a + it.1));
            (a <= 1.0 + 1e-12).then_some(v)
        })
        .fold(0.0, f64::max)
}

fn scheduler_oracle() -> Outcome {
    let mut rng = derive_stream(2, "acceptance-scheduler", 0, NO_UE);
    let (mut min_ratio, mut sum_ratio): (f64, f64) = (f64::INFINITY, 0.0);
    for n in 0..200 {
        let k = rng.random_range(1..=12);
        let candidates = (0..k)
            .map(|id| Candidate {
                id,
                value: rng.random_range(0.0..1.0),
                min_alpha: if rng.random_bool(0.15) {
                    None
                } else {
                    Some(rng.random_range(0.01..=0.9))
                },
            })
            .collect();
        let inst = SchedulingInstance {
            candidates,
            min_selected: 0,
        };
        let exact = exact_schedule(&inst).expect("K <= 12");
        let best = brute_force(&inst);
        if (exact.objective - best).abs() > 1e-9 {
            return outcome(false, format!("instance {n}: exact {} != enumeration {best}", exact.objective));
        }
        let greedy = greedy_schedule(&inst);
        if greedy.alpha.iter().sum::<f64>() > 1.0 + 1e-9 {
            return outcome(false, format!("instance {n}: greedy over capacity"));
        }
        let ratio = if exact.objective == 0.0 {
            1.0
        } else {
            greedy.objective / exact.objective
        };
        min_ratio = min_ratio.min(ratio);
        sum_ratio += ratio;
    }
    let mean = sum_ratio / 200.0;
    outcome(
        min_ratio >= 0.5 && mean >= 0.9,
        format!("200 instances, min ratio {min_ratio:.4} (>= 0.5), mean ratio {mean:.4} (>= 0.9)"),
    )
}

// ---- 3: constraint satisfaction ----------------------------------------------

fn constraints(sim: &Simulation, records: &[RoundRecord]) -> Outcome {
    let deadline = sim.config().deadline_s;
    let mut worst_band: f64 = 0.0;
    let mut worst_time: f64 = 0.0;
    for r in records {
        worst_band = worst_band.max(r.alpha.iter().sum());
        for t in r.completion_times(sim) {
            worst_time = worst_time.max(t);
        }
    }
    outcome(
        records.len() == 15 && worst_band <= 1.0 + 1e-9 && worst_time <= deadline + 1e-6,
        format!(
            "{} rounds, max sum(alpha) {worst_band:.12}, max train+upload {worst_time:.3} s (T = {deadline} s)",
            records.len()
        ),
    )
}

// ---- 4: qualitative ordering ------------------------------------------------

struct Run {
    seed: u64,
    records: Vec<RoundRecord>,
    sim: Simulation,
}

fn run_many(config: &SimulationConfig, dataset: &Dataset) -> Vec<Run> {
    let seeds = config.run_seeds();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut runs = Vec::new();
    for chunk in seeds.chunks(jobs) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    s.spawn(move || {
                        let mut sim = Simulation::with_dataset(config, seed, dataset).expect("valid preset");
                        let records = sim.run();
                        Run { seed, records, sim }
                    })
                })
                .collect();
            runs.extend(handles.into_iter().map(|h| h.join().expect("run panicked")));
        });
    }
    runs
}

fn final_accuracy(runs: &[Run]) -> Vec<f64> {
    runs.iter().map(|r| r.records.last().unwrap().global_accuracy).collect()
}

fn source_recall(runs: &[Run], class: usize) -> Vec<f64> {
    runs.iter()
        .map(|r| mean_recall_last3(&r.records, class).unwrap_or(0.0))
        .collect()
}

/// `(mean_a - mean_b, pooled std)` of two equally sized samples.
fn margin(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64, f64) {
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    (ma, sa, mb, sb, ma - mb, ((sa * sa + sb * sb) / 2.0).sqrt())
}

fn ordering(balanced: &[Run], diversity: &[Run], random: &[Run]) -> Outcome {
    let source = balanced[0].sim.config().attack.as_ref().expect("attack preset").source_label as usize;
    let (ma, sa, mb, sb, gap_acc, pooled_acc) = margin(&final_accuracy(balanced), &final_accuracy(diversity));
    let (mc, sc, md, sd, gap_rec, pooled_rec) = margin(&source_recall(balanced, source), &source_recall(random, source));
    let same_sets = balanced
        .iter()
        .zip(diversity)
        .flat_map(|(a, b)| a.records.iter().zip(&b.records))
        .filter(|(x, y)| x.selected == y.selected)
        .count();
    let rounds: usize = balanced.iter().map(|r| r.records.len()).sum();
    let mean_selected = balanced
        .iter()
        .flat_map(|r| &r.records)
        .map(|r| r.selected.len() as f64)
        .sum::<f64>()
        / rounds as f64;
    let acc_ok = gap_acc > pooled_acc;
    let rec_ok = gap_rec > pooled_rec;
    outcome(
        acc_ok && rec_ok,
        format!(
            "{} seeds\n      final accuracy: balanced {ma:.4} ± {sa:.4} vs diversity-only {mb:.4} ± {sb:.4}: \
             gap {gap_acc:+.4}, pooled std {pooled_acc:.4} [{}]\n      recall[{source}] (last 3): balanced {mc:.4} ± {sc:.4} \
             vs random {md:.4} ± {sd:.4}: gap {gap_rec:+.4}, pooled std {pooled_rec:.4} [{}]\n      \
             balanced and diversity-only picked the same UEs in {same_sets}/{rounds} rounds; \
             {mean_selected:.1} UEs selected per round on average",
            balanced.len(),
            if acc_ok { "ok" } else { "not met" },
            if rec_ok { "ok" } else { "not met" },
        ),
    )
}

// ---- 5: reputation dynamics ---------------------------------------------------

fn reputation_dynamics() -> Outcome {
    // One over-claiming UE among four honest peers; every honest report equals
    // its test accuracy, so the liar's report is above the mean.
    let weights = ReputationWeights {
        eta: 1.0,
        beta1: 0.5,
        beta2: 0.5,
    };
    let mut rng = derive_stream(5, "acceptance-reputation", 0, NO_UE);
    let mut r = 1.0;
    let mut trace = vec![r];
    for _ in 0..4 {
        let acc_test: f64 = rng.random_range(0.2..0.7);
        let honest: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..=acc_test)).collect();
        let acc_local = acc_test + 0.3;
        let avg = (honest.iter().sum::<f64>() + acc_local) / 5.0;
        r = update_reputation(r, acc_local, avg, acc_test, &weights);
        trace.push(r);
    }
    // closed form without the peer term
    let no_peer = ReputationWeights { beta1: 0.0, ..weights };
    let mut bound = 1.0;
    for _ in 0..4 {
        bound = update_reputation(bound, 0.9, 0.9, 0.6, &no_peer);
    }
    let trace: Vec<String> = trace.iter().map(|v| format!("{v:.3}")).collect();
    outcome(
        r <= 0.4 && (bound - 0.4).abs() < 1e-12,
        format!("R over 4 participations: {} (<= 0.4); peer-free bound {bound:.6}", trace.join(" -> ")),
    )
}

// ---- 6: determinism ---------------------------------------------------------

fn csvs(records: &[RoundRecord]) -> (String, String) {
    (ues_csv(records).unwrap(), rounds_csv(records).unwrap())
}

fn determinism(mnist: &Dataset, reference: &Run) -> Outcome {
    let mut checked = Vec::new();
    for name in ["synthetic_quick.json", "mnist_random.json", "mnist_quality_top5.json"] {
        let config = preset(name);
        let seed = config.seed;
        let runs: Vec<(String, String)> = (0..2)
            .map(|_| {
                let mut sim = if name.starts_with("synthetic") {
                    Simulation::from_config(&config, seed).unwrap()
                } else {
                    Simulation::with_dataset(&config, seed, mnist).unwrap()
                };
                csvs(&sim.run())
            })
            .collect();
        if runs[0] != runs[1] {
            return outcome(false, format!("{name} differs between runs"));
        }
        checked.push(name.trim_end_matches(".json").to_string());
    }
    let config = reference.sim.config().clone();
    let mut again = Simulation::with_dataset(&config, reference.seed, mnist).unwrap();
    if csvs(&again.run()) != csvs(&reference.records) {
        return outcome(false, format!("{} seed {} differs between runs", config.name, reference.seed));
    }
    checked.push(config.name);
    outcome(true, format!("bit-identical CSV for {}", checked.join(", ")))
}

// ---- 7: channel units -------------------------------------------------------

fn channel_units() -> Outcome {
    let n0 = 1e-20;
    let b = 1e6;
    // g P chosen so that the full-band SNR is exactly 1
    let gp = b * n0;
    let r1 = rate(1.0, b, gp, 1.0, n0);
    let r_half = rate(0.5, b, gp, 1.0, n0);
    let expect_half = 0.5e6 * 3f64.log2();
    let link = LinkBudget {
        deadline_s: 300.0,
        bandwidth_hz: b,
        model_size_bits: 8e5,
        noise_psd: n0,
    };
    let Feasibility::Feasible { min_alpha, .. } = link.min_bandwidth_fraction(290.0, gp, 1.0) else {
        return outcome(false, "10 s upload budget reported infeasible");
    };
    let r_min = link.rate(min_alpha, gp, 1.0);
    let examples_ok = (r1 - 1e6).abs() <= 1.0 && (r_half - expect_half).abs() <= 1.0 && (r_min - 8e4).abs() <= 1.0;

    let mut rng = derive_stream(7, "acceptance-channel", 0, NO_UE);
    let link = LinkBudget {
        deadline_s: 300.0,
        bandwidth_hz: 1e6,
        model_size_bits: 8e5,
        noise_psd: 3.98e-21,
    };
    let (mut feasible, mut failures) = (0, 0);
    for _ in 0..1000 {
        let d: f64 = rng.random_range(1.0..1000.0);
        let h: f64 = Exp1.sample(&mut rng);
        let g = d.powf(-3.76) * h;
        let p = 10f64.powf((rng.random_range(-30.0..10.0) - 30.0) / 10.0);
        let t_train = rng.random_range(0.0..320.0);
        match link.min_bandwidth_fraction(t_train, g, p) {
            Feasibility::Feasible { min_alpha, .. } => {
                feasible += 1;
                let needed = 8e5 / (300.0 - t_train);
                let total = t_train + 8e5 / link.rate(min_alpha, g, p);
                let below = link.rate((min_alpha - 2e-9).max(0.0), g, p);
                if !(min_alpha > 0.0 && min_alpha <= 1.0) || total > 300.0 + 1e-6 || (min_alpha > 2e-9 && below >= needed) {
                    failures += 1;
                }
            }
            Feasibility::Infeasible { .. } => {
                if t_train < 300.0 && link.rate(1.0, g, p) >= 8e5 / (300.0 - t_train) {
                    failures += 1;
                }
            }
        }
    }
    outcome(
        examples_ok && failures == 0,
        format!(
            "rate(1) = {r1:.3}, rate(0.5) = {r_half:.3}, rate(min alpha) = {r_min:.3} bit/s; \
             1000 fuzzed UEs ({feasible} feasible), {failures} round-trip failures"
        ),
    )
}

// -----------------------------------------------------------------------------

fn main() {
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut timed = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {id} {:<24} {} ({secs:.1} s)\n      {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o, secs));
    };

    timed(1, "gradient oracle", &mut gradient_oracle);
    timed(2, "scheduler oracle", &mut scheduler_oracle);

    let balanced_cfg = preset("mnist_6_2.json");
    let mut diversity_cfg = preset("mnist_diversity_only.json");
    let mut random_cfg = preset("mnist_random.json");
    for cfg in [&mut diversity_cfg, &mut random_cfg] {
        assert_eq!(cfg.run_seeds(), balanced_cfg.run_seeds(), "presets must share seeds");
    }
    assert!(matches!(balanced_cfg.selection, SelectionMode::Dqs));
    let mnist = load_dataset(&balanced_cfg, balanced_cfg.seed).expect("MNIST files (set FEEL_DATA_DIR)");

    let start = Instant::now();
    let balanced = run_many(&balanced_cfg, &mnist);
    let diversity = run_many(&diversity_cfg, &mnist);
    let random = run_many(&random_cfg, &mnist);
    let sim_secs = start.elapsed().as_secs_f64();
    println!("(ran {} MNIST simulations in {sim_secs:.1} s)", balanced.len() + diversity.len() + random.len());

    timed(3, "constraint satisfaction", &mut || {
        let first = &balanced[0];
        constraints(&first.sim, &first.records)
    });
    timed(4, "qualitative ordering", &mut || ordering(&balanced, &diversity, &random));
    timed(5, "reputation dynamics", &mut reputation_dynamics);
    timed(6, "determinism", &mut || determinism(&mnist, &balanced[2]));
    timed(7, "channel units", &mut channel_units);

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.2.pass)
        .map(|r| format!("{} ({})", r.0, r.1))
        .collect();
    println!(
        "\nacceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}

