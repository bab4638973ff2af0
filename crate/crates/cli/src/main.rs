use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use feel_core::data::generate_synthetic;
use feel_core::metrics::{aggregate, aggregate_csv, mean_std, RunSummary, AGGREGATE_FILE};
use feel_core::scheduler::{compare_solvers, parse_instance, ScheduleDecision};
use feel_core::rng::NO_UE;
use feel_core::{derive_stream, load_config, run_seeds, Error};

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "feel", version, about = "Federated edge learning scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation preset.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long, conflicts_with = "all_seeds")]
        seed: Option<u64>,
        /// Output directory; defaults to runs/<config name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run every seed listed in the config and aggregate them.
        #[arg(long)]
        all_seeds: bool,
        /// Simulations to run concurrently.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Average the per-round metrics of several runs.
    Aggregate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Class whose recall is averaged; defaults to the runs' attack source.
        #[arg(long)]
        source_label: Option<u8>,
        /// Write CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the greedy and exhaustive schedulers on an instance file.
    ScheduleBench {
        instance: PathBuf,
        #[arg(long, default_value_t = 0)]
        min_selected: usize,
    },
    /// Write a synthetic Gaussian-blob dataset as CSV.
    GenSynthetic {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. }
        | Error::Validation { .. }
        | Error::InsufficientData(_)
        | Error::InstanceTooLarge { .. }
        | Error::InstanceParse { .. }
        | Error::Schema(_) => EXIT_VALIDATION,
        Error::Io { .. } | Error::Idx { .. } | Error::Csv(_) => EXIT_IO,
        Error::EmptyDataset | Error::EmptyAggregation => EXIT_INTERNAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run {
            config,
            seed,
            out,
            all_seeds,
            jobs,
        } => cmd_run(&config, seed, out, all_seeds, jobs),
        Command::Aggregate {
            dirs,
            source_label,
            out,
        } => cmd_aggregate(&dirs, source_label, out.as_deref()),
        Command::ScheduleBench {
            instance,
            min_selected,
        } => cmd_schedule_bench(&instance, min_selected),
        Command::GenSynthetic {
            classes,
            per_class,
            dim,
            seed,
            out,
        } => cmd_gen_synthetic(classes, per_class, dim, seed, &out),
    }
}

fn print_summary(s: &RunSummary, dir: &Path) {
    let recall = match (s.source_label, s.mean_source_recall_last3) {
        (Some(c), Some(r)) => format!(", recall[{c}] (last 3) {r:.4}"),
        _ => String::new(),
    };
    println!(
        "seed {}: final accuracy {:.4}{recall}, skipped {}/{} rounds -> {}",
        s.seed,
        s.final_accuracy,
        s.skipped_rounds,
        s.rounds,
        dir.display()
    );
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<PathBuf>, all_seeds: bool, jobs: Option<usize>) -> Result<(), Error> {
    let config = load_config(path)?;
    let out = out.unwrap_or_else(|| {
        let name = if config.name.is_empty() { "run" } else { &config.name };
        PathBuf::from("runs").join(name)
    });
    let seeds = if all_seeds {
        config.run_seeds()
    } else {
        vec![seed.unwrap_or(config.seed)]
    };
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let summaries = run_seeds(&config, &seeds, &out, jobs)?;
    for s in &summaries {
        print_summary(s, &out.join(format!("seed-{}", s.seed)));
    }
    if summaries.len() > 1 {
        let dirs: Vec<PathBuf> = seeds.iter().map(|s| out.join(format!("seed-{s}"))).collect();
        let rows = aggregate(&dirs, None)?;
        let path = out.join(AGGREGATE_FILE);
        std::fs::write(&path, aggregate_csv(&rows)?).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        let (mean, std) = mean_std(&summaries.iter().map(|s| s.final_accuracy).collect::<Vec<_>>());
        println!("{} runs: final accuracy {mean:.4} ± {std:.4} -> {}", summaries.len(), path.display());
        let recalls: Vec<f64> = summaries.iter().filter_map(|s| s.mean_source_recall_last3).collect();
        if recalls.len() == summaries.len() {
            let (mean, std) = mean_std(&recalls);
            println!("{} runs: source recall (last 3) {mean:.4} ± {std:.4}", summaries.len());
        }
    }
    Ok(())
}

fn cmd_aggregate(dirs: &[PathBuf], source_label: Option<u8>, out: Option<&Path>) -> Result<(), Error> {
    let text = aggregate_csv(&aggregate(dirs, source_label)?)?;
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn describe(d: &ScheduleDecision) -> String {
    let alpha: Vec<String> = d.alpha.iter().map(|a| format!("{a:.6}")).collect();
    format!(
        "selected={:?} alpha=[{}] objective={}",
        d.selected,
        alpha.join(", "),
        d.objective
    )
}

fn cmd_schedule_bench(path: &Path, min_selected: usize) -> Result<(), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let report = compare_solvers(&parse_instance(&text, min_selected)?)?;
    println!("greedy: {}", describe(&report.greedy));
    println!("exact:  {}", describe(&report.exact));
    println!("ratio: {}", report.ratio);
    Ok(())
}

fn cmd_gen_synthetic(classes: usize, per_class: usize, dim: usize, seed: u64, out: &Path) -> Result<(), Error> {
    if !(2..=256).contains(&classes) {
        return Err(Error::Validation {
            field: "classes".into(),
            reason: "must be in [2, 256]".into(),
        });
    }
    let ds = generate_synthetic(classes, per_class, dim, &mut derive_stream(seed, "synthetic", 0, NO_UE));
    let mut w = csv::Writer::from_path(out).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: out.to_path_buf(),
            source,
        },
        other => Error::Schema(format!("{other:?}")),
    })?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dim).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut row = vec![ds.labels()[i].to_string()];
        row.extend(ds.features(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    println!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}
