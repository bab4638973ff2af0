//! Metric files written per run, and averaging across runs.
//!
//! A run directory holds:
//! - `ues.csv`: `round,ue_id,selected,alpha,R,I,V,acc_local,acc_test`, one
//!   row per UE per round. `R`, `I` and `V` are the values the round was
//!   scheduled with; accuracies are empty for UEs that did not train.
//! - `rounds.csv`: `round,global_acc,recall_0..recall_{C-1},objective,skipped`.
//! - `summary.json`: [`RunSummary`].
//!
//! Floats are printed in shortest round-trip form, so equal runs produce
//! byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{RoundRecord, Simulation};
use crate::error::{Error, Result};

pub const UES_FILE: &str = "ues.csv";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub rounds: u32,
    pub skipped_rounds: u32,
    pub final_accuracy: f64,
    pub source_label: Option<u8>,
    /// Mean recall of the attacked class over the last three rounds.
    pub mean_source_recall_last3: Option<f64>,
    pub malicious: Vec<usize>,
    pub accuracy_per_round: Vec<f64>,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Mean recall of `class` over the last three records.
pub fn mean_recall_last3(records: &[RoundRecord], class: usize) -> Option<f64> {
    let tail = &records[records.len().saturating_sub(3)..];
    let vals: Vec<f64> = tail
        .iter()
        .filter_map(|r| r.per_class_recall.get(class).copied().flatten())
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn summarize(sim: &Simulation, records: &[RoundRecord]) -> RunSummary {
    let source_label = sim.config().attack.as_ref().map(|a| a.source_label);
    RunSummary {
        name: sim.config().name.clone(),
        seed: sim.seed(),
        rounds: records.len() as u32,
        skipped_rounds: records.iter().filter(|r| r.skipped).count() as u32,
        final_accuracy: records.last().map(|r| r.global_accuracy).unwrap_or(0.0),
        source_label,
        mean_source_recall_last3: source_label.and_then(|c| mean_recall_last3(records, c as usize)),
        malicious: sim.malicious_ids(),
        accuracy_per_round: records.iter().map(|r| r.global_accuracy).collect(),
    }
}

pub fn ues_csv(records: &[RoundRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round", "ue_id", "selected", "alpha", "R", "I", "V", "acc_local", "acc_test"])?;
    for r in records {
        for u in &r.ues {
            w.write_record([
                r.round.to_string(),
                u.id.to_string(),
                u8::from(u.selected).to_string(),
                u.alpha.to_string(),
                u.reputation.to_string(),
                u.diversity.to_string(),
                u.value.to_string(),
                opt(u.acc_local),
                opt(u.acc_test),
            ])?;
        }
    }
    finish(w)
}

pub fn rounds_csv(records: &[RoundRecord]) -> Result<String> {
    let classes = records.first().map(|r| r.per_class_recall.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["round".to_string(), "global_acc".to_string()];
    header.extend((0..classes).map(|c| format!("recall_{c}")));
    header.extend(["objective".to_string(), "skipped".to_string()]);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.round.to_string(), r.global_accuracy.to_string()];
        row.extend(r.per_class_recall.iter().map(|x| opt(*x)));
        row.push(r.objective.to_string());
        row.push(u8::from(r.skipped).to_string());
        w.write_record(&row)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_file(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the three metric files for a finished run.
pub fn write_run(sim: &Simulation, records: &[RoundRecord], out_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary = summarize(sim, records);
    write_file(out_dir.join(UES_FILE), &ues_csv(records)?)?;
    write_file(out_dir.join(ROUNDS_FILE), &rounds_csv(records)?)?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(out_dir.join(SUMMARY_FILE), &(json + "\n"))?;
    Ok(summary)
}

/// Per-round statistics over several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub round: u32,
    pub runs: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_recall: Option<f64>,
    pub std_recall: Option<f64>,
}

/// Mean and sample standard deviation (zero for a single value).
///
/// Accumulates offsets from the first value, so identical inputs give back
/// that value exactly.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let Some(&base) = values.first() else {
        return (f64::NAN, 0.0);
    };
    let n = values.len() as f64;
    let mean = base + values.iter().map(|v| v - base).sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct RoundsTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_rounds(dir: &Path) -> Result<RoundsTable> {
    let path = dir.join(ROUNDS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(RoundsTable { header, rows })
}

fn read_summary(dir: &Path) -> Result<Option<RunSummary>> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|source| Error::Parse { path, source })
}

fn parse_cell(cell: &str, what: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::Schema(format!("unparsable {what} value `{cell}`")))
}

/// Averages global accuracy and the recall of `source_label` across run
/// directories. When `source_label` is `None` it is taken from the runs'
/// summaries (which must agree).
pub fn aggregate(run_dirs: &[PathBuf], source_label: Option<u8>) -> Result<Vec<AggregateRow>> {
    if run_dirs.is_empty() {
        return Err(Error::Schema("no run directories given".into()));
    }
    let tables = run_dirs
        .iter()
        .map(|d| read_rounds(d))
        .collect::<Result<Vec<_>>>()?;
    let first = &tables[0];
    for (dir, t) in run_dirs.iter().zip(&tables).skip(1) {
        if t.header != first.header {
            return Err(Error::Schema(format!("{} has a different header", dir.display())));
        }
        if t.rows.len() != first.rows.len() {
            return Err(Error::Schema(format!(
                "{} has {} rounds, expected {}",
                dir.display(),
                t.rows.len(),
                first.rows.len()
            )));
        }
    }

    let source = match source_label {
        Some(s) => Some(s),
        None => {
            let mut labels = Vec::new();
            for d in run_dirs {
                labels.push(read_summary(d)?.and_then(|s| s.source_label));
            }
            if labels.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::Schema("runs disagree on the attacked label".into()));
            }
            labels[0]
        }
    };
    let col = |name: &str| first.header.iter().position(|h| h == name);
    let acc_col = col("global_acc").ok_or_else(|| Error::Schema("missing global_acc column".into()))?;
    let recall_col = match source {
        Some(s) => Some(
            col(&format!("recall_{s}"))
                .ok_or_else(|| Error::Schema(format!("missing recall_{s} column")))?,
        ),
        None => None,
    };

    let mut out = Vec::with_capacity(first.rows.len());
    for i in 0..first.rows.len() {
        let round: u32 = first.rows[i][0]
            .parse()
            .map_err(|_| Error::Schema("bad round number".into()))?;
        let mut accs = Vec::new();
        let mut recalls = Vec::new();
        for t in &tables {
            if t.rows[i][0] != first.rows[i][0] {
                return Err(Error::Schema(format!("round numbers differ at row {i}")));
            }
            if let Some(a) = parse_cell(&t.rows[i][acc_col], "global_acc")? {
                accs.push(a);
            }
            if let Some(c) = recall_col {
                if let Some(r) = parse_cell(&t.rows[i][c], "recall")? {
                    recalls.push(r);
                }
            }
        }
        let (mean_acc, std_acc) = mean_std(&accs);
        let recall = (!recalls.is_empty()).then(|| mean_std(&recalls));
        out.push(AggregateRow {
            round,
            runs: tables.len(),
            mean_acc,
            std_acc,
            mean_recall: recall.map(|r| r.0),
            std_recall: recall.map(|r| r.1),
        });
    }
    Ok(out)
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round", "runs", "mean_acc", "std_acc", "mean_source_recall", "std_source_recall"])?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.runs.to_string(),
            r.mean_acc.to_string(),
            r.std_acc.to_string(),
            opt(r.mean_recall),
            opt(r.std_recall),
        ])?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_run(dir: &Path, accs: &[f64], recall6: &[f64]) {
        fs::create_dir_all(dir).unwrap();
        let mut text = String::from("round,global_acc,");
        text += &(0..10).map(|c| format!("recall_{c}")).collect::<Vec<_>>().join(",");
        text += ",objective,skipped\n";
        for (i, (a, r)) in accs.iter().zip(recall6).enumerate() {
            let recalls: Vec<String> = (0..10)
                .map(|c| if c == 6 { r.to_string() } else { "0.5".into() })
                .collect();
            text += &format!("{},{a},{},1,0\n", i + 1, recalls.join(","));
        }
        fs::write(dir.join(ROUNDS_FILE), text).unwrap();
    }

    #[test]
    fn identical_runs_have_zero_spread() {
        let tmp = tempfile::tempdir().unwrap();
        let dirs: Vec<PathBuf> = (0..10).map(|i| tmp.path().join(format!("r{i}"))).collect();
        for d in &dirs {
            fake_run(d, &[0.3, 0.6], &[0.2, 0.4]);
        }
        let rows = aggregate(&dirs, Some(6)).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].mean_acc, 0.6);
        assert_eq!(rows[1].std_acc, 0.0);
        assert_eq!(rows[1].mean_recall, Some(0.4));
        assert_eq!(rows[1].runs, 10);
    }

    #[test]
    fn two_runs_average() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        fake_run(&a, &[0.1, 0.2, 0.3, 0.4, 0.8], &[0.0; 5]);
        fake_run(&b, &[0.1, 0.2, 0.3, 0.4, 0.9], &[1.0; 5]);
        let rows = aggregate(&[a, b], Some(6)).unwrap();
        assert!((rows[4].mean_acc - 0.85).abs() < 1e-12);
        assert!((rows[4].std_acc - (0.005f64).sqrt()).abs() < 1e-12);
        assert_eq!(rows[4].mean_recall, Some(0.5));
    }

    #[test]
    fn mismatched_round_counts_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        fake_run(&a, &[0.1, 0.2], &[0.0; 2]);
        fake_run(&b, &[0.1, 0.2, 0.3], &[0.0; 3]);
        assert!(matches!(aggregate(&[a, b], Some(6)), Err(Error::Schema(_))));
    }

    #[test]
    fn missing_run_dir_is_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            aggregate(&[tmp.path().join("nope")], None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
