//! CSV/JSON schemas for rated datasets and sweep reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;

use super::{single_point_auc, validate_score, CaseScore, Strategy, Sweep};
use crate::decision::{CaseRecord, Dataset, Label};
use crate::error::{check_probability, Error, Result};
use crate::streams;

/// Where human votes come from.
#[derive(Debug, Clone)]
pub enum RatingsSource {
    /// `case_id,rater_id,vote` with vote in {0, 1}.
    Binary(PathBuf),
    /// `case_id,rater_id,prob`; binarized at 0.5 with seeded random ties.
    Probabilistic { path: PathBuf, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedCase {
    pub case_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub rejected: Vec<RejectedCase>,
}

struct Table {
    path: PathBuf,
    reader: csv::Reader<File>,
    columns: Vec<usize>,
}

impl Table {
    fn open(path: &Path, required: &[&'static str]) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })?;
        let headers = reader
            .headers()
            .map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })?
            .clone();
        let columns = required
            .iter()
            .map(|&name| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::MissingColumn {
                        path: path.to_path_buf(),
                        column: name,
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Table {
            path: path.to_path_buf(),
            reader,
            columns,
        })
    }

    /// Calls `f(line, fields)` with the required columns in order.
    fn for_each(mut self, mut f: impl FnMut(&Path, u64, &[&str]) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            let more = self.reader.read_record(&mut record).map_err(|source| Error::Csv {
                path: self.path.clone(),
                source,
            })?;
            if !more {
                return Ok(());
            }
            let line = record.position().map_or(0, |p| p.line());
            let fields: Vec<&str> = self
                .columns
                .iter()
                .map(|&i| record.get(i).unwrap_or(""))
                .collect();
            f(&self.path, line, &fields)?;
        }
    }
}

fn parse_label(path: &Path, line: u64, value: &str) -> Result<Label> {
    Label::parse(value).ok_or_else(|| Error::InvalidLabel {
        path: path.to_path_buf(),
        line,
        value: value.to_string(),
    })
}

fn parse_unit(path: &Path, line: u64, case_id: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .and_then(|v| validate_score(v).ok())
        .ok_or_else(|| Error::ScoreOutOfRange {
            path: path.to_path_buf(),
            line,
            case_id: case_id.to_string(),
            value: value.to_string(),
        })
}

type Votes = BTreeMap<String, BTreeMap<String, Label>>;

fn read_binary_ratings(path: &Path) -> Result<Votes> {
    let mut votes: Votes = BTreeMap::new();
    Table::open(path, &["case_id", "rater_id", "vote"])?.for_each(|path, line, f| {
        let label = parse_label(path, line, f[2])?;
        let previous = votes
            .entry(f[0].to_string())
            .or_default()
            .insert(f[1].to_string(), label);
        if previous.is_some() {
            return Err(Error::DuplicateVote {
                path: path.to_path_buf(),
                line,
                case_id: f[0].to_string(),
                rater_id: f[1].to_string(),
            });
        }
        Ok(())
    })?;
    Ok(votes)
}

fn read_probabilistic_ratings(path: &Path, seed: u64) -> Result<Votes> {
    let mut raw: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    Table::open(path, &["case_id", "rater_id", "prob"])?.for_each(|path, line, f| {
        let prob = parse_unit(path, line, f[0], f[2])?;
        let previous = raw
            .entry(f[0].to_string())
            .or_default()
            .insert(f[1].to_string(), prob);
        if previous.is_some() {
            return Err(Error::DuplicateVote {
                path: path.to_path_buf(),
                line,
                case_id: f[0].to_string(),
                rater_id: f[1].to_string(),
            });
        }
        Ok(())
    })?;
    raw.into_iter()
        .map(|(case_id, probs)| {
            let case_seed = streams::derive_seed(seed, "probabilistic-case", &case_id);
            preprocess_probabilistic_votes(&probs, case_seed).map(|v| (case_id, v))
        })
        .collect()
}

fn read_keyed<T>(
    path: &Path,
    value_column: &'static str,
    mut parse: impl FnMut(&Path, u64, &str, &str) -> Result<T>,
) -> Result<BTreeMap<String, T>> {
    let mut out = BTreeMap::new();
    Table::open(path, &["case_id", value_column])?.for_each(|path, line, f| {
        let value = parse(path, line, f[0], f[1])?;
        if out.insert(f[0].to_string(), value).is_some() {
            return Err(Error::DuplicateCase {
                path: path.to_path_buf(),
                line,
                case_id: f[0].to_string(),
            });
        }
        Ok(())
    })?;
    Ok(out)
}

/// Binarizes probabilistic votes: below 0.5 negative, above positive, exactly
/// 0.5 a fair coin seeded by `(seed, rater_id)`.
pub fn preprocess_probabilistic_votes(
    raw: &BTreeMap<String, f64>,
    seed: u64,
) -> Result<BTreeMap<String, Label>> {
    raw.iter()
        .map(|(rater, &p)| {
            check_probability("probabilistic vote", p)?;
            let label = if p < 0.5 {
                Label::Negative
            } else if p > 0.5 {
                Label::Positive
            } else {
                Label::from(streams::keyed(seed, "tie", rater).gen::<bool>())
            };
            Ok((rater.clone(), label))
        })
        .collect()
}

/// Loads and joins `ratings.csv`, `machine.csv` and `truth.csv`.
pub fn load_dataset(ratings: &Path, machine: &Path, truth: &Path) -> Result<LoadedDataset> {
    load_dataset_from(&RatingsSource::Binary(ratings.to_path_buf()), machine, truth)
}

/// Cases missing a machine score, a truth label or any vote are rejected and
/// reported rather than failing the load.
pub fn load_dataset_from(ratings: &RatingsSource, machine: &Path, truth: &Path) -> Result<LoadedDataset> {
    let (votes, ratings_path) = match ratings {
        RatingsSource::Binary(path) => (read_binary_ratings(path)?, path),
        RatingsSource::Probabilistic { path, seed } => (read_probabilistic_ratings(path, *seed)?, path),
    };
    let scores = read_keyed(machine, "score", parse_unit)?;
    let truths = read_keyed(truth, "label", |path, line, _, v| parse_label(path, line, v))?;

    let all_ids: BTreeSet<&String> = votes.keys().chain(scores.keys()).chain(truths.keys()).collect();
    let mut cases = Vec::new();
    let mut rejected = Vec::new();
    for id in all_ids {
        let missing: Vec<&str> = [
            (!votes.contains_key(id)).then_some("human votes"),
            (!scores.contains_key(id)).then_some("machine score"),
            (!truths.contains_key(id)).then_some("truth label"),
        ]
        .into_iter()
        .flatten()
        .collect();
        if !missing.is_empty() {
            rejected.push(RejectedCase {
                case_id: id.clone(),
                reason: format!("missing {}", missing.join(", ")),
            });
            continue;
        }
        cases.push(CaseRecord::new(
            id.clone(),
            truths[id],
            votes[id].clone(),
            scores[id],
        )?);
    }
    let name = ratings_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "dataset".to_string());
    Ok(LoadedDataset {
        dataset: Dataset::new(name, cases)?,
        rejected,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `ratings.csv`, `machine.csv` and `truth.csv` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let ratings_path = dir.join("ratings.csv");
    let machine_path = dir.join("machine.csv");
    let truth_path = dir.join("truth.csv");
    let mut ratings = csv::Writer::from_writer(create(&ratings_path)?);
    let mut machine = csv::Writer::from_writer(create(&machine_path)?);
    let mut truth = csv::Writer::from_writer(create(&truth_path)?);
    ratings
        .write_record(["case_id", "rater_id", "vote"])
        .map_err(csv_err(&ratings_path))?;
    machine.write_record(["case_id", "score"]).map_err(csv_err(&machine_path))?;
    truth.write_record(["case_id", "label"]).map_err(csv_err(&truth_path))?;
    for case in &dataset.cases {
        for (rater, vote) in &case.human_votes {
            ratings
                .write_record([case.case_id.as_str(), rater, &vote.to_string()])
                .map_err(csv_err(&ratings_path))?;
        }
        machine
            .write_record([case.case_id.clone(), case.machine_score.to_string()])
            .map_err(csv_err(&machine_path))?;
        truth
            .write_record([case.case_id.clone(), case.truth.to_string()])
            .map_err(csv_err(&truth_path))?;
    }
    ratings.flush().map_err(|source| Error::Io { path: ratings_path, source })?;
    machine.flush().map_err(|source| Error::Io { path: machine_path, source })?;
    truth.flush().map_err(|source| Error::Io { path: truth_path, source })?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `threshold_kind,threshold,strategy,accuracy,cost,tpr,fpr`; sentinel rows
/// leave `threshold` empty.
pub fn write_sweep_csv<W: Write>(sweep: &Sweep, writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["threshold_kind", "threshold", "strategy", "accuracy", "cost", "tpr", "fpr"])?;
    for row in &sweep.rows {
        let t = match row.threshold {
            crate::Threshold::Interior(t) => t.to_string(),
            _ => String::new(),
        };
        for strategy in Strategy::ALL {
            let o = row.get(strategy);
            out.write_record([
                row.threshold.kind().to_string(),
                t.clone(),
                strategy.as_str().to_string(),
                o.accuracy.to_string(),
                o.cost.to_string(),
                opt(o.tpr),
                opt(o.fpr),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// ROC points with their binormal single-point AUC: one row per threshold
/// for the tree and the machine, one row for each fixed human strategy.
pub fn write_roc_csv<W: Write>(sweep: &Sweep, writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["threshold_kind", "threshold", "strategy", "tpr", "fpr", "auc"])?;
    let mut point = |kind: &str, t: String, s: Strategy, tpr: Option<f64>, fpr: Option<f64>| {
        let auc = match (tpr, fpr) {
            (Some(a), Some(b)) => single_point_auc(a, b).to_string(),
            _ => String::new(),
        };
        out.write_record([kind.to_string(), t, s.as_str().to_string(), opt(tpr), opt(fpr), auc])
    };
    for row in &sweep.rows {
        let t = match row.threshold {
            crate::Threshold::Interior(t) => t.to_string(),
            _ => String::new(),
        };
        for s in [Strategy::Hct, Strategy::Machine] {
            let o = row.get(s);
            point(row.threshold.kind(), t.clone(), s, o.tpr, o.fpr)?;
        }
    }
    if let Some(row) = sweep.rows.first() {
        for s in [Strategy::Majority, Strategy::SingleHuman, Strategy::Hierarchy, Strategy::Polyarchy] {
            let o = row.get(s);
            point("none", String::new(), s, o.tpr, o.fpr)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CaseLine<'a> {
    case_id: &'a str,
    truth: Label,
    machine_score: f64,
    hct_machine_positive: CaseScore,
    hct_machine_negative: CaseScore,
    majority: CaseScore,
    single_human: CaseScore,
    hierarchy: CaseScore,
    polyarchy: CaseScore,
}

/// One JSON object per case with its threshold-independent scores.
pub fn write_per_case_jsonl<W: Write>(sweep: &Sweep, mut writer: W) -> std::io::Result<()> {
    for r in &sweep.table.rows {
        let line = CaseLine {
            case_id: &r.case_id,
            truth: r.truth,
            machine_score: r.machine_score,
            hct_machine_positive: r.hct_machine_positive,
            hct_machine_negative: r.hct_machine_negative,
            majority: r.majority,
            single_human: r.single_human,
            hierarchy: r.hierarchy,
            polyarchy: r.polyarchy,
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
