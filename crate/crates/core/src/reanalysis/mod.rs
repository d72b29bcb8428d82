//! Empirical evaluation on rated datasets.
//!
//! Every case is scored by averaging a strategy over all ordered rater
//! arrangements (pairs for the tree, hierarchy and polyarchy; up to
//! `max_perms` ordered k-tuples for the majority), then those per-case means
//! are averaged across cases. The tree's per-case outcome depends on the
//! threshold only through the machine's label, so both labels are scored
//! once up front and a sweep just picks one per case.

mod io;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::decision::{
    binarize, hct_decide, hierarchy_decide, majority_decide, polyarchy_decide, CaseRecord,
    Dataset, Label, Threshold,
};
use crate::error::{check_probability, Error, Result};
use crate::streams;

pub use io::{
    load_dataset, load_dataset_from, preprocess_probabilistic_votes, write_dataset,
    write_per_case_jsonl, write_roc_csv, write_sweep_csv, LoadedDataset, RatingsSource,
    RejectedCase,
};

/// Cap on sampled majority arrangements per case.
pub const DEFAULT_MAX_PERMS: usize = 25_000;

/// Per-case mean over all evaluated arrangements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseScore {
    pub accuracy: f64,
    /// Expected humans consulted.
    pub cost: f64,
    /// Fraction of arrangements ending in a positive decision.
    pub positive_rate: f64,
}

#[derive(Default)]
struct Tally {
    correct: u64,
    humans: u64,
    positive: u64,
    n: u64,
}

impl Tally {
    fn add(&mut self, decision: Label, truth: Label, humans: u64) {
        self.correct += (decision == truth) as u64;
        self.positive += decision.is_positive() as u64;
        self.humans += humans;
        self.n += 1;
    }

    fn finish(&self) -> CaseScore {
        let n = self.n as f64;
        CaseScore {
            accuracy: self.correct as f64 / n,
            cost: self.humans as f64 / n,
            positive_rate: self.positive as f64 / n,
        }
    }
}

fn require_raters(case: &CaseRecord, needed: usize) -> Result<()> {
    if case.n_raters() < needed {
        return Err(Error::TooFewRaters {
            case_id: case.case_id.clone(),
            needed,
            available: case.n_raters(),
        });
    }
    Ok(())
}

fn hct_with_machine(votes: &[Label], machine: Label, truth: Label) -> CaseScore {
    let mut tally = Tally::default();
    for (i, &h1) in votes.iter().enumerate() {
        for (j, &h2) in votes.iter().enumerate() {
            if i != j {
                let trace = hct_decide(h1, machine, || h2);
                tally.add(trace.final_label, truth, trace.humans_consulted as u64);
            }
        }
    }
    tally.finish()
}

fn over_pairs(votes: &[Label], truth: Label, rule: fn(Label, Label) -> Label) -> CaseScore {
    let mut tally = Tally::default();
    for (i, &h1) in votes.iter().enumerate() {
        for (j, &h2) in votes.iter().enumerate() {
            if i != j {
                tally.add(rule(h1, h2), truth, 2);
            }
        }
    }
    tally.finish()
}

/// Scores the tree on one case: every ordered pair of distinct raters plays
/// (H1, H2) with the machine's binarized score in between.
pub fn evaluate_hct_on_case(case: &CaseRecord, threshold: Threshold) -> Result<CaseScore> {
    require_raters(case, 2)?;
    let machine = binarize(case.machine_score, threshold)?;
    Ok(hct_with_machine(&case.votes(), machine, case.truth))
}

/// Number of ordered k-arrangements of n raters, saturating.
fn arrangement_count(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128))
}

fn for_each_arrangement(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn step(n: usize, k: usize, used: &mut [bool], current: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if current.len() == k {
            f(current);
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                current.push(i);
                step(n, k, used, current, f);
                current.pop();
                used[i] = false;
            }
        }
    }
    step(n, k, &mut vec![false; n], &mut Vec::with_capacity(k), f);
}

/// Distinct ordered k-arrangements drawn uniformly without replacement.
fn sample_arrangements<R: Rng>(n: usize, k: usize, count: usize, rng: &mut R) -> Vec<Vec<u32>> {
    let mut pool: Vec<u32> = (0..n as u32).collect();
    let mut seen = HashSet::with_capacity(count);
    let mut picks = Vec::with_capacity(count);
    while picks.len() < count {
        for i in 0..k {
            let j = rng.gen_range(i..n);
            pool.swap(i, j);
        }
        let key = pool[..k].to_vec();
        if seen.insert(key.clone()) {
            picks.push(key);
        }
    }
    picks
}

fn majority_of(votes: &[Label], order: impl Fn(usize) -> usize, k: usize) -> (Label, u64) {
    if k == 3 {
        let trace = majority_decide(votes[order(0)], votes[order(1)], || votes[order(2)]);
        return (trace.final_label, trace.humans_consulted as u64);
    }
    let positives = (0..k).filter(|&i| votes[order(i)].is_positive()).count();
    (Label::from(2 * positives > k), k as u64)
}

/// Scores a `k`-person majority on one case.
///
/// All ordered k-arrangements are used when there are at most `max_perms`;
/// otherwise `max_perms` distinct ones are sampled with a generator keyed by
/// `(seed, case_id)`. For `k = 3` the third rater is consulted only on a
/// split (cost 2 or 3); for other sizes every member is counted.
pub fn evaluate_majority_on_case(
    case: &CaseRecord,
    k: usize,
    max_perms: usize,
    seed: u64,
) -> Result<CaseScore> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::invalid(format!(
            "majority group size must be odd and positive, got {k}"
        )));
    }
    if max_perms == 0 {
        return Err(Error::invalid("max_perms must be positive"));
    }
    require_raters(case, k)?;
    let votes = case.votes();
    let n = votes.len();
    let mut tally = Tally::default();
    if arrangement_count(n, k) <= max_perms as u128 {
        for_each_arrangement(n, k, &mut |perm| {
            let (label, humans) = majority_of(&votes, |i| perm[i], k);
            tally.add(label, case.truth, humans);
        });
    } else {
        let mut rng = streams::keyed(seed, "majority", &case.case_id);
        for perm in sample_arrangements(n, k, max_perms, &mut rng) {
            let (label, humans) = majority_of(&votes, |i| perm[i] as usize, k);
            tally.add(label, case.truth, humans);
        }
    }
    Ok(tally.finish())
}

/// Sentinels around every distinct machine score, ascending.
pub fn candidate_thresholds<'a>(scores: impl IntoIterator<Item = &'a f64>) -> Vec<Threshold> {
    let mut values: Vec<f64> = scores.into_iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut out = Vec::with_capacity(values.len() + 2);
    out.push(Threshold::AllPositive);
    out.extend(values.into_iter().map(Threshold::Interior));
    out.push(Threshold::AllNegative);
    out
}

/// Candidate thresholds from a dataset's machine scores.
pub fn dataset_thresholds(dataset: &Dataset) -> Vec<Threshold> {
    candidate_thresholds(dataset.cases.iter().map(|c| &c.machine_score))
}

/// True and false positive rates from (possibly fractional) positive decisions.
pub fn confusion_rates(decisions: &[(f64, Label)]) -> Result<(f64, f64)> {
    let (mut tp, mut pos, mut fp, mut neg) = (0.0, 0usize, 0.0, 0usize);
    for &(positive_rate, truth) in decisions {
        if truth.is_positive() {
            tp += positive_rate;
            pos += 1;
        } else {
            fp += positive_rate;
            neg += 1;
        }
    }
    if pos == 0 {
        return Err(Error::UndefinedRate("positive"));
    }
    if neg == 0 {
        return Err(Error::UndefinedRate("negative"));
    }
    Ok((tp / pos as f64, fp / neg as f64))
}

const AUC_CLAMP: f64 = 1e-9;

/// Binormal AUC implied by one ROC point. Rates are clamped to
/// `[1e-9, 1 - 1e-9]` before the probit transform.
pub fn single_point_auc(tpr: f64, fpr: f64) -> f64 {
    let normal = Normal::standard();
    let clamp = |x: f64| x.clamp(AUC_CLAMP, 1.0 - AUC_CLAMP);
    let separation = normal.inverse_cdf(clamp(tpr)) - normal.inverse_cdf(clamp(fpr));
    normal.cdf(separation / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    pub k_majority: usize,
    pub max_perms: usize,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            k_majority: 3,
            max_perms: DEFAULT_MAX_PERMS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedCase {
    pub case_id: String,
    pub reason: String,
}

/// Threshold-independent per-case scores for every strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRow {
    pub case_id: String,
    pub truth: Label,
    pub machine_score: f64,
    pub hct_machine_positive: CaseScore,
    pub hct_machine_negative: CaseScore,
    pub majority: CaseScore,
    pub single_human: CaseScore,
    pub hierarchy: CaseScore,
    pub polyarchy: CaseScore,
}

impl CaseRow {
    fn build(case: &CaseRecord, opts: &SweepOptions) -> Result<CaseRow> {
        require_raters(case, opts.k_majority.max(2))?;
        let votes = case.votes();
        let truth = case.truth;
        let mut single = Tally::default();
        for &v in &votes {
            single.add(v, truth, 1);
        }
        Ok(CaseRow {
            case_id: case.case_id.clone(),
            truth,
            machine_score: case.machine_score,
            hct_machine_positive: hct_with_machine(&votes, Label::Positive, truth),
            hct_machine_negative: hct_with_machine(&votes, Label::Negative, truth),
            majority: evaluate_majority_on_case(case, opts.k_majority, opts.max_perms, opts.seed)?,
            single_human: single.finish(),
            hierarchy: over_pairs(&votes, truth, hierarchy_decide),
            polyarchy: over_pairs(&votes, truth, polyarchy_decide),
        })
    }

    pub fn machine_label(&self, threshold: Threshold) -> Label {
        // score validated at construction
        binarize(self.machine_score, threshold).unwrap_or(Label::Negative)
    }

    pub fn hct(&self, threshold: Threshold) -> CaseScore {
        match self.machine_label(threshold) {
            Label::Positive => self.hct_machine_positive,
            Label::Negative => self.hct_machine_negative,
        }
    }

    pub fn machine(&self, threshold: Threshold) -> CaseScore {
        let label = self.machine_label(threshold);
        CaseScore {
            accuracy: (label == self.truth) as u8 as f64,
            cost: 0.0,
            positive_rate: label.as_u8() as f64,
        }
    }

    pub fn score(&self, strategy: Strategy, threshold: Threshold) -> CaseScore {
        match strategy {
            Strategy::Hct => self.hct(threshold),
            Strategy::Machine => self.machine(threshold),
            Strategy::Majority => self.majority,
            Strategy::SingleHuman => self.single_human,
            Strategy::Hierarchy => self.hierarchy,
            Strategy::Polyarchy => self.polyarchy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Hct,
    Majority,
    Machine,
    SingleHuman,
    Hierarchy,
    Polyarchy,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Hct,
        Strategy::Majority,
        Strategy::Machine,
        Strategy::SingleHuman,
        Strategy::Hierarchy,
        Strategy::Polyarchy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Hct => "hct",
            Strategy::Majority => "majority",
            Strategy::Machine => "machine",
            Strategy::SingleHuman => "single_human",
            Strategy::Hierarchy => "hierarchy",
            Strategy::Polyarchy => "polyarchy",
        }
    }

    pub fn depends_on_threshold(&self) -> bool {
        matches!(self, Strategy::Hct | Strategy::Machine)
    }
}

/// Per-case scores of every evaluable case, plus the cases that were skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseTable {
    pub dataset: String,
    pub rows: Vec<CaseRow>,
    pub skipped: Vec<SkippedCase>,
}

impl CaseTable {
    /// Cases with fewer than `max(2, k_majority)` raters are skipped and listed.
    pub fn build(dataset: &Dataset, opts: &SweepOptions) -> Result<CaseTable> {
        if opts.k_majority == 0 || opts.k_majority % 2 == 0 {
            return Err(Error::invalid(format!(
                "majority group size must be odd and positive, got {}",
                opts.k_majority
            )));
        }
        let results: Vec<Result<CaseRow>> =
            dataset.cases.par_iter().map(|c| CaseRow::build(c, opts)).collect();
        let mut rows = Vec::with_capacity(results.len());
        let mut skipped = Vec::new();
        for (case, result) in dataset.cases.iter().zip(results) {
            match result {
                Ok(row) => rows.push(row),
                Err(e @ Error::TooFewRaters { .. }) => skipped.push(SkippedCase {
                    case_id: case.case_id.clone(),
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
        if rows.is_empty() {
            return Err(Error::NoEvaluableCases(format!(
                "all {} cases of `{}` were skipped",
                dataset.len(),
                dataset.name
            )));
        }
        Ok(CaseTable {
            dataset: dataset.name.clone(),
            rows,
            skipped,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.rows.len()).collect()
    }

    pub fn thresholds(&self, indices: &[usize]) -> Vec<Threshold> {
        candidate_thresholds(indices.iter().map(|&i| &self.rows[i].machine_score))
    }

    /// Mean accuracy of one strategy over a subset of rows.
    pub fn mean_accuracy(&self, indices: &[usize], strategy: Strategy, threshold: Threshold) -> f64 {
        indices
            .iter()
            .map(|&i| self.rows[i].score(strategy, threshold).accuracy)
            .sum::<f64>()
            / indices.len() as f64
    }

    pub fn outcome(&self, indices: &[usize], strategy: Strategy, threshold: Threshold) -> StrategyOutcome {
        let per_case: Vec<CaseScore> = indices
            .iter()
            .map(|&i| self.rows[i].score(strategy, threshold))
            .collect();
        let truths: Vec<Label> = indices.iter().map(|&i| self.rows[i].truth).collect();
        StrategyOutcome::from_cases(Arc::new(per_case), &truths)
    }

    /// One row per candidate threshold of the subset.
    pub fn sweep_rows(&self, indices: &[usize]) -> Vec<SweepResult> {
        let fixed = |s| self.outcome(indices, s, Threshold::AllPositive);
        let majority = fixed(Strategy::Majority);
        let single_human = fixed(Strategy::SingleHuman);
        let hierarchy = fixed(Strategy::Hierarchy);
        let polyarchy = fixed(Strategy::Polyarchy);
        self.thresholds(indices)
            .into_par_iter()
            .map(|threshold| SweepResult {
                threshold,
                hct: self.outcome(indices, Strategy::Hct, threshold),
                majority: majority.clone(),
                machine: self.outcome(indices, Strategy::Machine, threshold),
                single_human: single_human.clone(),
                hierarchy: hierarchy.clone(),
                polyarchy: polyarchy.clone(),
            })
            .collect()
    }
}

/// Aggregate of one strategy at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutcome {
    pub accuracy: f64,
    pub cost: f64,
    /// `None` when the evaluated cases lack a class.
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    /// Aligned with the owning sweep's case order.
    pub per_case: Arc<Vec<CaseScore>>,
}

impl StrategyOutcome {
    fn from_cases(per_case: Arc<Vec<CaseScore>>, truths: &[Label]) -> Self {
        let n = per_case.len() as f64;
        let accuracy = per_case.iter().map(|c| c.accuracy).sum::<f64>() / n;
        let cost = per_case.iter().map(|c| c.cost).sum::<f64>() / n;
        let decisions: Vec<(f64, Label)> = per_case
            .iter()
            .zip(truths)
            .map(|(c, &t)| (c.positive_rate, t))
            .collect();
        let rates = confusion_rates(&decisions).ok();
        StrategyOutcome {
            accuracy,
            cost,
            tpr: rates.map(|r| r.0),
            fpr: rates.map(|r| r.1),
            per_case,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub threshold: Threshold,
    pub hct: StrategyOutcome,
    pub majority: StrategyOutcome,
    pub machine: StrategyOutcome,
    pub single_human: StrategyOutcome,
    pub hierarchy: StrategyOutcome,
    pub polyarchy: StrategyOutcome,
}

impl SweepResult {
    pub fn get(&self, strategy: Strategy) -> &StrategyOutcome {
        match strategy {
            Strategy::Hct => &self.hct,
            Strategy::Majority => &self.majority,
            Strategy::Machine => &self.machine,
            Strategy::SingleHuman => &self.single_human,
            Strategy::Hierarchy => &self.hierarchy,
            Strategy::Polyarchy => &self.polyarchy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub table: CaseTable,
    pub rows: Vec<SweepResult>,
}

impl Sweep {
    pub fn case_ids(&self) -> impl Iterator<Item = &str> {
        self.table.rows.iter().map(|r| r.case_id.as_str())
    }

    pub fn skipped(&self) -> &[SkippedCase] {
        &self.table.skipped
    }

    /// The row at which the tree is most accurate (smallest threshold on ties).
    pub fn best_hct_row(&self) -> &SweepResult {
        let threshold = select_threshold(&self.rows);
        self.rows
            .iter()
            .find(|r| r.threshold == threshold)
            .expect("sweep has at least the two sentinel rows")
    }

    pub fn row_at(&self, threshold: Threshold) -> Option<&SweepResult> {
        self.rows.iter().find(|r| r.threshold == threshold)
    }
}

/// Scores every strategy at every candidate threshold of the dataset.
pub fn sweep(dataset: &Dataset, opts: &SweepOptions) -> Result<Sweep> {
    let table = CaseTable::build(dataset, opts)?;
    let rows = table.sweep_rows(&table.all_indices());
    Ok(Sweep { table, rows })
}

/// Arg-max of tree accuracy; ties go to the smallest threshold.
pub fn select_threshold(rows: &[SweepResult]) -> Threshold {
    best_threshold(rows.iter().map(|r| (r.threshold, r.hct.accuracy)))
        .unwrap_or(Threshold::AllPositive)
}

pub(crate) fn best_threshold(candidates: impl IntoIterator<Item = (Threshold, f64)>) -> Option<Threshold> {
    let mut best: Option<(Threshold, f64)> = None;
    for (t, acc) in candidates {
        best = match best {
            Some((bt, ba)) if ba > acc || (ba == acc && bt <= t) => Some((bt, ba)),
            _ => Some((t, acc)),
        };
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrowdPoint {
    pub size: usize,
    pub accuracy: f64,
    pub cost: f64,
    pub n_cases: usize,
    pub n_skipped: usize,
}

/// Majority accuracy for each odd crowd size, over cases with enough raters.
pub fn crowd_curve(dataset: &Dataset, sizes: &[usize], max_perms: usize, seed: u64) -> Result<Vec<CrowdPoint>> {
    sizes
        .iter()
        .map(|&k| {
            let results: Vec<Result<CaseScore>> = dataset
                .cases
                .par_iter()
                .map(|c| evaluate_majority_on_case(c, k, max_perms, seed))
                .collect();
            let mut scores = Vec::new();
            let mut skipped = 0;
            for r in results {
                match r {
                    Ok(s) => scores.push(s),
                    Err(Error::TooFewRaters { .. }) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            if scores.is_empty() {
                return Err(Error::NoEvaluableCases(format!("no case has {k} raters")));
            }
            let n = scores.len() as f64;
            Ok(CrowdPoint {
                size: k,
                accuracy: scores.iter().map(|s| s.accuracy).sum::<f64>() / n,
                cost: scores.iter().map(|s| s.cost).sum::<f64>() / n,
                n_cases: scores.len(),
                n_skipped: skipped,
            })
        })
        .collect()
}

/// Per-case accuracies of one strategy, keyed by case id.
pub fn per_case_accuracy(table: &CaseTable, strategy: Strategy, threshold: Threshold) -> BTreeMap<String, f64> {
    table
        .rows
        .iter()
        .map(|r| (r.case_id.clone(), r.score(strategy, threshold).accuracy))
        .collect()
}

pub(crate) fn validate_score(score: f64) -> Result<f64> {
    check_probability("machine score", score)
}
