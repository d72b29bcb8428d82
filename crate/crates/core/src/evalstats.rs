//! Out-of-sample threshold selection and resampling uncertainty.
//!
//! Cross-validation picks the tree's threshold on training folds only and
//! scores it on the held-out fold. Differences between strategies are
//! summarized with a case-cluster bootstrap: median difference, shortest 95%
//! interval, probability of direction and the share of resamples beyond a
//! region of practical equivalence.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::decision::{Dataset, Label, Threshold};
use crate::error::{Error, Result};
use crate::reanalysis::{best_threshold, CaseTable, Strategy, SweepOptions};
use crate::streams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CvConfig {
    pub n_repeats: usize,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_repeats: 1000,
            n_folds: 5,
            seed: 0,
        }
    }
}

/// Splits case indices into `n_folds` folds that keep the base rate: each
/// class is shuffled and dealt round-robin, negatives continuing where the
/// positives stopped so fold sizes differ by at most one.
pub fn stratified_folds(truths: &[Label], n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {n_folds}")));
    }
    let mut positives: Vec<usize> = (0..truths.len()).filter(|&i| truths[i].is_positive()).collect();
    let mut negatives: Vec<usize> = (0..truths.len()).filter(|&i| !truths[i].is_positive()).collect();
    for (class, members) in [("positive", &positives), ("negative", &negatives)] {
        if members.len() < n_folds {
            return Err(Error::Stratification {
                folds: n_folds,
                available: members.len(),
                class,
            });
        }
    }
    let mut rng = streams::indexed(seed, 0);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); n_folds];
    for (slot, idx) in positives.into_iter().chain(negatives).enumerate() {
        folds[slot % n_folds].push(idx);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// [`stratified_folds`] over a dataset, returning case ids.
pub fn stratified_case_folds(dataset: &Dataset, n_folds: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    let truths: Vec<Label> = dataset.cases.iter().map(|c| c.truth).collect();
    Ok(stratified_folds(&truths, n_folds, seed)?
        .into_iter()
        .map(|fold| fold.into_iter().map(|i| dataset.cases[i].case_id.clone()).collect())
        .collect())
}

/// Folds used by repetition `repeat` of [`repeated_cv`].
pub fn repeat_folds(truths: &[Label], cfg: &CvConfig, repeat: usize) -> Result<Vec<Vec<usize>>> {
    stratified_folds(truths, cfg.n_folds, streams::derive_seed(cfg.seed, "cv-repeat", &repeat.to_string()))
}

/// Threshold maximizing tree accuracy over `train`, candidates taken from
/// the training scores only. Ties go to the smallest threshold.
pub fn select_threshold_on(table: &CaseTable, train: &[usize]) -> Threshold {
    best_threshold(
        table
            .thresholds(train)
            .into_iter()
            .map(|t| (t, table.mean_accuracy(train, Strategy::Hct, t))),
    )
    .unwrap_or(Threshold::AllPositive)
}

/// Strategies reported per fold.
pub const CV_STRATEGIES: [Strategy; 4] = [
    Strategy::Hct,
    Strategy::Majority,
    Strategy::Machine,
    Strategy::SingleHuman,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvRow {
    pub repeat: usize,
    pub fold: usize,
    pub strategy: Strategy,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvSelection {
    pub repeat: usize,
    pub fold: usize,
    pub threshold: Threshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub config: CvConfig,
    /// `n_repeats * n_folds * 4` rows, ordered by repeat, fold, strategy.
    pub rows: Vec<CvRow>,
    pub selections: Vec<CvSelection>,
    /// Out-of-sample accuracy per case, averaged over repeats.
    pub per_case: BTreeMap<Strategy, BTreeMap<String, f64>>,
}

impl CvReport {
    /// Fold-level accuracies keyed `r{repeat}/f{fold}`, for bootstrapping over
    /// (repeat, fold) cells.
    pub fn cell_accuracies(&self, strategy: Strategy) -> BTreeMap<String, f64> {
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| (format!("r{}/f{}", r.repeat, r.fold), r.accuracy))
            .collect()
    }

    pub fn mean_accuracy(&self, strategy: Strategy) -> f64 {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| r.accuracy)
            .collect();
        values.iter().sum::<f64>() / values.len() as f64
    }
}

struct RepeatResult {
    rows: Vec<CvRow>,
    selections: Vec<CvSelection>,
    per_case: Vec<[f64; 4]>,
}

/// Repeated stratified k-fold cross-validation of the tree's threshold choice.
pub fn repeated_cv(dataset: &Dataset, cfg: &CvConfig, opts: &SweepOptions) -> Result<CvReport> {
    let table = CaseTable::build(dataset, opts)?;
    repeated_cv_on(&table, cfg)
}

/// As [`repeated_cv`], on an already scored case table.
pub fn repeated_cv_on(table: &CaseTable, cfg: &CvConfig) -> Result<CvReport> {
    if cfg.n_repeats == 0 {
        return Err(Error::invalid("n_repeats must be at least 1"));
    }
    let truths: Vec<Label> = table.rows.iter().map(|r| r.truth).collect();
    let repeats: Vec<RepeatResult> = (0..cfg.n_repeats)
        .into_par_iter()
        .map(|repeat| {
            let folds = repeat_folds(&truths, cfg, repeat)?;
            let mut rows = Vec::with_capacity(cfg.n_folds * CV_STRATEGIES.len());
            let mut selections = Vec::with_capacity(cfg.n_folds);
            let mut per_case = vec![[0.0; 4]; truths.len()];
            for (fold, test) in folds.iter().enumerate() {
                let train: Vec<usize> = folds
                    .iter()
                    .enumerate()
                    .filter(|&(f, _)| f != fold)
                    .flat_map(|(_, members)| members.iter().copied())
                    .collect();
                let threshold = select_threshold_on(table, &train);
                selections.push(CvSelection { repeat, fold, threshold });
                for (s, strategy) in CV_STRATEGIES.into_iter().enumerate() {
                    rows.push(CvRow {
                        repeat,
                        fold,
                        strategy,
                        accuracy: table.mean_accuracy(test, strategy, threshold),
                    });
                    for &i in test {
                        per_case[i][s] = table.rows[i].score(strategy, threshold).accuracy;
                    }
                }
            }
            Ok(RepeatResult {
                rows,
                selections,
                per_case,
            })
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![[0.0; 4]; truths.len()];
    let mut rows = Vec::with_capacity(cfg.n_repeats * cfg.n_folds * CV_STRATEGIES.len());
    let mut selections = Vec::with_capacity(cfg.n_repeats * cfg.n_folds);
    for r in repeats {
        rows.extend(r.rows);
        selections.extend(r.selections);
        for (acc, case) in sums.iter_mut().zip(&r.per_case) {
            for s in 0..4 {
                acc[s] += case[s];
            }
        }
    }
    let per_case = CV_STRATEGIES
        .into_iter()
        .enumerate()
        .map(|(s, strategy)| {
            let by_case = table
                .rows
                .iter()
                .zip(&sums)
                .map(|(row, acc)| (row.case_id.clone(), acc[s] / cfg.n_repeats as f64))
                .collect();
            (strategy, by_case)
        })
        .collect();
    Ok(CvReport {
        config: *cfg,
        rows,
        selections,
        per_case,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub rope: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: 10_000,
            rope: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapSummary {
    pub median_diff: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
    /// Share of resampled differences above 0.
    pub prob_direction: f64,
    /// Share of resampled differences above `rope_halfwidth`.
    pub prob_beyond_rope: f64,
    pub rope_halfwidth: f64,
    pub n_boot: usize,
}

fn sorted_median(sorted: &[f64]) -> f64 {
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    }
}

/// Shortest interval holding `mass` of the sorted draws.
fn shortest_interval(sorted: &[f64], mass: f64) -> (f64, f64) {
    let width = ((mass * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let mut best = (sorted[0], sorted[width - 1]);
    for window in sorted.windows(width) {
        let (lo, hi) = (window[0], window[width - 1]);
        if hi - lo < best.1 - best.0 {
            best = (lo, hi);
        }
    }
    best
}

/// Bootstraps `mean(a) - mean(b)` by resampling clusters (case ids) with
/// replacement. Both maps must cover the same ids.
pub fn cluster_bootstrap_diff(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
    cfg: &BootstrapConfig,
) -> Result<BootstrapSummary> {
    if cfg.n_boot < 100 {
        return Err(Error::invalid(format!("n_boot must be at least 100, got {}", cfg.n_boot)));
    }
    if cfg.rope.is_nan() || cfg.rope < 0.0 {
        return Err(Error::invalid(format!("rope half-width must be non-negative, got {}", cfg.rope)));
    }
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::invalid("bootstrap inputs cover different case ids"));
    }
    if a.is_empty() {
        return Err(Error::invalid("bootstrap needs at least one case"));
    }
    let diffs: Vec<f64> = a.values().zip(b.values()).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let mut draws: Vec<f64> = (0..cfg.n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = streams::indexed(cfg.seed, r as u64);
            (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum::<f64>() / n as f64
        })
        .collect();
    let boot = draws.len() as f64;
    let prob_direction = draws.iter().filter(|&&d| d > 0.0).count() as f64 / boot;
    let prob_beyond_rope = draws.iter().filter(|&&d| d > cfg.rope).count() as f64 / boot;
    draws.sort_by(f64::total_cmp);
    let median_diff = sorted_median(&draws);
    let (lo, hi) = shortest_interval(&draws, 0.95);
    Ok(BootstrapSummary {
        median_diff,
        hdi_low: lo.min(median_diff),
        hdi_high: hi.max(median_diff),
        prob_direction,
        prob_beyond_rope,
        rope_halfwidth: cfg.rope,
        n_boot: cfg.n_boot,
    })
}

/// `repeat,fold,strategy,accuracy`.
pub fn write_cv_csv<W: Write>(report: &CvReport, writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["repeat", "fold", "strategy", "accuracy"])?;
    for r in &report.rows {
        out.write_record([
            r.repeat.to_string(),
            r.fold.to_string(),
            r.strategy.as_str().to_string(),
            r.accuracy.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `comparison,median_diff,hdi_low,hdi_high,prob_direction,prob_beyond_rope`.
pub fn write_bootstrap_csv<W: Write>(summaries: &[(String, BootstrapSummary)], writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["comparison", "median_diff", "hdi_low", "hdi_high", "prob_direction", "prob_beyond_rope"])?;
    for (name, s) in summaries {
        out.write_record([
            name.clone(),
            s.median_diff.to_string(),
            s.hdi_low.to_string(),
            s.hdi_high.to_string(),
            s.prob_direction.to_string(),
            s.prob_beyond_rope.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::Label::{Negative as N, Positive as P};

    fn truths(pos: usize, neg: usize) -> Vec<Label> {
        std::iter::repeat(P).take(pos).chain(std::iter::repeat(N).take(neg)).collect()
    }

    #[test]
    fn fold_examples() {
        let t = truths(5, 5);
        let folds = stratified_folds(&t, 5, 1).unwrap();
        for f in &folds {
            assert_eq!(f.len(), 2);
            assert_eq!(f.iter().filter(|&&i| t[i].is_positive()).count(), 1);
        }
        let t = truths(20, 80);
        let folds = stratified_folds(&t, 5, 2).unwrap();
        for f in &folds {
            assert_eq!(f.len(), 20);
            assert_eq!(f.iter().filter(|&&i| t[i].is_positive()).count(), 4);
        }
        assert_eq!(folds, stratified_folds(&t, 5, 2).unwrap());
        assert_ne!(folds, stratified_folds(&t, 5, 3).unwrap());
    }

    #[test]
    fn folds_partition_and_balance() {
        let t = truths(23, 54);
        let folds = stratified_folds(&t, 5, 7).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..77).collect::<Vec<_>>());
        let share = 23.0 / 5.0;
        for f in &folds {
            let pos = f.iter().filter(|&&i| t[i].is_positive()).count() as f64;
            assert!((pos - share).abs() < 1.0);
            assert!(f.len() == 15 || f.len() == 16);
        }
    }

    #[test]
    fn fold_errors() {
        assert!(matches!(
            stratified_folds(&truths(3, 10), 5, 0),
            Err(Error::Stratification { class: "positive", available: 3, .. })
        ));
        assert!(matches!(
            stratified_folds(&truths(10, 10), 20, 0),
            Err(Error::Stratification { .. })
        ));
        assert!(stratified_folds(&truths(10, 10), 1, 0).is_err());
    }

    fn map(values: &[f64]) -> BTreeMap<String, f64> {
        values.iter().enumerate().map(|(i, &v)| (format!("c{i:03}"), v)).collect()
    }

    #[test]
    fn bootstrap_examples() {
        let base: Vec<f64> = (0..200).map(|i| (i % 7) as f64 / 7.0).collect();
        let cfg = BootstrapConfig {
            n_boot: 2000,
            seed: 3,
            ..BootstrapConfig::default()
        };
        let s = cluster_bootstrap_diff(&map(&base), &map(&base), &cfg).unwrap();
        assert_eq!((s.median_diff, s.prob_beyond_rope, s.prob_direction), (0.0, 0.0, 0.0));

        let shifted: Vec<f64> = base.iter().map(|b| b + 0.05).collect();
        let s = cluster_bootstrap_diff(&map(&shifted), &map(&base), &cfg).unwrap();
        assert!((s.median_diff - 0.05).abs() < 1e-12);
        assert_eq!(s.prob_beyond_rope, 1.0);
        assert_eq!(s.prob_direction, 1.0);
        assert!(s.hdi_low <= s.median_diff && s.median_diff <= s.hdi_high);
    }

    #[test]
    fn bootstrap_errors_and_determinism() {
        let a = map(&[0.1, 0.2, 0.3]);
        let mut b = map(&[0.1, 0.2, 0.3]);
        let cfg = BootstrapConfig {
            n_boot: 99,
            ..BootstrapConfig::default()
        };
        assert!(cluster_bootstrap_diff(&a, &b, &cfg).is_err());
        b.insert("zzz".into(), 0.5);
        assert!(cluster_bootstrap_diff(&a, &b, &BootstrapConfig::default()).is_err());

        let noisy: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let cfg = BootstrapConfig { n_boot: 500, seed: 8, rope: 0.01 };
        let x = cluster_bootstrap_diff(&map(&noisy), &map(&[0.4; 50]), &cfg).unwrap();
        let y = cluster_bootstrap_diff(&map(&noisy), &map(&[0.4; 50]), &cfg).unwrap();
        assert_eq!(x, y);
        assert!(x.hdi_low < x.median_diff && x.median_diff < x.hdi_high);
    }

    #[test]
    fn shortest_interval_prefers_dense_region() {
        let mut v: Vec<f64> = (0..95).map(|i| i as f64 * 0.001).collect();
        v.extend([5.0, 6.0, 7.0, 8.0, 9.0]);
        let (lo, hi) = shortest_interval(&v, 0.95);
        assert_eq!((lo, hi), (0.0, 0.094));
    }
}
