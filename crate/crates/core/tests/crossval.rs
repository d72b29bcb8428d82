//! End-to-end cross-validation and bootstrap behaviour on synthetic data.

use std::collections::BTreeMap;

use proptest::prelude::*;

use hct_core::analytic::{hct_accuracy_indep, maj_accuracy_indep, IndependentParams};
use hct_core::evalstats::{
    cluster_bootstrap_diff, repeated_cv, stratified_case_folds, stratified_folds, BootstrapConfig, CvConfig,
};
use hct_core::reanalysis::{Strategy, SweepOptions};
use hct_core::simulate::{synthesize_dataset, SynthConfig};
use hct_core::{Dataset, Error, Label};

fn synth(cfg: SynthConfig) -> Dataset {
    synthesize_dataset(&cfg).unwrap()
}

fn fast_opts() -> SweepOptions {
    SweepOptions { max_perms: 2000, ..SweepOptions::default() }
}

#[test]
fn cv_gap_matches_analytic_prediction() {
    // Machine accuracy chosen so the closed-form tree beats the majority by 3pp.
    let p_m = (0.814 - 0.49) / 0.42;
    let analytic = hct_accuracy_indep(IndependentParams::new(0.7, p_m).unwrap()) - maj_accuracy_indep(0.7);
    assert!((analytic - 0.03).abs() < 1e-9);
    let data = synth(SynthConfig {
        n_cases: 2000,
        n_raters: 9,
        p_machine: p_m,
        score_noise: 1.0,
        seed: 31,
        ..SynthConfig::default()
    });
    let report = repeated_cv(&data, &CvConfig { n_repeats: 20, n_folds: 5, seed: 31 }, &fast_opts()).unwrap();
    let gap = report.mean_accuracy(Strategy::Hct) - report.mean_accuracy(Strategy::Majority);
    assert!((gap - analytic).abs() <= 0.015, "CV gap {gap}, analytic {analytic}");
}

#[test]
fn cv_table_shape_and_determinism() {
    let data = synth(SynthConfig { n_cases: 120, n_raters: 5, seed: 32, ..SynthConfig::default() });
    let cfg = CvConfig { n_repeats: 3, n_folds: 4, seed: 5 };
    let a = repeated_cv(&data, &cfg, &fast_opts()).unwrap();
    let b = repeated_cv(&data, &cfg, &fast_opts()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 3 * 4 * 4);
    assert_eq!(a.selections.len(), 3 * 4);
    assert_eq!(a.per_case[&Strategy::Hct].len(), 120);
    let c = repeated_cv(&data, &CvConfig { seed: 6, ..cfg }, &fast_opts()).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn one_fold_per_case_cannot_be_stratified() {
    let data = synth(SynthConfig { n_cases: 30, n_raters: 3, seed: 33, ..SynthConfig::default() });
    let err = repeated_cv(&data, &CvConfig { n_repeats: 1, n_folds: 30, seed: 0 }, &fast_opts()).unwrap_err();
    assert!(matches!(err, Error::Stratification { .. }), "{err}");
}

#[test]
fn selected_threshold_beats_majority_out_of_sample() {
    // Closed-form tree 0.818, majority 0.784, machine 0.78.
    let data = synth(SynthConfig { p_machine: 0.78, seed: 34, ..SynthConfig::default() });
    let report = repeated_cv(&data, &CvConfig { n_repeats: 10, n_folds: 5, seed: 34 }, &fast_opts()).unwrap();
    assert!(report.mean_accuracy(Strategy::Hct) > report.mean_accuracy(Strategy::Majority));
    let per_case = &report.per_case;
    let diff = cluster_bootstrap_diff(
        &per_case[&Strategy::Hct],
        &per_case[&Strategy::Majority],
        &BootstrapConfig { seed: 34, ..BootstrapConfig::default() },
    )
    .unwrap();
    assert!(diff.prob_beyond_rope > 0.95, "{diff:?}");
}

#[test]
fn case_folds_follow_dataset_ids() {
    let data = synth(SynthConfig { n_cases: 100, n_raters: 3, base_rate: 0.2, seed: 35, ..SynthConfig::default() });
    let folds = stratified_case_folds(&data, 5, 1).unwrap();
    let mut ids: Vec<&String> = folds.iter().flatten().collect();
    ids.sort();
    let mut expected: Vec<&String> = data.cases.iter().map(|c| &c.case_id).collect();
    expected.sort();
    assert_eq!(ids, expected);
}

/// Per-case differences from a fixed distribution: 1 with probability 0.3,
/// -1 with probability 0.2, else 0.
fn fixed_effect(n: usize, seed: u64) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    use rand::Rng;
    let mut rng = hct_core::streams::indexed(seed, 0);
    let mut a = BTreeMap::new();
    let mut b = BTreeMap::new();
    for i in 0..n {
        let u: f64 = rng.gen();
        let d = if u < 0.3 { 1.0 } else if u < 0.5 { -1.0 } else { 0.0 };
        a.insert(format!("c{i:05}"), 0.5 + d / 2.0);
        b.insert(format!("c{i:05}"), 0.5);
    }
    (a, b)
}

#[test]
fn interval_width_shrinks_with_root_n() {
    let cfg = BootstrapConfig { n_boot: 10_000, rope: 0.01, seed: 9 };
    let width = |n| {
        let (a, b) = fixed_effect(n, n as u64);
        let s = cluster_bootstrap_diff(&a, &b, &cfg).unwrap();
        s.hdi_high - s.hdi_low
    };
    let ratio = width(400) / width(1600);
    assert!((ratio / 2.0 - 1.0).abs() <= 0.3, "width ratio {ratio}");
}

fn labels(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|&b| Label::from(b)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_and_keep_the_base_rate(
        bits in prop::collection::vec(any::<bool>(), 20..200),
        n_folds in 2usize..8,
        seed in any::<u64>(),
    ) {
        let truths = labels(&bits);
        let pos = bits.iter().filter(|&&b| b).count();
        match stratified_folds(&truths, n_folds, seed) {
            Err(Error::Stratification { .. }) => prop_assert!(pos < n_folds || bits.len() - pos < n_folds),
            Err(e) => prop_assert!(false, "{e}"),
            Ok(folds) => {
                prop_assert_eq!(folds.len(), n_folds);
                let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..bits.len()).collect::<Vec<_>>());
                let share = pos as f64 / n_folds as f64;
                let (min, max) = folds.iter().fold((usize::MAX, 0), |(lo, hi), f| (lo.min(f.len()), hi.max(f.len())));
                prop_assert!(max - min <= 1);
                for f in &folds {
                    let p = f.iter().filter(|&&i| bits[i]).count() as f64;
                    prop_assert!((p - share).abs() < 1.0);
                    prop_assert!(p >= 1.0 && (f.len() as f64 - p) >= 1.0);
                }
                prop_assert_eq!(&folds, &stratified_folds(&truths, n_folds, seed).unwrap());
            }
        }
    }

    #[test]
    fn bootstrap_summary_is_coherent(
        values in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 5..60),
        rope in 0.0f64..0.1,
        seed in any::<u64>(),
    ) {
        let a: BTreeMap<String, f64> = values.iter().enumerate().map(|(i, v)| (format!("k{i}"), v.0)).collect();
        let b: BTreeMap<String, f64> = values.iter().enumerate().map(|(i, v)| (format!("k{i}"), v.1)).collect();
        let s = cluster_bootstrap_diff(&a, &b, &BootstrapConfig { n_boot: 200, rope, seed }).unwrap();
        prop_assert!(s.hdi_low <= s.median_diff && s.median_diff <= s.hdi_high);
        prop_assert!((0.0..=1.0).contains(&s.prob_direction));
        prop_assert!(s.prob_beyond_rope <= s.prob_direction);
        let swapped = cluster_bootstrap_diff(&b, &a, &BootstrapConfig { n_boot: 200, rope, seed }).unwrap();
        prop_assert!((swapped.median_diff + s.median_diff).abs() < 1e-12);
    }
}
