//! Generate data from known parameters, then measure them back.

use hct_core::agreement::{dataset_kappa_table, KappaOptions, KappaSpace, KappaSummary};
use hct_core::analytic::{classify_region, hct_accuracy_indep, maj_accuracy_indep, IndependentParams, RegionLabel};
use hct_core::reanalysis::{sweep, CaseTable, Strategy, SweepOptions};
use hct_core::simulate::{synthesize_dataset, SynthConfig};
use hct_core::{Dataset, Threshold};

fn synth(cfg: SynthConfig) -> Dataset {
    synthesize_dataset(&cfg).unwrap()
}

fn kappas(dataset: &Dataset, space: KappaSpace) -> Vec<KappaSummary> {
    let opts = KappaOptions { min_shared_cases: 5, space };
    dataset_kappa_table(dataset, Threshold::interior(0.5).unwrap(), &opts).unwrap()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn large(kappa_hh: f64, kappa_hm: f64, seed: u64) -> Dataset {
    synth(SynthConfig {
        n_cases: 10_000,
        n_raters: 5,
        p_human: 0.8,
        p_machine: 0.8,
        kappa_hh,
        kappa_hm,
        seed,
        ..SynthConfig::default()
    })
}

#[test]
fn human_kappa_target_half_is_recovered() {
    let table = kappas(&large(0.5, 0.0, 21), KappaSpace::Correctness);
    let hh = mean(table.iter().map(|s| s.kappa_hh.unwrap()));
    assert!((hh - 0.5).abs() <= 0.03, "mean pairwise kappa {hh}");
}

#[test]
fn human_and_machine_targets_are_recovered() {
    let table = kappas(&large(0.4, 0.0, 22), KappaSpace::Correctness);
    let hh = mean(table.iter().map(|s| s.kappa_hh.unwrap()));
    let hm = mean(table.iter().map(|s| s.kappa_hm.unwrap()));
    assert!((hh - 0.4).abs() <= 0.05, "kappa_hh {hh}");
    assert!(hm.abs() <= 0.05, "kappa_hm {hm}");
    assert!(table.iter().all(|s| s.n_shared_cases == 10_000 && s.n_pairs == 4));

    let table = kappas(&large(0.5, 0.3, 23), KappaSpace::Correctness);
    let hm = mean(table.iter().map(|s| s.kappa_hm.unwrap()));
    assert!((hm - 0.3).abs() <= 0.03, "kappa_hm {hm}");
}

#[test]
fn marginals_match_targets() {
    let data = large(0.0, 0.0, 24);
    let positives = data.cases.iter().filter(|c| c.truth.is_positive()).count() as f64 / data.len() as f64;
    assert!((positives - 0.5).abs() <= 0.02);
    for s in kappas(&data, KappaSpace::Correctness) {
        assert!((s.accuracy - 0.8).abs() <= 0.02, "{}: {}", s.rater_id, s.accuracy);
    }
}

#[test]
fn label_kappa_is_inflated_for_independent_accurate_raters() {
    // Two raters who are right 80% of the time independently agree on labels
    // far more than chance predicts from the marginals alone; only the
    // correctness view reads zero.
    let data = large(0.0, 0.0, 25);
    let labels = mean(kappas(&data, KappaSpace::Labels).iter().map(|s| s.kappa_hh.unwrap()));
    let correct = mean(kappas(&data, KappaSpace::Correctness).iter().map(|s| s.kappa_hh.unwrap()));
    assert!((labels - 0.36).abs() < 0.03, "label kappa {labels}");
    assert!(correct.abs() < 0.02, "correctness kappa {correct}");
}

#[test]
fn beats_both_regime_shows_up_in_the_sweep() {
    let (p_h, p_m) = (0.7, 0.78);
    assert_eq!(classify_region(p_h, p_m, 0.0, 0.0).unwrap(), RegionLabel::BeatsBoth);
    let predicted = hct_accuracy_indep(IndependentParams::new(p_h, p_m).unwrap()) - maj_accuracy_indep(p_h);
    assert!(predicted > 0.03);
    let data = synth(SynthConfig { p_human: p_h, p_machine: p_m, seed: 26, ..SynthConfig::default() });
    let result = sweep(&data, &SweepOptions::default()).unwrap();
    let best = result.best_hct_row();
    assert!(best.hct.accuracy >= best.majority.accuracy);
    // At the calibrated cut the machine runs at its nominal accuracy.
    let calibrated = result.table.outcome(&result.table.all_indices(), Strategy::Hct, Threshold::interior(0.5).unwrap());
    let machine = result.table.mean_accuracy(&result.table.all_indices(), Strategy::Machine, Threshold::interior(0.5).unwrap());
    let majority = best.majority.accuracy;
    assert!(calibrated.accuracy > machine && calibrated.accuracy > majority, "{} vs {machine}, {majority}", calibrated.accuracy);
}

#[test]
fn sweep_tracks_analytic_values_at_the_calibrated_cut() {
    // With uninformative score magnitudes, 0.5 is the natural cut and the
    // empirical tree should sit near the closed form.
    let data = synth(SynthConfig { n_cases: 3000, n_raters: 9, score_noise: 1.0, seed: 27, ..SynthConfig::default() });
    let table = CaseTable::build(&data, &SweepOptions { max_perms: 2000, ..SweepOptions::default() }).unwrap();
    let all = table.all_indices();
    let t = Threshold::interior(0.5).unwrap();
    let tree = table.mean_accuracy(&all, Strategy::Hct, t);
    let expected = hct_accuracy_indep(IndependentParams::new(0.7, 0.75).unwrap());
    assert!((tree - expected).abs() < 0.025, "{tree} vs {expected}");
    let human = table.mean_accuracy(&all, Strategy::SingleHuman, t);
    assert!((human - 0.7).abs() < 0.02);
}
