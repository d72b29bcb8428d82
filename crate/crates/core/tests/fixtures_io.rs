//! Loading the on-disk fixtures, hand-worked case values, and write/read round trips.

use std::path::{Path, PathBuf};

use hct_core::reanalysis::{
    evaluate_hct_on_case, evaluate_majority_on_case, load_dataset, write_dataset, CaseTable, SweepOptions,
};
use hct_core::simulate::{synthesize_dataset, SynthConfig};
use hct_core::{Dataset, Threshold};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn load(dir: &Path) -> Dataset {
    let loaded = load_dataset(&dir.join("ratings.csv"), &dir.join("machine.csv"), &dir.join("truth.csv")).unwrap();
    assert!(loaded.rejected.is_empty());
    loaded.dataset
}

#[test]
fn toy_case_by_hand() {
    let toy = load(&fixture("toy"));
    assert_eq!(toy.len(), 8);
    assert_eq!(toy.name, "toy");
    let case = toy.cases.iter().find(|c| c.case_id == "t02").unwrap();
    // Votes a=1, b=0, c=1; truth 1; machine score 0.35 -> negative at 0.5.
    // Ordered pairs: a first escalates (c right, b wrong), b first agrees with
    // the wrong machine, c first escalates (a right, b wrong): 2 of 6 right,
    // 4 of 6 escalated.
    let tree = evaluate_hct_on_case(case, Threshold::interior(0.5).unwrap()).unwrap();
    assert!((tree.accuracy - 2.0 / 6.0).abs() < 1e-12);
    assert!((tree.cost - (1.0 + 4.0 / 6.0)).abs() < 1e-12);
    // Majority of three is always 1 (right). The first two agree only in the
    // orders (a, c, b) and (c, a, b).
    let majority = evaluate_majority_on_case(case, 3, 25_000, 0).unwrap();
    assert_eq!(majority.accuracy, 1.0);
    assert!((majority.cost - 16.0 / 6.0).abs() < 1e-12);
}

#[test]
fn uneven_fixture_skips_single_rater_cases() {
    let data = load(&fixture("uneven"));
    let table = CaseTable::build(&data, &SweepOptions::default()).unwrap();
    let singles = data.cases.iter().filter(|c| c.n_raters() < 3).count();
    assert!(singles > 0);
    assert_eq!(table.skipped.len(), singles);
    assert_eq!(table.len() + table.skipped.len(), data.len());
}

#[test]
fn written_datasets_load_back_identically() {
    let cfg = SynthConfig { n_cases: 50, n_raters: 4, seed: 41, ..SynthConfig::default() };
    let original = synthesize_dataset(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("synthetic");
    std::fs::create_dir_all(&dir).unwrap();
    write_dataset(&original, &dir).unwrap();
    let back = load(&dir);
    assert_eq!(back.cases, original.cases);

    let toy = load(&fixture("toy"));
    let dir = tmp.path().join("toy");
    std::fs::create_dir_all(&dir).unwrap();
    write_dataset(&toy, &dir).unwrap();
    assert_eq!(load(&dir).cases, toy.cases);
}
