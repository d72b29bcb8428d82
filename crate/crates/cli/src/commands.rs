//! Subcommand bodies. Each reads its resolved settings and writes CSV/JSON
//! reports plus `manifest.txt` into the output directory.

use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use hct_core::agreement::{dataset_kappa_table, median_kappa_gap, write_kappa_csv, KappaOptions, KappaSpace};
use hct_core::analytic::{
    generate_region_grid, hct_accuracy_corr, hct_cost_corr, maj_accuracy_corr, maj_cost_corr,
    CorrelatedTreeParams, IndependentParams, RegionLabel,
};
use hct_core::evalstats::{
    cluster_bootstrap_diff, repeated_cv_on, write_bootstrap_csv, write_cv_csv, BootstrapConfig, CvConfig,
};
use hct_core::reanalysis::{
    crowd_curve, load_dataset_from, sweep, write_per_case_jsonl, write_roc_csv, write_sweep_csv, CaseTable,
    LoadedDataset, RatingsSource, Strategy, StrategyOutcome, SweepOptions,
};
use hct_core::simulate::{simulate_hct, simulate_majority, synthesize_dataset, SimConfig, SimParams, SynthConfig};
use hct_core::streams::derive_seed;
use hct_core::{reanalysis, Threshold};

use crate::config::{key, required, Key, Settings};
use crate::CliError;

const COMMON: [Key; 3] = [key("seed", "0"), key("threads", "0"), key("out", "hct-out")];

macro_rules! keys {
    ($($k:expr),* $(,)?) => {
        &[COMMON[0], COMMON[1], COMMON[2], $($k),*]
    };
}

pub const GRID_KEYS: &[Key] = keys![key("resolution", "201"), key("kappa_hh", "0"), key("kappa_hm", "0")];

pub const SIMULATE_KEYS: &[Key] = keys![
    key("p_human", "0.7"),
    key("p_machine", "0.75"),
    key("kappa_hh", "0"),
    key("kappa_hm", "0"),
    key("n_trials", "1000000"),
];

pub const SYNTHESIZE_KEYS: &[Key] = keys![
    key("n_cases", "500"),
    key("n_raters", "20"),
    key("base_rate", "0.5"),
    key("p_human", "0.7"),
    key("p_machine", "0.75"),
    key("kappa_hh", "0"),
    key("kappa_hm", "0"),
    key("score_noise", "0.5"),
];

pub const REANALYZE_KEYS: &[Key] = keys![
    required("ratings"),
    required("machine"),
    required("truth"),
    key("prob_ratings", "false"),
    key("k_majority", "3"),
    key("max_perms", "25000"),
    key("crowd_sizes", "1,3,5,7,9"),
    key("kappa_space", "labels"),
    key("min_shared", "5"),
];

pub const KAPPA_KEYS: &[Key] = keys![
    required("ratings"),
    required("machine"),
    required("truth"),
    key("prob_ratings", "false"),
    key("threshold", "best"),
    key("kappa_space", "labels"),
    key("min_shared", "5"),
    key("max_perms", "25000"),
];

pub const CROSSVAL_KEYS: &[Key] = keys![
    required("ratings"),
    required("machine"),
    required("truth"),
    key("prob_ratings", "false"),
    key("k_majority", "3"),
    key("max_perms", "25000"),
    key("n_repeats", "1000"),
    key("n_folds", "5"),
    key("n_boot", "10000"),
    key("rope", "0.01"),
    key("bootstrap_unit", "cells"),
];

fn out_dir(s: &Settings) -> PathBuf {
    s.path("out")
}

/// Creates the output directory and writes the manifest.
pub fn prepare_out(s: &Settings) -> Result<(), CliError> {
    let dir = out_dir(s);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write_file(&dir, "manifest.txt", |w| w.write_all(s.manifest().as_bytes()))
}

fn write_file<E: Display>(dir: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>) -> Result<(), CliError> {
    let path = dir.join(name);
    let io = |e: &dyn Display| CliError::Io(format!("{}: {e}", path.display()));
    let file = File::create(&path).map_err(|e| io(&e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| io(&e))?;
    w.flush().map_err(|e| io(&e))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<(), CliError> {
    write_file(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(serde_json::Error::io)
    })
}

fn threshold_json(t: Threshold) -> Value {
    match t {
        Threshold::Interior(v) => json!({ "kind": t.kind(), "value": v }),
        _ => json!({ "kind": t.kind(), "value": null }),
    }
}

fn parse_threshold(raw: &str) -> Result<Option<Threshold>, CliError> {
    Ok(match raw {
        "best" => None,
        "all_positive" => Some(Threshold::AllPositive),
        "all_negative" => Some(Threshold::AllNegative),
        other => {
            let v: f64 = other
                .parse()
                .map_err(|_| CliError::Validation(format!("threshold `{other}` is not best, all_positive, all_negative or a number")))?;
            Some(Threshold::interior(v)?)
        }
    })
}

fn parse_space(raw: &str) -> Result<KappaSpace, CliError> {
    match raw {
        "labels" => Ok(KappaSpace::Labels),
        "correctness" => Ok(KappaSpace::Correctness),
        other => Err(CliError::Validation(format!("kappa_space `{other}` is not labels or correctness"))),
    }
}

fn load(s: &Settings) -> Result<LoadedDataset, CliError> {
    let ratings = s.path("ratings");
    let source = if s.get::<bool>("prob_ratings")? {
        RatingsSource::Probabilistic {
            path: ratings,
            seed: derive_seed(s.get("seed")?, "probabilistic-votes", ""),
        }
    } else {
        RatingsSource::Binary(ratings)
    };
    Ok(load_dataset_from(&source, &s.path("machine"), &s.path("truth"))?)
}

fn sweep_options(s: &Settings, k_majority: usize) -> Result<SweepOptions, CliError> {
    Ok(SweepOptions {
        k_majority,
        max_perms: s.get("max_perms")?,
        seed: s.get("seed")?,
    })
}

fn write_reports<T>(dir: &Path, name: &str, header: [&str; 2], rows: &[T], fields: impl Fn(&T) -> [String; 2]) -> Result<(), CliError> {
    write_file(dir, name, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header)?;
        for r in rows {
            out.write_record(fields(r))?;
        }
        out.flush().map_err(csv::Error::from)
    })
}

fn outcome_json(o: &StrategyOutcome) -> Value {
    json!({ "accuracy": o.accuracy, "cost": o.cost, "tpr": o.tpr, "fpr": o.fpr })
}

pub fn analytic_grid(s: &Settings) -> Result<(), CliError> {
    let grid = generate_region_grid(s.get("resolution")?, s.get("kappa_hh")?, s.get("kappa_hm")?)?;
    let dir = out_dir(s);
    write_file(&dir, "grid.csv", |w| grid.write_csv(w))?;
    let summary = grid.summary();
    write_file(&dir, "summary.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["region", "cells", "fraction"])?;
        for label in RegionLabel::ALL {
            out.write_record([
                label.as_str().to_string(),
                summary.counts[&label].to_string(),
                summary.fraction(label).to_string(),
            ])?;
        }
        let infeasible = summary.total_cells - summary.feasible_cells;
        out.write_record([
            "infeasible".to_string(),
            infeasible.to_string(),
            (infeasible as f64 / summary.total_cells as f64).to_string(),
        ])?;
        out.flush().map_err(csv::Error::from)
    })
}

pub fn simulate(s: &Settings) -> Result<(), CliError> {
    let (p_h, p_m): (f64, f64) = (s.get("p_human")?, s.get("p_machine")?);
    let (k_hh, k_hm): (f64, f64) = (s.get("kappa_hh")?, s.get("kappa_hm")?);
    let params = if k_hh == 0.0 && k_hm == 0.0 {
        SimParams::Independent(IndependentParams::new(p_h, p_m)?)
    } else {
        SimParams::Correlated(CorrelatedTreeParams::from_targets(p_h, p_m, k_hh, k_hm)?)
    };
    let tree = match params {
        SimParams::Independent(p) => CorrelatedTreeParams::independent(p)?,
        SimParams::Correlated(p) => p,
    };
    let cfg = SimConfig {
        n_trials: s.get("n_trials")?,
        seed: s.get("seed")?,
        params,
    };
    let hct = simulate_hct(&cfg)?;
    let majority = simulate_majority(&cfg)?;
    let report = json!({
        "config": cfg,
        "hct": hct,
        "majority": majority,
        "analytic": {
            "hct_accuracy": hct_accuracy_corr(&tree),
            "hct_cost": hct_cost_corr(&tree),
            "majority_accuracy": maj_accuracy_corr(p_h, &tree.human_human)?,
            "majority_cost": maj_cost_corr(p_h, &tree.human_human)?,
        },
    });
    write_json(&out_dir(s), "simulate.json", &report)
}

pub fn synthesize(s: &Settings) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_cases: s.get("n_cases")?,
        n_raters: s.get("n_raters")?,
        base_rate: s.get("base_rate")?,
        p_human: s.get("p_human")?,
        p_machine: s.get("p_machine")?,
        kappa_hh: s.get("kappa_hh")?,
        kappa_hm: s.get("kappa_hm")?,
        score_noise: s.get("score_noise")?,
        seed: s.get("seed")?,
    };
    let dataset = synthesize_dataset(&cfg)?;
    Ok(reanalysis::write_dataset(&dataset, &out_dir(s))?)
}

pub fn reanalyze(s: &Settings) -> Result<(), CliError> {
    let loaded = load(s)?;
    let dataset = &loaded.dataset;
    let opts = sweep_options(s, s.get("k_majority")?)?;
    let result = sweep(dataset, &opts)?;
    let dir = out_dir(s);
    write_file(&dir, "sweep.csv", |w| write_sweep_csv(&result, w))?;
    write_file(&dir, "roc.csv", |w| write_roc_csv(&result, w))?;
    write_file(&dir, "per_case.jsonl", |w| write_per_case_jsonl(&result, w))?;
    write_reports(&dir, "skipped.csv", ["case_id", "reason"], result.skipped(), |c| [c.case_id.clone(), c.reason.clone()])?;
    write_reports(&dir, "rejected.csv", ["case_id", "reason"], &loaded.rejected, |c| [c.case_id.clone(), c.reason.clone()])?;

    let best = result.best_hct_row();
    let kappa_opts = KappaOptions {
        min_shared_cases: s.get("min_shared")?,
        space: parse_space(s.raw("kappa_space"))?,
    };
    let kappas = dataset_kappa_table(dataset, best.threshold, &kappa_opts)?;
    write_file(&dir, "kappa.csv", |w| write_kappa_csv(&kappas, w))?;

    let max_raters = dataset.cases.iter().map(|c| c.n_raters()).max().unwrap_or(0);
    let sizes: Vec<usize> = s.list::<usize>("crowd_sizes")?.into_iter().filter(|&k| k <= max_raters).collect();
    let crowd = crowd_curve(dataset, &sizes, opts.max_perms, opts.seed)?;
    write_file(&dir, "crowd.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["size", "accuracy", "cost", "n_cases", "n_skipped"])?;
        for p in &crowd {
            out.write_record([
                p.size.to_string(),
                p.accuracy.to_string(),
                p.cost.to_string(),
                p.n_cases.to_string(),
                p.n_skipped.to_string(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)
    })?;

    let summary = json!({
        "dataset": dataset.name,
        "n_cases": result.table.len(),
        "n_skipped": result.skipped().len(),
        "n_rejected": loaded.rejected.len(),
        "best_threshold": threshold_json(best.threshold),
        "at_best_threshold": Strategy::ALL.iter().map(|&st| (st.as_str().to_string(), outcome_json(best.get(st)))).collect::<serde_json::Map<_, _>>(),
        "hct_minus_majority": best.hct.accuracy - best.majority.accuracy,
        "hct_cost_saving_vs_majority": 1.0 - best.hct.cost / best.majority.cost,
        "median_kappa_gap": median_kappa_gap(&kappas),
    });
    write_json(&dir, "summary.json", &summary)
}

pub fn kappa(s: &Settings) -> Result<(), CliError> {
    let loaded = load(s)?;
    let threshold = match parse_threshold(s.raw("threshold"))? {
        Some(t) => t,
        None => sweep(&loaded.dataset, &sweep_options(s, 3)?)?.best_hct_row().threshold,
    };
    let opts = KappaOptions {
        min_shared_cases: s.get("min_shared")?,
        space: parse_space(s.raw("kappa_space"))?,
    };
    let table = dataset_kappa_table(&loaded.dataset, threshold, &opts)?;
    let dir = out_dir(s);
    write_file(&dir, "kappa.csv", |w| write_kappa_csv(&table, w))?;
    write_json(
        &dir,
        "kappa_summary.json",
        &json!({
            "threshold": threshold_json(threshold),
            "n_raters": table.len(),
            "median_kappa_gap": median_kappa_gap(&table),
        }),
    )
}

pub fn crossval(s: &Settings) -> Result<(), CliError> {
    let loaded = load(s)?;
    let seed: u64 = s.get("seed")?;
    let table = CaseTable::build(&loaded.dataset, &sweep_options(s, s.get("k_majority")?)?)?;
    let cv = CvConfig {
        n_repeats: s.get("n_repeats")?,
        n_folds: s.get("n_folds")?,
        seed: derive_seed(seed, "crossval", ""),
    };
    let report = repeated_cv_on(&table, &cv)?;
    let boot = BootstrapConfig {
        n_boot: s.get("n_boot")?,
        rope: s.get("rope")?,
        seed: derive_seed(seed, "bootstrap", ""),
    };
    let per_unit = |st: Strategy| match s.raw("bootstrap_unit") {
        "cells" => Ok(report.cell_accuracies(st)),
        "cases" => Ok(report.per_case[&st].clone()),
        other => Err(CliError::Validation(format!("bootstrap_unit `{other}` is not cells or cases"))),
    };
    let hct = per_unit(Strategy::Hct)?;
    let mut summaries = Vec::new();
    for other in [Strategy::Majority, Strategy::Machine, Strategy::SingleHuman] {
        let diff = cluster_bootstrap_diff(&hct, &per_unit(other)?, &boot)?;
        summaries.push((format!("hct_vs_{}", other.as_str()), diff));
    }
    let dir = out_dir(s);
    write_file(&dir, "cv.csv", |w| write_cv_csv(&report, w))?;
    write_file(&dir, "bootstrap.csv", |w| write_bootstrap_csv(&summaries, w))?;
    write_file(&dir, "selections.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["repeat", "fold", "threshold_kind", "threshold"])?;
        for sel in &report.selections {
            let t = match sel.threshold {
                Threshold::Interior(v) => v.to_string(),
                _ => String::new(),
            };
            out.write_record([sel.repeat.to_string(), sel.fold.to_string(), sel.threshold.kind().to_string(), t])?;
        }
        out.flush().map_err(csv::Error::from)
    })?;
    let means: serde_json::Map<String, Value> = hct_core::evalstats::CV_STRATEGIES
        .iter()
        .map(|&st| (st.as_str().to_string(), json!(report.mean_accuracy(st))))
        .collect();
    write_json(
        &dir,
        "crossval_summary.json",
        &json!({
            "n_cases": table.len(),
            "n_skipped": table.skipped.len(),
            "mean_accuracy": means,
            "comparisons": summaries.iter().map(|(n, d)| (n.clone(), json!(d))).collect::<serde_json::Map<_, _>>(),
        }),
    )
}
