//! Cohen's kappa from data and per-rater agreement summaries.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::decision::{binarize, Dataset, Label, Threshold};
use crate::error::{Error, Result};

/// Two-rater binary kappa with chance agreement from the observed marginals.
/// `None` when chance agreement is 1 (both raters constant on the same label).
pub fn cohen_kappa(a: &[Label], b: &[Label]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "kappa needs aligned sequences, got lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("kappa needs at least one paired rating"));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let pa = a.iter().filter(|x| x.is_positive()).count() as f64 / n;
    let pb = b.iter().filter(|x| x.is_positive()).count() as f64 / n;
    let chance = pa * pb + (1.0 - pa) * (1.0 - pb);
    if chance >= 1.0 {
        return Ok(None);
    }
    Ok(Some((agree - chance) / (1.0 - chance)))
}

/// What the kappa is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaSpace {
    /// The raw labels, as when estimating dependence from real data.
    #[default]
    Labels,
    /// Whether each label matches the truth, the quantity the opinion-leader
    /// model is parameterized by.
    Correctness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KappaOptions {
    /// Pairs sharing fewer cases are excluded and counted. 0 keeps every pair.
    pub min_shared_cases: usize,
    pub space: KappaSpace,
}

impl Default for KappaOptions {
    fn default() -> Self {
        Self {
            min_shared_cases: 5,
            space: KappaSpace::Labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaSummary {
    pub rater_id: String,
    /// Mean kappa over co-raters; `None` when no pair qualified.
    pub kappa_hh: Option<f64>,
    pub kappa_hm: Option<f64>,
    pub accuracy: f64,
    /// Pairs that contributed to `kappa_hh`.
    pub n_pairs: usize,
    /// Cases the rater judged (all of them carry a machine score).
    pub n_shared_cases: usize,
    /// Co-raters dropped for sharing fewer than `min_shared_cases` cases.
    pub n_excluded_pairs: usize,
    /// Co-raters dropped because kappa was undefined.
    pub n_undefined_pairs: usize,
}

/// Per-rater ratings `(case index, label)` in case order, already mapped into
/// the requested space.
struct RaterIndex {
    ratings: BTreeMap<String, Vec<(usize, Label)>>,
}

impl RaterIndex {
    fn build(dataset: &Dataset, space: KappaSpace) -> Self {
        let mut ratings: BTreeMap<String, Vec<(usize, Label)>> = BTreeMap::new();
        for (i, case) in dataset.cases.iter().enumerate() {
            for (rater, &vote) in &case.human_votes {
                ratings
                    .entry(rater.clone())
                    .or_default()
                    .push((i, project(vote, case.truth, space)));
            }
        }
        Self { ratings }
    }
}

fn project(label: Label, truth: Label, space: KappaSpace) -> Label {
    match space {
        KappaSpace::Labels => label,
        KappaSpace::Correctness => Label::from(label == truth),
    }
}

fn shared(a: &[(usize, Label)], b: &[(usize, Label)]) -> (Vec<Label>, Vec<Label>) {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                xs.push(a[i].1);
                ys.push(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    (xs, ys)
}

fn summarize(
    dataset: &Dataset,
    index: &RaterIndex,
    rater_id: &str,
    threshold: Threshold,
    opts: &KappaOptions,
) -> Result<KappaSummary> {
    let own = index
        .ratings
        .get(rater_id)
        .ok_or_else(|| Error::UnknownRater(rater_id.to_string()))?;

    let mut kappas = Vec::new();
    let (mut excluded, mut undefined) = (0, 0);
    for (other, theirs) in &index.ratings {
        if other == rater_id {
            continue;
        }
        let (xs, ys) = shared(own, theirs);
        if xs.is_empty() {
            continue;
        }
        if xs.len() < opts.min_shared_cases {
            excluded += 1;
            continue;
        }
        match cohen_kappa(&xs, &ys)? {
            Some(k) => kappas.push(k),
            None => undefined += 1,
        }
    }

    let mut human = Vec::with_capacity(own.len());
    let mut machine = Vec::with_capacity(own.len());
    let mut correct = 0usize;
    for &(i, projected) in own {
        let case = &dataset.cases[i];
        correct += (case.human_votes[rater_id] == case.truth) as usize;
        human.push(projected);
        machine.push(project(binarize(case.machine_score, threshold)?, case.truth, opts.space));
    }
    let kappa_hm = if own.len() >= opts.min_shared_cases {
        cohen_kappa(&human, &machine)?
    } else {
        None
    };

    Ok(KappaSummary {
        rater_id: rater_id.to_string(),
        kappa_hh: (!kappas.is_empty()).then(|| kappas.iter().sum::<f64>() / kappas.len() as f64),
        kappa_hm,
        accuracy: correct as f64 / own.len() as f64,
        n_pairs: kappas.len(),
        n_shared_cases: own.len(),
        n_excluded_pairs: excluded,
        n_undefined_pairs: undefined,
    })
}

/// Human-human kappa (mean over co-raters) and human-machine kappa for one rater.
pub fn rater_kappa_summary(
    dataset: &Dataset,
    rater_id: &str,
    threshold: Threshold,
    opts: &KappaOptions,
) -> Result<KappaSummary> {
    let index = RaterIndex::build(dataset, opts.space);
    summarize(dataset, &index, rater_id, threshold, opts)
}

/// One summary per rater, sorted by rater id.
pub fn dataset_kappa_table(dataset: &Dataset, threshold: Threshold, opts: &KappaOptions) -> Result<Vec<KappaSummary>> {
    let index = RaterIndex::build(dataset, opts.space);
    let ids: Vec<&String> = index.ratings.keys().collect();
    ids.par_iter()
        .map(|id| summarize(dataset, &index, id, threshold, opts))
        .collect()
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 0 {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    })
}

/// `median(kappa_hh) - median(kappa_hm)` over raters where each is defined.
pub fn median_kappa_gap(table: &[KappaSummary]) -> Option<f64> {
    let hh = median(table.iter().filter_map(|s| s.kappa_hh).collect())?;
    let hm = median(table.iter().filter_map(|s| s.kappa_hm).collect())?;
    Some(hh - hm)
}

/// `rater_id,kappa_hh,kappa_hm,accuracy,n_pairs,n_shared_cases`; undefined kappas are empty.
pub fn write_kappa_csv<W: Write>(table: &[KappaSummary], writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["rater_id", "kappa_hh", "kappa_hm", "accuracy", "n_pairs", "n_shared_cases"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for s in table {
        out.write_record([
            s.rater_id.clone(),
            opt(s.kappa_hh),
            opt(s.kappa_hm),
            s.accuracy.to_string(),
            s.n_pairs.to_string(),
            s.n_shared_cases.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
