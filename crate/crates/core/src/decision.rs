//! Domain types and the elementary decision rules applied to concrete votes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_probability, Error, Result};

/// A binary choice. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    pub fn as_u8(self) -> u8 {
        self.is_positive() as u8
    }

    /// Parses the textual `0` / `1` encoding used in the CSV schemas.
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim() {
            "0" => Some(Label::Negative),
            "1" => Some(Label::Positive),
            _ => None,
        }
    }
}

impl From<bool> for Label {
    fn from(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match u8::deserialize(deserializer)? {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(serde::de::Error::custom(format!(
                "label must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// Machine operating point.
///
/// The two sentinels sit below and above every interior cutoff so that the
/// "label everything positive" and "label everything negative" extremes hold
/// exactly, even for scores of exactly 0.0 or 1.0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Threshold {
    AllPositive,
    Interior(f64),
    AllNegative,
}

impl Threshold {
    pub fn interior(t: f64) -> Result<Threshold> {
        check_probability("threshold", t).map(Threshold::Interior)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Threshold::AllPositive => "all_positive",
            Threshold::Interior(_) => "interior",
            Threshold::AllNegative => "all_negative",
        }
    }

    /// Numeric position on [0, 1]; sentinels map to the ends.
    pub fn value(&self) -> f64 {
        match *self {
            Threshold::AllPositive => 0.0,
            Threshold::Interior(t) => t,
            Threshold::AllNegative => 1.0,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Threshold::AllPositive => 0,
            Threshold::Interior(_) => 1,
            Threshold::AllNegative => 2,
        }
    }
}

impl PartialEq for Threshold {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Threshold {}

impl PartialOrd for Threshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Threshold {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Threshold::Interior(a), Threshold::Interior(b)) => a.total_cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Interior(t) => write!(f, "interior({t})"),
            other => f.write_str(other.kind()),
        }
    }
}

/// Converts a machine score into a label. Interior cutoffs are inclusive:
/// `score >= t` is positive.
pub fn binarize(score: f64, threshold: Threshold) -> Result<Label> {
    check_probability("machine score", score)?;
    Ok(match threshold {
        Threshold::AllPositive => Label::Positive,
        Threshold::AllNegative => Label::Negative,
        Threshold::Interior(t) => Label::from(score >= t),
    })
}

/// Outcome of a sequential aggregation rule on one case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DecisionTrace {
    pub final_label: Label,
    pub humans_consulted: u8,
    pub agreed_first_stage: bool,
}

/// The hybrid confirmation tree on concrete labels. `h2` is only invoked
/// when the first human and the machine disagree.
pub fn hct_decide(h1: Label, machine: Label, h2: impl FnOnce() -> Label) -> DecisionTrace {
    if h1 == machine {
        DecisionTrace {
            final_label: h1,
            humans_consulted: 1,
            agreed_first_stage: true,
        }
    } else {
        DecisionTrace {
            final_label: h2(),
            humans_consulted: 2,
            agreed_first_stage: false,
        }
    }
}

/// Sequential three-person majority: the third voter is consulted only on
/// a split between the first two.
pub fn majority_decide(h1: Label, h2: Label, h3: impl FnOnce() -> Label) -> DecisionTrace {
    if h1 == h2 {
        DecisionTrace {
            final_label: h1,
            humans_consulted: 2,
            agreed_first_stage: true,
        }
    } else {
        DecisionTrace {
            final_label: h3(),
            humans_consulted: 3,
            agreed_first_stage: false,
        }
    }
}

/// Both must say positive.
pub fn hierarchy_decide(h1: Label, h2: Label) -> Label {
    Label::from(h1.is_positive() && h2.is_positive())
}

/// One positive suffices.
pub fn polyarchy_decide(h1: Label, h2: Label) -> Label {
    Label::from(h1.is_positive() || h2.is_positive())
}

/// One ground-truth-labeled case with its human votes and a machine score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub truth: Label,
    pub human_votes: BTreeMap<String, Label>,
    pub machine_score: f64,
}

impl CaseRecord {
    pub fn new(
        case_id: impl Into<String>,
        truth: Label,
        human_votes: BTreeMap<String, Label>,
        machine_score: f64,
    ) -> Result<Self> {
        check_probability("machine score", machine_score)?;
        Ok(Self {
            case_id: case_id.into(),
            truth,
            human_votes,
            machine_score,
        })
    }

    pub fn n_raters(&self) -> usize {
        self.human_votes.len()
    }

    /// Votes in rater-id order.
    pub fn votes(&self) -> Vec<Label> {
        self.human_votes.values().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub cases: Vec<CaseRecord>,
}

impl Dataset {
    /// Validates unique case ids and in-range machine scores.
    pub fn new(name: impl Into<String>, cases: Vec<CaseRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(cases.len());
        for case in &cases {
            check_probability("machine score", case.machine_score)?;
            if !seen.insert(case.case_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate case id `{}`",
                    case.case_id
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            cases,
        })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// All rater ids appearing anywhere in the dataset, sorted.
    pub fn rater_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .cases
            .iter()
            .flat_map(|c| c.human_votes.keys().cloned())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// A dataset restricted to the given case indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            cases: indices.iter().map(|&i| self.cases[i].clone()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;
    use Label::{Negative as N, Positive as P};

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(0.7, Threshold::Interior(0.5)).unwrap(), P);
        assert_eq!(binarize(0.0, Threshold::AllPositive).unwrap(), P);
        assert_eq!(binarize(1.0, Threshold::AllNegative).unwrap(), N);
        assert_eq!(binarize(0.5, Threshold::Interior(0.5)).unwrap(), P);
        assert_eq!(binarize(0.4999, Threshold::Interior(0.5)).unwrap(), N);
    }

    #[test]
    fn binarize_rejects_out_of_range_scores() {
        assert!(matches!(
            binarize(1.3, Threshold::Interior(0.5)),
            Err(Error::ProbabilityOutOfRange { .. })
        ));
        assert!(binarize(-0.1, Threshold::AllPositive).is_err());
        assert!(binarize(f64::NAN, Threshold::AllPositive).is_err());
    }

    #[test]
    fn threshold_order() {
        let mut ts = vec![
            Threshold::AllNegative,
            Threshold::Interior(0.7),
            Threshold::AllPositive,
            Threshold::Interior(0.2),
        ];
        ts.sort();
        assert_eq!(
            ts,
            vec![
                Threshold::AllPositive,
                Threshold::Interior(0.2),
                Threshold::Interior(0.7),
                Threshold::AllNegative
            ]
        );
        assert!(Threshold::AllPositive < Threshold::Interior(0.0));
        assert!(Threshold::Interior(1.0) < Threshold::AllNegative);
    }

    #[test]
    fn hct_examples() {
        let t = hct_decide(P, P, || panic!("second human must not be consulted"));
        assert_eq!((t.final_label, t.humans_consulted, t.agreed_first_stage), (P, 1, true));
        let t = hct_decide(P, N, || N);
        assert_eq!((t.final_label, t.humans_consulted, t.agreed_first_stage), (N, 2, false));
        let t = hct_decide(N, P, || P);
        assert_eq!((t.final_label, t.humans_consulted), (P, 2));
    }

    #[test]
    fn tiebreaker_invoked_only_on_disagreement() {
        for h1 in [N, P] {
            for m in [N, P] {
                let calls = Cell::new(0);
                hct_decide(h1, m, || {
                    calls.set(calls.get() + 1);
                    P
                });
                assert_eq!(calls.get(), usize::from(h1 != m));

                let calls = Cell::new(0);
                majority_decide(h1, m, || {
                    calls.set(calls.get() + 1);
                    P
                });
                assert_eq!(calls.get(), usize::from(h1 != m));
            }
        }
    }

    #[test]
    fn majority_examples() {
        let t = majority_decide(P, P, || unreachable!());
        assert_eq!((t.final_label, t.humans_consulted), (P, 2));
        let t = majority_decide(P, N, || N);
        assert_eq!((t.final_label, t.humans_consulted), (N, 3));
        let t = majority_decide(N, P, || P);
        assert_eq!((t.final_label, t.humans_consulted), (P, 3));
    }

    #[test]
    fn hierarchy_and_polyarchy_examples() {
        assert_eq!(hierarchy_decide(P, P), P);
        assert_eq!(hierarchy_decide(P, N), N);
        assert_eq!(hierarchy_decide(N, N), N);
        assert_eq!(polyarchy_decide(N, N), N);
        assert_eq!(polyarchy_decide(P, N), P);
        assert_eq!(polyarchy_decide(N, P), P);
    }

    #[test]
    fn exhaustive_vote_properties() {
        for h1 in [N, P] {
            for m in [N, P] {
                for h2 in [N, P] {
                    let a = hct_decide(h1, m, || h2);
                    let b = hct_decide(m, h1, || h2);
                    assert_eq!(a, b, "order symmetry");
                    let positives = [h1, m, h2].iter().filter(|l| l.is_positive()).count();
                    assert_eq!(a.final_label, Label::from(positives >= 2), "simple majority");
                    assert_eq!(a.humans_consulted == 1, a.agreed_first_stage);
                }
                assert_eq!(
                    hierarchy_decide(h1, m),
                    polyarchy_decide(h1.flip(), m.flip()).flip(),
                    "De Morgan"
                );
            }
        }
    }

    #[test]
    fn label_serde_is_numeric() {
        assert_eq!(serde_json::to_string(&P).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Label>("0").unwrap(), N);
        assert!(serde_json::from_str::<Label>("2").is_err());
        assert_eq!(Label::parse(" 1"), Some(P));
        assert_eq!(Label::parse("2"), None);
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let c = CaseRecord::new("a", P, BTreeMap::new(), 0.5).unwrap();
        assert!(Dataset::new("d", vec![c.clone(), c]).is_err());
        assert!(CaseRecord::new("b", P, BTreeMap::new(), 1.5).is_err());
    }
}
