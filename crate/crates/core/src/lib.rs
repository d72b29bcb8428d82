//! Hybrid confirmation tree (HCT) toolkit.
//!
//! A human and a machine decide independently; when they agree the shared
//! label is final, otherwise a second human breaks the tie. This crate holds
//! the decision rules on concrete votes, closed-form accuracy and cost models
//! (independent and opinion-leader correlated), a Monte Carlo oracle, and an
//! empirical reanalysis pipeline for rated datasets with machine scores.

pub mod agreement;
pub mod analytic;
pub mod decision;
pub mod error;
pub mod evalstats;
pub mod reanalysis;
pub mod simulate;
pub mod streams;

pub use decision::{
    binarize, hct_decide, hierarchy_decide, majority_decide, polyarchy_decide, CaseRecord,
    Dataset, DecisionTrace, Label, Threshold,
};
pub use error::{Error, Result};
