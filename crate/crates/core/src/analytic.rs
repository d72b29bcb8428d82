//! Closed-form accuracy and expected-cost models.
//!
//! Agents are described by their probability of being correct. Under
//! independence every agent draws its correctness separately; under the
//! opinion-leader model the first human is a leader and every other agent
//! (the machine, further humans) is a follower that copies the leader's
//! outcome with probability `alpha` and otherwise draws independently with
//! success rate `p'`. Followers are conditionally independent given the
//! leader.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_probability, CopyBound, Error, Result};

const EPS: f64 = 1e-12;

/// Human and machine accuracies for the independent model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndependentParams {
    pub p_human: f64,
    pub p_machine: f64,
}

impl IndependentParams {
    pub fn new(p_human: f64, p_machine: f64) -> Result<Self> {
        Ok(Self {
            p_human: check_probability("p_human", p_human)?,
            p_machine: check_probability("p_machine", p_machine)?,
        })
    }
}

/// Accuracy of the hybrid confirmation tree with independent agents.
pub fn hct_accuracy_indep(p: IndependentParams) -> f64 {
    let (h, m) = (p.p_human, p.p_machine);
    h * m + h * (1.0 - m) * h + (1.0 - h) * m * h
}

/// Expected number of humans consulted: 2 minus the H1/machine agreement rate.
pub fn hct_cost_indep(p: IndependentParams) -> f64 {
    let (h, m) = (p.p_human, p.p_machine);
    2.0 - (h * m + (1.0 - h) * (1.0 - m))
}

/// Accuracy of the sequential three-person majority with independent humans.
pub fn maj_accuracy_indep(p_human: f64) -> f64 {
    let h = p_human;
    h * h + h * (1.0 - h) * h + (1.0 - h) * h * h
}

pub fn maj_cost_indep(p_human: f64) -> f64 {
    let h = p_human;
    3.0 - (h * h + (1.0 - h) * (1.0 - h))
}

/// Probability that a strict majority of `k` independent voters is correct.
pub fn maj_accuracy_k(k: usize, p_human: f64) -> Result<f64> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::invalid(format!(
            "majority group size must be odd and positive, got {k}"
        )));
    }
    check_probability("p_human", p_human)?;
    let mut binom = 1.0_f64; // C(k, j), starting at j = 0
    let mut total = 0.0;
    for j in 0..=k {
        if j > 0 {
            binom = binom * (k - j + 1) as f64 / j as f64;
        }
        if 2 * j > k {
            total += binom * p_human.powi(j as i32) * (1.0 - p_human).powi((k - j) as i32);
        }
    }
    Ok(total)
}

/// A leader-follower link parameterized to hit a target kappa and follower accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CopyModel {
    pub leader_accuracy: f64,
    pub follower_accuracy: f64,
    pub kappa: f64,
    /// Probability that the follower copies the leader.
    pub alpha: f64,
    /// Success rate of the follower's own draw when it does not copy.
    pub independent_rate: f64,
    /// False when `alpha == 1`; `independent_rate` is then a placeholder.
    pub independent_rate_used: bool,
}

impl CopyModel {
    /// Joint probabilities `[[P(L wrong, F wrong), P(L wrong, F right)], [P(L right, F wrong), P(L right, F right)]]`.
    pub fn joint(&self) -> [[f64; 2]; 2] {
        let p = self.leader_accuracy;
        let right = follower_correct_given_leader(self, true);
        let wrong = follower_correct_given_leader(self, false);
        [
            [(1.0 - p) * (1.0 - wrong), (1.0 - p) * wrong],
            [p * (1.0 - right), p * right],
        ]
    }
}

/// Inverts the copy mechanism: finds `alpha` and `p'` so that the follower
/// has marginal accuracy `p_follower` and Cohen's kappa `kappa` with the
/// leader (both computed on correctness).
pub fn solve_copy_model(p_leader: f64, p_follower: f64, kappa: f64) -> Result<CopyModel> {
    check_probability("p_leader", p_leader)?;
    check_probability("p_follower", p_follower)?;
    if !(-1.0..=1.0).contains(&kappa) {
        return Err(Error::invalid(format!("kappa {kappa} is outside [-1, 1]")));
    }
    let infeasible = |bound, value| Error::Infeasible {
        leader: p_leader,
        follower: p_follower,
        kappa,
        bound,
        value,
    };

    if kappa == 0.0 {
        return Ok(CopyModel {
            leader_accuracy: p_leader,
            follower_accuracy: p_follower,
            kappa,
            alpha: 0.0,
            independent_rate: p_follower,
            independent_rate_used: true,
        });
    }

    let leader_var = 2.0 * p_leader * (1.0 - p_leader);
    if leader_var == 0.0 {
        return Err(Error::DegenerateLeader {
            leader: p_leader,
            kappa,
        });
    }
    let disagreement_by_chance = p_leader * (1.0 - p_follower) + (1.0 - p_leader) * p_follower;
    let mut alpha = kappa * disagreement_by_chance / leader_var;
    if !(-EPS..=1.0 + EPS).contains(&alpha) || alpha < 0.0 {
        return Err(infeasible(CopyBound::Alpha, alpha));
    }

    if (alpha - 1.0).abs() <= EPS {
        alpha = 1.0;
        let gap = p_follower - p_leader;
        if gap.abs() > EPS {
            return Err(infeasible(
                CopyBound::IndependentRate,
                gap.signum() * f64::INFINITY,
            ));
        }
        return Ok(CopyModel {
            leader_accuracy: p_leader,
            follower_accuracy: p_follower,
            kappa,
            alpha,
            independent_rate: p_follower,
            independent_rate_used: false,
        });
    }

    let rate = (p_follower - alpha * p_leader) / (1.0 - alpha);
    if !(-EPS..=1.0 + EPS).contains(&rate) {
        return Err(infeasible(CopyBound::IndependentRate, rate));
    }
    Ok(CopyModel {
        leader_accuracy: p_leader,
        follower_accuracy: p_follower,
        kappa,
        alpha,
        independent_rate: rate.clamp(0.0, 1.0),
        independent_rate_used: true,
    })
}

/// P(follower correct | leader correct or not).
pub fn follower_correct_given_leader(model: &CopyModel, leader_correct: bool) -> f64 {
    let own = (1.0 - model.alpha) * model.independent_rate;
    if leader_correct {
        model.alpha + own
    } else {
        own
    }
}

/// Opinion-leader parameters for a tree: H1 leads, the machine and H2 follow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelatedTreeParams {
    pub p_leader: f64,
    pub human_machine: CopyModel,
    pub human_human: CopyModel,
}

impl CorrelatedTreeParams {
    pub fn new(p_leader: f64, human_machine: CopyModel, human_human: CopyModel) -> Result<Self> {
        check_probability("p_leader", p_leader)?;
        for (name, link) in [("human-machine", &human_machine), ("human-human", &human_human)] {
            if (link.leader_accuracy - p_leader).abs() > EPS {
                return Err(Error::Inconsistent(format!(
                    "{name} link has leader accuracy {} but the tree leader has {p_leader}",
                    link.leader_accuracy
                )));
            }
        }
        Ok(Self {
            p_leader,
            human_machine,
            human_human,
        })
    }

    /// All humans at `p_human`, machine at `p_machine`, with the given kappa targets.
    pub fn from_targets(p_human: f64, p_machine: f64, kappa_hh: f64, kappa_hm: f64) -> Result<Self> {
        let human_machine = solve_copy_model(p_human, p_machine, kappa_hm)?;
        let human_human = solve_copy_model(p_human, p_human, kappa_hh)?;
        Self::new(p_human, human_machine, human_human)
    }

    pub fn independent(p: IndependentParams) -> Result<Self> {
        Self::from_targets(p.p_human, p.p_machine, 0.0, 0.0)
    }
}

/// Hybrid confirmation tree accuracy under the opinion-leader model.
pub fn hct_accuracy_corr(p: &CorrelatedTreeParams) -> f64 {
    let lead = p.p_leader;
    let m_right = follower_correct_given_leader(&p.human_machine, true);
    let m_wrong = follower_correct_given_leader(&p.human_machine, false);
    let h_right = follower_correct_given_leader(&p.human_human, true);
    let h_wrong = follower_correct_given_leader(&p.human_human, false);
    lead * m_right + lead * (1.0 - m_right) * h_right + (1.0 - lead) * m_wrong * h_wrong
}

/// Expected humans consulted under the opinion-leader model.
pub fn hct_cost_corr(p: &CorrelatedTreeParams) -> f64 {
    let lead = p.p_leader;
    let agree = lead * follower_correct_given_leader(&p.human_machine, true)
        + (1.0 - lead) * (1.0 - follower_correct_given_leader(&p.human_machine, false));
    2.0 - agree
}

fn check_human_link(p_human: f64, hh: &CopyModel) -> Result<()> {
    check_probability("p_human", p_human)?;
    if (hh.leader_accuracy - p_human).abs() > EPS {
        return Err(Error::Inconsistent(format!(
            "human-human link has leader accuracy {} but p_human is {p_human}",
            hh.leader_accuracy
        )));
    }
    Ok(())
}

/// Three-person majority accuracy when H2 and H3 follow H1.
pub fn maj_accuracy_corr(p_human: f64, hh: &CopyModel) -> Result<f64> {
    check_human_link(p_human, hh)?;
    let right = follower_correct_given_leader(hh, true);
    let wrong = follower_correct_given_leader(hh, false);
    Ok(p_human * right + p_human * (1.0 - right) * right + (1.0 - p_human) * wrong * wrong)
}

pub fn maj_cost_corr(p_human: f64, hh: &CopyModel) -> Result<f64> {
    check_human_link(p_human, hh)?;
    let agree = p_human * follower_correct_given_leader(hh, true)
        + (1.0 - p_human) * (1.0 - follower_correct_given_leader(hh, false));
    Ok(3.0 - agree)
}

/// Which competitors the hybrid tree strictly outperforms at one (p_H, p_M).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionLabel {
    BeatsMajorityOnly,
    BeatsMachineOnly,
    BeatsBoth,
    BeatsNeither,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 4] = [
        RegionLabel::BeatsMajorityOnly,
        RegionLabel::BeatsMachineOnly,
        RegionLabel::BeatsBoth,
        RegionLabel::BeatsNeither,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RegionLabel::BeatsMajorityOnly => "beats_majority_only",
            RegionLabel::BeatsMachineOnly => "beats_machine_only",
            RegionLabel::BeatsBoth => "beats_both",
            RegionLabel::BeatsNeither => "beats_neither",
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classifies one accuracy pair. Ties count as not beating.
pub fn classify_region(p_human: f64, p_machine: f64, kappa_hh: f64, kappa_hm: f64) -> Result<RegionLabel> {
    let params = CorrelatedTreeParams::from_targets(p_human, p_machine, kappa_hh, kappa_hm)?;
    let hct = hct_accuracy_corr(&params);
    let maj = maj_accuracy_corr(p_human, &params.human_human)?;
    Ok(match (hct > maj, hct > p_machine) {
        (true, true) => RegionLabel::BeatsBoth,
        (true, false) => RegionLabel::BeatsMajorityOnly,
        (false, true) => RegionLabel::BeatsMachineOnly,
        (false, false) => RegionLabel::BeatsNeither,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub p_human: f64,
    pub p_machine: f64,
    /// `None` when the kappa targets cannot be produced at this cell.
    pub region: Option<RegionLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionGrid {
    pub resolution: usize,
    pub kappa_hh: f64,
    pub kappa_hm: f64,
    /// Row-major: `p_human` outer, `p_machine` inner, both ascending.
    pub cells: Vec<GridCell>,
}

/// Evaluates [`classify_region`] on the lattice `i / (resolution - 1)` over [0, 1]².
pub fn generate_region_grid(resolution: usize, kappa_hh: f64, kappa_hm: f64) -> Result<RegionGrid> {
    if resolution < 2 {
        return Err(Error::invalid(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    for (name, k) in [("kappa_hh", kappa_hh), ("kappa_hm", kappa_hm)] {
        if !(-1.0..=1.0).contains(&k) {
            return Err(Error::invalid(format!("{name} = {k} is outside [-1, 1]")));
        }
    }
    let step = (resolution - 1) as f64;
    let cells = (0..resolution * resolution)
        .into_par_iter()
        .map(|idx| {
            let p_human = (idx / resolution) as f64 / step;
            let p_machine = (idx % resolution) as f64 / step;
            let region = classify_region(p_human, p_machine, kappa_hh, kappa_hm).ok();
            GridCell {
                p_human,
                p_machine,
                region,
            }
        })
        .collect();
    Ok(RegionGrid {
        resolution,
        kappa_hh,
        kappa_hm,
        cells,
    })
}

/// Cell counts per region, over feasible cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionSummary {
    pub total_cells: usize,
    pub feasible_cells: usize,
    pub counts: BTreeMap<RegionLabel, usize>,
}

impl RegionSummary {
    pub fn fraction(&self, label: RegionLabel) -> f64 {
        if self.feasible_cells == 0 {
            return 0.0;
        }
        self.counts.get(&label).copied().unwrap_or(0) as f64 / self.feasible_cells as f64
    }
}

impl RegionGrid {
    pub fn cells_with(&self, label: RegionLabel) -> impl Iterator<Item = &GridCell> {
        self.cells.iter().filter(move |c| c.region == Some(label))
    }

    pub fn summary(&self) -> RegionSummary {
        let mut counts: BTreeMap<RegionLabel, usize> =
            RegionLabel::ALL.iter().map(|&l| (l, 0)).collect();
        let mut feasible = 0;
        for cell in &self.cells {
            if let Some(label) = cell.region {
                feasible += 1;
                *counts.entry(label).or_default() += 1;
            }
        }
        RegionSummary {
            total_cells: self.cells.len(),
            feasible_cells: feasible,
            counts,
        }
    }

    /// Columns: `p_h,p_m,kappa_hh,kappa_hm,region`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["p_h", "p_m", "kappa_hh", "kappa_hm", "region"])?;
        for cell in &self.cells {
            out.write_record([
                cell.p_human.to_string(),
                cell.p_machine.to_string(),
                self.kappa_hh.to_string(),
                self.kappa_hm.to_string(),
                cell.region.map_or("infeasible", |r| r.as_str()).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
