//! Monte Carlo oracle for the analytic models and a synthetic dataset generator.
//!
//! Trials simulate agent correctness rather than raw labels. Trials are split
//! into fixed blocks, each with its own counter-based stream, so estimates are
//! bit-identical for any thread count.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{solve_copy_model, CopyModel, CorrelatedTreeParams, IndependentParams};
use crate::decision::{hct_decide, majority_decide, CaseRecord, Dataset, Label};
use crate::error::{check_probability, CopyBound, Error, Result};
use crate::streams;

const TRIALS_PER_STREAM: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SimParams {
    Independent(IndependentParams),
    Correlated(CorrelatedTreeParams),
}

impl SimParams {
    fn tree(&self) -> Result<CorrelatedTreeParams> {
        match self {
            SimParams::Independent(p) => CorrelatedTreeParams::independent(*p),
            SimParams::Correlated(p) => Ok(*p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub n_trials: u64,
    pub seed: u64,
    pub params: SimParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEstimate {
    pub accuracy_mean: f64,
    pub accuracy_stderr: f64,
    pub cost_mean: f64,
    pub cost_stderr: f64,
    pub n_trials: u64,
}

/// Draws whether a follower is correct given its leader's correctness.
pub fn sample_follower<R: Rng + ?Sized>(leader_correct: bool, model: &CopyModel, rng: &mut R) -> bool {
    if rng.gen::<f64>() < model.alpha {
        leader_correct
    } else {
        rng.gen::<f64>() < model.independent_rate
    }
}

/// `(correct, escalated)` counts; cost = base + escalated / n.
fn run_trials<F>(cfg: &SimConfig, trial: F) -> Result<(u64, u64)>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> (bool, bool) + Sync,
{
    if cfg.n_trials == 0 {
        return Err(Error::invalid("n_trials must be at least 1"));
    }
    let blocks = cfg.n_trials.div_ceil(TRIALS_PER_STREAM);
    let (correct, escalated) = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = streams::indexed(cfg.seed, block);
            let start = block * TRIALS_PER_STREAM;
            let end = (start + TRIALS_PER_STREAM).min(cfg.n_trials);
            let mut counts = (0u64, 0u64);
            for _ in start..end {
                let (ok, esc) = trial(&mut rng);
                counts.0 += ok as u64;
                counts.1 += esc as u64;
            }
            counts
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((correct, escalated))
}

fn estimate(n: u64, correct: u64, escalated: u64, base_cost: f64) -> SimEstimate {
    let nf = n as f64;
    let acc = correct as f64 / nf;
    let esc = escalated as f64 / nf;
    SimEstimate {
        accuracy_mean: acc,
        accuracy_stderr: (acc * (1.0 - acc) / nf).sqrt(),
        cost_mean: base_cost + esc,
        cost_stderr: (esc * (1.0 - esc) / nf).sqrt(),
        n_trials: n,
    }
}

/// Simulates the hybrid tree: H1 leads, the machine and H2 follow.
pub fn simulate_hct(cfg: &SimConfig) -> Result<SimEstimate> {
    let tree = cfg.params.tree()?;
    let (correct, escalated) = run_trials(cfg, |rng| {
        let h1 = rng.gen::<f64>() < tree.p_leader;
        let machine = sample_follower(h1, &tree.human_machine, rng);
        let trace = hct_decide(h1.into(), machine.into(), || {
            sample_follower(h1, &tree.human_human, rng).into()
        });
        (trace.final_label.is_positive(), !trace.agreed_first_stage)
    })?;
    Ok(estimate(cfg.n_trials, correct, escalated, 1.0))
}

/// Simulates the sequential three-person majority: H2 and H3 follow H1.
pub fn simulate_majority(cfg: &SimConfig) -> Result<SimEstimate> {
    let tree = cfg.params.tree()?;
    let link = tree.human_human;
    let (correct, escalated) = run_trials(cfg, |rng| {
        let h1 = rng.gen::<f64>() < tree.p_leader;
        let h2 = sample_follower(h1, &link, rng);
        let trace = majority_decide(h1.into(), h2.into(), || sample_follower(h1, &link, rng).into());
        (trace.final_label.is_positive(), !trace.agreed_first_stage)
    })?;
    Ok(estimate(cfg.n_trials, correct, escalated, 2.0))
}

/// Parameters for a synthetic rated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthConfig {
    pub n_cases: usize,
    pub n_raters: usize,
    pub base_rate: f64,
    pub p_human: f64,
    pub p_machine: f64,
    pub kappa_hh: f64,
    pub kappa_hm: f64,
    /// In (0, 1]. Small values push correct scores to the extremes and
    /// wrong ones toward 0.5; 1 makes scores uninformative beyond their side of 0.5.
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_cases: 500,
            n_raters: 20,
            base_rate: 0.5,
            p_human: 0.7,
            p_machine: 0.75,
            kappa_hh: 0.0,
            kappa_hm: 0.0,
            score_noise: 0.5,
            seed: 0,
        }
    }
}

/// Copy links used by [`synthesize_dataset`]: `(human, machine)`, both
/// following a latent leader with accuracy `p_human`.
///
/// Two followers of a common leader with copy rates `a` and `b` have
/// correctness kappa `a * b * 2 p (1 - p) / (1 - p_e)`, so humans copy at
/// `sqrt(kappa_hh)` (every human pair then has kappa `kappa_hh`) and the
/// machine is solved against the leader for `kappa_hm / sqrt(kappa_hh)`.
pub fn synth_links(cfg: &SynthConfig) -> Result<(CopyModel, CopyModel)> {
    check_probability("p_human", cfg.p_human)?;
    check_probability("p_machine", cfg.p_machine)?;
    if cfg.kappa_hh > 1.0 {
        return Err(Error::invalid(format!("kappa_hh {} is above 1", cfg.kappa_hh)));
    }
    if cfg.kappa_hh < 0.0 {
        // equal accuracies: alpha equals kappa
        return Err(Error::Infeasible {
            leader: cfg.p_human,
            follower: cfg.p_human,
            kappa: cfg.kappa_hh,
            bound: CopyBound::Alpha,
            value: cfg.kappa_hh,
        });
    }
    let human_copy = cfg.kappa_hh.sqrt();
    let human = solve_copy_model(cfg.p_human, cfg.p_human, human_copy)?;
    if cfg.kappa_hm == 0.0 {
        return Ok((human, solve_copy_model(cfg.p_human, cfg.p_machine, 0.0)?));
    }
    let leader_kappa = if human_copy > 0.0 {
        cfg.kappa_hm / human_copy
    } else {
        cfg.kappa_hm.signum() * f64::INFINITY
    };
    if leader_kappa > 1.0 {
        return Err(Error::Infeasible {
            leader: cfg.p_human,
            follower: cfg.p_machine,
            kappa: cfg.kappa_hm,
            bound: CopyBound::Alpha,
            value: leader_kappa,
        });
    }
    let machine = solve_copy_model(cfg.p_human, cfg.p_machine, leader_kappa)?;
    Ok((human, machine))
}

fn below_half() -> f64 {
    f64::from_bits(0.5f64.to_bits() - 1)
}

/// Generates a dataset whose rater accuracies, machine accuracy at
/// `interior(0.5)` and pairwise correctness kappas converge to the targets.
pub fn synthesize_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n_cases == 0 || cfg.n_raters == 0 {
        return Err(Error::invalid("n_cases and n_raters must be positive"));
    }
    check_probability("base_rate", cfg.base_rate)?;
    if !(cfg.score_noise > 0.0 && cfg.score_noise <= 1.0) {
        return Err(Error::invalid(format!(
            "score_noise must lie in (0, 1], got {}",
            cfg.score_noise
        )));
    }
    let (human, machine) = synth_links(cfg)?;
    let width = cfg.n_raters.to_string().len().max(2);
    let rater_ids: Vec<String> = (1..=cfg.n_raters).map(|i| format!("r{i:0width$}")).collect();
    let case_width = cfg.n_cases.to_string().len().max(4);

    let cases = (0..cfg.n_cases)
        .into_par_iter()
        .map(|idx| {
            let mut rng = streams::indexed(cfg.seed, idx as u64);
            let truth = Label::from(rng.gen::<f64>() < cfg.base_rate);
            let leader = rng.gen::<f64>() < cfg.p_human;
            let label_for = |correct: bool| if correct { truth } else { truth.flip() };
            let votes: BTreeMap<String, Label> = rater_ids
                .iter()
                .map(|id| (id.clone(), label_for(sample_follower(leader, &human, &mut rng))))
                .collect();
            let machine_correct = sample_follower(leader, &machine, &mut rng);
            let u = 1.0 - rng.gen::<f64>();
            let confidence = if machine_correct {
                1.0 - cfg.score_noise * (1.0 - u)
            } else {
                cfg.score_noise * u
            };
            let score = if label_for(machine_correct).is_positive() {
                0.5 + 0.5 * confidence
            } else {
                (0.5 - 0.5 * confidence).min(below_half())
            };
            CaseRecord {
                case_id: format!("c{:0case_width$}", idx + 1),
                truth,
                human_votes: votes,
                machine_score: score,
            }
        })
        .collect();
    Dataset::new(format!("synthetic-{}", cfg.seed), cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{follower_correct_given_leader, hct_accuracy_indep, maj_accuracy_indep};
    use crate::decision::{binarize, Threshold};

    fn cfg(params: SimParams, n: u64, seed: u64) -> SimConfig {
        SimConfig {
            n_trials: n,
            seed,
            params,
        }
    }

    fn indep(h: f64, m: f64) -> SimParams {
        SimParams::Independent(IndependentParams::new(h, m).unwrap())
    }

    #[test]
    fn sample_follower_examples() {
        let mut rng = streams::indexed(1, 0);
        let copy = solve_copy_model(0.7, 0.7, 1.0).unwrap();
        for leader in [true, false] {
            for _ in 0..100 {
                assert_eq!(sample_follower(leader, &copy, &mut rng), leader);
            }
        }
        let own = solve_copy_model(0.7, 1.0, 0.0).unwrap();
        assert!((0..100).all(|_| sample_follower(true, &own, &mut rng)));

        let half = solve_copy_model(0.8, 0.8, 0.5).unwrap();
        let n = 200_000;
        let hits = (0..n).filter(|_| sample_follower(true, &half, &mut rng)).count();
        let rate = hits as f64 / n as f64;
        let expected = follower_correct_given_leader(&half, true);
        assert!((expected - 0.9).abs() < 1e-12);
        assert!((rate - expected).abs() < 4.0 * (expected * (1.0 - expected) / n as f64).sqrt());
    }

    #[test]
    fn hct_simulation_examples() {
        let est = simulate_hct(&cfg(indep(0.8, 0.8), 1_000_000, 1)).unwrap();
        let target = hct_accuracy_indep(IndependentParams::new(0.8, 0.8).unwrap());
        assert!((est.accuracy_mean - target).abs() < 4.0 * est.accuracy_stderr);

        let est = simulate_hct(&cfg(indep(1.0, 1.0), 1000, 9)).unwrap();
        assert_eq!((est.accuracy_mean, est.cost_mean), (1.0, 1.0));

        let tree = CorrelatedTreeParams::from_targets(0.8, 0.8, 0.0, 1.0).unwrap();
        let est = simulate_hct(&cfg(SimParams::Correlated(tree), 1_000_000, 2)).unwrap();
        assert_eq!(est.cost_mean, 1.0);
    }

    #[test]
    fn majority_simulation_examples() {
        let est = simulate_majority(&cfg(indep(0.8, 0.5), 1_000_000, 3)).unwrap();
        assert!((est.accuracy_mean - maj_accuracy_indep(0.8)).abs() < 4.0 * est.accuracy_stderr);

        let est = simulate_majority(&cfg(indep(1.0, 0.5), 1000, 3)).unwrap();
        assert_eq!((est.accuracy_mean, est.cost_mean), (1.0, 2.0));

        let tree = CorrelatedTreeParams::from_targets(0.8, 0.8, 1.0, 0.0).unwrap();
        let est = simulate_majority(&cfg(SimParams::Correlated(tree), 1_000_000, 4)).unwrap();
        assert!((est.accuracy_mean - 0.8).abs() < 4.0 * est.accuracy_stderr);
        assert_eq!(est.cost_mean, 2.0);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(simulate_hct(&cfg(indep(0.8, 0.8), 0, 1)).is_err());
    }

    #[test]
    fn deterministic_across_pool_sizes() {
        let c = cfg(indep(0.73, 0.61), 300_000, 77);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(6).build().unwrap();
        let a = one.install(|| (simulate_hct(&c).unwrap(), simulate_majority(&c).unwrap()));
        let b = many.install(|| (simulate_hct(&c).unwrap(), simulate_majority(&c).unwrap()));
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_dataset_marginals() {
        let cfg = SynthConfig {
            n_cases: 10_000,
            n_raters: 5,
            p_human: 0.8,
            p_machine: 0.85,
            seed: 5,
            ..SynthConfig::default()
        };
        let data = synthesize_dataset(&cfg).unwrap();
        assert_eq!(data.len(), 10_000);
        let positives = data.cases.iter().filter(|c| c.truth.is_positive()).count() as f64;
        assert!((positives / 10_000.0 - 0.5).abs() < 0.02);
        for rater in data.rater_ids() {
            let acc = data
                .cases
                .iter()
                .filter(|c| c.human_votes[&rater] == c.truth)
                .count() as f64
                / 10_000.0;
            assert!((acc - 0.8).abs() < 0.02, "rater {rater} accuracy {acc}");
        }
        let machine_acc = data
            .cases
            .iter()
            .filter(|c| binarize(c.machine_score, Threshold::Interior(0.5)).unwrap() == c.truth)
            .count() as f64
            / 10_000.0;
        assert!((machine_acc - 0.85).abs() < 0.02);
    }

    #[test]
    fn synthetic_dataset_is_reproducible() {
        let cfg = SynthConfig {
            n_cases: 50,
            n_raters: 4,
            seed: 11,
            kappa_hh: 0.3,
            kappa_hm: 0.2,
            ..SynthConfig::default()
        };
        assert_eq!(synthesize_dataset(&cfg).unwrap(), synthesize_dataset(&cfg).unwrap());
    }

    #[test]
    fn synthetic_infeasibility() {
        let cfg = SynthConfig {
            kappa_hh: 0.0,
            kappa_hm: 0.3,
            ..SynthConfig::default()
        };
        assert!(matches!(synthesize_dataset(&cfg), Err(Error::Infeasible { .. })));
        let cfg = SynthConfig {
            kappa_hh: -0.2,
            ..SynthConfig::default()
        };
        assert!(synthesize_dataset(&cfg).is_err());
        let cfg = SynthConfig {
            score_noise: 0.0,
            ..SynthConfig::default()
        };
        assert!(synthesize_dataset(&cfg).is_err());
    }
}
