//! `hct`: reproducible runs of the hybrid confirmation tree toolkit.
//!
//! Exit status: 0 on success, 2 for malformed command lines, 3 for invalid
//! settings or input data, 4 for infeasible model parameters, 5 for I/O
//! failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hct_core::error::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] hct_core::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 3,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Validation => 3,
                ErrorKind::Infeasible => 4,
                ErrorKind::Io => 5,
            },
            CliError::Io(_) => 5,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hct", version, about = "Hybrid confirmation tree simulator and reanalysis toolkit")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Top-level seed; every random stream of the run derives from it.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Worker threads (0 = one per core). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

impl CommonArgs {
    fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("seed", self.seed.clone()),
            ("threads", self.threads.clone()),
            ("out", self.out.as_ref().map(|p| p.to_string_lossy().into_owned())),
        ]
    }
}

/// Declares a subcommand's string-valued settings; `--foo-bar` maps to key `foo_bar`.
macro_rules! settings_args {
    ($(#[$meta:meta])* $name:ident { $($(#[doc = $doc:literal])* $field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Args)]
        pub struct $name {
            $( $(#[doc = $doc])* #[arg(long)] pub $field: Option<String>, )*
        }

        impl $name {
            pub fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
                vec![$((stringify!($field), self.$field.clone())),*]
            }
        }
    };
}

settings_args!(GridArgs {
    /// Points per axis on the [0, 1] lattice.
    resolution,
    /// Human-human kappa.
    kappa_hh,
    /// Human-machine kappa.
    kappa_hm,
});

settings_args!(SimulateArgs {
    p_human,
    p_machine,
    kappa_hh,
    kappa_hm,
    /// Monte Carlo trials per strategy.
    n_trials,
});

settings_args!(SynthesizeArgs {
    n_cases,
    n_raters,
    /// Share of truly positive cases.
    base_rate,
    p_human,
    p_machine,
    kappa_hh,
    kappa_hm,
    /// In (0, 1]; how far wrong and right machine scores overlap.
    score_noise,
});

settings_args!(ReanalyzeArgs {
    /// Directory holding ratings.csv, machine.csv and truth.csv.
    data,
    ratings,
    machine,
    truth,
    /// `true` if ratings carry probabilities (`case_id,rater_id,prob`).
    prob_ratings,
    k_majority,
    /// Cap on majority arrangements evaluated per case.
    max_perms,
    /// Comma-separated odd crowd sizes for the crowd curve.
    crowd_sizes,
    /// `labels` or `correctness`.
    kappa_space,
    /// Co-raters sharing fewer cases are excluded from kappa.
    min_shared,
});

settings_args!(KappaArgs {
    data,
    ratings,
    machine,
    truth,
    prob_ratings,
    /// `best` (sweep argmax), `all_positive`, `all_negative` or a cutoff in [0, 1].
    threshold,
    kappa_space,
    min_shared,
    max_perms,
});

settings_args!(CrossvalArgs {
    data,
    ratings,
    machine,
    truth,
    prob_ratings,
    k_majority,
    max_perms,
    n_repeats,
    n_folds,
    /// Bootstrap resamples.
    n_boot,
    /// Half-width of the region of practical equivalence.
    rope,
    /// Bootstrap clusters: `cells` (repeat x fold) or `cases`.
    bootstrap_unit,
});

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify the (human, machine) accuracy plane into regions.
    AnalyticGrid(GridArgs),
    /// Monte Carlo accuracy and cost of the tree and the majority vote.
    Simulate(SimulateArgs),
    /// Write a synthetic rated dataset.
    Synthesize(SynthesizeArgs),
    /// Threshold sweep, ROC points, kappa table and crowd curve for a dataset.
    Reanalyze(ReanalyzeArgs),
    /// Per-rater agreement with co-raters and with the machine.
    Kappa(KappaArgs),
    /// Repeated cross-validation of the threshold choice with bootstrap summaries.
    Crossval(CrossvalArgs),
}

type Runner = fn(&config::Settings) -> Result<(), CliError>;

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.common.config {
        Some(path) => config::read_config(path)?,
        None => Default::default(),
    };
    let common = cli.common.overrides();
    let with = |specific: Vec<(&'static str, Option<String>)>| {
        let mut all = common.clone();
        all.extend(specific);
        all
    };
    let (name, keys, overrides, runner): (&'static str, &[config::Key], _, Runner) =
        match &cli.command {
            Command::AnalyticGrid(a) => ("analytic-grid", commands::GRID_KEYS, with(a.overrides()), commands::analytic_grid),
            Command::Simulate(a) => ("simulate", commands::SIMULATE_KEYS, with(a.overrides()), commands::simulate),
            Command::Synthesize(a) => ("synthesize", commands::SYNTHESIZE_KEYS, with(a.overrides()), commands::synthesize),
            Command::Reanalyze(a) => ("reanalyze", commands::REANALYZE_KEYS, with(a.overrides()), commands::reanalyze),
            Command::Kappa(a) => ("kappa", commands::KAPPA_KEYS, with(a.overrides()), commands::kappa),
            Command::Crossval(a) => ("crossval", commands::CROSSVAL_KEYS, with(a.overrides()), commands::crossval),
        };
    let settings = config::Settings::resolve(name, keys, file, overrides)?;
    let threads: usize = settings.get("threads")?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    commands::prepare_out(&settings)?;
    runner(&settings)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
