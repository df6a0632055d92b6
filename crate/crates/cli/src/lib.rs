//! Command-line driver: `generate`, `train`, `evaluate`, `ablate`, `sweep`.
//!
//! Every configuration key can come from a flat `key = value` file
//! (`--config`) or from a flag of the same name, e.g. `--knn_k 10`.

pub mod commands;
pub mod config;

use std::io::Write;
use std::marker::PhantomData;
use std::path::PathBuf;

use clap::{Arg, ArgMatches, Args, FromArgMatches, Parser, Subcommand};
use mhcr_core::evaluation::reports_table;
use mhcr_core::{ErrorClass, MhcrError, Result};

use crate::config::{KeyGroup, Settings, KEYS, OUT_DIR_ENV};

/// Key groups a subcommand exposes as flags.
pub trait KeySet {
    const GROUPS: &'static [KeyGroup];
}

#[derive(Debug, Clone)]
pub struct GenerateKeys;
#[derive(Debug, Clone)]
pub struct TrainKeys;
#[derive(Debug, Clone)]
pub struct EvaluateKeys;
#[derive(Debug, Clone)]
pub struct SweepKeys;

impl KeySet for GenerateKeys {
    const GROUPS: &'static [KeyGroup] = &[KeyGroup::General, KeyGroup::Synthetic];
}
impl KeySet for TrainKeys {
    const GROUPS: &'static [KeyGroup] = &[
        KeyGroup::General,
        KeyGroup::Data,
        KeyGroup::Train,
        KeyGroup::Metrics,
    ];
}
impl KeySet for EvaluateKeys {
    const GROUPS: &'static [KeyGroup] = &[
        KeyGroup::General,
        KeyGroup::Data,
        KeyGroup::Train,
        KeyGroup::Metrics,
        KeyGroup::Eval,
    ];
}
impl KeySet for SweepKeys {
    const GROUPS: &'static [KeyGroup] = &[
        KeyGroup::General,
        KeyGroup::Data,
        KeyGroup::Train,
        KeyGroup::Metrics,
        KeyGroup::Sweep,
    ];
}

/// Configuration keys given as `--<key> <value>` flags.
#[derive(Debug, Clone)]
pub struct Overrides<S> {
    pub pairs: Vec<(String, String)>,
    _set: PhantomData<S>,
}

impl<S> Overrides<S> {
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        Self {
            pairs,
            _set: PhantomData,
        }
    }
}

impl<S: KeySet> FromArgMatches for Overrides<S> {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        let mut me = Self::new(Vec::new());
        me.update_from_arg_matches(m)?;
        Ok(me)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        for k in KEYS.iter().filter(|k| S::GROUPS.contains(&k.group)) {
            if let Some(v) = m.get_one::<String>(k.name) {
                self.pairs.retain(|(name, _)| name != k.name);
                self.pairs.push((k.name.to_string(), v.clone()));
            }
        }
        Ok(())
    }
}

impl<S: KeySet> Args for Overrides<S> {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        KEYS.iter()
            .filter(|k| S::GROUPS.contains(&k.group))
            .fold(cmd, |cmd, k| {
                cmd.arg(
                    Arg::new(k.name)
                        .long(k.name)
                        .value_name("VALUE")
                        .help(k.help)
                        .help_heading("Configuration keys"),
                )
            })
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mhcr",
    version,
    about = "Multi-view hypergraph contrastive recommendation"
)]
pub struct Cli {
    /// Flat `key = value` configuration file; flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Raise log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic planted-cluster dataset
    Generate(Overrides<GenerateKeys>),
    /// Train a model and write checkpoint, log, split and validation report
    Train(Overrides<TrainKeys>),
    /// Report test metrics of a checkpoint on all and cold-start users
    Evaluate(Overrides<EvaluateKeys>),
    /// Train with one component switched off
    Ablate {
        /// Component to remove: ui, ii, hem, hc or ghc
        #[arg(long, value_name = "COMPONENT")]
        without: String,
        #[command(flatten)]
        keys: Overrides<TrainKeys>,
    },
    /// Train and evaluate every cell of the hyperparameter grid
    Sweep(Overrides<SweepKeys>),
}

impl Command {
    fn overrides(&self) -> &[(String, String)] {
        match self {
            Command::Generate(o) => &o.pairs,
            Command::Train(o) => &o.pairs,
            Command::Evaluate(o) => &o.pairs,
            Command::Ablate { keys, .. } => &keys.pairs,
            Command::Sweep(o) => &o.pairs,
        }
    }
}

/// Process exit code for an error: 2 configuration, 3 data, 4 numeric.
pub fn exit_code(err: &MhcrError) -> i32 {
    match err.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn configure_threads(threads: usize) {
    if threads == 0 {
        return;
    }
    // the global pool can only be set once per process
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        log::debug!("thread pool already configured: {e}");
    }
}

/// Resolves settings for `cli`, reading the output-directory override from
/// the environment.
pub fn resolve_settings(cli: &Cli) -> Result<Settings> {
    Settings::resolve(
        cli.config.as_deref(),
        std::env::var(OUT_DIR_ENV).ok(),
        cli.command.overrides(),
    )
}

/// Runs one subcommand, printing progress and results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let settings = resolve_settings(cli)?;
    let io_err = |e| MhcrError::io("<stdout>", e);
    writeln!(out, "root seed: {}", settings.seed()?).map_err(io_err)?;
    configure_threads(settings.threads()?);

    match &cli.command {
        Command::Generate(_) => {
            let s = commands::cmd_generate(&settings)?;
            writeln!(out, "{}", s.stats).map_err(io_err)?;
            for f in &s.files {
                writeln!(out, "wrote {}", f.display()).map_err(io_err)?;
            }
        }
        Command::Train(_) | Command::Ablate { .. } => {
            let s = match &cli.command {
                Command::Ablate { without, .. } => commands::cmd_ablate(&settings, without)?,
                _ => commands::cmd_train(&settings)?,
            };
            let o = &s.outcome;
            writeln!(
                out,
                "{}: best epoch {} of {}, validation recall@20 {:.5} (initial {:.5})",
                o.variant,
                o.best_epoch,
                o.log.len(),
                o.best_val_recall,
                o.initial_val_recall
            )
            .map_err(io_err)?;
            write!(out, "{}", reports_table(&s.val_reports)).map_err(io_err)?;
            for f in &s.files {
                writeln!(out, "wrote {}", f.display()).map_err(io_err)?;
            }
        }
        Command::Evaluate(_) => {
            let s = commands::cmd_evaluate(&settings)?;
            write!(out, "{}", reports_table(&s.reports)).map_err(io_err)?;
            writeln!(out, "wrote {}", s.file.display()).map_err(io_err)?;
        }
        Command::Sweep(_) => {
            let s = commands::cmd_sweep(&settings)?;
            let b = &s.rows[s.best];
            writeln!(
                out,
                "best of {} cells: hyper_num={} lambda_hc={:e} lambda_ghc={:e} \
                 validation recall@20 {:.5}",
                s.rows.len(),
                b.hyper_num,
                b.lambda_hc,
                b.lambda_ghc,
                b.val_recall20
            )
            .map_err(io_err)?;
            writeln!(out, "wrote {}", s.file.display()).map_err(io_err)?;
        }
    }
    Ok(())
}
