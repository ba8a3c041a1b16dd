//! Command-line harness around the `cflgcn` engine.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "cflgcn",
    version,
    about = "Graph-convolutional collaborative filtering experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// `key=value` overrides applied after the file.
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a dataset and write the split manifest.
    PrepareData(CommonArgs),
    /// Train on a prepared split; writes a checkpoint and training log.
    Train(CommonArgs),
    /// Score a checkpoint on the test split.
    Evaluate(CommonArgs),
    /// Embed and recommend for entities unseen during training.
    InferInductive(CommonArgs),
    /// Run the built-in identity, gradient and metric suites.
    Verify(CommonArgs),
    /// Train a grid of configurations and write a leaderboard.
    Sweep(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::PrepareData(a)
            | Command::Train(a)
            | Command::Evaluate(a)
            | Command::InferInductive(a)
            | Command::Verify(a)
            | Command::Sweep(a) => a,
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    let args = command.args();
    let cfg = ExperimentConfig::load(args.config.as_deref(), &args.overrides)?;
    match command {
        Command::PrepareData(_) => {
            let s = commands::prepare_data(&cfg)?;
            println!(
                "split written to {}: {} users, {} items, {} interactions, {} held users, {} held items",
                s.dir.display(),
                s.num_users,
                s.num_items,
                s.interactions,
                s.held_users,
                s.held_items
            );
        }
        Command::Train(_) => {
            let s = commands::train(&cfg)?;
            println!(
                "best epoch {} of {}: validation recall@{} {:.4} ndcg@{} {:.4}",
                s.best_epoch, s.epochs_run, s.best.k, s.best.recall, s.best.k, s.best.ndcg
            );
        }
        Command::Evaluate(_) => print_rows(&commands::evaluate(&cfg)?),
        Command::InferInductive(_) => {
            let s = commands::infer_inductive(&cfg)?;
            println!(
                "inferred {} new users and {} new items",
                s.new_users, s.new_items
            );
            print_rows(&s.metrics);
        }
        Command::Verify(_) => {
            commands::verify(&cfg)?;
        }
        Command::Sweep(_) => {
            for (rank, r) in commands::sweep(&cfg)?.iter().enumerate() {
                println!(
                    "{:>3}. {}  val recall@{} {:.2}  test recall@{} {:.2} ndcg@{} {:.2}",
                    rank + 1,
                    r.point,
                    r.val.k,
                    r.val.recall_pct(),
                    r.test.k,
                    r.test.recall_pct(),
                    r.test.k,
                    r.test.ndcg_pct()
                );
            }
        }
    }
    Ok(())
}

fn print_rows(rows: &[metrics::MetricRow]) {
    for r in rows {
        println!(
            "{} layers={} fusion={}  recall@{k} {:.2}  ndcg@{k} {:.2}",
            r.model,
            r.layers,
            r.fusion,
            r.recall_pct,
            r.ndcg_pct,
            k = r.k
        );
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
