//! Command implementations for the `baymoth` binary.

pub mod commands;
pub mod config;
pub mod report;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// A bad flag, file or configuration value (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 2 for usage/config/input errors, 1 for internal failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<baymoth::Error>() {
            use baymoth::Error as E;
            return match e {
                E::NotPositiveDefinite { .. } | E::Generation(_) => 1,
                E::Environment { source, .. } if matches!(**source, E::NotPositiveDefinite { .. }) => 1,
                _ => 2,
            };
        }
    }
    1
}

#[derive(Debug, Parser)]
#[command(name = "baymoth", version, about = "Meta-Bayesian optimization with gated source-task transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit virtual environments from a directory of source-task CSVs.
    BuildEnvs {
        #[arg(long)]
        sources: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a benchmark plan and write CSVs and SVG plots.
    Bench {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ask/tell session for evaluating proposals by hand.
    Session {
        #[arg(long)]
        envs: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        state: PathBuf,
        #[command(subcommand)]
        action: SessionAction,
    },
    /// Per-stage timing of one BayMOTH run.
    Profile {
        #[arg(long)]
        plan: PathBuf,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum SessionAction {
    /// Propose the next point.
    Ask,
    /// Record an observation: coordinates followed by the value.
    Tell {
        #[arg(required = true, num_args = 2.., allow_negative_numbers = true)]
        values: Vec<String>,
    },
    /// Show the history and incumbent.
    Status,
}

pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildEnvs {
            sources,
            out: dest,
            config,
        } => commands::build_envs(&sources, &dest, config.as_deref(), out),
        Command::Bench { plan, out: dir } => commands::bench(&plan, &dir, out).map(|_| ()),
        Command::Session {
            envs,
            config,
            state,
            action,
        } => commands::session(envs.as_deref(), config.as_deref(), &state, &action, out),
        Command::Profile { plan } => commands::profile(&plan, out).map(|_| ()),
    }
}
