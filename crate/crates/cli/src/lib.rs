//! The `labelinst` command line.
//!
//! Exit codes: 0 on success, 1 on error, 2 on a usage error, 3 when a run
//! finished but some classes failed (see the run summary).

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use labelinst_core::baselines::BaselineKind;

use config::{BaselineArgs, CommonArgs, DataArgs, ExpArgs, OutputArgs, Settings, SynthArgs, TemplateArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "labelinst", version, about = "Mine multimodal labeling instructions from annotated image datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded synthetic dataset with its embedding bundle.
    SynthGen(SynthGenArgs),
    /// Build a patch index over all images, or a train/test pair per fold.
    BuildIndex(BuildIndexArgs),
    /// Select instruction pairs per fold and class by greedy AUC gain.
    RunPdc(RunPdcArgs),
    /// Produce instruction sets with one of the baseline methods.
    RunBaseline(RunBaselineArgs),
    /// Score instruction-set files on each fold's held-out images.
    Evaluate(EvaluateArgs),
    /// Run several methods on the same folds and tabulate them.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct SynthGenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub template: TemplateArgs,
}

#[derive(Args, Debug)]
pub struct BuildIndexArgs {
    /// Write `fold{f}_train.idx` and `fold{f}_test.idx` for every fold.
    #[arg(long)]
    pub per_fold: bool,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub template: TemplateArgs,
    #[command(flatten)]
    pub exp: ExpArgs,
}

#[derive(Args, Debug)]
pub struct RunPdcArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub template: TemplateArgs,
    #[command(flatten)]
    pub exp: ExpArgs,
}

#[derive(Args, Debug)]
pub struct RunBaselineArgs {
    #[arg(long)]
    pub kind: BaselineKind,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub template: TemplateArgs,
    #[command(flatten)]
    pub exp: ExpArgs,
    #[command(flatten)]
    pub baseline: BaselineArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Instruction-set files, or directories searched recursively for them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Drop the box side of every entry.
    #[arg(long, conflicts_with = "bboxes_only")]
    pub texts_only: bool,
    /// Drop the word side of every entry.
    #[arg(long)]
    pub bboxes_only: bool,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub template: TemplateArgs,
    #[command(flatten)]
    pub exp: ExpArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub template: TemplateArgs,
    #[command(flatten)]
    pub exp: ExpArgs,
    #[command(flatten)]
    pub baseline: BaselineArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

macro_rules! settings_from {
    ($args:expr; $($group:ident),*) => {
        Settings { $($group: $args.$group.clone(),)* ..Default::default() }
    };
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthGen(_) => "synth-gen",
            Command::BuildIndex(_) => "build-index",
            Command::RunPdc(_) => "run-pdc",
            Command::RunBaseline(_) => "run-baseline",
            Command::Evaluate(_) => "evaluate",
            Command::Compare(_) => "compare",
        }
    }

    /// Options given on the command line, before the config file is read.
    pub fn flags(&self) -> Settings {
        match self {
            Command::SynthGen(a) => settings_from!(a; common, synth, template),
            Command::BuildIndex(a) => settings_from!(a; common, data, template, exp),
            Command::RunPdc(a) => settings_from!(a; common, data, template, exp),
            Command::RunBaseline(a) => settings_from!(a; common, data, template, exp, baseline),
            Command::Evaluate(a) => settings_from!(a; common, data, template, exp, output),
            Command::Compare(a) => settings_from!(a; common, data, template, exp, baseline, output),
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    let settings = cli.command.flags().resolve()?;
    let jobs = settings.common.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    pool.install(|| commands::dispatch(&cli.command, &settings))
}

/// Parses `args` (including the program name) and runs them. Usage
/// errors are printed and reported as [`EXIT_USAGE`].
pub fn run_from_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
