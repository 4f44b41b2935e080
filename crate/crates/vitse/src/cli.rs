//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{cmd_attnmap, cmd_eval, cmd_gradcheck, cmd_train};
use crate::error::CliError;
use crate::runconfig::{file_settings, flag_setting, RunConfig, Setting};

#[derive(Debug, Parser)]
#[command(name = "vitse", version, about = "Vision transformer with a squeeze-and-excitation class-token gate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints, metrics.csv and train.log.
    Train(CommonArgs),
    /// Score a checkpoint and write confusion.csv.
    Eval(CommonArgs),
    /// Write per-layer and rollout attention maps for one PGM image.
    Attnmap(CommonArgs),
    /// Compare analytic and finite-difference gradients in double precision.
    Gradcheck(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and augmentation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Enable or disable the squeeze-and-excitation gate.
    #[arg(long, value_enum)]
    pub se: Option<Switch>,
    /// Initialize matching tensors from a checkpoint before training.
    #[arg(long, value_name = "CHECKPOINT")]
    pub init: Option<PathBuf>,
    /// Number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Checkpoint to evaluate or map.
    #[arg(long, value_name = "CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// `synth` or the path of a FER-2013 CSV file.
    #[arg(long, value_name = "SOURCE")]
    pub data: Option<String>,
    /// PGM image for attnmap.
    #[arg(long, value_name = "PGM")]
    pub image: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl CommonArgs {
    /// File settings, then `--set` overrides, then dedicated flags.
    pub fn settings(&self) -> Result<Vec<Setting>, CliError> {
        let mut out = Vec::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            out = file_settings(&text, &path.display().to_string()).map_err(CliError::Config)?;
        }
        let mut flags: Vec<String> = self.overrides.clone();
        let path = |p: &PathBuf| p.display().to_string();
        let dedicated = [
            self.seed.map(|s| format!("rng_seed={s}")),
            self.se.map(|s| format!("se_enabled={}", if s == Switch::On { "on" } else { "off" })),
            self.init.as_ref().map(|p| format!("init={}", path(p))),
            self.epochs.map(|e| format!("epochs={e}")),
            self.checkpoint.as_ref().map(|p| format!("checkpoint={}", path(p))),
            self.data.as_ref().map(|d| format!("data={d}")),
            self.image.as_ref().map(|p| format!("image={}", path(p))),
            self.out.as_ref().map(|p| format!("out_dir={}", path(p))),
        ];
        flags.extend(dedicated.into_iter().flatten());
        for f in &flags {
            out.push(flag_setting(f).map_err(CliError::Config)?);
        }
        Ok(out)
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    let (args, default_preset) = match command {
        Command::Gradcheck(a) => (a, "gradcheck"),
        Command::Train(a) | Command::Eval(a) | Command::Attnmap(a) => (a, "toy"),
    };
    let cfg = RunConfig::resolve(default_preset, &args.settings()?).map_err(CliError::Config)?;
    match command {
        Command::Train(_) => cmd_train(&cfg).map(drop),
        Command::Eval(_) => cmd_eval(&cfg).map(drop),
        Command::Attnmap(_) => cmd_attnmap(&cfg).map(drop),
        Command::Gradcheck(_) => cmd_gradcheck(&cfg).map(drop),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
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
