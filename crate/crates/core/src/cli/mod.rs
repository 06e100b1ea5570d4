//! Command-line orchestration: scene generation, the staged pipeline and
//! report rendering.

pub mod config;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{sub_seed, RunConfig};
pub use pipeline::{run_pipeline, PipelineOutcome, Stage, StageError};
pub use report::{build_report, ReportOutputs};

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "hydrocube", version, about = "Water-body analysis over satellite datacubes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scene containers.
    Synth(CommonArgs),
    /// Run despeckle, segment, forecast and hydro stages.
    Pipeline {
        #[command(flatten)]
        common: CommonArgs,
        /// Run a single stage.
        #[arg(long, value_enum)]
        stage: Option<Stage>,
    },
    /// Render figures and summaries for a completed run.
    Report(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace existing scene containers.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(Error),
    #[error(transparent)]
    Stage(#[from] StageError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage(_) => 3,
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(&args.config).map_err(CliError::Config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Generates `config.synth.scenes` containers. Existing `scene_*`
/// directories are only replaced with `force`.
pub fn cmd_synth(config: &RunConfig, force: bool) -> Result<Vec<PathBuf>, CliError> {
    if config.synth.scenes == 0 {
        return Err(CliError::Config(Error::Config("nothing to generate: synth.scenes = 0".into())));
    }
    let dir = &config.scenes_dir;
    if dir.exists() {
        let entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| CliError::Config(Error::Io(e)))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        if !entries.is_empty() && !force {
            return Err(CliError::Config(Error::Config(format!(
                "{} is not empty; pass --force to replace its scenes",
                dir.display()
            ))));
        }
        for p in entries {
            let is_scene = p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("scene_"));
            if is_scene && p.is_dir() {
                pipeline::in_stage("synth", std::fs::remove_dir_all(&p).map_err(Error::Io))?;
            }
        }
    }
    Ok(pipeline::in_stage("synth", pipeline::generate_scenes(config))?)
}

pub fn cmd_report(config: &RunConfig) -> Result<ReportOutputs, CliError> {
    Ok(pipeline::in_stage("report", build_report(&config.output_dir))?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => {
            let config = load_config(&args)?;
            let dirs = cmd_synth(&config, args.force)?;
            println!("wrote {} scenes to {}", dirs.len(), config.scenes_dir.display());
        }
        Command::Pipeline { common, stage } => {
            let config = load_config(&common)?;
            let outcome = run_pipeline(&config, stage)?;
            let names: Vec<&str> = outcome.stages.iter().map(|s| s.name()).collect();
            println!("ran {} into {}", names.join(", "), config.output_dir.display());
        }
        Command::Report(args) => {
            let config = load_config(&args)?;
            let outputs = cmd_report(&config)?;
            println!(
                "wrote {} figures and {}",
                outputs.figures.len(),
                outputs.summary.display()
            );
        }
    }
    Ok(())
}

/// Entry point for the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
