//! `hydrocal` command-line interface.

mod commands;
mod files;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use commands::{
    CalibrateArgs, CrossvalArgs, ParseArgs, PreprocessArgs, SimulateArgs, StatsArgs, SynthArgs,
};

/// Environment variable that overrides `--out` for every subcommand.
pub const OUT_DIR_ENV: &str = "HYDROCAL_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "hydrocal", version, about = "Pipe-roughness calibration from sparse pressure data")]
struct Cli {
    /// Maximum number of worker threads for solver evaluations.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Cli2,
}

#[derive(Debug, Subcommand)]
enum Cli2 {
    #[command(flatten)]
    Run(Command),
    /// Re-run the command recorded in a manifest and compare outputs.
    Verify {
        /// Output directory holding `manifest.json`, or the manifest itself.
        path: PathBuf,
    },
}

/// Subcommands that write an output directory with a manifest.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Read an INP file and report warnings and diagnostics.
    Parse(ParseArgs),
    /// Generate a synthetic district with scenarios and reference pressures.
    Synth(SynthArgs),
    /// Reduce sensor traces to steady-state scenarios.
    Preprocess(PreprocessArgs),
    /// Solve every scenario of a bundle and write junction pressures.
    Simulate(SimulateArgs),
    /// Calibrate pipe roughness on the scenarios of a bundle.
    Calibrate(CalibrateArgs),
    /// Leave-one-scenario-out cross-validation.
    Crossval(CrossvalArgs),
    /// z report from DH and HH error tables.
    Stats(StatsArgs),
}

impl Command {
    fn out(&self) -> &Path {
        match self {
            Command::Parse(a) => &a.out,
            Command::Synth(a) => &a.out,
            Command::Preprocess(a) => &a.out,
            Command::Simulate(a) => &a.out,
            Command::Calibrate(a) => &a.out,
            Command::Crossval(a) => &a.out,
            Command::Stats(a) => &a.out,
        }
    }

    fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::Parse(a) => a.out = out,
            Command::Synth(a) => a.out = out,
            Command::Preprocess(a) => a.out = out,
            Command::Simulate(a) => a.out = out,
            Command::Calibrate(a) => a.out = out,
            Command::Crossval(a) => a.out = out,
            Command::Stats(a) => a.out = out,
        }
    }

    /// Make every path absolute so the manifest can be replayed from anywhere.
    fn absolutize(&mut self) -> Result<(), CliError> {
        let abs = |p: &mut PathBuf| -> Result<(), CliError> {
            *p = std::path::absolute(&*p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            Ok(())
        };
        let opt = |p: &mut Option<PathBuf>| -> Result<(), CliError> {
            if let Some(p) = p {
                *p = std::path::absolute(&*p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            }
            Ok(())
        };
        match self {
            Command::Parse(a) => abs(&mut a.input)?,
            Command::Synth(a) => opt(&mut a.config)?,
            Command::Preprocess(a) => {
                abs(&mut a.network)?;
                abs(&mut a.traces)?;
                abs(&mut a.demands)?;
                opt(&mut a.trials)?;
                opt(&mut a.flows)?;
                opt(&mut a.config)?;
            }
            Command::Simulate(a) => {
                abs(&mut a.bundle)?;
                opt(&mut a.roughness)?;
            }
            Command::Calibrate(a) => {
                abs(&mut a.bundle)?;
                opt(&mut a.config)?;
            }
            Command::Crossval(a) => {
                abs(&mut a.bundle)?;
                opt(&mut a.config)?;
            }
            Command::Stats(a) => {
                abs(&mut a.dh)?;
                abs(&mut a.hh)?;
            }
        }
        let mut out = self.out().to_path_buf();
        abs(&mut out)?;
        self.set_out(out);
        Ok(())
    }

    fn execute(&self) -> Result<commands::Run, CliError> {
        match self {
            Command::Parse(a) => commands::parse(a),
            Command::Synth(a) => commands::synth(a),
            Command::Preprocess(a) => commands::preprocess(a),
            Command::Simulate(a) => commands::simulate(a),
            Command::Calibrate(a) => commands::calibrate(a),
            Command::Crossval(a) => commands::crossval(a),
            Command::Stats(a) => commands::stats(a),
        }
    }
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub const VALIDATION: u8 = 2;
    pub const USAGE: u8 = 64;
    pub const INTERNAL: u8 = 70;

    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: Self::USAGE,
            error: anyhow::anyhow!(message.into()),
        }
    }

    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        CliError {
            code: Self::VALIDATION,
            error: error.into(),
        }
    }

    pub fn internal(error: impl Into<anyhow::Error>) -> Self {
        CliError {
            code: Self::INTERNAL,
            error: error.into(),
        }
    }
}

impl From<hydrocal::Error> for CliError {
    fn from(e: hydrocal::Error) -> Self {
        use hydrocal::Error as E;
        fn internal(e: &E) -> bool {
            match e {
                E::Singular(_)
                | E::NotConverged { .. }
                | E::RetryBudget { .. }
                | E::Divergence { .. }
                | E::Optimizer(_)
                | E::Statistics(_) => true,
                E::Stage { source, .. } => internal(source),
                _ => false,
            }
        }
        let code = if internal(&e) { Self::INTERNAL } else { Self::VALIDATION };
        CliError { code, error: e.into() }
    }
}

/// Run `command`, writing outputs and the manifest into its output directory.
pub fn run_command(mut command: Command) -> Result<u8, CliError> {
    command.absolutize()?;
    let out = command.out().to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| CliError::internal(anyhow::anyhow!("{}: {e}", out.display())))?;
    let run = command.execute()?;
    manifest::write(&command, &run)?;
    Ok(run.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { CliError::USAGE } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(CliError::USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(CliError::INTERNAL);
        }
    }
    let result = match cli.command {
        Cli2::Run(mut command) => {
            if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
                command.set_out(PathBuf::from(dir));
            }
            run_command(command)
        }
        Cli2::Verify { path } => manifest::verify(&path),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
