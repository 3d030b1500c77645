use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dexsynth::contact::ProbabilityMode;
use dexsynth::metrics::CdMode;
use dexsynth::pipeline::{Pipeline, PipelineConfig, RunManifest};

/// Retargets human hand keypoint trajectories onto a robot hand, extracts
/// hand-object contacts and refines the grasp.
///
/// Log verbosity follows RUST_LOG (default `info`).
#[derive(Parser, Debug)]
#[command(name = "dexsynth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Retarget the human trajectory to robot joint angles.
    Retarget(Opts),
    /// Detect contacts on the retargeted sequence.
    Contact(Opts),
    /// Refine the retargeted sequence towards the detected contacts.
    Refine(Opts),
    /// Score the retargeted and refined sequences.
    Metrics(Opts),
    /// Run every stage in order.
    RunAll(Opts),
    /// Check the configuration and inputs without computing anything.
    Validate(Opts),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CdModeArg {
    Literal,
    Bidirectional,
}

#[derive(Args, Debug)]
struct Opts {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel stages.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    cd_mode: Option<CdModeArg>,
    /// Use the signed component sum in the contact likelihood instead of the
    /// acceleration norm.
    #[arg(long)]
    strict_literal: bool,
    /// Accept upstream files produced under a different configuration.
    #[arg(long)]
    force: bool,
}

impl Opts {
    fn pipeline(&self) -> Result<Pipeline> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.output {
            cfg.paths.output = out.clone();
        }
        if let Some(mode) = self.cd_mode {
            cfg.metrics.cd_mode = match mode {
                CdModeArg::Literal => CdMode::Literal,
                CdModeArg::Bidirectional => CdMode::Bidirectional,
            };
        }
        if self.strict_literal {
            cfg.contact.probability_mode = ProbabilityMode::StrictLiteral;
        }
        Ok(Pipeline::open(cfg)?.with_force(self.force))
    }
}

fn report(manifest: &RunManifest) {
    for stage in &manifest.stages {
        log::info!("{} took {:.2} s", stage.stage, stage.seconds);
    }
    for out in &manifest.outputs {
        println!("{}  {}", out.sha256, out.path.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let (Command::Retarget(opts)
    | Command::Contact(opts)
    | Command::Refine(opts)
    | Command::Metrics(opts)
    | Command::RunAll(opts)
    | Command::Validate(opts)) = &cli.command;
    if let Some(jobs) = opts.jobs {
        anyhow::ensure!(jobs > 0, dexsynth::Error::Config("--jobs must be at least 1".into()));
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let pipeline = opts.pipeline()?;
    let manifest = match &cli.command {
        Command::Retarget(_) => pipeline.cmd_retarget()?,
        Command::Contact(_) => pipeline.cmd_contact()?,
        Command::Refine(_) => pipeline.cmd_refine()?,
        Command::Metrics(_) => pipeline.cmd_metrics()?,
        Command::RunAll(_) => pipeline.cmd_run_all()?,
        Command::Validate(_) => {
            println!(
                "ok: {} frames, chain {} with {} DoF, {} mesh triangles",
                pipeline.human.len(),
                pipeline.chain.name(),
                pipeline.chain.dof(),
                pipeline.mesh.triangles().len()
            );
            return Ok(());
        }
    };
    report(&manifest);
    Ok(())
}

/// The error chain, skipping causes whose text the outer message already
/// includes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<dexsynth::Error>() {
        Some(e) if !e.is_validation() => 3,
        Some(_) => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dexsynth::Error;

    #[test]
    fn exit_codes() {
        let compute = anyhow::Error::new(Error::NonFiniteEnergy { term: "e_pen" });
        assert_eq!(exit_code(&compute), 3);
        let staged = anyhow::Error::new(Error::Stage {
            stage: "refine",
            frame: 4,
            source: Box::new(Error::NonFiniteEnergy { term: "e_pen" }),
        });
        assert_eq!(exit_code(&staged), 3);
        assert_eq!(exit_code(&anyhow::Error::new(Error::Config("x".into()))), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("worker pool")), 3);
    }
}
