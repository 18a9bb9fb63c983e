use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use modalform::decomposition::Band;
use modalform::error::{Error, Result};
use modalform::par::Execution;
use modalform::pipeline::{run_subcommand, FeatureName, PipelineConfig, Subcommand};
use modalform::plan::TourMethod;

/// Modal decomposition of form defects: probing plans, signatures, interpolation.
#[derive(Debug, Parser)]
#[command(name = "modalform", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,

    /// JSON pipeline configuration; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,

    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Measured point cloud (CSV).
    #[arg(long)]
    measurement: Option<PathBuf>,
    /// Stored basis (JSON).
    #[arg(long)]
    basis_file: Option<PathBuf>,
    /// Stored signature (JSON).
    #[arg(long)]
    signature: Option<PathBuf>,
    /// Stored plan (JSON).
    #[arg(long)]
    plan_file: Option<PathBuf>,

    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    enrich: Option<bool>,
    #[arg(long)]
    form_cutoff: Option<usize>,
    /// Probed node count.
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    tour: Option<Tour>,
    /// Probing noise of the simulator, mm.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Trials per sweep cell.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum)]
    band: Option<BandArg>,
    #[arg(long)]
    feature_name: Option<String>,
    /// Run the sweep on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Plan,
    Basis,
    Decompose,
    Reconstruct,
    Interpolate,
    Sweep,
    Simulate,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Plan => Subcommand::Plan,
            Command::Basis => Subcommand::Basis,
            Command::Decompose => Subcommand::Decompose,
            Command::Reconstruct => Subcommand::Reconstruct,
            Command::Interpolate => Subcommand::Interpolate,
            Command::Sweep => Subcommand::Sweep,
            Command::Simulate => Subcommand::Simulate,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Tour {
    AsGiven,
    NearestNeighbor,
    #[value(name = "nn-plus-2opt")]
    NnPlus2opt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BandArg {
    PositionOrientation,
    Size,
    Form,
    Waviness,
}

impl Cli {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.output_dir {
            cfg.paths.output_dir = v.clone();
        }
        if let Some(v) = &self.measurement {
            cfg.paths.measurement = Some(v.clone());
        }
        if let Some(v) = &self.basis_file {
            cfg.paths.basis = Some(v.clone());
        }
        if let Some(v) = &self.signature {
            cfg.paths.signature = Some(v.clone());
        }
        if let Some(v) = &self.plan_file {
            cfg.paths.plan = Some(v.clone());
        }
        if let Some(v) = self.modes {
            cfg.basis.modes = v;
        }
        if let Some(v) = self.enrich {
            cfg.basis.enrich = v;
        }
        if let Some(v) = self.form_cutoff {
            cfg.basis.form_cutoff = v;
        }
        if let Some(v) = self.q {
            cfg.sampling.q = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.sampling.seed = v;
        }
        if let Some(v) = self.tour {
            cfg.sampling.tour = match v {
                Tour::AsGiven => TourMethod::AsGiven,
                Tour::NearestNeighbor => TourMethod::NearestNeighbor,
                Tour::NnPlus2opt => TourMethod::NnPlus2opt,
            };
        }
        if let Some(v) = self.noise_sigma {
            cfg.simulate.noise_sigma = v;
        }
        if let Some(v) = self.trials {
            cfg.sweep.trials = v;
        }
        if let Some(v) = self.band {
            cfg.reconstruct.band = match v {
                BandArg::PositionOrientation => Band::PositionOrientation,
                BandArg::Size => Band::Size,
                BandArg::Form => Band::Form,
                BandArg::Waviness => Band::Waviness,
            };
        }
        if let Some(v) = &self.feature_name {
            cfg.feature_name = FeatureName(v.clone());
        }
        if self.sequential {
            cfg.sweep.execution = Execution::Sequential;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.config()?;
    for path in run_subcommand(cli.command.into(), &cfg)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MODALFORM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn one_line(e: &Error) -> String {
    e.to_string().replace('\n', " ")
}
