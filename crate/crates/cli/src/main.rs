//! `ibmvs`: scene generation, depth inference, cloud fusion, evaluation and
//! network-weight utilities.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
//! violation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ibmvs::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn core_code(e: &ibmvs::Error) -> u8 {
    match e {
        ibmvs::Error::Invariant(_) => 3,
        ibmvs::Error::Config(_) | ibmvs::Error::InvalidRange { .. } => 1,
        ibmvs::Error::Oracle { inner, .. } => core_code(inner),
        _ => 2,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => core_code(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ibmvs", version, about = "Iterative binary-decision multi-view stereo")]
struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene directory from a JSON spec or a preset.
    Gen(GenArgs),
    /// Infer a depth map for every view of a scene directory.
    Infer(InferArgs),
    /// Fuse per-view depth maps into a PLY point cloud.
    Fuse(FuseArgs),
    /// Compare a predicted cloud against ground truth.
    Eval(EvalArgs),
    /// Network weight utilities.
    #[command(subcommand)]
    Weights(WeightsCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Plane,
    Occlusion,
    Textured,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scene spec (JSON).
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in scene instead of a spec file.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Image size for presets.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Source views for the occlusion and textured presets.
    #[arg(long, default_value_t = 4)]
    pub sources: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Spacing of the ground-truth surface samples; 0 disables the cloud.
    #[arg(long)]
    pub gt_spacing: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    /// Ground-truth depth.
    Gt,
    /// Photoconsistency (ZNCC) probes.
    Zncc,
    /// Decision network; needs --weights.
    Neural,
    /// Constant 0.5, which leaves the hypothesis at the midpoint.
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightKind {
    Uniform,
    Entropy,
    /// Weight network; needs --weights.
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DepthFormat {
    Pfm,
    Raw,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Scene directory.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output directory for depth maps.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Near depth bound; defaults to the scene manifest.
    #[arg(long)]
    pub dmin: Option<f64>,
    /// Far depth bound; defaults to the scene manifest.
    #[arg(long)]
    pub dmax: Option<f64>,
    /// Iterations (default 8).
    #[arg(short = 'T', long = "iterations")]
    pub iterations: Option<usize>,
    /// Source views per reference, nearest camera centres first (default 4).
    #[arg(short = 'S', long = "sources")]
    pub sources: Option<usize>,
    /// Decision oracle (default zncc).
    #[arg(long)]
    pub oracle: Option<OracleKind>,
    /// Network weight file for the neural oracles.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Fusion weighting (default entropy).
    #[arg(long)]
    pub weight_oracle: Option<WeightKind>,
    /// Dump per-iteration masks, weights and hypotheses.
    #[arg(long)]
    pub trace: bool,
    /// Worker threads; 0 uses all cores (default 0).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Only these reference views (default: all).
    #[arg(long, value_delimiter = ',')]
    pub reference: Vec<usize>,
    /// Depth output format (default pfm).
    #[arg(long)]
    pub format: Option<DepthFormat>,
    /// ZNCC window size (default 7).
    #[arg(long)]
    pub zncc_window: Option<usize>,
    /// ZNCC probe offset as a fraction of the step (default 0.5).
    #[arg(long)]
    pub zncc_rho: Option<f64>,
    /// ZNCC sigmoid sharpness (default 10).
    #[arg(long)]
    pub zncc_gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Directory of NNNN.pfm depth maps; defaults to the scene's ground truth.
    #[arg(long)]
    pub depths: Option<PathBuf>,
    /// Output PLY.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Consistent views required (default 3).
    #[arg(long)]
    pub sg: Option<usize>,
    /// Reprojection threshold in pixels (default 0.5).
    #[arg(long)]
    pub g: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Percentage,
    Distance,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Distance threshold in scene units.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Metric convention (default percentage).
    #[arg(long)]
    pub mode: Option<ModeArg>,
    /// Write the key=value report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Append a CSV row (header written for new files).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum WeightsCommand {
    /// Print the expected tensor list.
    Manifest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded random weight file.
    Random {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Uniform range half-width.
        #[arg(long, default_value_t = 0.01)]
        scale: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a weight file against the manifest.
    Validate { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = config::FileConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Gen(a) => commands::gen(a, cfg.gen),
        Command::Infer(a) => commands::infer(a, cfg.infer),
        Command::Fuse(a) => commands::fuse(a, cfg.fuse),
        Command::Eval(a) => commands::eval(a, cfg.eval),
        Command::Weights(c) => commands::weights(c),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Core(ibmvs::Error::Invariant("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(ibmvs::Error::Scene("x".into())).exit_code(), 2);
        let wrapped = ibmvs::Error::Oracle {
            iteration: 0,
            source_index: 1,
            inner: Box::new(ibmvs::Error::Invariant("x".into())),
        };
        assert_eq!(CliError::Core(wrapped).exit_code(), 3);
    }

    #[test]
    fn short_flags_parse() {
        let cli = Cli::try_parse_from(["ibmvs", "infer", "--scene", "s", "-T", "3", "-S", "2", "--oracle", "gt"]).unwrap();
        let Command::Infer(a) = cli.command else { panic!() };
        assert_eq!((a.iterations, a.sources, a.oracle), (Some(3), Some(2), Some(OracleKind::Gt)));
    }
}
