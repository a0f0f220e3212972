use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use coropve_cli::commands;
use coropve_cli::pipeline::SweepParam;
use coropve_cli::{CliError, Result};
use coropve_core::graphcut::PveMode;

/// Partial-volume-aware coronary lumen segmentation and FFR simulation.
#[derive(Debug, Parser)]
#[command(name = "coropve", version, about)]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "COROPVE_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic phantoms.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Fit the radius model to the HU reduction of blurred cylinders.
    Calibrate {
        /// Phantom case directory (or a directory of them) supplying HU levels.
        #[arg(long)]
        phantom_dir: PathBuf,
        /// Gaussian PSF sigma, mm.
        #[arg(long)]
        psf_sigma: f64,
        #[arg(long)]
        out: PathBuf,
        /// Calibration diameters, mm.
        #[arg(long, value_delimiter = ',')]
        diameters: Option<Vec<f64>>,
    },
    /// Training ray databases.
    #[command(subcommand)]
    Raydb(RaydbCommand),
    /// Segment one centerline branch of a volume.
    Segment {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        centerline: PathBuf,
        /// Branch index within the centerline tree.
        #[arg(long, default_value_t = 0)]
        branch: usize,
        #[arg(long)]
        raydb: PathBuf,
        #[arg(long)]
        pve_model: PathBuf,
        /// Partial-volume override: on or off.
        #[arg(long)]
        pve: PveMode,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate flow through segmented surfaces and report FFR.
    Flow {
        /// Directory of `*.surface.json`, one per branch.
        #[arg(long)]
        surfaces: PathBuf,
        /// Centerline tree giving the branch topology.
        #[arg(long)]
        topology: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluation against ground truth.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Segmentation quality as one parameter varies.
    Sweep {
        /// lambda or k.
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Case suite (training/ and test/ phantom specs).
        #[arg(long)]
        cases: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// End-to-end runs.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Pipeline configuration JSON (defaults when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum PhantomCommand {
    /// Generate a phantom case directory from a spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum RaydbCommand {
    /// Build a ray database from phantom case directories.
    Build {
        #[arg(long)]
        phantom_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Dice and surface distances of a surface against a phantom case.
    Seg {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Diagnostic statistics, ROC curves and DeLong's test for paired scores.
    Roc {
        /// CSV with case_id, score_pve_on, score_pve_off, invasive_label.
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum PipelineCommand {
    /// Train, segment every test case in both modes, simulate and evaluate.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| CliError::usage(format!("--jobs: {e}")))?;
    match cli.command {
        Command::Phantom(PhantomCommand::Gen { spec, seed, out }) => commands::phantom_gen(&spec, seed, &out),
        Command::Calibrate { phantom_dir, psf_sigma, out, diameters } => {
            commands::calibrate(&phantom_dir, psf_sigma, &out, diameters)
        }
        Command::Raydb(RaydbCommand::Build { phantom_dir, config, out }) => {
            commands::raydb_build(&phantom_dir, config.config.as_deref(), &out)
        }
        Command::Segment { volume, centerline, branch, raydb, pve_model, pve, config, out } => {
            commands::segment(&volume, &centerline, branch, &raydb, &pve_model, pve, config.config.as_deref(), &out)
        }
        Command::Flow { surfaces, topology, config, out } => {
            commands::flow(&surfaces, &topology, config.config.as_deref(), &out)
        }
        Command::Eval(EvalCommand::Seg { pred, truth, out }) => commands::eval_seg(&pred, &truth, &out),
        Command::Eval(EvalCommand::Roc { cases, threshold, out, plot }) => {
            commands::eval_roc(&cases, threshold, &out, plot.as_deref())
        }
        Command::Sweep { param, values, cases, config, out } => {
            commands::sweep(param, &values, &cases, config.config.as_deref(), &out)
        }
        Command::Pipeline(PipelineCommand::Run { config, cases, out }) => {
            commands::pipeline_run(config.config.as_deref(), &cases, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
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
