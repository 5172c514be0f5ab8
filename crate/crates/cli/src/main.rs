//! `emagpie`: simulate ptychography datasets, reconstruct them with eMAGPIE
//! or rPIE, compare convergence logs and certify the surrogate properties.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emagpie::runner::Algorithm;

#[derive(Debug, Parser)]
#[command(name = "emagpie", version, about = "Blind ptychography with multigrid majorization-minimization")]
#[command(after_help = "Exit codes: 0 success, 1 internal error, 2 configuration error, 3 data error, \
                        4 certification failure.\nOutputs go to --out, else $EMAGPIE_OUT_DIR, else ./emagpie-out.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a synthetic dataset: object, zone plate probe, raster scan, noisy intensities.
    Simulate(SimulateArgs),
    /// Run a solver on a dataset until a stopping rule fires.
    Reconstruct(ReconstructArgs),
    /// Tabulate two or more convergence logs side by side.
    Compare(CompareArgs),
    /// Check majorization, gradient agreement and per-region descent.
    Certify(CertifyArgs),
    /// Generate a zone plate probe only.
    FzpProbe(FzpArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file with keys named like the long flags; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [default: $EMAGPIE_OUT_DIR or ./emagpie-out].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Object side in pixels [default: 128].
    #[arg(long)]
    n: Option<usize>,
    /// Probe side in pixels [default: 32].
    #[arg(long)]
    m: Option<usize>,
    /// Overlap ratio between neighbouring scan positions [default: 0.5].
    #[arg(long)]
    overlap: Option<f64>,
    /// Poisson noise level in percent; 0 keeps the clean intensities [default: 0].
    #[arg(long)]
    noise: Option<f64>,
    /// Seed for every random stage [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Grayscale image for the object magnitude [default: built-in test pattern].
    #[arg(long, value_name = "PNG", requires = "object_phase")]
    object_mag: Option<PathBuf>,
    /// Grayscale image for the object phase, mapped to [0, pi/2].
    #[arg(long, value_name = "PNG", requires = "object_mag")]
    object_phase: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory written by `simulate`.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    /// Solver: emagpie or rpie [default: emagpie].
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Object-step regularization alpha_Q in (0, 1] [default: 0.05].
    #[arg(long)]
    alpha: Option<f64>,
    /// Coarse levels for eMAGPIE; 0 gives the plain joint update [default: 1].
    #[arg(long)]
    levels: Option<usize>,
    /// Seed for the initial guess and sweep order [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Moving-average window w [default: 5].
    #[arg(long)]
    window: Option<usize>,
    /// Sweeps without moving-average improvement before stopping, p [default: 10].
    #[arg(long)]
    patience: Option<usize>,
    /// Sweep cap [default: 500].
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stop once the residual falls below this multiple of the noise floor [default: 0.9].
    #[arg(long)]
    floor_factor: Option<f64>,
    /// Disable the noise-floor rule even when the dataset carries the truth.
    #[arg(long)]
    no_noise_floor: bool,
    /// Container holding a `probe` array to start from; required when the dataset has no truth.
    #[arg(long, value_name = "DIR")]
    probe: Option<PathBuf>,
    /// Certify every sweep; exits with 4 if any check fails.
    #[arg(long)]
    certify: bool,
    /// Log elapsed_s as 0 so repeated runs give identical files.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Log CSV files or run directories containing log.csv.
    #[arg(required = true, num_args = 2.., value_name = "LOG")]
    logs: Vec<PathBuf>,
    /// Row labels, one per log [default: the path].
    #[arg(long = "label", value_name = "NAME")]
    labels: Vec<String>,
    /// Write gnuplot-ready data files into this directory.
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Treat runs on different datasets as a data error instead of a warning.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    /// Reconstruction to certify at [default: the seeded initial guess].
    #[arg(long, value_name = "DIR")]
    reconstruction: Option<PathBuf>,
    /// Random test points for the majorization check [default: 50].
    #[arg(long)]
    points: Option<usize>,
    /// Test point distance relative to the iterate norm [default: 0.1].
    #[arg(long)]
    scale: Option<f64>,
    /// Certified sweeps to run after the static checks [default: 3].
    #[arg(long)]
    sweeps: Option<usize>,
    /// Solver for the certified sweeps [default: emagpie].
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Object-step regularization alpha_Q [default: 0.05].
    #[arg(long)]
    alpha: Option<f64>,
    /// Coarse levels for the certified sweeps [default: 0].
    #[arg(long)]
    levels: Option<usize>,
    /// Seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FzpArgs {
    #[command(flatten)]
    common: Common,
    /// Probe side in pixels [default: 128].
    #[arg(long)]
    m: Option<usize>,
    /// synthetic (scaled to the grid) or velo (Velociprobe optics) [default: synthetic].
    #[arg(long)]
    preset: Option<String>,
    /// Pixel size in metres, velo preset only [default: 2e-6].
    #[arg(long)]
    pixel_size: Option<f64>,
    /// Wavelength in metres, velo preset only [default: 1.2398e-10].
    #[arg(long)]
    wavelength: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Compare(a) => commands::compare(a),
        Command::Certify(a) => commands::certify(a),
        Command::FzpProbe(a) => commands::fzp_probe(a),
    };
    match result {
        Ok(()) => ExitCode::from(exit::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
