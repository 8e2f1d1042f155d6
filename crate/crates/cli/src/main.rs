use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

mod commands;
mod exit;
mod manifest;

use exit::{CliResult, Exit, EXIT_CODES_HELP};
use manifest::{replay_args, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "modpose", version, about = "Pose inference experiments on 1D crops and symmetric sphere scenes")]
#[command(after_help = EXIT_CODES_HELP, args_override_self = true)]
struct Cli {
    /// Worker threads for parallel stages; outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=256))]
    jobs: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a random 1D function and write a crop dataset.
    #[command(after_help = EXIT_CODES_HELP)]
    Gen1d(Gen1dArgs),
    /// Train one model on a crop dataset.
    #[command(after_help = EXIT_CODES_HELP)]
    Train1d(Train1dArgs),
    /// Train every mode on several seeded datasets and summarize.
    #[command(after_help = EXIT_CODES_HELP)]
    Ablate1d(Ablate1dArgs),
    /// Render posed views of a reference sphere scene.
    #[command(after_help = EXIT_CODES_HELP)]
    Gen3d(Gen3dArgs),
    /// Self-similarity map of a 1D function or a sphere scene.
    #[command(after_help = EXIT_CODES_HELP)]
    Ssm(SsmArgs),
    /// Region of attraction of a map's global minimum.
    #[command(after_help = EXIT_CODES_HELP)]
    Roa(RoaArgs),
    /// Difficulty estimates for replication orders on a sphere scene.
    #[command(after_help = EXIT_CODES_HELP)]
    Difficulty(DifficultyArgs),
    /// Azimuthal gradient descent on a sphere scene's self-similarity.
    #[command(after_help = EXIT_CODES_HELP)]
    Descent(DescentArgs),
    /// Rerun the command recorded in a manifest.
    #[command(after_help = EXIT_CODES_HELP)]
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct Gen1dArgs {
    /// Function seed; crop centers use seed + 1000.
    #[arg(long)]
    pub seed: u64,
    /// Number of crops.
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Train1dArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// full, explicit, l2 or free.
    #[arg(long, default_value = "full")]
    pub mode: String,
    /// Replication order N of the modulo loss.
    #[arg(long, default_value_t = 2)]
    pub n_order: usize,
    #[arg(long, default_value_t = 30_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for checkpoint.bin and report.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Ablate1dArgs {
    /// Dataset seeds: a list `0,1,2` or an inclusive range `0..9`.
    #[arg(long, default_value = "0..9")]
    pub seeds: String,
    /// Modes to train, comma separated.
    #[arg(long, default_value = "full,l2,free,explicit")]
    pub modes: String,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub n_order: usize,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Gen3dArgs {
    /// Symmetry order of the scene (1 to 4).
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 116)]
    pub views: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SsmArgs {
    /// `1d FILE` for a crop dataset's function or `3d K` for a sphere scene.
    #[arg(long, num_args = 2, value_names = ["KIND", "SOURCE"], required = true)]
    pub scene: Vec<String>,
    /// Reference pose `azimuth[,elevation]` in radians.
    #[arg(long = "ref", default_value = "0")]
    pub reference: String,
    /// Grid size `A` (equator) or `A,E`.
    #[arg(long, default_value = "256")]
    pub bins: String,
    /// Quotient the map by this replication order.
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    /// Render resolution for sphere scenes.
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Directory for map.csv, map.pgm and map.pgm.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RoaArgs {
    /// Map CSV written by `ssm`.
    #[arg(long)]
    pub map: PathBuf,
    /// Directory for region.pbm and region.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DifficultyArgs {
    #[arg(long)]
    pub k: usize,
    /// Replication orders, comma separated.
    #[arg(long, default_value = "1,2,3,4")]
    pub n_orders: String,
    #[arg(long, default_value_t = 64)]
    pub refs: usize,
    /// Equator azimuth bins; must be divisible by every order.
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Seed for the reference poses.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DescentArgs {
    #[arg(long)]
    pub k: usize,
    /// Reference azimuth, radians.
    #[arg(long = "ref")]
    pub reference: f64,
    /// Starting azimuth, radians.
    #[arg(long)]
    pub start: f64,
    /// Gradient step size.
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Grid whose spacing sets the difference step and largest move.
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    /// Order of the relation used to judge convergence.
    #[arg(long, default_value_t = 1)]
    pub n_order: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Gen1d(_) => "gen1d",
            Self::Train1d(_) => "train1d",
            Self::Ablate1d(_) => "ablate1d",
            Self::Gen3d(_) => "gen3d",
            Self::Ssm(_) => "ssm",
            Self::Roa(_) => "roa",
            Self::Difficulty(_) => "difficulty",
            Self::Descent(_) => "descent",
            Self::Replay(_) => "replay",
        }
    }
}

fn run(cli: Cli, args: Vec<String>) -> CliResult<()> {
    let jobs = cli.jobs as usize;
    let start = Instant::now();
    let mut manifest = RunManifest::new(cli.command.name(), args, format!("{:?} jobs={jobs}", cli.command));
    let manifest_path = match cli.command {
        Command::Gen1d(a) => commands::gen1d(&a, &mut manifest)?,
        Command::Train1d(a) => commands::train1d(&a, &mut manifest)?,
        Command::Ablate1d(a) => commands::ablate1d(&a, jobs, &mut manifest)?,
        Command::Gen3d(a) => commands::gen3d(&a, &mut manifest)?,
        Command::Ssm(a) => commands::ssm(&a, jobs, &mut manifest)?,
        Command::Roa(a) => commands::roa(&a, &mut manifest)?,
        Command::Difficulty(a) => commands::difficulty(&a, jobs, &mut manifest)?,
        Command::Descent(a) => commands::descent(&a, &mut manifest)?,
        Command::Replay(a) => {
            let mut recorded = replay_args(&a.manifest)?;
            // the recorded worker count does not affect outputs
            recorded.extend(["--jobs".to_string(), jobs.to_string()]);
            let cli = parse(&recorded)?;
            return run(cli, recorded);
        }
    };
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.save(&manifest_path)
}

fn parse(args: &[String]) -> CliResult<Cli> {
    let argv = std::iter::once("modpose".to_string()).chain(args.iter().cloned());
    Cli::try_parse_from(argv).map_err(|e| exit::Failure { code: Exit::Usage, error: anyhow::anyhow!("{e}") })
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Usage as u8 } else { 0 });
        }
    };
    match run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
