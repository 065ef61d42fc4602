use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use aim_core::experiment::{self, Experiment, ExperimentSpec, PAPER_DEFAULTS};
use aim_core::AimError;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "aim", version, about = "Multi-subband noise-illumination imaging toolkit")]
struct Cli {
    /// Experiment spec (JSON), or "paper-defaults".
    #[arg(long, global = true, default_value = PAPER_DEFAULTS)]
    spec: String,

    /// Output directory.
    #[arg(long, global = true, env = "AIM_OUT_DIR", default_value = "aim-out")]
    out: PathBuf,

    /// Overrides the spec seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Per-subband and additive sampling functions with unique counts.
    Sampling,
    /// Point spread functions and their lobe statistics.
    Psf,
    /// Reconstruct the spec's scene per subband and additively.
    Image,
    /// Solve calibration weights from a simulated beacon.
    Calibrate,
    /// SSIM table over the reference scenes.
    Table,
}

fn exit_code(e: &AimError) -> u8 {
    match e {
        AimError::Validation(_) | AimError::Configuration(_) | AimError::Json(_) => 2,
        AimError::Io(_) | AimError::Format { .. } => 4,
        _ => 3,
    }
}

fn load(cli: &Cli) -> aim_core::Result<Experiment> {
    let (mut spec, base) = ExperimentSpec::read(&cli.spec)?;
    if cli.seed.is_some() {
        spec.seed = cli.seed;
    }
    spec.resolve(&base)
}

fn run(cli: &Cli) -> aim_core::Result<serde_json::Value> {
    let exp = load(cli)?;
    let out = &cli.out;
    match cli.command {
        Command::Sampling => experiment::cmd_sampling(&exp, out),
        Command::Psf => experiment::cmd_psf(&exp, out),
        Command::Image => experiment::cmd_image(&exp, out),
        Command::Calibrate => experiment::cmd_calibrate(&exp, out),
        Command::Table => experiment::cmd_table(&exp, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            // a closed pipe on stdout is not a failure of the command
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
