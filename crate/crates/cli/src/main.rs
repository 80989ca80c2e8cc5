mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "oetharvest", version, about = "Planning and simulation toolkit for optoelectronic microrobot harvesting")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for artifacts (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Omit timestamps from SVG outputs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic environment and report its free space.
    Generate(commands::GenerateArgs),
    /// Render an environment as a grayscale microscope image.
    Render(commands::RenderArgs),
    /// Detect microrobots, microspheres and debris in an image.
    Detect(commands::DetectArgs),
    /// Build a camera-to-projector map from dot observations.
    Calibrate(commands::CalibrateArgs),
    /// Plan collision-free paths for a set of robots.
    Plan(commands::PlanArgs),
    /// Run one harvesting scenario end to end.
    Simulate(commands::SimulateArgs),
    /// Run a grid of scenarios and aggregate success rates.
    Sweep(commands::SweepArgs),
    /// Check stored paths for collisions and window violations.
    Verify(commands::VerifyArgs),
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Domain(String),
}

impl Failure {
    fn parts(&self) -> (&'static str, &str, u8) {
        match self {
            Failure::Usage(m) => ("usage", m, 2),
            Failure::Domain(m) => ("domain", m, 1),
        }
    }
}

impl From<oetharvest::Error> for Failure {
    fn from(e: oetharvest::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn error_line(kind: &str, message: &str, code: u8) -> String {
    serde_json::json!({ "error": kind, "message": message, "exit_code": code }).to_string()
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if cli.common.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    std::fs::create_dir_all(&cli.common.out_dir)?;
    let ctx = commands::Context { cfg, out_dir: cli.common.out_dir.clone(), deterministic: cli.common.deterministic };
    match cli.command {
        Command::Generate(a) => commands::generate(&ctx, &a),
        Command::Render(a) => commands::render(&ctx, &a),
        Command::Detect(a) => commands::detect(&ctx, &a),
        Command::Calibrate(a) => commands::calibrate(&ctx, &a),
        Command::Plan(a) => commands::plan(&ctx, &a),
        Command::Simulate(a) => commands::simulate(&ctx, &a),
        Command::Sweep(a) => commands::sweep(&ctx, &a),
        Command::Verify(a) => commands::verify(&ctx, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{}", e.render());
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", error_line("usage", &first, 2));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, message, code) = f.parts();
            eprintln!("{}", error_line(kind, message, code));
            ExitCode::from(code)
        }
    }
}
