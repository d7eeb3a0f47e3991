mod certify;
mod lab;
mod report;
mod util;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

const TRANSFORM_HELP: &str = "\
Transforms are written KIND:LO:HI, for example rotation:-10:10 (degrees),
scale:0.7:1.3, brightness:-0.4:0.4, contrast:-0.4:0.4 (factor 1+γ),
blur:0:9 (σ, the squared kernel radius), blur-radius:0:3 (uniform in √σ),
awgn:0:0.03, or translation:RHO (displacement up to RHO·width pixels).
Compose with compose(rotation:-10:10,brightness:-0.4:0.4). Reference
parameter spaces are available as preset:NAME, e.g. preset:cifar10-rotation.";

#[derive(Debug, Parser)]
#[command(
    name = "cccert",
    version,
    about = "Probabilistic robustness certification of black-box classifiers with Chernoff-Cramer bounds",
    after_help = TRANSFORM_HELP
)]
struct Cli {
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify a dataset under a parametric transformation.
    #[command(after_help = TRANSFORM_HELP)]
    Certify(Box<certify::CertifyArgs>),
    /// Y^up tables, Berry-Esseen curves and FFT densities.
    Lab(lab::LabArgs),
    /// Merge certification reports into comparison curves.
    Report(report::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .target(env_logger::Target::Stderr)
        .init();

    let result = match cli.command {
        Command::Certify(args) => certify::run(*args),
        Command::Lab(args) => lab::run(args),
        Command::Report(args) => report::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<util::UsageError>() {
            Some(u) => {
                eprintln!("error: {}\n\nFor more information, try '--help'.", u.0);
                ExitCode::from(2)
            }
            None => {
                log::error!("{e:#}");
                ExitCode::FAILURE
            }
        },
    }
}
