mod commands;
mod error;
mod settings;

use clap::error::ErrorKind;
use clap::Parser;

use crate::commands::Context;
use crate::error::CliError;
use crate::settings::{resolve, resolve_global, Cli, Command, ConfigFile};

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let global = resolve_global(&config, &cli)?;
    if let Some(n) = global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let ctx = Context { config, global };
    let name = cli.command.name();
    let cfg = &ctx.config;
    match &cli.command {
        Command::TrainEncoder(a) => commands::train(&ctx, &resolve(cfg, name, a)?),
        Command::EstimateSigma(a) => commands::estimate(&ctx, &resolve(cfg, name, a)?),
        Command::Score(a) => commands::score(&ctx, &resolve(cfg, name, a)?),
        Command::ShuffleEval(a) => commands::shuffle_eval(&ctx, &resolve(cfg, name, a)?),
        Command::SigmaSweep(a) => commands::sweep(&ctx, &resolve(cfg, name, a)?),
        Command::Classify(a) => commands::classify(&ctx, &resolve(cfg, name, a)?),
        Command::DetectLlm(a) => commands::detect(&ctx, &resolve(cfg, name, a)?),
        Command::Simulate(a) => commands::simulate(&ctx, &resolve(cfg, name, a)?),
        Command::Trajectories(a) => commands::trajectories(&ctx, &resolve(cfg, name, a)?),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::Usage(e.kind().to_string());
            eprintln!("{}", err.report());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("{}", err.report());
        std::process::exit(err.exit_code());
    }
}
