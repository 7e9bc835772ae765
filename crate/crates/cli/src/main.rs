use std::path::PathBuf;
use std::process::ExitCode;

use agedeath_cli::{exit_code, load_config, run, Command, Overrides, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agedeath", version, about = "Fit, forecast and evaluate age-at-death distribution models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate a synthetic panel from known dynamics.
    Simulate,
    /// Run the sampler and store the posterior draws.
    Fit,
    /// Forecast latent states and age-at-death distributions.
    Forecast,
    /// Life-table functionals with credible bands.
    Functionals,
    /// Rolling-window backtest against observed data and competitors.
    Evaluate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Fit => Command::Fit,
            Cmd::Forecast => Command::Forecast,
            Cmd::Functionals => Command::Functionals,
            Cmd::Evaluate => Command::Evaluate,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let flags = Overrides { seed: cli.seed, out: cli.out, threads: cli.threads };
    let result = cli
        .config
        .as_deref()
        .map_or_else(|| Ok(RunConfig::default()), load_config)
        .and_then(|c| c.resolve(&flags))
        .and_then(|config| {
            if let Some(n) = config.threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| agedeath::Error::Config(format!("thread pool: {e}")))?;
            }
            run(cli.command.into(), &config)
        });
    match result {
        Ok(m) => {
            for f in &m.outputs {
                println!("{}", f.path);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
