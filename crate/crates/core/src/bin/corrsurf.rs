use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use corrsurf::config::RunConfig;
use corrsurf::pipeline;
use corrsurf::{Error, Result};

#[derive(Parser)]
#[command(name = "corrsurf", version, about = "Implied correlation surfaces, factor models and dispersion backtests")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the synthetic market seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic market into the input directory.
    Generate,
    /// Build implied correlation surfaces and fit the factor model.
    Fit,
    /// Forecast the correlation surface past the last fitted date.
    Forecast {
        /// Model written by `fit`; defaults to the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the dispersion backtest.
    Backtest {
        /// Model written by `fit`; defaults to the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Use the realized correlation as the forecast.
        #[arg(long)]
        oracle_forecast: bool,
    },
    /// Re-render summary tables from an existing ledger.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
    }
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be positive".into()));
    }
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    match &cli.command {
        Command::Generate => {
            let dir = pipeline::cmd_generate(cfg)?;
            println!("wrote synthetic market to {}", dir.display());
        }
        Command::Fit => {
            let fit = pipeline::cmd_fit(cfg)?;
            println!(
                "fitted {} factors on {} days, explained variance {:.4}; outputs in {}",
                fit.model.l(),
                fit.model.dates.len(),
                fit.model.explained_variance,
                cfg.output_dir().display()
            );
        }
        Command::Forecast { model } => {
            let rows = pipeline::cmd_forecast(cfg, model.as_deref())?;
            println!(
                "wrote {} forecast points to {}",
                rows.len(),
                cfg.output_dir().join(pipeline::FORECAST_FILE).display()
            );
        }
        Command::Backtest { model, oracle_forecast } => {
            let ledgers = pipeline::cmd_backtest(cfg, model.as_deref(), *oracle_forecast)?;
            for l in &ledgers {
                if l.rows.is_empty() {
                    eprintln!("warning: no complete trades for tenor {}; omitted from the summary", l.tenor);
                } else {
                    println!("tau {}: {} trades", l.tenor, l.rows.len());
                }
            }
            println!("ledger and summary in {}", cfg.output_dir().display());
        }
        Command::Report => print!("{}", pipeline::cmd_report(cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run(&cli, &cfg)),
        None => run(&cli, &cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
