use std::path::PathBuf;
use std::process::ExitCode;

use barrier_filter::survival::FbarMethod;
use barrier_filter_cli::config::{ConfigFile, RunConfig};
use barrier_filter_cli::{CliError, run};
use clap::Parser;

/// Conditional barrier-survival curves of a partially observed diffusion.
#[derive(Debug, Parser)]
#[command(name = "barrier-filter", version)]
struct Args {
    /// Flat TOML file overriding the preset.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base preset: gbm-fig1, ou-fig3, gbm or ou.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Compare the filter against the particle oracle.
    #[arg(long)]
    validate: bool,
    /// Evaluate the post-observation survival by Monte Carlo even when a
    /// closed form exists.
    #[arg(long)]
    force_mc_fbar: bool,
    /// Run delta = 0.1, 0.3, 0.5 on one observation driver.
    #[arg(long)]
    delta_sweep: bool,
    /// Directory for the reusable quantization cache.
    #[arg(long, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    /// CSV of t_k,y_k observations instead of simulating them.
    #[arg(long, value_name = "PATH")]
    observations: Option<PathBuf>,
}

fn resolve(args: Args) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let name = args
        .preset
        .clone()
        .or_else(|| file.preset.clone())
        .ok_or_else(|| CliError::Config("preset: missing (use --preset or a preset key)".into()))?;
    let flags = ConfigFile {
        preset: Some(name.clone()),
        seed: args.seed,
        out_dir: args.out,
        validate: args.validate.then_some(true),
        fbar: args.force_mc_fbar.then_some(FbarMethod::MonteCarlo),
        cache_dir: args.cache_dir,
        observations: args.observations,
        ..Default::default()
    };
    RunConfig::resolve(ConfigFile::preset(&name)?.merge(file).merge(flags))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let sweep = args.delta_sweep;
    let result = resolve(args).and_then(|cfg| run::run(&cfg, sweep));
    match result {
        Ok(results) => {
            print!("{}", run::report(&results));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
