use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quadmatch::pipeline::{self, Manifest, PipelineConfig, Stage};

/// Pair-of-pairs matching study: two-stage matching, multiple imputation,
/// pooled difference-in-differences and sensitivity analysis.
#[derive(Debug, Parser)]
#[command(name = "quadmatch", version)]
struct Cli {
    /// JSON pipeline configuration; defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known ground truth.
    Synth,
    /// Filter records and aggregate clusters.
    Ingest,
    /// Ingest, then match early and late clusters within each country.
    Stage1,
    /// Match pairs into pairs of pairs and report balance.
    Stage2,
    /// Fit the imputation model and draw the completed datasets.
    Impute,
    /// Fit the working model on every completed dataset and pool.
    Analyze,
    /// Robustness values for an omitted confounder.
    Sensitivity,
    /// Run every stage in order.
    Pipeline,
    /// Print the default configuration as JSON.
    DefaultConfig,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_json_file(path).map_err(|e| format!("config: {e}"))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn print_file(path: &Path) {
    if let Ok(text) = fs::read_to_string(path) {
        print!("{text}");
    }
}

fn run(cli: &Cli) -> Result<(), String> {
    let cfg = load_config(cli)?;
    let stages: &[Stage] = match cli.command {
        Command::DefaultConfig => {
            let json = serde_json::to_string_pretty(&PipelineConfig::default()).map_err(|e| e.to_string())?;
            println!("{json}");
            return Ok(());
        }
        Command::Pipeline => {
            let manifest = pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?;
            report(&cfg, &manifest, true, true);
            return Ok(());
        }
        Command::Synth => &[Stage::Synth],
        Command::Ingest => &[Stage::Ingest],
        Command::Stage1 => &[Stage::Ingest, Stage::Stage1],
        Command::Stage2 => &[Stage::Stage2],
        Command::Impute => &[Stage::Impute],
        Command::Analyze => &[Stage::Analyze],
        Command::Sensitivity => &[Stage::Sensitivity],
    };
    let mut manifest = None;
    for &stage in stages {
        manifest = Some(pipeline::run_stage(&cfg, stage).map_err(|e| e.to_string())?);
    }
    let manifest = manifest.expect("at least one stage");
    let last = *stages.last().expect("at least one stage");
    report(&cfg, &manifest, last == Stage::Analyze, last == Stage::Sensitivity);
    Ok(())
}

fn report(cfg: &PipelineConfig, manifest: &Manifest, pooled: bool, sensitivity: bool) {
    let out = &cfg.out_dir;
    if pooled {
        print_file(&out.join(pipeline::POOLED_TXT));
    }
    if sensitivity {
        print_file(&out.join(pipeline::SENSITIVITY_TXT));
    }
    println!(
        "{} artifacts listed in {}",
        manifest.files.len(),
        out.join(pipeline::MANIFEST).display()
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
