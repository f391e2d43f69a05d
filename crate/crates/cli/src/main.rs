mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use batstyler::config::RunConfig;
use batstyler::styles::TrainMode;

/// Two-stage pseudo-style synthesis: coarse semantics, ETF-templated style
/// learning, ArcFace head training and diagnostics.
///
/// Any config key can be overridden with `--<dotted.key>=<value>`, for
/// example `--styles.epochs=50` or `--seed=3`.
#[derive(Debug, Parser)]
#[command(name = "batstyler", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster the categories and extract the coarse semantic set.
    ExtractSemantics,
    /// Build and verify the simplex ETF templates.
    BuildEtf {
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Train the pseudo-style embeddings.
    TrainStyles {
        #[arg(long, default_value = "batstyler")]
        mode: TrainMode,
    },
    /// Train the ArcFace linear head on style-content features.
    TrainClassifier,
    /// Evaluate the head on a dataset manifest or on mock images.
    Evaluate {
        /// JSON manifest or a `domain/class/image` directory.
        #[arg(long, conflicts_with = "mock_sigma")]
        manifest: Option<PathBuf>,
        /// Generate mock images with these noise levels, one domain each.
        #[arg(long, value_delimiter = ',')]
        mock_sigma: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        mock_per_class: usize,
    },
    /// SD of batstyler vs baseline styles across synthetic category counts.
    DiversityReport {
        #[arg(long, value_delimiter = ',', default_value = "5,50,200")]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "baseline-sequential")]
        baseline_mode: TrainMode,
    },
    /// SD and SC of the baseline losses across lambda values.
    CompareBaselines {
        #[arg(long, value_delimiter = ',', default_value = "0.1,1.0")]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "baseline-parallel")]
        baseline_mode: TrainMode,
    },
    /// Stage-one wall clock for parallel and sequential training.
    TimingBench {
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "batstyler,baseline-sequential"
        )]
        modes: Vec<TrainMode>,
    },
}

/// Splits `--key=value` config overrides from the clap arguments.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let tree = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let roots: Vec<String> = tree
        .as_object()
        .map(|o| o.keys().cloned().collect())
        .unwrap_or_default();
    args.into_iter().partition(|a| {
        let Some(rest) = a.strip_prefix("--") else {
            return true;
        };
        let Some((key, _)) = rest.split_once('=') else {
            return true;
        };
        let root = key.split('.').next().unwrap_or_default();
        !roots.iter().any(|r| r == root)
    })
}

fn run(cli: Cli, overrides: Vec<String>) -> Result<()> {
    let ctx = commands::Context::load(cli.common.config.as_deref(), cli.common.out, &overrides)?;
    match cli.command {
        Command::ExtractSemantics => commands::extract_semantics(&ctx),
        Command::BuildEtf { tolerance } => commands::build_etf(&ctx, tolerance),
        Command::TrainStyles { mode } => commands::train_styles(&ctx, mode),
        Command::TrainClassifier => commands::train_classifier(&ctx),
        Command::Evaluate {
            manifest,
            mock_sigma,
            mock_per_class,
        } => commands::evaluate(&ctx, manifest.as_deref(), &mock_sigma, mock_per_class),
        Command::DiversityReport {
            counts,
            groups,
            seeds,
            baseline_mode,
        } => commands::diversity_report(&ctx, &counts, groups, seeds, baseline_mode),
        Command::CompareBaselines {
            lambdas,
            seeds,
            baseline_mode,
        } => commands::compare_baselines(&ctx, &lambdas, seeds, baseline_mode),
        Command::TimingBench { repeats, modes } => commands::timing_bench(&ctx, repeats, &modes),
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::code_for(&err))
        }
    }
}
