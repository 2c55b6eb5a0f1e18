//! `sublayer`: trains small encoder-decoder transformers and measures how
//! much each sub-layer matters.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use sublayer_core::importance::{IsometryAt, DEFAULT_ISOMETRY_PROBES, DEFAULT_PROBES};
use sublayer_core::report::SweepParam;
use sublayer_core::surgery::{Selection, Strategy};
use sublayer_core::{EvalSet, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "sublayer", version, about = "Sub-layer importance experiments on desk-scale transformers")]
pub struct Cli {
    /// Worker threads for independent evaluations.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Analysis {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// `valid`, `test`, or a `src<TAB>tgt` file of token ids.
    #[arg(long, default_value = "test")]
    pub eval_set: EvalSet,
    /// Beam width; 1 decodes greedily.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub beam: u16,
}

fn strategy_parser() -> impl TypedValueParser<Value = Strategy> {
    PossibleValuesParser::new(["greedy", "static"]).map(|s| s.parse().expect("listed value"))
}

fn selection_parser() -> impl TypedValueParser<Value = Selection> {
    PossibleValuesParser::new(["contribution", "criticality"]).map(|s| s.parse().expect("listed value"))
}

fn at_parser() -> impl TypedValueParser<Value = IsometryAt> {
    PossibleValuesParser::new(["init", "final"]).map(|s| s.parse().expect("listed value"))
}

fn param_parser() -> impl TypedValueParser<Value = SweepParam> {
    PossibleValuesParser::new(["dropout", "data-size", "seed", "depth", "width"]).map(|s| s.parse().expect("listed value"))
}

fn config_help() -> String {
    let defaults = RunConfig::default().to_toml().expect("default config serializes");
    format!("Configuration keys and their defaults (omitted keys take these values):\n\n{}", defaults)
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model from a TOML config into a run directory.
    #[command(after_long_help = config_help())]
    Train {
        /// TOML config; omitted keys take their defaults (see --help).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration.
    Defaults,
    /// Contribution scores: clipped BLEU drop when each sub-layer is masked.
    Contribution(Analysis),
    /// Criticality scores: smallest rewinding coefficient that keeps BLEU.
    Criticality {
        #[command(flatten)]
        analysis: Analysis,
        /// Ascending interpolation grid from 0 to 1 [default: 21 points, step 0.05].
        #[arg(long, value_delimiter = ',')]
        alpha_grid: Option<Vec<f64>>,
        /// BLEU tolerance [default: max(0.5, 1% of baseline)].
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// PWCCA similarity of each sub-layer's output to its stack's output.
    Pwcca {
        #[command(flatten)]
        analysis: Analysis,
        #[arg(long, default_value_t = DEFAULT_PROBES)]
        probes: usize,
    },
    /// Mean singular value of each residual block's input-output Jacobian.
    Isometry {
        #[command(flatten)]
        analysis: Analysis,
        #[arg(long, default_value = "init", value_parser = at_parser())]
        at: IsometryAt,
        #[arg(long, default_value_t = DEFAULT_ISOMETRY_PROBES)]
        probes: usize,
    },
    /// Contribution scores at every saved epoch.
    Dynamics(Analysis),
    /// Mask several sub-layers together without retraining.
    GroupAblate {
        #[command(flatten)]
        analysis: Analysis,
        /// Largest number of masked sub-layers.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "greedy", value_parser = strategy_parser())]
        strategy: Strategy,
    },
    /// Retrain without the least important sub-layers and compare.
    Prune {
        #[command(flatten)]
        analysis: Analysis,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        #[arg(long, default_value = "contribution", value_parser = selection_parser())]
        by: Selection,
    },
    /// Rewind the least important sub-layers to initialization and fine-tune.
    Rewind {
        #[command(flatten)]
        analysis: Analysis,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        /// Fine-tuning steps per arm [default: a fifth of the run's steps].
        #[arg(long)]
        extra_steps: Option<u64>,
        #[arg(long, default_value = "contribution", value_parser = selection_parser())]
        by: Selection,
    },
    /// Train one run per value of a hyper-parameter and compare contribution grids.
    Sweep {
        #[arg(long, value_parser = param_parser())]
        param: SweepParam,
        /// Comma-separated values [default: dropout 0.0,0.1,0.3,0.5; seed 1,66,99].
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
        /// Base TOML config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        eval_set: EvalSet,
    },
    /// Re-render every grid of a run to CSV and SVG and summarize them.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
