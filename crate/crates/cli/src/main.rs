//! `lookalike`: encode app icons, search for visually similar apps, and
//! evaluate embeddings against labelled groups.

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lookalike::metrics::{MetricKind, Norm};
use lookalike::Error;

#[derive(Parser)]
#[command(
    name = "lookalike",
    version,
    about = "Content and style icon embeddings for lookalike app detection"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct GlobalArgs {
    /// Pipeline configuration (JSON). Missing keys take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Projection seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Backbone: `stub`, `stub:<seed>`, `stub-zero`, or a graph file.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Network input size; overrides the config.
    #[arg(long, global = true)]
    pub input_size: Option<u32>,
    /// Style projection dimension; overrides the config.
    #[arg(long, global = true)]
    pub projection_dim: Option<usize>,
    /// Worker threads (0 = one per logical CPU).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Args, Clone, Default)]
pub struct MetricArgs {
    /// content, style or combined
    #[arg(long)]
    pub metric: Option<MetricKind>,
    /// l2 or cos
    #[arg(long)]
    pub norm: Option<Norm>,
    /// Style weight for the combined metric.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args, Clone)]
pub struct IndexArgs {
    /// Embedding store written by `encode`.
    #[arg(long)]
    pub store: PathBuf,
    /// Corpus manifest (JSON lines) the store was encoded from.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Encode every icon of a manifest into an embedding store.
    Encode {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also extract SIFT descriptors into this cache file.
        #[arg(long)]
        sift_cache: Option<PathBuf>,
    },
    /// Propose labelled groups from manifest metadata.
    Groups {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and validate an index; prints a summary.
    Index {
        #[command(flatten)]
        index: IndexArgs,
        #[command(flatten)]
        metric: MetricArgs,
    },
    /// Top-k similar apps for one target, as JSON lines.
    Query {
        #[command(flatten)]
        index: IndexArgs,
        /// App id to query; must be in the manifest.
        #[arg(long)]
        target: String,
        /// Number of results.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        metric: MetricArgs,
        /// Drop results whose normalized distance exceeds this (cosine metrics).
        #[arg(long)]
        threshold: Option<f64>,
        /// Skip apps from the target's developer.
        #[arg(long)]
        exclude_developer: bool,
        /// Keep only apps in the target's category.
        #[arg(long)]
        same_category: bool,
        /// Keep the target itself in the results.
        #[arg(long)]
        include_self: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrieval rates over labelled groups for every metric and k.
    Eval {
        #[command(flatten)]
        index: IndexArgs,
        /// Groups file written by `groups`.
        #[arg(long)]
        groups: PathBuf,
        /// Cutoffs to report, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20")]
        k: Vec<usize>,
        /// Style weights for the combined cosine metric.
        #[arg(long, value_delimiter = ',', default_value = "100,10,6,2,1,0.5,0.1")]
        alphas: Vec<f64>,
        /// Style weights for the combined L2 metric.
        #[arg(long, value_delimiter = ',', default_value = "1e6,1e7,1e8,1e9")]
        l2_alphas: Vec<f64>,
        /// SIFT descriptor cache from `encode --sift-cache`; adds a SIFT row.
        #[arg(long)]
        sift_cache: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the rendered text table here.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Retrieval rate against distance threshold, and its knee.
    Knee {
        #[command(flatten)]
        index: IndexArgs,
        /// Groups file written by `groups`.
        #[arg(long)]
        groups: PathBuf,
        /// Neighbours per query when building the curve.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Counterfeit candidates for a list of target apps.
    Report {
        #[command(flatten)]
        index: IndexArgs,
        /// One target app id per line.
        #[arg(long)]
        targets: PathBuf,
        /// Candidates per target before thresholding.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        metric: MetricArgs,
        /// Normalized distance threshold.
        #[arg(long, conflicts_with = "knee", required_unless_present = "knee")]
        threshold: Option<f64>,
        /// Take the threshold from a `knee` output file.
        #[arg(long)]
        knee: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a graph file against its reference activations.
    VerifyModel {
        /// Directory of reference tensors.
        #[arg(long)]
        refpack: PathBuf,
    },
}

fn report_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.render().to_string().trim());
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    match commands::run(&cli.global, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

pub(crate) type Result<T> = std::result::Result<T, Error>;
