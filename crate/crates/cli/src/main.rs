//! `stylegallery` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime
//! failure. With `--error-json` the failure is also written to stderr as
//! `{"error": {"kind", "message", "exit_code"}}`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stylegallery_core::{BackendKind, Error as CoreError};

#[derive(Debug, Parser)]
#[command(name = "stylegallery", version, about = "Semantic-aware style transfer from an image gallery")]
pub struct Cli {
    /// TOML config file; its keys override the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Backend to run on (overrides the config file and STYLEGALLERY_BACKEND).
    #[arg(long, global = true)]
    pub backend: Option<BackendKind>,

    /// Report failures as JSON on stderr.
    #[arg(long, global = true)]
    pub error_json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster one image into semantic regions, or score the annotated suite.
    Cluster(ClusterArgs),
    /// Cluster content and styles and match their regions.
    Match(MatchArgs),
    /// Run the full transfer.
    Transfer(MatchArgs),
    /// Score a stylized image, or sweep a knob over content/style pairs.
    Eval(EvalArgs),
    /// Start the HTTP job service.
    Serve(ServeArgs),
    /// Write the annotated fixture suite as PNGs.
    Fixtures(FixturesArgs),
}

/// Pipeline knobs shared by the stage commands.
#[derive(Debug, Args, Default, Clone)]
pub struct Knobs {
    /// Weight of the global content loss.
    #[arg(long)]
    pub lambda_c: Option<f64>,
    /// Upper limit on clusters per image.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Cosine similarity at which clusters merge.
    #[arg(long)]
    pub merge_threshold: Option<f64>,
    /// Latent optimization steps.
    #[arg(long)]
    pub opt_steps: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Seed for backend and sampling noise.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long, required_unless_present = "suite", conflicts_with = "suite")]
    pub image: Option<PathBuf>,
    /// Score the built-in annotated suite instead of one image.
    #[arg(long)]
    pub suite: bool,
    /// With --suite: merge thresholds to compare (default: the configured one).
    #[arg(long, value_delimiter = ',', requires = "suite")]
    pub thresholds: Vec<f64>,
    /// External label map to start from instead of k-means.
    #[arg(long, conflicts_with = "suite")]
    pub base_mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub knobs: Knobs,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub styles: Vec<PathBuf>,
    /// JSON list of `{content_cluster, style_image, style_cluster}` overrides.
    #[arg(long)]
    pub overrides: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub knobs: Knobs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "sweep", conflicts_with = "sweep")]
    pub stylized: Option<PathBuf>,
    /// Reference style image (single evaluation).
    #[arg(long, required_unless_present = "sweep", conflicts_with = "sweep")]
    pub style: Option<PathBuf>,
    /// Externally computed FID, folded into ArtFID.
    #[arg(long, requires = "lpips")]
    pub fid: Option<f64>,
    /// Externally computed LPIPS, folded into ArtFID.
    #[arg(long, requires = "fid")]
    pub lpips: Option<f64>,
    /// `key=v1,v2,...`, e.g. `lambda_c=0.22,0.26,0.29`.
    #[arg(long, requires_all = ["content", "styles"])]
    pub sweep: Option<String>,
    /// Content images of the sweep; every content is paired with every style.
    #[arg(long, num_args = 1..)]
    pub content: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub styles: Vec<PathBuf>,
    /// Pairs processed in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub knobs: Knobs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Defaults to STYLEGALLERY_PORT, then 8080.
    #[arg(long)]
    pub port: Option<u16>,
    /// Defaults to STYLEGALLERY_DATA_DIR, then ./stylegallery-data.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Resolution { .. }
            | CoreError::LayerRange { .. }
            | CoreError::Shape(_)
            | CoreError::Argument(_)
            | CoreError::Validation(_)
            | CoreError::Format(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn report(err: &CliError, json: bool) {
    if json {
        let body = serde_json::json!({
            "error": { "kind": err.kind(), "message": err.message(), "exit_code": err.code() }
        });
        eprintln!("{body}");
    } else {
        eprintln!("error: {}", err.message());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let json = std::env::args().any(|a| a == "--error-json");
            let msg = e.render().to_string();
            if json {
                report(&CliError::Validation(msg.trim().to_string()), true);
            } else {
                let _ = e.print();
            }
            return ExitCode::from(1);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e, cli.error_json);
            ExitCode::from(e.code())
        }
    }
}
