//! `spine`: build, cost, search, ablate, execute and export scale-permuted
//! backbones.
//!
//! Exit codes: 0 success, 1 validation failure (invalid graph, golden miss,
//! failed write), 2 usage error (bad flags, unknown model).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "spine", version, about = "Scale-permuted backbone toolkit")]
pub struct Cli {
    /// Output format; `dot` applies to export and ablate only.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
    Dot,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load or build a model, validate it and print a summary.
    Build(BuildArgs),
    /// Multiply-add and parameter report.
    Cost(CostArgs),
    /// Sample architectures from the search space.
    Search(SearchArgs),
    /// Fixed-ordering templates and graph damage.
    Ablate(AblateArgs),
    /// Run the reference executor on a random input.
    Exec(ExecArgs),
    /// Serialize a model as canonical JSON or DOT.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Zoo name (e.g. spinenet49) or path to a spec file.
    #[arg(long)]
    pub model: String,

    /// `key=value`; `head.*` keys edit the head, `alpha`, `alpha_base` and
    /// `output_dim` edit the graph.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also infer shapes at this input resolution.
    #[arg(long)]
    pub resolution: Option<u32>,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub resolution: Option<u32>,
    /// retinanet, maskrcnn, classifier, final_feature_classifier or none.
    #[arg(long)]
    pub head: Option<String>,
    /// Check against a published table (e.g. `table2` or `table2_row`).
    #[arg(long)]
    pub golden: Option<String>,
    /// Further models to compare against the first.
    #[arg(long, value_name = "MODEL")]
    pub compare: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ControllerArg {
    Random,
    Evolution,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    /// Search-space JSON; defaults to the SpineNet-49 block budget.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "random")]
    pub controller: ControllerArg,
    #[arg(long)]
    pub budget: usize,
    /// builtin:neg-flops[@RES], builtin:graph-score or exec:CMD.
    #[arg(long, default_value = "builtin:neg-flops")]
    pub reward: String,
    /// Write the history as JSON lines.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 64)]
    pub population: usize,
    #[arg(long, default_value_t = 8)]
    pub tournament: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DamageArg {
    Short,
    Long,
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Ordering,
    Level,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TemplateArg {
    Hourglass,
    Fish,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Dot,
    Json,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Model to damage (zoo name or spec path).
    #[arg(long, conflicts_with = "template", required_unless_present = "template")]
    pub model: Option<String>,
    /// Sample connections (with --seed) over a fixed block ordering.
    #[arg(long)]
    pub template: Option<TemplateArg>,
    #[arg(long, value_enum)]
    pub damage: Option<DamageArg>,
    /// How short and long range are measured.
    #[arg(long, value_enum, default_value = "ordering")]
    pub metric: MetricArg,
    /// Print the resulting graph instead of a summary.
    #[arg(long, value_enum)]
    pub export: Option<ExportFormat>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Resolution of the cost comparison in the summary.
    #[arg(long)]
    pub resolution: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Swish,
}

#[derive(Args, Debug)]
pub struct ExecArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 128)]
    pub input_res: u32,
    /// Print every block's output shape and compare with shape inference.
    #[arg(long)]
    pub dump_shapes: bool,
    /// Write P3..P7 as raw little-endian tensors (`P{i}.bin`) into this directory.
    #[arg(long)]
    pub dump_raw: Option<PathBuf>,
    /// Run the classification head and report probabilities.
    #[arg(long)]
    pub classify: bool,
    /// Execute the search-time proxy of the model.
    #[arg(long)]
    pub proxy: bool,
    #[arg(long, value_enum, default_value = "relu")]
    pub activation: ActivationArg,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Include resampling plans in JSON output (ignored on import).
    #[arg(long)]
    pub with_plans: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    // Warnings (failed rewards, pruned blocks) by default; RUST_LOG for more.
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(commands::EXIT_USAGE),
            };
        }
    };
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
