mod cmd;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Hyper-relational link prediction: train, evaluate, ablate and benchmark.
#[derive(Parser)]
#[command(name = "hyt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset and report counts and consistency checks.
    LoadCheck(LoadCheckArgs),
    /// Train a model into an output directory.
    Train(TrainArgs),
    /// Filtered ranking evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Time embedding processing against per-statement qualifier aggregation.
    Bench(BenchArgs),
    /// Train the embedding-processing ablations and the no-aux variant.
    Ablate(AblateArgs),
    /// Parameter counts per named tensor.
    Describe(DescribeArgs),
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// Dataset directory or statement file; relative paths fall back to
    /// $HYT_DATA_ROOT.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// jsonl-statements or tsv-flat; detected from the split files if absent.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Args)]
pub struct LoadCheckArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    EntityLn,
    EntityDropout,
    RelationLn,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory for checkpoints, logs and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Train on main-triplet queries only.
    #[arg(long)]
    pub no_aux: bool,
    /// Disable one embedding transform; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
    /// Continue from the run directory's last.bin.
    #[arg(long)]
    pub resume: bool,
    /// Re-run exactly the configuration recorded in a manifest.
    #[arg(long, conflicts_with_all = ["config", "set", "resume"])]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Breakdown {
    Qualifiers,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Adds per-qualifier-count rows to the table.
    #[arg(long, value_enum)]
    pub breakdown: Option<Breakdown>,
    /// optimistic, pessimistic or mean.
    #[arg(long, default_value = "mean")]
    pub tie_policy: String,
    /// Also rank qualifier-entity queries (reported separately).
    #[arg(long)]
    pub include_aux: bool,
    /// Where to append the JSON record; defaults to eval.jsonl beside the
    /// checkpoint.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Source graph for the Z and d sweeps; random graphs otherwise.
    #[command(flatten)]
    pub data: DataArgs,
    /// axis=v1,v2,... with axis one of z, d, n; repeatable.
    #[arg(long)]
    pub sweep: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Simulated graph-encoder layers.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// product, sum or circular-correlation.
    #[arg(long, default_value = "product")]
    pub composition: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Split the comparison table reports.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Args)]
pub struct DescribeArgs {
    /// Describe a saved model.
    #[arg(long, conflicts_with_all = ["data", "entities"])]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Vocabulary sizes when no dataset is given.
    #[arg(long, requires = "relations")]
    pub entities: Option<usize>,
    #[arg(long)]
    pub relations: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::LoadCheck(a) => cmd::load_check(a),
        Command::Train(a) => cmd::train(a),
        Command::Eval(a) => cmd::eval(a),
        Command::Bench(a) => cmd::bench(a),
        Command::Ablate(a) => cmd::ablate(a),
        Command::Describe(a) => cmd::describe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(cmd::exit_code(&e))
        }
    }
}
