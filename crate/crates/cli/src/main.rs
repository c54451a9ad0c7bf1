mod eval;
mod matching;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Failure classes mapped to exit codes: 2 for bad input, 1 for everything else.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_input(path: &std::path::Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn write_output(path: Option<&std::path::Path>, bytes: &[u8]) -> CliResult<()> {
    use std::io::Write;
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Runtime(format!("cannot write to stdout: {e}")))
        }
    }
}

#[derive(Parser)]
#[command(name = "colmatch", version, about = "Schema matching with a learned matcher ensemble")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank target attributes for every source attribute.
    Match(MatchArgs),
    /// Precision@k of ranked predictions against a ground truth.
    Eval(EvalArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Write synthetic matching tasks with planted ground truth.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Args, Debug, Default)]
pub struct MatchArgs {
    /// Source table (CSV/TSV with a header row).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target schema (JSON) or table.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// JSON file holding any of these options; flags win on conflict.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub name_threshold: Option<f64>,
    #[arg(long)]
    pub value_threshold: Option<f64>,
    /// Starting matcher weights, e.g. `name_fuzzy=1.5,value_jaccard=0.5`.
    #[arg(long)]
    pub initial_weights: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub auto_accept_easy: Option<bool>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Write only accepted and easy-accepted pairs.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub accepted_only: Option<bool>,
    /// Also write each matcher's own top-k.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub individual: Option<bool>,
    /// JSON array (or JSON lines) of session actions applied before output.
    #[arg(long)]
    pub actions: Option<PathBuf>,
    /// Report failed actions and continue instead of stopping.
    #[arg(long)]
    pub keep_going: bool,
    /// Score on the calling thread only.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ranked predictions: `match` output or any CSV with
    /// source_attribute/target_attribute columns.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Ground truth pairs (source, target).
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: EvalFormat,
    /// Also write the JSON table to this file.
    #[arg(long)]
    pub json_output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalFormat {
    Text,
    Json,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, env = "COLMATCH_ADDRESS", default_value = "127.0.0.1:8080")]
    pub address: String,
    /// Directory holding persisted sessions; in-memory only when omitted.
    #[arg(long, env = "COLMATCH_SESSION_DIR")]
    pub session_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub target_attributes: usize,
    #[arg(long, default_value_t = 20)]
    pub source_attributes: usize,
    /// Write the ten-task benchmark suite instead of a single task.
    #[arg(long)]
    pub suite: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn synth(args: SynthArgs) -> CliResult<()> {
    use colmatch_core::synth::{benchmark_suite, generate_task, SynthConfig};
    let io = |e: std::io::Error| CliError::Runtime(format!("cannot write {}: {e}", args.out.display()));
    if args.suite {
        for task in benchmark_suite(args.seed) {
            task.write_to(&args.out.join(&task.name)).map_err(io)?;
        }
    } else {
        if args.source_attributes == 0 || args.target_attributes == 0 {
            return Err(CliError::Input("attribute counts must be positive".into()));
        }
        generate_task(&SynthConfig::new(args.seed, args.target_attributes, args.source_attributes))
            .write_to(&args.out)
            .map_err(io)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Match(args) => matching::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Serve(args) => serve::run(args),
        Command::Synth(args) => synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("colmatch: {e}");
            ExitCode::from(e.code())
        }
    }
}
