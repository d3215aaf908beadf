//! `mcdecode` command-line entry point.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcdecode::context::IrrelevantStrategy;
use mcdecode::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "mcdecode", version, about = "Multi-input contrastive decoding for retrieval-augmented QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build or query a BM25 index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Answer one question and optionally show the per-step trace.
    Ask(AskArgs),
    /// Batch evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Knowledge-conflict set construction.
    #[command(subcommand)]
    Conflict(ConflictCommand),
    /// Align EM columns of two or more reports.
    Compare(CompareArgs),
    /// Serve a local backend over the logits wire protocol.
    ServeMock(ServeArgs),
}

#[derive(Subcommand, Debug)]
enum IndexCommand {
    Build(IndexBuildArgs),
    Search(IndexSearchArgs),
}

#[derive(Args, Debug)]
struct IndexBuildArgs {
    /// JSONL corpus, one {"id","title","text"} per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Args, Debug)]
struct IndexSearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(short = 'k', default_value_t = 10)]
    k: usize,
}

/// Options shared by `ask` and `eval run`. Unset flags fall back to the
/// config file, then to built-in defaults.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `scripted:<file>`, `ngram:<corpus>`, or `remote:<url>`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    irrelevant: Option<IrrelevantStrategy>,
    /// JSONL few-shot demonstrations.
    #[arg(long)]
    shots: Option<PathBuf>,
    #[arg(long)]
    num_shots: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Word-level n-gram backend with this order.
    #[arg(long)]
    ngram_order: Option<usize>,
}

#[derive(Args, Debug)]
struct AskArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated strategies.
    #[arg(long)]
    strategy: Option<String>,
    /// Relevant context to use instead of retrieval.
    #[arg(long)]
    context: Option<String>,
    /// Irrelevant context to use instead of the configured selection.
    #[arg(long)]
    irrelevant_context: Option<String>,
    /// Print one row per generated token.
    #[arg(long)]
    trace: bool,
    question: String,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    Run(EvalRunArgs),
}

#[derive(Args, Debug)]
struct EvalRunArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated strategies.
    #[arg(long)]
    strategies: Option<String>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    traces_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Exit non-zero when any item errored.
    #[arg(long)]
    strict: bool,
    /// Drop errored items from the EM denominator.
    #[arg(long)]
    exclude_errored: bool,
}

#[derive(Subcommand, Debug)]
enum ConflictCommand {
    Generate(ConflictArgs),
}

#[derive(Args, Debug)]
struct ConflictArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// One entity per line; defaults to the dataset's own answer entities.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Report files; every strategy in each file becomes a row.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Scripted backend definition.
    #[arg(long, conflicts_with = "backend")]
    script: Option<PathBuf>,
    /// Any local backend spec.
    #[arg(long)]
    backend: Option<String>,
    /// Index whose TF-IDF embedder backs /v1/embed.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:0")]
    bind: SocketAddr,
}

impl RunArgs {
    /// Defaults, then the config file, then environment endpoints, then flags.
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        config.apply_env();
        if let Some(v) = &self.backend {
            config.backend.spec = v.clone();
        }
        if let Some(v) = self.ngram_order {
            config.backend.ngram.order = v;
            config.backend.ngram.granularity = mcdecode::backend::Granularity::Word;
        }
        if let Some(v) = &self.index {
            config.index = Some(v.clone());
        }
        if let Some(v) = self.alpha {
            config.alpha = Some(v);
        }
        if let Some(v) = self.irrelevant {
            config.irrelevant = v;
        }
        if let Some(v) = &self.shots {
            config.shots = Some(v.clone());
        }
        if let Some(v) = self.num_shots {
            config.num_shots = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.max_new_tokens {
            config.limits.max_new_tokens = v;
        }
        if config.backend.spec.is_empty() {
            anyhow::bail!(mcdecode::Error::Config("no backend given (--backend or [backend] spec)".into()));
        }
        Ok(config)
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// Exit code for a failure, keyed by the core error category.
fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    match err.downcast_ref::<mcdecode::Error>().map(|e| e.category()) {
        Some("io") => (3, "io"),
        Some("backend") => (4, "backend"),
        Some("retrieval") => (5, "retrieval"),
        Some("context") => (5, "context"),
        Some("decoding") => (6, "decoding"),
        Some("prompting") => (6, "prompting"),
        Some("evaluation") => (7, "evaluation"),
        _ => (1, "error"),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            let (code, category) = exit_code(&err);
            eprintln!("error[{category}]: {err:#}");
            ExitCode::from(code)
        }
    }
}
