//! `nl2api`: build the retrieval index, generate single queries, run the
//! benchmark, render reports and serve the HTTP API.

mod ask;
mod eval;
mod failure;
mod index;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nl2api_core::config::Config;
use nl2api_core::evaluator::{AggregateOptions, Averaging, ValidQueryMeasure};
use nl2api_core::executor::Mode;

use failure::Failure;

const DEFAULT_CONFIG: &str = "nl2api.toml";

#[derive(Debug, Parser)]
#[command(name = "nl2api", version, about = "Natural-language to Land Matrix API queries")]
struct Cli {
    /// Configuration file. Defaults apply when ./nl2api.toml is absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Backend mode; overrides `run.mode`.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>()
        .map_err(|_| format!("unknown mode `{s}` (valid: live, cassette, record)"))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed the corpus and write the vector index.
    Index(index::IndexArgs),
    /// Run the benchmark cross-product over the test split.
    Eval(eval::EvalArgs),
    /// Generate and execute one query.
    Ask(ask::AskArgs),
    /// Render a report from an outcomes file.
    Report(eval::ReportArgs),
    /// Serve POST /ask, GET /health and GET /config.
    Serve(serve::ServeArgs),
    /// Check corpus queries against the attribute vocabulary.
    Lint,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AveragingArg {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ResultPoolArg {
    /// Invalid queries count as 0.
    All,
    Valid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ValidQueryArg {
    Rate,
    Jaccard,
}

#[derive(Debug, Clone, Args)]
struct AggregateArgs {
    /// Filter-metric averaging.
    #[arg(long, value_enum, default_value = "micro")]
    averaging: AveragingArg,
    /// Samples averaged for the valid-result score.
    #[arg(long, value_enum, default_value = "all")]
    valid_result_over: ResultPoolArg,
    /// Valid-query measure: executable share or mean attribute Jaccard.
    #[arg(long, value_enum, default_value = "rate")]
    valid_query: ValidQueryArg,
    /// Decimal places in rendered percentages.
    #[arg(long, default_value_t = 2)]
    decimals: usize,
}

impl AggregateArgs {
    fn options(&self) -> AggregateOptions {
        AggregateOptions {
            averaging: match self.averaging {
                AveragingArg::Micro => Averaging::Micro,
                AveragingArg::Macro => Averaging::Macro,
            },
            valid_result_over_valid_only: matches!(self.valid_result_over, ResultPoolArg::Valid),
            valid_query: match self.valid_query {
                ValidQueryArg::Rate => ValidQueryMeasure::Rate,
                ValidQueryArg::Jaccard => ValidQueryMeasure::QueryJaccard,
            },
        }
    }
}

struct Context {
    config: Config,
    config_path: Option<PathBuf>,
    mode: Mode,
}

fn load_context(cli: &Cli) -> Result<Context, Failure> {
    let (config, config_path) = match &cli.config {
        Some(path) => (Config::load(path)?, Some(path.clone())),
        None if PathBuf::from(DEFAULT_CONFIG).is_file() => {
            (Config::load(DEFAULT_CONFIG)?, Some(PathBuf::from(DEFAULT_CONFIG)))
        }
        None => (Config::default(), None),
    };
    let mode = cli.mode.unwrap_or(config.run.mode);
    Ok(Context {
        config,
        config_path,
        mode,
    })
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

async fn run(cli: Cli) -> Result<(), Failure> {
    let ctx = load_context(&cli)?;
    match cli.command {
        Command::Index(args) => index::run(&ctx, args).await,
        Command::Eval(args) => eval::run(&ctx, args).await,
        Command::Ask(args) => ask::run(&ctx, args).await,
        Command::Report(args) => eval::report(&ctx, args),
        Command::Serve(args) => serve::run(ctx, args).await,
        Command::Lint => index::lint(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start async runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
