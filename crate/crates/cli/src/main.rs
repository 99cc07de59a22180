//! `omni` — operator surface for the federated retrieval engine: one-shot
//! questions, benchmark evaluation, query grounding checks, and an HTTP
//! service mode.

mod config;
mod server;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use omni_core::evaluation::{load_dataset, run_benchmark};
use omni_core::pipeline::RunMode;
use omni_core::validation::{check_grounding, parse_context};
use omni_core::BackendKind;

use config::build_pipeline;

/// Exit code for a run that completed but produced no evidence.
const EXIT_NO_EVIDENCE: u8 = 2;

#[derive(Parser)]
#[command(name = "omni", about = "Federated retrieval over heterogeneous knowledge sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question and print the answer JSON to stdout.
    Ask {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        question: String,
        /// Candidate budget for omni mode.
        #[arg(long)]
        k: Option<usize>,
        /// omni | kb-routing | single:<kind> | oracle
        #[arg(long, default_value = "omni")]
        mode: String,
        /// Gold knowledge base, required for oracle mode.
        #[arg(long)]
        oracle_kb: Option<String>,
        #[arg(long, default_value = "q")]
        question_id: String,
    },
    /// Run the benchmark over a gold-annotated dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "omni")]
        mode: String,
        #[arg(long)]
        k: Option<usize>,
        /// Where the full metrics report JSON is written.
        #[arg(long)]
        report: PathBuf,
    },
    /// Check that a query is grounded in a source's structural context.
    ValidateQuery {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        query: PathBuf,
    },
    /// Serve the engine over HTTP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn fatal(err: anyhow::Error) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": format!("{err:#}") }));
    ExitCode::FAILURE
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();

    let cli = Cli::parse();
    match run(cli.command).await {
        Ok(code) => code,
        Err(e) => fatal(e),
    }
}

async fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Ask {
            config,
            question,
            k,
            mode,
            oracle_kb,
            question_id,
        } => {
            let (pipeline, engine) = build_pipeline(&config)?;
            let mode = RunMode::parse(&mode, k.unwrap_or(engine.k))?;
            let trace = pipeline
                .answer(&question_id, &question, mode, oracle_kb.as_deref())
                .await?;
            println!("{}", serde_json::to_string(&trace.to_answer_json())?);
            Ok(if trace.no_evidence {
                ExitCode::from(EXIT_NO_EVIDENCE)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Eval {
            config,
            dataset,
            mode,
            k,
            report,
        } => {
            let (pipeline, engine) = build_pipeline(&config)?;
            let mode = RunMode::parse(&mode, k.unwrap_or(engine.k))?;
            let golds = load_dataset(&dataset)?;
            let metrics = run_benchmark(&pipeline, &golds, mode).await?;
            std::fs::write(&report, serde_json::to_string_pretty(&metrics)?)?;
            print_summary(&metrics);
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateQuery {
            kind,
            context,
            query,
        } => {
            let kind: BackendKind = kind
                .parse()
                .map_err(|e| anyhow::anyhow!("unknown backend kind: {e}"))?;
            let context_text = std::fs::read_to_string(&context)?;
            let query_text = std::fs::read_to_string(&query)?;
            let schema = parse_context(kind, &context_text)?;
            let report = check_grounding(kind, &query_text, &schema);
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { config, addr } => {
            let (pipeline, engine) = build_pipeline(&config)?;
            server::serve(pipeline, engine, &addr).await?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_summary(metrics: &omni_core::evaluation::MetricsReport) {
    println!("paradigm      n  selection  retrieval  judge");
    for (name, m) in &metrics.per_paradigm {
        println!(
            "{name:<10} {:>4}  {:>9.2}  {:>9.2}  {:>5.2}",
            m.questions, m.source_selection, m.retrieval, m.judge
        );
    }
    println!(
        "macro            {:>9.2}  {:>9.2}  {:>5.2}",
        metrics.macro_source_selection, metrics.macro_retrieval, metrics.macro_judge
    );
    for w in &metrics.warnings {
        eprintln!("warning: {w}");
    }
}
