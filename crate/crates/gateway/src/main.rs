use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use atlas_core::index::Field;
use atlas_core::qa::{QaMode, QaRequest};
use atlas_core::synth::SynthConfig;
use atlas_core::QueryMode;
use atlas_gateway::commands::{self, CliResult, SearchArgs, Workdir};
use atlas_gateway::GatewayConfig;

#[derive(Parser)]
#[command(name = "atlas", version, about = "Build and explore a temporal topic atlas of a document corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSON-lines corpus and store it in the workdir
    Ingest {
        corpus: PathBuf,
        workdir: PathBuf,
        /// Engine config file, copied into the workdir
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Embed, cluster, merge and lay out the ingested corpus; write the snapshot
    Build {
        workdir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the snapshot over HTTP
    Serve {
        workdir: PathBuf,
        #[arg(long)]
        bind: Option<String>,
        /// Gateway config file (defaults to <workdir>/gateway.json when present)
        #[arg(long)]
        gateway_config: Option<PathBuf>,
    },
    /// Search the snapshot without a server
    Search {
        workdir: PathBuf,
        #[arg(short, long)]
        query: String,
        #[arg(long, value_enum, default_value = "lexical")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "body")]
        field: FieldArg,
        /// Filter as a JSON object
        #[arg(long)]
        filter: Option<String>,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        offset: usize,
    },
    /// Ask a corpus- or document-level question
    Qa {
        workdir: PathBuf,
        #[arg(long, value_enum)]
        mode: QaModeArg,
        #[arg(short, long)]
        query: String,
        #[arg(long)]
        filter: Option<String>,
        /// Topic to answer from (corpus mode); repeatable
        #[arg(long = "topic")]
        topics: Vec<String>,
    },
    /// Write a seeded synthetic corpus
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        docs: usize,
        #[arg(long, default_value_t = 90)]
        days: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "2024-01-01")]
        start: NaiveDate,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Lexical,
    Semantic,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Body,
    Title,
}

#[derive(Clone, Copy, ValueEnum)]
enum QaModeArg {
    Corpus,
    Document,
}

fn gateway_config(wd: &Workdir, explicit: Option<&PathBuf>) -> CliResult<GatewayConfig> {
    let mut cfg = match explicit {
        Some(p) => GatewayConfig::load(p)?,
        None if wd.gateway_config().exists() => GatewayConfig::load(&wd.gateway_config())?,
        None => GatewayConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    Ok(cfg)
}

fn print_json(value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(atlas_core::Error::Json)?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest { corpus, workdir, config } => {
            let stats = commands::ingest(&corpus, &Workdir::new(workdir), config.as_deref())?;
            print_json(&stats)
        }
        Command::Build { workdir, config, seed } => {
            let manifest = commands::build(&Workdir::new(workdir), config.as_deref(), seed)?;
            print_json(&serde_json::json!({
                "snapshot_id": manifest.snapshot_id,
                "doc_count": manifest.doc_count,
                "sentence_count": manifest.sentence_count,
            }))
        }
        Command::Serve { workdir, bind, gateway_config: gc } => {
            let wd = Workdir::new(workdir);
            let mut cfg = gateway_config(&wd, gc.as_ref())?;
            if let Some(b) = bind {
                cfg.bind = b;
            }
            let rt = tokio::runtime::Runtime::new().map_err(atlas_core::Error::Io)?;
            rt.block_on(commands::serve(&wd, cfg))
        }
        Command::Search { workdir, query, mode, field, filter, k, offset } => {
            let wd = Workdir::new(workdir);
            let cfg = gateway_config(&wd, None)?;
            let args = SearchArgs {
                query: &query,
                mode: match mode {
                    ModeArg::Lexical => QueryMode::Lexical,
                    ModeArg::Semantic => QueryMode::Semantic,
                },
                field: match field {
                    FieldArg::Body => Field::Body,
                    FieldArg::Title => Field::Title,
                },
                filter: filter.as_deref(),
                k,
                offset,
            };
            print_json(&commands::search(&wd, &cfg, &args)?)
        }
        Command::Qa { workdir, mode, query, filter, topics } => {
            let wd = Workdir::new(workdir);
            let cfg = gateway_config(&wd, None)?;
            let req = QaRequest {
                mode: match mode {
                    QaModeArg::Corpus => QaMode::Corpus,
                    QaModeArg::Document => QaMode::Document,
                },
                query,
                filter: None,
                topic_ids: (!topics.is_empty()).then_some(topics),
            };
            print_json(&commands::qa(&wd, &cfg, req, filter.as_deref())?)
        }
        Command::Synth { out, docs, days, seed, start } => {
            let n = commands::synth(&out, &SynthConfig { docs, days, seed, start, ..Default::default() })?;
            eprintln!("wrote {n} documents to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
