use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use mudoc_core::ingest::{ingest_documents, load_source_dir};
use mudoc_service::config::{ProviderKind, ServiceConfig};
use mudoc_service::session::system_clock;
use mudoc_service::{api, app_state, build_provider, check_dimensions, load_index};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "mudoc", version, about = "Document-grounded tutoring service")]
struct Cli {
    /// TOML configuration file; MUDOC_* environment variables override it.
    #[arg(long, global = true, env = "MUDOC_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from a directory of layout JSON files.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        min_chunk_chars: Option<usize>,
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long, value_enum)]
        provider: Option<ProviderKind>,
    },
    /// Serve the HTTP API over a built index.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        index_dir: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        provider: Option<ProviderKind>,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();
    let mut cfg = ServiceConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { input, out, min_chunk_chars, overlap, provider } => {
            if let Some(v) = min_chunk_chars {
                cfg.ingest.min_chunk_chars = v;
            }
            if let Some(v) = overlap {
                cfg.ingest.overlap_fraction = v;
            }
            if let Some(p) = provider {
                cfg.provider = p;
            }
            cfg.validate()?;
            let provider = build_provider(&cfg)?;
            let sources = load_source_dir(&input)?;
            tracing::info!(documents = sources.len(), input = %input.display(), "ingesting");
            let index = ingest_documents(sources, provider.as_ref(), &cfg.ingest).await?;
            index.save(&out).with_context(|| format!("writing {}", out.display()))?;
            let (chunks, images) = index.counts();
            tracing::info!(chunks, images, out = %out.display(), "index written");
        }
        Command::Serve { port, index_dir, data_dir, provider } => {
            if let Some(v) = port {
                cfg.port = v;
            }
            if let Some(v) = index_dir {
                cfg.index_dir = v;
            }
            if let Some(v) = data_dir {
                cfg.data_dir = v;
            }
            if let Some(p) = provider {
                cfg.provider = p;
            }
            cfg.validate()?;
            let index = load_index(&cfg.index_dir)?;
            check_dimensions(&cfg, &index)?;
            let provider = build_provider(&cfg)?;
            let addr: SocketAddr = format!("{}:{}", cfg.host, cfg.port).parse().context("host/port")?;
            let state = app_state(cfg, index, provider, system_clock())?;
            let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
            tracing::info!(%addr, sessions = state.store.len(), "listening");
            axum::serve(listener, api::router(state))
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
        }
    }
    Ok(())
}
