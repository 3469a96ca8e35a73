//! Study service: sessions, telemetry and the HTTP/SSE API over the core
//! pipeline.

pub mod api;
pub mod config;
pub mod session;

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use mudoc_core::gateway::{Gateway, MockProvider, MockScript, OpenAiProvider, Provider};
use mudoc_core::index::Index;
use mudoc_core::retrieval::Retriever;

use crate::api::AppState;
use crate::config::{ProviderKind, ServiceConfig};
use crate::session::{Clock, SessionStore};

/// The provider selected by the configuration, wrapped in the retrying
/// gateway.
pub fn build_provider(cfg: &ServiceConfig) -> anyhow::Result<Arc<dyn Provider>> {
    let inner: Arc<dyn Provider> = match cfg.provider {
        ProviderKind::Live => Arc::new(OpenAiProvider::new(cfg.live.clone())?),
        ProviderKind::Mock => Arc::new(MockProvider::new(
            MockScript::offline(cfg.mock.seed, cfg.mock.text_dim).with_multimodal_dim(cfg.mock.multimodal_dim),
        )),
    };
    Ok(Arc::new(Gateway::from_config(inner, &cfg.live)))
}

/// Fails when the mock provider would embed queries in a different space
/// than the index was built with.
pub fn check_dimensions(cfg: &ServiceConfig, index: &Index) -> anyhow::Result<()> {
    if cfg.provider != ProviderKind::Mock {
        return Ok(());
    }
    let (chunks, images) = index.counts();
    if chunks > 0 && index.text_dim() != cfg.mock.text_dim {
        bail!("index text vectors have {} dimensions but mock.text_dim is {}", index.text_dim(), cfg.mock.text_dim);
    }
    if images > 0 && index.multimodal_dim() != cfg.mock.multimodal_dim {
        bail!(
            "index image vectors have {} dimensions but mock.multimodal_dim is {}",
            index.multimodal_dim(),
            cfg.mock.multimodal_dim
        );
    }
    Ok(())
}

/// Wires an application state from parts. Opens (and replays) the session
/// store under `cfg.data_dir`.
pub fn app_state(cfg: ServiceConfig, index: Arc<Index>, provider: Arc<dyn Provider>, clock: Clock) -> anyhow::Result<AppState> {
    let store = SessionStore::open(&cfg.data_dir, cfg.agent.max_iterations, clock)
        .with_context(|| format!("opening session store {}", cfg.data_dir.display()))?;
    let backend = Arc::new(Retriever::new(index.clone(), provider.clone(), cfg.retrieval.clone()));
    Ok(AppState { index, provider, backend, store: Arc::new(store), config: Arc::new(cfg) })
}

pub fn load_index(dir: &Path) -> anyhow::Result<Arc<Index>> {
    Ok(Arc::new(Index::load(dir).with_context(|| format!("loading index {}", dir.display()))?))
}
