use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mudoc_core::agent::AgentConfig;
use mudoc_core::docsearch::DocSearchConfig;
use mudoc_core::gateway::ProviderConfig;
use mudoc_core::ingest::IngestConfig;
use mudoc_core::retrieval::RetrievalConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// OpenAI-compatible HTTP endpoints.
    Live,
    /// Deterministic offline provider.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub seed: u64,
    pub text_dim: usize,
    pub multimodal_dim: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self { seed: 0, text_dim: 64, multimodal_dim: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub min_minutes: f64,
    pub max_minutes: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { min_minutes: 15.0, max_minutes: 25.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActivityConfig {
    /// Expected client heartbeat cadence.
    pub heartbeat_secs: u64,
    /// Longer gaps between heartbeats are not counted as active time.
    pub max_gap_secs: u64,
}

impl Default for ActivityConfig {
    fn default() -> Self {
        Self { heartbeat_secs: 10, max_gap_secs: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub index_dir: PathBuf,
    /// Session logs and notepad snapshots.
    pub data_dir: PathBuf,
    pub provider: ProviderKind,
    pub notes_max_bytes: usize,
    pub live: ProviderConfig,
    pub mock: MockConfig,
    pub ingest: IngestConfig,
    pub retrieval: RetrievalConfig,
    pub agent: AgentConfig,
    pub docsearch: DocSearchConfig,
    pub timing: TimingConfig,
    pub activity: ActivityConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            index_dir: PathBuf::from("index"),
            data_dir: PathBuf::from("data"),
            provider: ProviderKind::Live,
            notes_max_bytes: 256 * 1024,
            live: ProviderConfig::default(),
            mock: MockConfig::default(),
            ingest: IngestConfig::default(),
            retrieval: RetrievalConfig::default(),
            agent: AgentConfig::default(),
            docsearch: DocSearchConfig::default(),
            timing: TimingConfig::default(),
            activity: ActivityConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads the TOML file if given, then applies `MUDOC_*` environment
    /// overrides.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&raw).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        if let Some(v) = get("MUDOC_HOST") {
            self.host = v;
        }
        if let Some(v) = get("MUDOC_PORT") {
            self.port = v.parse().context("MUDOC_PORT")?;
        }
        if let Some(v) = get("MUDOC_INDEX_DIR") {
            self.index_dir = v.into();
        }
        if let Some(v) = get("MUDOC_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = get("MUDOC_PROVIDER") {
            self.provider = match v.to_ascii_lowercase().as_str() {
                "live" => ProviderKind::Live,
                "mock" => ProviderKind::Mock,
                other => bail!("MUDOC_PROVIDER must be live or mock, got {other}"),
            };
        }
        if let Some(v) = get("MUDOC_BASE_URL") {
            self.live.base_url = v;
        }
        if let Some(v) = get("MUDOC_CHAT_MODEL") {
            self.live.chat_model = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.timing.min_minutes > 0.0 && self.timing.min_minutes <= self.timing.max_minutes) {
            bail!("timing: need 0 < min_minutes <= max_minutes");
        }
        if self.agent.max_iterations == 0 {
            bail!("agent.max_iterations must be positive");
        }
        if self.activity.max_gap_secs == 0 {
            bail!("activity.max_gap_secs must be positive");
        }
        self.retrieval.validate()?;
        self.ingest.validate()?;
        if self.provider == ProviderKind::Live {
            self.live.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_env() {
        let mut cfg: ServiceConfig = toml::from_str("port = 9000\nprovider = \"mock\"\n[timing]\nmin_minutes = 1.0\n").unwrap();
        assert_eq!((cfg.port, cfg.provider, cfg.timing.min_minutes, cfg.timing.max_minutes), (9000, ProviderKind::Mock, 1.0, 25.0));
        cfg.apply_env(|k| (k == "MUDOC_PORT").then(|| "9100".to_string())).unwrap();
        assert_eq!(cfg.port, 9100);
        assert!(cfg.apply_env(|k| (k == "MUDOC_PROVIDER").then(|| "other".to_string())).is_err());
    }

    #[test]
    fn defaults_validate_for_mock() {
        let cfg = ServiceConfig { provider: ProviderKind::Mock, ..Default::default() };
        cfg.validate().unwrap();
        assert_eq!(cfg.notes_max_bytes, 262_144);
        let bad = ServiceConfig { timing: TimingConfig { min_minutes: 30.0, max_minutes: 25.0 }, ..cfg };
        assert!(bad.validate().is_err());
    }
}
