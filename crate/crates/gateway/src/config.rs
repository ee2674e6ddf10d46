//! Gateway settings: a JSON file plus `ATLAS_*` environment overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use atlas_core::model::RemoteConfig;
use atlas_core::{EngineConfig, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind: String,
    /// Most points a single /map response carries.
    pub map_point_cap: usize,
    /// Allowed browser origin; "*" allows any.
    pub cors_origin: Option<String>,
    pub max_concurrent_qa: usize,
    /// Include internal error text in responses. Off in production.
    pub expose_error_details: bool,
    /// How often to look for a rebuilt snapshot; 0 disables reloading.
    pub reload_interval_secs: u64,
    /// Overrides the snapshot's LLM provider.
    pub llm: Option<RemoteConfig>,
    /// Overrides the snapshot's embedding provider (same dimension required).
    pub embedder: Option<RemoteConfig>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            bind: "127.0.0.1:8080".into(),
            map_point_cap: 50_000,
            cors_origin: None,
            max_concurrent_qa: 8,
            expose_error_details: true,
            reload_interval_secs: 5,
            llm: None,
            embedder: None,
        }
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {value:?}")))
}

fn remote_override(slot: &mut Option<RemoteConfig>, endpoint: Option<String>, model: Option<String>) {
    if endpoint.is_none() && model.is_none() {
        return;
    }
    let cfg = slot.get_or_insert_with(RemoteConfig::default);
    if let Some(e) = endpoint {
        cfg.endpoint = e;
    }
    if let Some(m) = model {
        cfg.model = m;
    }
}

impl GatewayConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies overrides from `lookup` (normally the process environment).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = lookup("ATLAS_BIND") {
            self.bind = v;
        }
        if let Some(v) = lookup("ATLAS_MAP_CAP") {
            self.map_point_cap = parse_env("ATLAS_MAP_CAP", &v)?;
        }
        if let Some(v) = lookup("ATLAS_CORS_ORIGIN") {
            self.cors_origin = Some(v).filter(|s| !s.is_empty());
        }
        if let Some(v) = lookup("ATLAS_MAX_CONCURRENT_QA") {
            self.max_concurrent_qa = parse_env("ATLAS_MAX_CONCURRENT_QA", &v)?;
        }
        if let Some(v) = lookup("ATLAS_PRODUCTION") {
            self.expose_error_details = !parse_env::<bool>("ATLAS_PRODUCTION", &v)?;
        }
        if let Some(v) = lookup("ATLAS_RELOAD_SECS") {
            self.reload_interval_secs = parse_env("ATLAS_RELOAD_SECS", &v)?;
        }
        remote_override(&mut self.llm, lookup("ATLAS_LLM_ENDPOINT"), lookup("ATLAS_LLM_MODEL"));
        remote_override(&mut self.embedder, lookup("ATLAS_EMBED_ENDPOINT"), lookup("ATLAS_EMBED_MODEL"));
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.map_point_cap == 0 {
            return Err(Error::InvalidArgument("map_point_cap must be positive".into()));
        }
        if self.max_concurrent_qa == 0 {
            return Err(Error::InvalidArgument("max_concurrent_qa must be positive".into()));
        }
        Ok(())
    }

    /// Engine configuration with this gateway's provider overrides applied.
    pub fn engine_config(&self, base: &EngineConfig) -> EngineConfig {
        let mut cfg = base.clone();
        if self.llm.is_some() {
            cfg.llm = self.llm.clone();
        }
        if self.embedder.is_some() {
            cfg.embedder = self.embedder.clone();
        }
        cfg
    }
}

/// Provider overrides for build commands, read from the same variables.
pub fn apply_engine_env(cfg: &mut EngineConfig, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
    remote_override(&mut cfg.llm, lookup("ATLAS_LLM_ENDPOINT"), lookup("ATLAS_LLM_MODEL"));
    remote_override(&mut cfg.embedder, lookup("ATLAS_EMBED_ENDPOINT"), lookup("ATLAS_EMBED_MODEL"));
    if let Some(v) = lookup("ATLAS_SEED") {
        cfg.rng_seed = parse_env("ATLAS_SEED", &v)?;
    }
    cfg.validate()
}
