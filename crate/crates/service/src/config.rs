//! Service configuration: a TOML document whose top level holds the service
//! keys, with the engine tables (`[retrieval]`, `[verifier]`, ...) alongside.
//!
//! ```toml
//! listen = "0.0.0.0:8080"
//! promptset = "data/prompts.precache.jsonl"
//! max_batch = 256
//!
//! [verifier]
//! backend = "oracle"
//! oracle_facts = "data/facts.json"
//! max_inflight = 16
//! ```
//!
//! `RAR_LISTEN` overrides `listen`. The remote verifier reads its bearer
//! token from `RAR_VERIFIER_API_KEY`; it never appears in the file.

use std::path::{Path, PathBuf};

use rar_core::config::ConfigError;
use rar_core::datastore::PrecachePolicy;
use rar_core::EngineConfig;
use serde::{Deserialize, Serialize};

pub const LISTEN_ENV: &str = "RAR_LISTEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    /// Prompt set served and updated by `/v1/precache`. Without one, uploads
    /// only live in memory.
    pub promptset: Option<PathBuf>,
    pub max_batch: usize,
    /// Request body limit, mostly relevant to page uploads.
    pub max_upload_bytes: usize,
    pub precache: PrecachePolicy,
    #[serde(flatten)]
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            promptset: None,
            max_batch: 256,
            max_upload_bytes: 64 << 20,
            precache: PrecachePolicy::default(),
            engine: EngineConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` and apply the environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(listen) = lookup(LISTEN_ENV).filter(|v| !v.trim().is_empty()) {
            self.listen = listen.trim().to_string();
        }
    }

    pub fn max_inflight_verifier(&self) -> usize {
        self.engine.verifier.max_inflight
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_batch < 1 {
            return Err(ConfigError::Invalid("max_batch must be >= 1".into()));
        }
        if self.precache.min_documents > self.precache.max_documents {
            return Err(ConfigError::Invalid("precache.min_documents exceeds max_documents".into()));
        }
        self.engine.validate()
    }
}
