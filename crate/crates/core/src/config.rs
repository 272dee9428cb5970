//! Engine configuration, read from a TOML document.
//!
//! ```toml
//! [retrieval]
//! chunk_size_tokens = 512
//! top_k = 8
//!
//! [verifier]
//! backend = "remote"
//! endpoint = "http://127.0.0.1:8000/v1/chat/completions"
//! model = "verifier"
//! ```
//!
//! Every key is optional; missing keys take the defaults below.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::digest::FieldHasher;
use crate::retrieval::{RetrievalConfig, TokenCounter, VocabularyCounter, WhitespaceCounter};
use crate::verification::{
    FactTable, OracleBackend, PromptBudget, RemoteConfig, RemoteLmBackend, VerifierBackend,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub backend: BackendKind,
    /// Fact table for the oracle backend.
    pub oracle_facts: Option<PathBuf>,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Global cap on concurrent verifier calls.
    pub max_inflight: usize,
    pub retry_limit: u32,
    pub prompt: PromptBudget,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        let remote = RemoteConfig::default();
        Self {
            backend: BackendKind::Oracle,
            oracle_facts: None,
            endpoint: remote.endpoint,
            model: remote.model,
            temperature: remote.temperature,
            max_tokens: remote.max_tokens,
            timeout_secs: remote.timeout_secs,
            max_inflight: remote.max_inflight,
            retry_limit: 2,
            prompt: PromptBudget::default(),
        }
    }
}

impl VerifierConfig {
    pub fn remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            timeout_secs: self.timeout_secs,
            max_inflight: self.max_inflight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    Whitespace,
    Vocabulary,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub kind: TokenizerKind,
    pub vocab_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardsConfig {
    /// Default threshold for the binary VeriScore variant.
    pub threshold: f64,
    pub cache_path: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
}

impl Default for RewardsConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            cache_path: None,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Whole-response retrieval.
    pub retrieval: RetrievalConfig,
    /// Per-claim retrieval for the claim-level rewards.
    pub claim_retrieval: RetrievalConfig,
    pub verifier: VerifierConfig,
    pub tokenizer: TokenizerConfig,
    pub rewards: RewardsConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            claim_retrieval: RetrievalConfig::claim_level(),
            verifier: VerifierConfig::default(),
            tokenizer: TokenizerConfig::default(),
            rewards: RewardsConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if let Err(e) = self.retrieval.validate() {
            return invalid(format!("retrieval: {e}"));
        }
        if let Err(e) = self.claim_retrieval.validate() {
            return invalid(format!("claim_retrieval: {e}"));
        }
        if self.verifier.max_inflight < 1 {
            return invalid("verifier.max_inflight must be >= 1".into());
        }
        if !(self.rewards.threshold > 0.0 && self.rewards.threshold <= 1.0) {
            return invalid("rewards.threshold must lie in (0, 1]".into());
        }
        if self.tokenizer.kind == TokenizerKind::Vocabulary && self.tokenizer.vocab_path.is_none() {
            return invalid("tokenizer.vocab_path is required for the vocabulary counter".into());
        }
        Ok(())
    }

    pub fn build_tokenizer(&self) -> Result<Arc<dyn TokenCounter>, ConfigError> {
        Ok(match (&self.tokenizer.kind, &self.tokenizer.vocab_path) {
            (TokenizerKind::Vocabulary, Some(path)) => {
                Arc::new(VocabularyCounter::from_file(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?)
            }
            _ => Arc::new(WhitespaceCounter),
        })
    }

    /// The backend named by `verifier.backend`. The oracle needs
    /// `verifier.oracle_facts`.
    pub fn build_backend(&self) -> Result<Arc<dyn VerifierBackend>, ConfigError> {
        match self.verifier.backend {
            BackendKind::Remote => Ok(Arc::new(RemoteLmBackend::new(self.verifier.remote_config()))),
            BackendKind::Oracle => {
                let path = self.verifier.oracle_facts.as_ref().ok_or_else(|| {
                    ConfigError::Invalid("verifier.oracle_facts is required for the oracle backend".into())
                })?;
                let table = FactTable::load(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                Ok(Arc::new(OracleBackend::new(table).map_err(ConfigError::Invalid)?))
            }
        }
    }

    /// Digest of every setting that can change a reward value, combined with
    /// the backend and tokenizer fingerprints. Paths and concurrency limits
    /// are excluded.
    pub fn scoring_digest(&self, backend: &dyn VerifierBackend, tokenizer: &dyn TokenCounter) -> String {
        let mut h = FieldHasher::new();
        h.field(json(&self.retrieval).as_bytes())
            .field(json(&self.claim_retrieval).as_bytes())
            .field(json(&self.verifier.prompt).as_bytes())
            .field(self.verifier.retry_limit.to_string().as_bytes())
            .field(backend.fingerprint().as_bytes())
            .field(tokenizer.fingerprint().as_bytes());
        h.finish_hex()
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let cfg = EngineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, EngineConfig::default());
        assert_eq!(cfg.retrieval.chunk_size_tokens, 512);
        assert_eq!(cfg.claim_retrieval.top_k, 4);
        assert_eq!(cfg.rewards.threshold, 0.5);
    }

    #[test]
    fn dotted_keys() {
        let cfg = EngineConfig::from_toml_str(
            "[retrieval]\ntop_k = 3\nbm25_b = 0.5\n[verifier]\nbackend = \"remote\"\nendpoint = \"http://x/v1\"\n",
        )
        .unwrap();
        assert_eq!(cfg.retrieval.top_k, 3);
        assert_eq!(cfg.retrieval.chunk_size_tokens, 512);
        assert_eq!(cfg.verifier.backend, BackendKind::Remote);
        assert_eq!(cfg.verifier.remote_config().endpoint, "http://x/v1");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(EngineConfig::from_toml_str("[retrieval]\ntop_k = 0\n").is_err());
        assert!(EngineConfig::from_toml_str("[rewards]\nthreshold = 0.0\n").is_err());
        assert!(EngineConfig::from_toml_str("[verifier]\nmax_inflight = 0\n").is_err());
        assert!(EngineConfig::from_toml_str("[tokenizer]\nkind = \"vocabulary\"\n").is_err());
    }

    #[test]
    fn oracle_needs_fact_file() {
        assert!(EngineConfig::default().build_backend().is_err());
    }

    #[test]
    fn digest_ignores_concurrency() {
        let backend = crate::verification::mock::FailingBackend;
        let a = EngineConfig::default();
        let mut b = a.clone();
        b.verifier.max_inflight = 64;
        assert_eq!(a.scoring_digest(&backend, &WhitespaceCounter), b.scoring_digest(&backend, &WhitespaceCounter));
        b.retrieval.top_k = 2;
        assert_ne!(a.scoring_digest(&backend, &WhitespaceCounter), b.scoring_digest(&backend, &WhitespaceCounter));
    }
}
