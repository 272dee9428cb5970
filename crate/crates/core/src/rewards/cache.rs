//! Content-addressed reward cache and the audit log.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, LineWriter, Write};
use std::path::Path;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{RewardKind, RewardResult};
use crate::digest::FieldHasher;

pub fn cache_key(kind: RewardKind, prompt_id: &str, response: &str, version_hash: &str, config_digest: &str) -> String {
    let mut h = FieldHasher::new();
    h.field(kind.to_string())
        .field(prompt_id)
        .field(response)
        .field(version_hash)
        .field(config_digest);
    h.finish_hex()
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    result: RewardResult,
}

/// In-memory map, optionally backed by an append-only JSONL file that is
/// replayed on open. Later lines win.
#[derive(Debug, Default)]
pub struct RewardCache {
    map: RwLock<HashMap<String, RewardResult>>,
    file: Option<Mutex<LineWriter<File>>>,
}

impl RewardCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let mut map = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        map.insert(entry.key, entry.result);
                    }
                    Err(e) => tracing::warn!(line = n + 1, error = %e, "skipping unreadable cache line"),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            map: RwLock::new(map),
            file: Some(Mutex::new(LineWriter::new(file))),
        })
    }

    pub fn get(&self, key: &str) -> Option<RewardResult> {
        self.map.read().get(key).cloned()
    }

    pub fn insert(&self, key: String, result: &RewardResult) {
        let mut stored = result.clone();
        stored.cache_hit = false;
        stored.latency_ms = 0.0;
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                result: stored.clone(),
            })
            .expect("reward results serialize");
            if let Err(e) = writeln!(file.lock(), "{line}") {
                tracing::warn!(error = %e, "reward cache write failed");
            }
        }
        self.map.write().insert(key, stored);
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One line of the reward audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub prompt_id: String,
    pub response_digest: String,
    pub kind: RewardKind,
    pub value: f64,
    pub degenerate: bool,
    pub attempts: u32,
    pub latency_ms: f64,
    pub cache_hit: bool,
}

#[derive(Debug)]
pub(crate) struct AuditLog {
    writer: Mutex<LineWriter<File>>,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            writer: Mutex::new(LineWriter::new(file)),
        })
    }

    pub fn record(&self, rec: &AuditRecord) {
        let line = serde_json::to_string(rec).expect("audit records serialize");
        if let Err(e) = writeln!(self.writer.lock(), "{line}") {
            tracing::warn!(error = %e, "audit log write failed");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_depends_on_every_field() {
        let base = cache_key(RewardKind::BinaryRar, "p", "r", "v", "c");
        assert_ne!(base, cache_key(RewardKind::VeriScore, "p", "r", "v", "c"));
        assert_ne!(base, cache_key(RewardKind::BinaryRar, "p2", "r", "v", "c"));
        assert_ne!(base, cache_key(RewardKind::BinaryRar, "p", "r2", "v", "c"));
        assert_ne!(base, cache_key(RewardKind::BinaryRar, "p", "r", "v2", "c"));
        assert_ne!(base, cache_key(RewardKind::BinaryRar, "p", "r", "v", "c2"));
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut result = RewardResult::new(RewardKind::BinaryRar, 1.0);
        result.verifier_calls = 1;
        {
            let cache = RewardCache::open(&path).unwrap();
            cache.insert("k".into(), &result);
        }
        let cache = RewardCache::open(&path).unwrap();
        assert_eq!(cache.get("k"), Some(result));
        assert_eq!(cache.len(), 1);
    }
}
