//! Per-prompt evidence sets: cleaning fetched pages, the minimum-evidence
//! curation rule, and the `.precache.jsonl` file format.

mod clean;
mod manifest;
mod store;

use std::collections::{HashMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::digest::{sha256_hex, FieldHasher};

pub use clean::{clean_document, clean_document_bytes, SKIPPED_ELEMENTS};
pub use manifest::{load_raw_pages, PageManifest, PageRef, PromptPages, PromptPagesSpec};
pub use store::{load_promptset, save_promptset, write_promptset, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum DatastoreError {
    #[error("no visible text remains after cleaning")]
    EmptyAfterCleaning,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema version mismatch at line {line}: expected {expected}, found {found}")]
    SchemaVersionMismatch {
        line: usize,
        expected: u32,
        found: u32,
    },
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate prompt_id {0:?}")]
    DuplicatePrompt(String),
    #[error("version hash of prompt {0:?} does not match its documents")]
    HashMismatch(String),
    #[error("manifest error: {0}")]
    Manifest(String),
}

impl DatastoreError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True when the underlying I/O failure is "no space left on device".
    pub fn is_storage_full(&self) -> bool {
        matches!(self, Self::Io { source, .. } if source.raw_os_error() == Some(28))
    }
}

/// One cleaned source page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source_url: String,
    pub raw_html: Option<String>,
    pub text: String,
    pub fetched_at: DateTime<Utc>,
}

/// Stable document id: the first 128 bits of SHA-256 over the source URL.
pub fn doc_id_for_url(url: &str) -> String {
    sha256_hex(url)[..32].to_string()
}

/// Evidence cached for one training prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecacheEntry {
    pub prompt_id: String,
    pub prompt_text: String,
    pub reference_response: Option<String>,
    pub documents: Vec<Document>,
    pub version_hash: String,
}

impl PrecacheEntry {
    /// Digest over the `(doc_id, text)` pairs sorted by `doc_id`; independent
    /// of document order, and of everything but the ids and texts.
    pub fn compute_version_hash(documents: &[Document]) -> String {
        let mut pairs: Vec<(&str, &str)> = documents
            .iter()
            .map(|d| (d.doc_id.as_str(), d.text.as_str()))
            .collect();
        pairs.sort_unstable();
        let mut hasher = FieldHasher::new();
        for (id, text) in pairs {
            hasher.field(id).field(text);
        }
        hasher.finish_hex()
    }

    pub fn has_valid_hash(&self) -> bool {
        self.version_hash == Self::compute_version_hash(&self.documents)
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }
}

/// Ordered prompt collection with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptSet {
    entries: Vec<PrecacheEntry>,
    by_id: HashMap<String, usize>,
}

impl PromptSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<PrecacheEntry>) -> Result<Self, DatastoreError> {
        let mut set = Self::new();
        for entry in entries {
            set.insert(entry)?;
        }
        Ok(set)
    }

    /// Appends an entry, rejecting a prompt id that is already present.
    pub fn insert(&mut self, entry: PrecacheEntry) -> Result<(), DatastoreError> {
        if self.by_id.contains_key(&entry.prompt_id) {
            return Err(DatastoreError::DuplicatePrompt(entry.prompt_id));
        }
        self.by_id.insert(entry.prompt_id.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    /// Inserts or replaces in place (replacement keeps the original position).
    pub fn upsert(&mut self, entry: PrecacheEntry) {
        match self.by_id.get(&entry.prompt_id) {
            Some(&idx) => self.entries[idx] = entry,
            None => {
                self.by_id.insert(entry.prompt_id.clone(), self.entries.len());
                self.entries.push(entry);
            }
        }
    }

    pub fn get(&self, prompt_id: &str) -> Option<&PrecacheEntry> {
        self.by_id.get(prompt_id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, prompt_id: &str) -> bool {
        self.by_id.contains_key(prompt_id)
    }

    pub fn entries(&self) -> &[PrecacheEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A fetched page handed to [`build_precache`].
#[derive(Debug, Clone)]
pub struct RawPage {
    pub url: String,
    pub html: String,
    pub fetched_at: DateTime<Utc>,
}

/// Curation limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecachePolicy {
    /// Entries with fewer surviving documents are discarded.
    pub min_documents: usize,
    /// Extra surviving documents are truncated by input order.
    pub max_documents: usize,
    pub keep_raw_html: bool,
}

impl Default for PrecachePolicy {
    fn default() -> Self {
        Self {
            min_documents: 3,
            max_documents: 10,
            keep_raw_html: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    MinDocuments,
}

impl DiscardReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MinDocuments => "min_documents",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discarded {
    pub prompt_id: String,
    pub reason: DiscardReason,
    pub surviving_documents: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrecacheOutcome {
    Built(PrecacheEntry),
    Discarded(Discarded),
}

impl PrecacheOutcome {
    pub fn built(self) -> Option<PrecacheEntry> {
        match self {
            Self::Built(e) => Some(e),
            Self::Discarded(_) => None,
        }
    }
}

/// Clean every page, drop the ones with no visible text and apply the
/// minimum-evidence rule.
///
/// Pages repeating an earlier URL are skipped so that doc ids stay unique.
pub fn build_precache(
    prompt_id: &str,
    prompt_text: &str,
    reference_response: Option<&str>,
    pages: &[RawPage],
    policy: &PrecachePolicy,
) -> PrecacheOutcome {
    let mut seen = HashSet::new();
    let mut documents = Vec::new();
    for page in pages {
        if documents.len() == policy.max_documents {
            break;
        }
        let doc_id = doc_id_for_url(&page.url);
        if seen.contains(&doc_id) {
            continue;
        }
        let Ok(text) = clean_document(&page.html) else {
            continue;
        };
        seen.insert(doc_id.clone());
        documents.push(Document {
            doc_id,
            source_url: page.url.clone(),
            raw_html: policy.keep_raw_html.then(|| page.html.clone()),
            text,
            fetched_at: page.fetched_at,
        });
    }

    if documents.len() < policy.min_documents {
        return PrecacheOutcome::Discarded(Discarded {
            prompt_id: prompt_id.to_string(),
            reason: DiscardReason::MinDocuments,
            surviving_documents: documents.len(),
        });
    }

    let version_hash = PrecacheEntry::compute_version_hash(&documents);
    PrecacheOutcome::Built(PrecacheEntry {
        prompt_id: prompt_id.to_string(),
        prompt_text: prompt_text.to_string(),
        reference_response: reference_response.map(str::to_string),
        documents,
        version_hash,
    })
}
