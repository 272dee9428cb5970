//! Fixed-token-window chunking and Okapi BM25 retrieval within one
//! pre-cached evidence set.

mod bm25;
mod tokenize;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datastore::Document;

pub use bm25::{analyze, bm25_idf, Bm25Index, IndexSnapshot};
pub use tokenize::{TokenCounter, VocabularyCounter, WhitespaceCounter};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("corpus has no chunks")]
    EmptyCorpus,
    #[error("query has no scoreable terms")]
    EmptyQuery,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub chunk_size_tokens: usize,
    pub top_k: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            chunk_size_tokens: 512,
            top_k: 8,
            bm25_k1: 1.2,
            bm25_b: 0.75,
        }
    }
}

impl RetrievalConfig {
    /// Claim-level retrieval: 256-token chunks, top 4 per claim.
    pub fn claim_level() -> Self {
        Self {
            chunk_size_tokens: 256,
            top_k: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.chunk_size_tokens < 1 {
            return Err(RetrievalError::InvalidConfig("chunk_size_tokens must be >= 1".into()));
        }
        if self.top_k < 1 {
            return Err(RetrievalError::InvalidConfig("top_k must be >= 1".into()));
        }
        if !(self.bm25_k1.is_finite() && self.bm25_k1 >= 0.0) {
            return Err(RetrievalError::InvalidConfig("bm25_k1 must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.bm25_b) {
            return Err(RetrievalError::InvalidConfig("bm25_b must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `(doc_id, ordinal)`; the derived order is the retrieval tie-break.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChunkId {
    pub doc_id: String,
    pub ordinal: u32,
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.ordinal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

/// Retrieved evidence, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub hits: Vec<ScoredChunk>,
}

impl EvidenceSet {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn chunk_ids(&self) -> Vec<ChunkId> {
        self.hits.iter().map(|h| h.chunk.id.clone()).collect()
    }
}

/// Ranking order: score descending, then chunk id ascending.
pub(crate) fn rank_order(a: (f64, &ChunkId), b: (f64, &ChunkId)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

pub fn count_tokens(text: &str, tokenizer: &dyn TokenCounter) -> usize {
    tokenizer.count_tokens(text)
}

/// Split a document into contiguous windows of at most
/// `cfg.chunk_size_tokens` tokens. Each window starts at the first byte of
/// its first token (the first window at byte 0) and runs up to the start of
/// the next window, so concatenating the chunk texts reproduces `doc.text`.
pub fn chunk_document(
    doc: &Document,
    cfg: &RetrievalConfig,
    tokenizer: &dyn TokenCounter,
) -> Vec<Chunk> {
    let size = cfg.chunk_size_tokens.max(1);
    let spans = tokenizer.token_spans(&doc.text);
    if spans.is_empty() {
        return vec![Chunk {
            id: ChunkId {
                doc_id: doc.doc_id.clone(),
                ordinal: 0,
            },
            text: doc.text.clone(),
            token_count: 0,
        }];
    }
    let windows = spans.len().div_ceil(size);
    (0..windows)
        .map(|w| {
            let start = if w == 0 { 0 } else { spans[w * size].start };
            let end = if w + 1 == windows {
                doc.text.len()
            } else {
                spans[(w + 1) * size].start
            };
            Chunk {
                id: ChunkId {
                    doc_id: doc.doc_id.clone(),
                    ordinal: w as u32,
                },
                text: doc.text[start..end].to_string(),
                token_count: (spans.len() - w * size).min(size),
            }
        })
        .collect()
}

/// Top `cfg.top_k` chunks for `query`.
pub fn retrieve(
    index: &Bm25Index,
    query: &str,
    cfg: &RetrievalConfig,
) -> Result<EvidenceSet, RetrievalError> {
    index.search(query, cfg)
}
