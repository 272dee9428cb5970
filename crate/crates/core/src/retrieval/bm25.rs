//! Okapi BM25 over the chunks of one evidence set.
//!
//! ```text
//! score(C, Q) = Σ_{q ∈ Q} idf(q) · tf(q, C)·(k1 + 1) / (tf(q, C) + k1·(1 − b + b·|C|/avgdl))
//! idf(q)      = ln(1 + (N − n(q) + 0.5) / (n(q) + 0.5))
//! ```
//!
//! `Q` is the analyzed query with repeats kept, `|C|` the analyzed term count
//! of the chunk. The idf never goes negative; a term present in every chunk
//! gets the floor `ln(1 + 0.5/(N + 0.5))`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    chunk_document, rank_order, Chunk, EvidenceSet, RetrievalConfig, RetrievalError,
    ScoredChunk, TokenCounter,
};
use crate::datastore::PrecacheEntry;

/// Lowercase, split on anything that is not alphanumeric. No stemming, no
/// stopwords.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn bm25_idf(total_chunks: usize, doc_freq: usize) -> f64 {
    let n = doc_freq as f64;
    (1.0 + (total_chunks as f64 - n + 0.5) / (n + 0.5)).ln()
}

/// Immutable inverted index; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    chunks: Vec<Chunk>,
    lengths: Vec<u32>,
    avg_len: f64,
    /// term -> [(chunk index, term frequency)], chunk indices ascending.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

/// Serializable view of the index statistics, for debugging and golden tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSnapshot {
    pub chunk_ids: Vec<String>,
    pub lengths: Vec<u32>,
    pub avg_len: f64,
    pub doc_freq: BTreeMap<String, u32>,
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    /// Chunk every document of `entry` and index the chunks.
    pub fn build(
        entry: &PrecacheEntry,
        cfg: &RetrievalConfig,
        tokenizer: &dyn TokenCounter,
    ) -> Result<Self, RetrievalError> {
        cfg.validate()?;
        let chunks = entry
            .documents
            .iter()
            .flat_map(|d| chunk_document(d, cfg, tokenizer))
            .collect();
        Self::from_chunks(chunks)
    }

    pub fn from_chunks(chunks: Vec<Chunk>) -> Result<Self, RetrievalError> {
        if chunks.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut lengths = Vec::with_capacity(chunks.len());
        for (idx, chunk) in chunks.iter().enumerate() {
            let terms = analyze(&chunk.text);
            lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((idx as u32, count));
            }
        }
        let avg_len = lengths.iter().map(|&l| l as f64).sum::<f64>() / chunks.len() as f64;
        Ok(Self {
            chunks,
            lengths,
            avg_len,
            postings,
        })
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn chunk_len(&self, idx: usize) -> u32 {
        self.lengths[idx]
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_frequency(&self, idx: usize, term: &str) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| {
                p.binary_search_by_key(&(idx as u32), |&(c, _)| c)
                    .ok()
                    .map(|i| p[i].1)
            })
            .unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        bm25_idf(self.chunks.len(), self.doc_freq(term))
    }

    /// Per-chunk BM25 scores for `query`, in chunk order.
    pub fn scores(&self, query: &str, cfg: &RetrievalConfig) -> Result<Vec<f64>, RetrievalError> {
        let terms: Vec<String> = analyze(query)
            .into_iter()
            .filter(|t| self.postings.contains_key(t))
            .collect();
        if terms.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let (k1, b) = (cfg.bm25_k1, cfg.bm25_b);
        let mut scores = vec![0.0f64; self.chunks.len()];
        for term in &terms {
            let postings = &self.postings[term];
            let idf = bm25_idf(self.chunks.len(), postings.len());
            for &(idx, tf) in postings {
                let tf = tf as f64;
                let len = self.lengths[idx as usize] as f64;
                let norm = 1.0 - b + b * len / self.avg_len;
                scores[idx as usize] += idf * (tf * (k1 + 1.0)) / (tf + k1 * norm);
            }
        }
        Ok(scores)
    }

    pub fn search(&self, query: &str, cfg: &RetrievalConfig) -> Result<EvidenceSet, RetrievalError> {
        let scores = self.scores(query, cfg)?;
        Ok(self.take_ranked(&scores, cfg.top_k))
    }

    /// The first `top_k` chunks in tie-break order, all scored 0. Used when a
    /// query shares no term with the corpus but evidence is still required.
    pub fn leading_chunks(&self, top_k: usize) -> EvidenceSet {
        self.take_ranked(&vec![0.0; self.chunks.len()], top_k)
    }

    fn take_ranked(&self, scores: &[f64], top_k: usize) -> EvidenceSet {
        let mut order: Vec<usize> = (0..self.chunks.len()).collect();
        order.sort_by(|&a, &b| {
            rank_order((scores[a], &self.chunks[a].id), (scores[b], &self.chunks[b].id))
        });
        EvidenceSet {
            hits: order
                .into_iter()
                .take(top_k)
                .map(|i| ScoredChunk {
                    chunk: self.chunks[i].clone(),
                    score: scores[i],
                })
                .collect(),
        }
    }

    pub fn snapshot(&self) -> IndexSnapshot {
        IndexSnapshot {
            chunk_ids: self.chunks.iter().map(|c| c.id.to_string()).collect(),
            lengths: self.lengths.clone(),
            avg_len: self.avg_len,
            doc_freq: self
                .postings
                .iter()
                .map(|(t, p)| (t.clone(), p.len() as u32))
                .collect(),
            postings: self.postings.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::ChunkId;

    fn chunk(doc: &str, ordinal: u32, text: &str) -> Chunk {
        Chunk {
            id: ChunkId {
                doc_id: doc.into(),
                ordinal,
            },
            text: text.into(),
            token_count: text.split_whitespace().count(),
        }
    }

    #[test]
    fn analyzer_lowercases_and_splits() {
        assert_eq!(analyze("Solar-Eclipse, 2024!"), ["solar", "eclipse", "2024"]);
        assert!(analyze(" ,.; ").is_empty());
    }

    #[test]
    fn single_chunk_average_is_its_length() {
        let idx = Bm25Index::from_chunks(vec![chunk("a", 0, "one two three")]).unwrap();
        assert_eq!(idx.avg_len(), 3.0);
    }

    #[test]
    fn ubiquitous_term_gets_floor_idf() {
        let idx = Bm25Index::from_chunks(vec![
            chunk("a", 0, "moon x"),
            chunk("b", 0, "moon y"),
            chunk("c", 0, "moon z"),
        ])
        .unwrap();
        assert_eq!(idx.idf("moon"), (1.0f64 + 0.5 / 3.5).ln());
        assert!(idx.idf("moon") > 0.0);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert_eq!(Bm25Index::from_chunks(vec![]), Err(RetrievalError::EmptyCorpus));
    }

    #[test]
    fn unique_content_ranks_first() {
        let idx = Bm25Index::from_chunks(vec![
            chunk("a", 0, "the quick brown fox"),
            chunk("b", 0, "lazy dogs sleep"),
            chunk("c", 0, "rivers flow downhill"),
        ])
        .unwrap();
        let ev = idx.search("lazy dogs sleep", &RetrievalConfig::default()).unwrap();
        assert_eq!(ev.hits[0].chunk.id.doc_id, "b");
        assert!(ev.hits[0].score > 0.0);
        assert_eq!(ev.len(), 3);
        assert!(ev.hits[1..].iter().all(|h| h.score == 0.0));
        assert_eq!(ev.hits[1].chunk.id.doc_id, "a");
    }

    #[test]
    fn query_without_corpus_terms_is_empty() {
        let idx = Bm25Index::from_chunks(vec![chunk("a", 0, "alpha")]).unwrap();
        assert_eq!(
            idx.search("omega", &RetrievalConfig::default()),
            Err(RetrievalError::EmptyQuery)
        );
        assert_eq!(idx.search("", &RetrievalConfig::default()), Err(RetrievalError::EmptyQuery));
    }

    #[test]
    fn ties_break_by_chunk_id() {
        let idx = Bm25Index::from_chunks(vec![
            chunk("b", 1, "same words"),
            chunk("b", 0, "same words"),
            chunk("a", 3, "same words"),
        ])
        .unwrap();
        let ev = idx.search("same", &RetrievalConfig::default()).unwrap();
        let ids: Vec<String> = ev.hits.iter().map(|h| h.chunk.id.to_string()).collect();
        assert_eq!(ids, ["a#3", "b#0", "b#1"]);
    }

    #[test]
    fn top_k_truncates() {
        let chunks = (0..12).map(|i| chunk("d", i, "term filler")).collect();
        let idx = Bm25Index::from_chunks(chunks).unwrap();
        let cfg = RetrievalConfig::default();
        assert_eq!(idx.search("term", &cfg).unwrap().len(), 8);
        assert_eq!(idx.leading_chunks(4).len(), 4);
    }
}
