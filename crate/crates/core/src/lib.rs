//! Retrieval-augmented reward engine for factuality-oriented RL post-training.
//!
//! The crate is organised around the reward pipeline:
//!
//! - [`datastore`]: clean fetched pages and persist per-prompt evidence sets.
//! - [`retrieval`]: fixed-window chunking and Okapi BM25 over one evidence set.
//! - [`verification`]: verifier prompts, output parsing and pluggable backends.
//! - [`rewards`]: binary RAR plus the claim-level and rating ablation rewards.
//! - [`grpo`]: group advantages, the KL estimator, the clipped surrogate and a
//!   toy softmax policy trained against the reward engine.
//! - [`evalmetrics`]: long-form and short-form hallucination metrics.

pub mod config;
pub mod datastore;
pub mod digest;
pub mod evalmetrics;
pub mod grpo;
pub mod retrieval;
pub mod rewards;
pub mod verification;

pub use config::EngineConfig;
pub use datastore::{Document, PrecacheEntry, PromptSet};
pub use retrieval::{Bm25Index, Chunk, ChunkId, EvidenceSet, RetrievalConfig};
pub use rewards::{RewardEngine, RewardKind, RewardResult};
pub use verification::{Verdict, VerdictKind, VerifierBackend, VerifierRequest};
