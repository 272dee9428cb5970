//! Reward computation: binary RAR and the ablation variants.
//!
//! | kind | verifier calls | value |
//! |------|----------------|-------|
//! | `binary_rar` | 1 | 1 if no contradiction, else 0 |
//! | `veriscore` | 1 + claims | supported / claims |
//! | `binary_veriscore@t` | 1 + claims | 1 if veriscore >= t |
//! | `conflict_only` | 1 + claims | (claims - contradicted) / claims |
//! | `rating_rar` | 1 | rating / 10 |
//!
//! Default policies: an undecidable binary verdict scores 1 and an
//! undecidable rating 0.5; zero extracted claims score 0 for VeriScore and
//! 1 for conflict-only. Each of these sets `degenerate`.

mod cache;
mod claims;
mod engine;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::retrieval::{ChunkId, RetrievalError};
use crate::verification::{Verdict, VerdictKind};

pub use cache::{AuditRecord, RewardCache};
pub use claims::{extract_claims, Claim, ClaimLabel};
pub use engine::{EngineStats, RewardEngine, ScoreItem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardKind {
    BinaryRar,
    VeriScore,
    BinaryVeriScore { threshold: f64 },
    ConflictOnlyVeriScore,
    RatingRar,
}

impl RewardKind {
    pub const ALL_NAMES: [&'static str; 5] =
        ["binary_rar", "veriscore", "binary_veriscore", "conflict_only", "rating_rar"];

    pub fn binary_veriscore(threshold: f64) -> Result<Self, RewardError> {
        if threshold > 0.0 && threshold <= 1.0 {
            Ok(Self::BinaryVeriScore { threshold })
        } else {
            Err(RewardError::InvalidKind(format!("threshold {threshold} outside (0, 1]")))
        }
    }

    pub fn uses_claims(&self) -> bool {
        matches!(
            self,
            Self::VeriScore | Self::BinaryVeriScore { .. } | Self::ConflictOnlyVeriScore
        )
    }

    /// Short label used for per-kind counters.
    pub fn stat_label(&self) -> &'static str {
        match self {
            Self::BinaryRar => "binary",
            Self::VeriScore => "veriscore",
            Self::BinaryVeriScore { .. } => "binary_veriscore",
            Self::ConflictOnlyVeriScore => "conflict_only",
            Self::RatingRar => "rating",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BinaryRar => f.write_str("binary_rar"),
            Self::VeriScore => f.write_str("veriscore"),
            Self::BinaryVeriScore { threshold } => write!(f, "binary_veriscore@{threshold}"),
            Self::ConflictOnlyVeriScore => f.write_str("conflict_only"),
            Self::RatingRar => f.write_str("rating_rar"),
        }
    }
}

/// `binary_veriscore` alone means threshold 0.5; `binary_veriscore@0.7`
/// sets it explicitly.
impl FromStr for RewardKind {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "binary_rar" => return Ok(Self::BinaryRar),
            "veriscore" => return Ok(Self::VeriScore),
            "binary_veriscore" => return Ok(Self::BinaryVeriScore { threshold: 0.5 }),
            "conflict_only" => return Ok(Self::ConflictOnlyVeriScore),
            "rating_rar" => return Ok(Self::RatingRar),
            _ => {}
        }
        if let Some(t) = s.strip_prefix("binary_veriscore@") {
            let threshold = t
                .parse::<f64>()
                .map_err(|_| RewardError::InvalidKind(format!("bad threshold in {s:?}")))?;
            return Self::binary_veriscore(threshold);
        }
        Err(RewardError::InvalidKind(format!(
            "unknown reward kind {s:?} (expected one of {})",
            Self::ALL_NAMES.join(", ")
        )))
    }
}

impl Serialize for RewardKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RewardKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateReason {
    /// The verifier output never parsed; the default value was used.
    Undecidable,
    /// No claims were extracted.
    NoClaims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResult {
    pub value: f64,
    pub kind: RewardKind,
    pub verdicts: Vec<Verdict>,
    pub evidence_used: Vec<ChunkId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claims: Option<Vec<Claim>>,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate_reason: Option<DegenerateReason>,
    pub cache_hit: bool,
    /// Backend calls made, retries included.
    pub verifier_calls: u32,
    #[serde(default)]
    pub latency_ms: f64,
}

impl RewardResult {
    pub(crate) fn new(kind: RewardKind, value: f64) -> Self {
        Self {
            value,
            kind,
            verdicts: Vec::new(),
            evidence_used: Vec::new(),
            claims: None,
            degenerate: false,
            degenerate_reason: None,
            cache_hit: false,
            verifier_calls: 0,
            latency_ms: 0.0,
        }
    }

    pub(crate) fn mark_degenerate(&mut self, reason: DegenerateReason) {
        self.degenerate = true;
        if self.degenerate_reason != Some(DegenerateReason::Undecidable) {
            self.degenerate_reason = Some(reason);
        }
    }

    /// Claim counts `(supported, contradicted, inconclusive)`.
    pub fn claim_counts(&self) -> Option<(usize, usize, usize)> {
        let claims = self.claims.as_ref()?;
        let count = |l: ClaimLabel| claims.iter().filter(|c| c.verdict == Some(l)).count();
        Some((
            count(ClaimLabel::Supported),
            count(ClaimLabel::Contradicted),
            count(ClaimLabel::Inconclusive),
        ))
    }

    /// Verdicts that carried a binary or rating decision.
    pub fn whole_response_verdict(&self) -> Option<VerdictKind> {
        self.verdicts
            .iter()
            .map(|v| v.kind)
            .find(|k| matches!(k, VerdictKind::NoContradiction | VerdictKind::Contradiction | VerdictKind::Rating(_)))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("unknown prompt_id {0:?}")]
    UnknownPrompt(String),
    #[error("invalid reward kind: {0}")]
    InvalidKind(String),
    #[error("verifier unavailable: {0}")]
    VerifierUnavailable(String),
    #[error("claim extraction failed: {0}")]
    ClaimExtractionFailed(String),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl RewardError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownPrompt(_) => "unknown_prompt",
            Self::InvalidKind(_) => "invalid_kind",
            Self::VerifierUnavailable(_) => "verifier_unavailable",
            Self::ClaimExtractionFailed(_) => "claim_extraction_failed",
            Self::Retrieval(_) => "retrieval_failed",
            Self::InvalidRequest(_) => "invalid_request",
        }
    }
}

/// `supported / total`; 0 for no claims.
pub fn veriscore_value(supported: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        supported as f64 / total as f64
    }
}

/// `(total - contradicted) / total`; 1 for no claims.
pub fn conflict_only_value(contradicted: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        (total - contradicted) as f64 / total as f64
    }
}

pub fn threshold_value(veriscore: f64, threshold: f64) -> f64 {
    if veriscore >= threshold {
        1.0
    } else {
        0.0
    }
}
