//! Deciding whether a response contradicts retrieved evidence.
//!
//! A [`VerifierBackend`] turns a task into raw model text; [`verify`] owns
//! rendering, parsing and retries so that every backend goes through the same
//! parser. The [`OracleBackend`] answers from a fact table and never needs a
//! rendered prompt.

pub mod mock;
mod oracle;
mod parse;
mod remote;
mod templates;

use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::retrieval::EvidenceSet;

pub use oracle::{normalize_text, Fact, FactTable, OracleBackend, DEFAULT_CONJUNCTIONS};
pub use parse::{
    parse_binary_verdict, parse_claim_list, parse_claim_verdict, parse_rating_verdict,
    ParseFailure,
};
pub use remote::{RemoteConfig, RemoteLmBackend, API_KEY_ENV};
pub use templates::{
    fill, render_extraction_prompt, render_passages, render_prompt, PromptBudget, BINARY_RAR,
    CLAIM_EXTRACTION, CLAIM_VERIFICATION, DATASET_CURATION, PLACEHOLDERS, RATING_RAR,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerificationError {
    #[error("invalid verifier request: {0}")]
    InvalidRequest(String),
    #[error("no passage fits in a prompt of {limit} characters")]
    TemplateBudgetExceeded { limit: usize },
    #[error("verifier unavailable: {0}")]
    VerifierUnavailable(String),
    #[error("verdict undecidable after {attempts} attempts: {reason}")]
    VerdictUndecidable { attempts: u32, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend rejected the request: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    WholeResponseBinary,
    WholeResponseRating,
    PerClaim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierRequest {
    pub prompt_text: String,
    pub response_text: String,
    pub evidence: EvidenceSet,
    pub mode: VerifyMode,
    pub claim_text: Option<String>,
}

impl VerifierRequest {
    pub fn whole_response(
        mode: VerifyMode,
        prompt_text: impl Into<String>,
        response_text: impl Into<String>,
        evidence: EvidenceSet,
    ) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            response_text: response_text.into(),
            evidence,
            mode,
            claim_text: None,
        }
    }

    pub fn per_claim(
        prompt_text: impl Into<String>,
        response_text: impl Into<String>,
        claim_text: impl Into<String>,
        evidence: EvidenceSet,
    ) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            response_text: response_text.into(),
            evidence,
            mode: VerifyMode::PerClaim,
            claim_text: Some(claim_text.into()),
        }
    }

    pub fn validate(&self) -> Result<(), VerificationError> {
        if self.evidence.is_empty() {
            return Err(VerificationError::InvalidRequest("evidence is empty".into()));
        }
        match (self.mode, &self.claim_text) {
            (VerifyMode::PerClaim, None) => Err(VerificationError::InvalidRequest(
                "per-claim request without claim_text".into(),
            )),
            (VerifyMode::WholeResponseBinary | VerifyMode::WholeResponseRating, Some(_)) => Err(
                VerificationError::InvalidRequest("claim_text on a whole-response request".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum VerdictKind {
    NoContradiction,
    Contradiction,
    Supported,
    Contradicted,
    Inconclusive,
    Rating(u8),
}

impl VerdictKind {
    pub fn matches_mode(&self, mode: VerifyMode) -> bool {
        match self {
            Self::NoContradiction | Self::Contradiction => mode == VerifyMode::WholeResponseBinary,
            Self::Supported | Self::Contradicted | Self::Inconclusive => mode == VerifyMode::PerClaim,
            Self::Rating(r) => mode == VerifyMode::WholeResponseRating && *r <= 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub reasoning: String,
    pub raw_model_output: String,
    pub attempts: u32,
}

impl Verdict {
    pub fn new(kind: VerdictKind, reasoning: impl Into<String>, raw: impl Into<String>) -> Self {
        Self {
            kind,
            reasoning: reasoning.into(),
            raw_model_output: raw.into(),
            attempts: 1,
        }
    }
}

/// What a backend is asked to do.
#[derive(Debug, Clone, Copy)]
pub enum BackendTask<'a> {
    Verify(&'a VerifierRequest),
    ExtractClaims {
        prompt_text: &'a str,
        response_text: &'a str,
    },
}

/// Produces raw model text for a task. `prompt` is the rendered template and
/// is only computed when [`VerifierBackend::needs_rendered_prompt`] is true.
pub trait VerifierBackend: Send + Sync {
    fn call(&self, task: BackendTask<'_>, prompt: Option<&str>) -> Result<String, BackendError>;

    fn needs_rendered_prompt(&self) -> bool {
        true
    }

    /// Stable description of the backend and its decoding settings; part of
    /// reward cache keys.
    fn fingerprint(&self) -> String;

    /// Whether the backend can currently take calls.
    fn is_ready(&self) -> bool {
        true
    }
}

impl<T: VerifierBackend + ?Sized> VerifierBackend for std::sync::Arc<T> {
    fn call(&self, task: BackendTask<'_>, prompt: Option<&str>) -> Result<String, BackendError> {
        (**self).call(task, prompt)
    }
    fn needs_rendered_prompt(&self) -> bool {
        (**self).needs_rendered_prompt()
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
    fn is_ready(&self) -> bool {
        (**self).is_ready()
    }
}

/// Run one verification with up to `retry_limit` retries on parse or
/// transport failure. Retries repeat the identical input.
pub fn verify(
    req: &VerifierRequest,
    backend: &dyn VerifierBackend,
    budget: &PromptBudget,
    retry_limit: u32,
) -> Result<Verdict, VerificationError> {
    req.validate()?;
    let prompt = if backend.needs_rendered_prompt() {
        Some(render_prompt(req, budget)?)
    } else {
        None
    };
    let parser = match req.mode {
        VerifyMode::WholeResponseBinary => parse_binary_verdict,
        VerifyMode::WholeResponseRating => parse_rating_verdict,
        VerifyMode::PerClaim => parse_claim_verdict,
    };
    let mut last_transport = None;
    let mut last_parse = None;
    let mut attempts = 0;
    while attempts <= retry_limit {
        attempts += 1;
        match backend.call(BackendTask::Verify(req), prompt.as_deref()) {
            Ok(output) => match parser(&output) {
                Ok(mut verdict) => {
                    verdict.attempts = attempts;
                    return Ok(verdict);
                }
                Err(e) => {
                    tracing::debug!(attempt = attempts, error = %e, "verifier output did not parse");
                    last_transport = None;
                    last_parse = Some(e.0);
                }
            },
            Err(e) => {
                tracing::warn!(attempt = attempts, error = %e, "verifier call failed");
                last_transport = Some(e.to_string());
            }
        }
    }
    match (last_transport, last_parse) {
        (Some(t), _) => Err(VerificationError::VerifierUnavailable(t)),
        (None, reason) => Err(VerificationError::VerdictUndecidable {
            attempts,
            reason: reason.unwrap_or_default(),
        }),
    }
}

/// Counting semaphore bounding concurrent backend calls.
#[derive(Debug)]
pub struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
    capacity: usize,
    in_use_peak: AtomicUsize,
}

impl Limiter {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            permits: Mutex::new(capacity),
            freed: Condvar::new(),
            capacity,
            in_use_peak: AtomicUsize::new(0),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.permits.lock();
        while *free == 0 {
            self.freed.wait(&mut free);
        }
        *free -= 1;
        self.in_use_peak
            .fetch_max(self.capacity - *free, Ordering::Relaxed);
        Permit { limiter: self }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Highest number of permits ever held at once.
    pub fn peak(&self) -> usize {
        self.in_use_peak.load(Ordering::Relaxed)
    }
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.permits.lock() += 1;
        self.limiter.freed.notify_one();
    }
}
