use serde::{Deserialize, Serialize};

use super::RewardError;
use crate::verification::{
    parse_claim_list, render_extraction_prompt, BackendError, BackendTask, VerdictKind, VerifierBackend,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimLabel {
    Supported,
    Contradicted,
    Inconclusive,
}

impl ClaimLabel {
    pub fn from_verdict(kind: VerdictKind) -> Option<Self> {
        match kind {
            VerdictKind::Supported => Some(Self::Supported),
            VerdictKind::Contradicted => Some(Self::Contradicted),
            VerdictKind::Inconclusive => Some(Self::Inconclusive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ClaimLabel>,
}

impl Claim {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            verdict: None,
        }
    }
}

/// Trim, drop empty strings and exact duplicates (first occurrence kept).
pub(crate) fn tidy_claims(raw: Vec<String>) -> Vec<Claim> {
    let mut out: Vec<Claim> = Vec::with_capacity(raw.len());
    for text in raw {
        let text = text.trim();
        if !text.is_empty() && !out.iter().any(|c| c.text == text) {
            out.push(Claim::new(text));
        }
    }
    out
}

/// Ask the backend for the atomic claims of `response`. Returns the claims
/// and the number of backend calls made.
pub fn extract_claims(
    prompt: &str,
    response: &str,
    backend: &dyn VerifierBackend,
    retry_limit: u32,
) -> Result<(Vec<Claim>, u32), RewardError> {
    let rendered = backend
        .needs_rendered_prompt()
        .then(|| render_extraction_prompt(prompt, response));
    let task = BackendTask::ExtractClaims {
        prompt_text: prompt,
        response_text: response,
    };
    let mut last: Option<RewardError> = None;
    for attempt in 1..=retry_limit + 1 {
        match backend.call(task, rendered.as_deref()) {
            Ok(output) => match parse_claim_list(&output) {
                Ok(list) => return Ok((tidy_claims(list), attempt)),
                Err(e) => last = Some(RewardError::ClaimExtractionFailed(e.0)),
            },
            Err(e @ (BackendError::Transport(_) | BackendError::Rejected(_))) => {
                last = Some(RewardError::VerifierUnavailable(e.to_string()))
            }
        }
    }
    Err(last.expect("at least one attempt"))
}
