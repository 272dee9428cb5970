//! Verifier prompt templates and their rendering.
//!
//! Templates are stored verbatim under `templates/`. Rendering substitutes
//! the known `{name}` placeholders in a single pass, so substituted text is
//! never itself re-expanded.

use serde::{Deserialize, Serialize};

use super::{VerificationError, VerifierRequest, VerifyMode};
use crate::retrieval::EvidenceSet;

pub const BINARY_RAR: &str = include_str!("templates/binary_rar.txt");
pub const RATING_RAR: &str = include_str!("templates/rating_rar.txt");
pub const CLAIM_EXTRACTION: &str = include_str!("templates/claim_extraction.txt");
pub const CLAIM_VERIFICATION: &str = include_str!("templates/claim_verification.txt");
pub const DATASET_CURATION: &str = include_str!("templates/dataset_curation.txt");

pub const PLACEHOLDERS: &[&str] = &["passages_text", "prompt_text", "response_text", "claim_text"];

/// Size limits applied to the evidence block of a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptBudget {
    /// Each passage is cut to this many characters.
    pub passage_chars: usize,
    pub max_passages: usize,
    /// Upper bound on the whole rendered prompt, in characters. Passages are
    /// dropped from the tail until the prompt fits.
    pub max_prompt_chars: usize,
}

impl Default for PromptBudget {
    fn default() -> Self {
        Self {
            passage_chars: 4000,
            max_passages: 8,
            max_prompt_chars: 48_000,
        }
    }
}

/// Substitute `{name}` placeholders. Unknown brace groups are left alone.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// `[i] (doc_id) text`, one block per passage, numbered from 1.
pub fn render_passages(evidence: &EvidenceSet, count: usize, passage_chars: usize) -> String {
    evidence
        .hits
        .iter()
        .take(count)
        .enumerate()
        .map(|(i, hit)| {
            let text = hit.chunk.text.trim();
            let text = match text.char_indices().nth(passage_chars) {
                Some((cut, _)) => &text[..cut],
                None => text,
            };
            format!("[{}] ({}) {}", i + 1, hit.chunk.id.doc_id, text)
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn template_for(mode: VerifyMode) -> &'static str {
    match mode {
        VerifyMode::WholeResponseBinary => BINARY_RAR,
        VerifyMode::WholeResponseRating => RATING_RAR,
        VerifyMode::PerClaim => CLAIM_VERIFICATION,
    }
}

/// Render the verifier prompt for `req`.
pub fn render_prompt(req: &VerifierRequest, budget: &PromptBudget) -> Result<String, VerificationError> {
    req.validate()?;
    let template = template_for(req.mode);
    let available = req.evidence.len().min(budget.max_passages);
    for count in (1..=available).rev() {
        let passages = render_passages(&req.evidence, count, budget.passage_chars);
        let rendered = match req.mode {
            VerifyMode::PerClaim => fill(
                template,
                &[
                    ("passages_text", &passages),
                    ("claim_text", req.claim_text.as_deref().unwrap_or_default()),
                ],
            ),
            _ => fill(
                template,
                &[
                    ("passages_text", &passages),
                    ("prompt_text", &req.prompt_text),
                    ("response_text", &req.response_text),
                ],
            ),
        };
        if rendered.chars().count() <= budget.max_prompt_chars {
            return Ok(rendered);
        }
    }
    Err(VerificationError::TemplateBudgetExceeded {
        limit: budget.max_prompt_chars,
    })
}

pub fn render_extraction_prompt(prompt_text: &str, response_text: &str) -> String {
    fill(
        CLAIM_EXTRACTION,
        &[("prompt_text", prompt_text), ("response_text", response_text)],
    )
}
