//! Hallucination metrics.
//!
//! Long form: among extracted claims, `hallucination_rate = incorrect / total`
//! with inconclusive claims counted as not incorrect, and
//! `strict_rate = (total - correct) / total` for the reading where anything
//! unsupported counts against the response.
//!
//! Short form: each answer is correct, incorrect or an abstention;
//! `hallucination_rate = incorrect / n` and
//! `attempted_accuracy = correct / (correct + incorrect)`.

use serde::{Deserialize, Serialize};

use crate::rewards::ClaimLabel;
use crate::verification::normalize_text;

pub const DEFAULT_ABSTAIN_MARKERS: &[&str] = &["i don't know", "i do not know", "idk"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongFormReport {
    pub total_claims: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub inconclusive: usize,
    pub hallucination_rate: f64,
    pub strict_rate: f64,
    pub zero_claims: bool,
}

pub fn long_form_report<I>(labels: I) -> LongFormReport
where
    I: IntoIterator<Item = ClaimLabel>,
{
    let (mut correct, mut incorrect, mut inconclusive) = (0, 0, 0);
    for label in labels {
        match label {
            ClaimLabel::Supported => correct += 1,
            ClaimLabel::Contradicted => incorrect += 1,
            ClaimLabel::Inconclusive => inconclusive += 1,
        }
    }
    let total = correct + incorrect + inconclusive;
    let rate = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    LongFormReport {
        total_claims: total,
        correct,
        incorrect,
        inconclusive,
        hallucination_rate: rate(incorrect),
        strict_rate: rate(total - correct),
        zero_claims: total == 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerCategory {
    Correct,
    Incorrect,
    Abstain,
}

/// Case-folded, trimmed, punctuation removed, whitespace collapsed.
fn normalize_answer(text: &str) -> String {
    let kept: String = normalize_text(text)
        .chars()
        .filter(|c| !c.is_ascii_punctuation() || *c == '\'')
        .map(|c| if c == '’' { '\'' } else { c })
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn categorize_short_answer<S: AsRef<str>>(answer: &str, gold: &[S], abstain_markers: &[S]) -> AnswerCategory {
    let norm = normalize_answer(answer);
    if abstain_markers.iter().any(|m| normalize_answer(m.as_ref()) == norm) {
        return AnswerCategory::Abstain;
    }
    if gold.iter().any(|g| normalize_answer(g.as_ref()) == norm) {
        AnswerCategory::Correct
    } else {
        AnswerCategory::Incorrect
    }
}

/// [`categorize_short_answer`] with [`DEFAULT_ABSTAIN_MARKERS`].
pub fn categorize_with_default_markers<S: AsRef<str>>(answer: &str, gold: &[S]) -> AnswerCategory {
    let gold: Vec<&str> = gold.iter().map(AsRef::as_ref).collect();
    categorize_short_answer(answer, &gold, DEFAULT_ABSTAIN_MARKERS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortFormReport {
    pub n: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub abstain: usize,
    pub hallucination_rate: f64,
    /// Absent when every answer is an abstention.
    pub attempted_accuracy: Option<f64>,
}

pub fn short_form_report<I>(categories: I) -> ShortFormReport
where
    I: IntoIterator<Item = AnswerCategory>,
{
    let (mut correct, mut incorrect, mut abstain) = (0, 0, 0);
    for c in categories {
        match c {
            AnswerCategory::Correct => correct += 1,
            AnswerCategory::Incorrect => incorrect += 1,
            AnswerCategory::Abstain => abstain += 1,
        }
    }
    let n = correct + incorrect + abstain;
    let attempts = correct + incorrect;
    ShortFormReport {
        n,
        correct,
        incorrect,
        abstain,
        hallucination_rate: if n == 0 { 0.0 } else { incorrect as f64 / n as f64 },
        attempted_accuracy: (attempts > 0).then(|| correct as f64 / attempts as f64),
    }
}
