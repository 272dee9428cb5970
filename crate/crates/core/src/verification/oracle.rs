//! Deterministic fact-table verifier.
//!
//! Each fact `(subject, relation, value)` declares sentence patterns such as
//! `"{subject} is the capital of {value}"`. A clause that fully matches a
//! pattern asserts `(subject, relation, v')`; it is supported when `v'`
//! equals the stored value and contradicted otherwise, after normalization
//! (case-fold, whitespace collapse, edge punctuation stripped). Clauses that
//! match no pattern are inconclusive.
//!
//! Claims are produced by splitting the response into sentences and then on
//! the declared conjunctions; a fragment that does not name a known subject
//! inherits the subject of the preceding fragment, and a leading pronoun is
//! replaced by it. A fragment opening with some other capitalized word names
//! an unknown entity: it is kept as is and clears the running subject.

use std::path::Path;

use regex::{Regex, RegexSet};
use serde::{Deserialize, Serialize};

use super::{BackendError, BackendTask, VerdictKind, VerifierBackend, VerifyMode};

pub const DEFAULT_CONJUNCTIONS: &[&str] = &[", and ", " and ", "; "];

const PRONOUNS: &[&str] = &["it", "he", "she", "they"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub relation: String,
    pub value: String,
    pub patterns: Vec<String>,
}

impl Fact {
    pub fn new<I, S>(subject: &str, relation: &str, value: &str, patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            value: value.into(),
            patterns: patterns.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactTable {
    pub facts: Vec<Fact>,
    #[serde(default = "default_conjunctions")]
    pub conjunctions: Vec<String>,
}

fn default_conjunctions() -> Vec<String> {
    DEFAULT_CONJUNCTIONS.iter().map(|s| s.to_string()).collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FactFile {
    List(Vec<Fact>),
    Table(FactTable),
}

impl FactTable {
    pub fn from_facts(facts: Vec<Fact>) -> Self {
        Self {
            facts,
            conjunctions: default_conjunctions(),
        }
    }

    /// Accepts either a bare JSON list of facts or `{facts, conjunctions}`.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(match serde_json::from_str(text)? {
            FactFile::List(facts) => Self::from_facts(facts),
            FactFile::Table(t) => t,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Lowercase, collapse whitespace, strip surrounding punctuation and quotes.
pub fn normalize_text(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_matches(|c: char| c.is_whitespace() || ".,;:!?\"'`“”‘’()".contains(c))
        .to_string()
}

fn normalize_literal(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_space = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !in_space {
                out.push(' ');
            }
            in_space = true;
        } else {
            out.extend(ch.to_lowercase());
            in_space = false;
        }
    }
    out
}

#[derive(Debug, Clone)]
struct CompiledPattern {
    fact: usize,
    regex: Regex,
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    table: FactTable,
    patterns: Vec<CompiledPattern>,
    pattern_set: RegexSet,
    /// Normalized subjects, longest first.
    subjects: Vec<String>,
    conjunction_re: Option<Regex>,
    fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimJudgement {
    pub kind: VerdictKind,
    pub explanation: String,
}

impl OracleBackend {
    pub fn new(table: FactTable) -> Result<Self, String> {
        let mut patterns = Vec::new();
        for (idx, fact) in table.facts.iter().enumerate() {
            for pattern in &fact.patterns {
                patterns.push(CompiledPattern {
                    fact: idx,
                    regex: compile_pattern(pattern, &fact.subject)?,
                });
            }
        }
        let pattern_set =
            RegexSet::new(patterns.iter().map(|p| p.regex.as_str())).map_err(|e| e.to_string())?;
        let mut subjects: Vec<String> = table.facts.iter().map(|f| normalize_text(&f.subject)).collect();
        subjects.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        subjects.dedup();

        let mut conj: Vec<&String> = table.conjunctions.iter().filter(|c| !c.is_empty()).collect();
        conj.sort_by_key(|c| std::cmp::Reverse(c.len()));
        let conjunction_re = if conj.is_empty() {
            None
        } else {
            let alt = conj.iter().map(|c| regex::escape(c)).collect::<Vec<_>>().join("|");
            Some(Regex::new(&format!("(?i){alt}")).map_err(|e| e.to_string())?)
        };
        let fingerprint = format!(
            "oracle:{}",
            &crate::digest::sha256_hex(serde_json::to_vec(&table).expect("serializable"))[..16]
        );
        Ok(Self {
            table,
            patterns,
            pattern_set,
            subjects,
            conjunction_re,
            fingerprint,
        })
    }

    pub fn table(&self) -> &FactTable {
        &self.table
    }

    fn leading_subject(&self, normalized: &str) -> Option<usize> {
        self.subjects.iter().position(|s| {
            normalized.starts_with(s.as_str())
                && normalized[s.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric())
        })
    }

    /// Split `response` into atomic claims.
    pub fn decompose(&self, response: &str) -> Vec<String> {
        let mut claims: Vec<String> = Vec::new();
        let mut subject: Option<String> = None;
        for sentence in split_sentences(response) {
            let fragments: Vec<&str> = match &self.conjunction_re {
                Some(re) => re.split(sentence).collect(),
                None => vec![sentence],
            };
            for fragment in fragments {
                let fragment = fragment
                    .trim()
                    .trim_end_matches(|c: char| ".!?;,:".contains(c))
                    .trim();
                if fragment.is_empty() {
                    continue;
                }
                let normalized = normalize_text(fragment);
                let claim = if let Some(i) = self.leading_subject(&normalized) {
                    let words = self.subjects[i].split(' ').count();
                    subject = Some(fragment.split_whitespace().take(words).collect::<Vec<_>>().join(" "));
                    fragment.to_string()
                } else if let Some(subj) = &subject {
                    let first = normalized.split(' ').next().unwrap_or_default();
                    let capitalized = fragment.chars().next().is_some_and(char::is_uppercase);
                    if capitalized && !PRONOUNS.contains(&first) {
                        subject = None;
                        fragment.to_string()
                    } else if PRONOUNS.contains(&first) {
                        let rest = fragment.split_once(char::is_whitespace).map_or("", |(_, r)| r);
                        format!("{subj} {}", rest.trim_start())
                    } else {
                        format!("{subj} {fragment}")
                    }
                } else {
                    fragment.to_string()
                };
                if !claims.contains(&claim) {
                    claims.push(claim);
                }
            }
        }
        claims
    }

    pub fn judge_claim(&self, claim: &str) -> ClaimJudgement {
        let normalized = normalize_text(claim);
        let mut contradiction = None;
        for idx in self.pattern_set.matches(&normalized).iter() {
            let p = &self.patterns[idx];
            let Some(caps) = p.regex.captures(&normalized) else {
                continue;
            };
            let fact = &self.table.facts[p.fact];
            let asserted = caps.name("value").map_or(String::new(), |m| normalize_text(m.as_str()));
            if asserted == normalize_text(&fact.value) {
                return ClaimJudgement {
                    kind: VerdictKind::Supported,
                    explanation: format!("{} {} {}", fact.subject, fact.relation, fact.value),
                };
            }
            contradiction.get_or_insert_with(|| {
                format!(
                    "The response states \"{claim}\", but the evidence gives {} {} {}.",
                    fact.subject, fact.relation, fact.value
                )
            });
        }
        match contradiction {
            Some(explanation) => ClaimJudgement {
                kind: VerdictKind::Contradicted,
                explanation,
            },
            None => ClaimJudgement {
                kind: VerdictKind::Inconclusive,
                explanation: String::new(),
            },
        }
    }

    /// Whole-response decision: contradiction iff some claim is contradicted.
    pub fn judge_binary(&self, response: &str) -> ClaimJudgement {
        self.decompose(response)
            .iter()
            .map(|c| self.judge_claim(c))
            .find(|j| j.kind == VerdictKind::Contradicted)
            .map(|j| ClaimJudgement {
                kind: VerdictKind::Contradiction,
                explanation: j.explanation,
            })
            .unwrap_or(ClaimJudgement {
                kind: VerdictKind::NoContradiction,
                explanation: "No contradiction found.".into(),
            })
    }

    /// 0-10 rating following the confidence guide bands: no contradiction
    /// with some supported claim is 10, nothing checkable is 5, one
    /// contradiction is 3, several are 1.
    pub fn judge_rating(&self, response: &str) -> (u8, String) {
        let judgements: Vec<ClaimJudgement> =
            self.decompose(response).iter().map(|c| self.judge_claim(c)).collect();
        let contradicted: Vec<&ClaimJudgement> =
            judgements.iter().filter(|j| j.kind == VerdictKind::Contradicted).collect();
        let supported = judgements.iter().any(|j| j.kind == VerdictKind::Supported);
        match (contradicted.len(), supported) {
            (0, true) => (10, "no factual error found".into()),
            (0, false) => (5, "nothing in the response can be checked against the evidence".into()),
            (1, _) => (3, contradicted[0].explanation.clone()),
            _ => (1, contradicted[0].explanation.clone()),
        }
    }
}

fn compile_pattern(pattern: &str, subject: &str) -> Result<Regex, String> {
    let mut re = String::from("^");
    let mut rest = pattern.trim();
    let mut has_value = false;
    while let Some(open) = rest.find('{') {
        re.push_str(&regex::escape(&normalize_literal(&rest[..open])));
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| format!("unclosed placeholder in pattern {pattern:?}"))?
            + open;
        match &rest[open + 1..close] {
            "subject" => re.push_str(&regex::escape(&normalize_text(subject))),
            "value" if !has_value => {
                re.push_str("(?P<value>.+?)");
                has_value = true;
            }
            "any" => re.push_str(".*?"),
            other => return Err(format!("unknown placeholder {{{other}}} in pattern {pattern:?}")),
        }
        rest = &rest[close + 1..];
    }
    re.push_str(&regex::escape(&normalize_literal(rest)));
    re.push('$');
    if !has_value {
        return Err(format!("pattern {pattern:?} has no {{value}} slot"));
    }
    Regex::new(&re).map_err(|e| e.to_string())
}

/// Sentence split on `.`, `!`, `?` followed by whitespace (or the end) and
/// on line breaks. A period inside a number such as `2.1M` does not split.
fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        let next_is_break = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
        let end = if ch == '\n' {
            Some(i)
        } else if ".!?".contains(ch) && next_is_break {
            Some(i + ch.len_utf8())
        } else {
            None
        };
        if let Some(end) = end {
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

impl VerifierBackend for OracleBackend {
    fn call(&self, task: BackendTask<'_>, _prompt: Option<&str>) -> Result<String, BackendError> {
        Ok(match task {
            BackendTask::Verify(req) => match req.mode {
                VerifyMode::WholeResponseBinary => {
                    let j = self.judge_binary(&req.response_text);
                    let score = u8::from(j.kind == VerdictKind::NoContradiction);
                    serde_json::json!({ "REASONING": j.explanation, "SCORE": score }).to_string()
                }
                VerifyMode::WholeResponseRating => {
                    let (score, reasoning) = self.judge_rating(&req.response_text);
                    serde_json::json!({ "REASONING": reasoning, "SCORE": score }).to_string()
                }
                VerifyMode::PerClaim => {
                    let claim = req.claim_text.as_deref().unwrap_or_default();
                    match self.judge_claim(claim).kind {
                        VerdictKind::Supported => "supported",
                        VerdictKind::Contradicted => "contradicted",
                        _ => "inconclusive",
                    }
                    .to_string()
                }
            },
            BackendTask::ExtractClaims { response_text, .. } => {
                serde_json::to_string(&self.decompose(response_text)).expect("strings serialize")
            }
        })
    }

    fn needs_rendered_prompt(&self) -> bool {
        false
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend() -> OracleBackend {
        OracleBackend::new(FactTable::from_facts(vec![
            Fact::new("Paris", "capital_of", "France", ["{subject} is the capital of {value}"]),
            Fact::new("Paris", "population", "2.1M", ["{subject} has {value} residents"]),
            Fact::new(
                "The Eiffel Tower",
                "completed_in",
                "1889",
                ["{subject} was completed in {value}", "{subject} opened in {value}"],
            ),
        ]))
        .unwrap()
    }

    #[test]
    fn conjunctions_split_into_two_claims() {
        let claims = backend().decompose("Paris is the capital of France and has 2.1M residents");
        assert_eq!(claims, ["Paris is the capital of France", "Paris has 2.1M residents"]);
    }

    #[test]
    fn pronouns_take_the_running_subject() {
        let claims = backend().decompose("The Eiffel Tower is tall. It opened in 1889.");
        assert_eq!(claims[1], "The Eiffel Tower opened in 1889");
        assert_eq!(backend().judge_claim(&claims[1]).kind, VerdictKind::Supported);
    }

    #[test]
    fn unknown_names_do_not_inherit_a_subject() {
        let claims = backend().decompose("Paris is the capital of France. Lyon is large. It is the capital of Spain.");
        assert_eq!(claims, ["Paris is the capital of France", "Lyon is large", "It is the capital of Spain"]);
    }

    #[test]
    fn claim_judgements() {
        let b = backend();
        assert_eq!(b.judge_claim("Paris is the capital of France.").kind, VerdictKind::Supported);
        assert_eq!(b.judge_claim("paris is  the capital of GERMANY").kind, VerdictKind::Contradicted);
        assert_eq!(b.judge_claim("The Eiffel Tower was completed in 1887").kind, VerdictKind::Contradicted);
        assert_eq!(b.judge_claim("Paris is lovely").kind, VerdictKind::Inconclusive);
    }

    #[test]
    fn binary_and_rating() {
        let b = backend();
        assert_eq!(b.judge_binary("Paris has 2.1M residents.").kind, VerdictKind::NoContradiction);
        assert_eq!(
            b.judge_binary("Paris has 2.1M residents. Paris is the capital of Spain.").kind,
            VerdictKind::Contradiction
        );
        assert_eq!(b.judge_rating("Paris is the capital of France.").0, 10);
        assert_eq!(b.judge_rating("I don't know.").0, 5);
        assert_eq!(b.judge_rating("Paris is the capital of Spain.").0, 3);
        assert_eq!(b.judge_rating("Paris is the capital of Spain and has 3M residents.").0, 1);
    }

    #[test]
    fn no_factual_content_extracts_nothing() {
        assert!(backend().decompose("").is_empty());
        assert!(backend().decompose("   ").is_empty());
    }

    #[test]
    fn file_forms() {
        let list = r#"[{"subject":"A","relation":"r","value":"1","patterns":["{subject} is {value}"]}]"#;
        let t = FactTable::from_json(list).unwrap();
        assert_eq!(t.conjunctions, default_conjunctions());
        let full = r#"{"facts":[],"conjunctions":[" plus "]}"#;
        assert_eq!(FactTable::from_json(full).unwrap().conjunctions, [" plus "]);
    }

    #[test]
    fn bad_patterns_rejected() {
        let t = FactTable::from_facts(vec![Fact::new("A", "r", "1", ["{subject} is"])]);
        assert!(OracleBackend::new(t).is_err());
        let t = FactTable::from_facts(vec![Fact::new("A", "r", "1", ["{subject} is {colour}"])]);
        assert!(OracleBackend::new(t).is_err());
    }

    #[test]
    fn sentences_keep_decimal_numbers() {
        assert_eq!(split_sentences("It is 2.1M. Next one!\nLast"), ["It is 2.1M.", "Next one!", "Last"]);
    }
}
