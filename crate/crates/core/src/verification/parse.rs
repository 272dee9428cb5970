//! Parsing verifier outputs.
//!
//! Reasoning models tend to emit a thinking preamble, code fences or prose
//! around the answer, so JSON answers are located by trying every `{` (or
//! `[`) from the end of the output backwards and taking the first one that
//! starts a well-formed value of the expected shape.

use serde_json::{Map, Value};

use super::{Verdict, VerdictKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unparseable verifier output: {0}")]
pub struct ParseFailure(pub String);

fn json_candidates(output: &str, open: char) -> impl Iterator<Item = Value> + '_ {
    output
        .char_indices()
        .filter(move |&(_, c)| c == open)
        .map(|(i, _)| i)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .filter_map(move |start| {
            serde_json::Deserializer::from_str(&output[start..])
                .into_iter::<Value>()
                .next()
                .and_then(Result::ok)
        })
}

fn get_ci<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.iter()
        .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
        .map(|(_, v)| v)
}

fn score_as_int(v: &Value) -> Option<i64> {
    let f = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse::<f64>().ok()?,
        _ => return None,
    };
    (f.fract() == 0.0 && f.is_finite()).then_some(f as i64)
}

/// Last JSON object carrying REASONING and SCORE keys, with an integral score.
fn find_scored_object(output: &str) -> Option<(String, i64)> {
    json_candidates(output, '{').find_map(|value| {
        let obj = value.as_object()?;
        let score = score_as_int(get_ci(obj, "score")?)?;
        let reasoning = match get_ci(obj, "reasoning")? {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        Some((reasoning, score))
    })
}

/// `{"REASONING": ..., "SCORE": 0|1}`: 1 means no contradiction.
pub fn parse_binary_verdict(model_output: &str) -> Result<Verdict, ParseFailure> {
    let (reasoning, score) = find_scored_object(model_output)
        .ok_or_else(|| ParseFailure("no JSON object with REASONING and SCORE".into()))?;
    let kind = match score {
        1 => VerdictKind::NoContradiction,
        0 => VerdictKind::Contradiction,
        other => return Err(ParseFailure(format!("binary SCORE {other} outside {{0, 1}}"))),
    };
    Ok(Verdict::new(kind, reasoning, model_output))
}

/// `{"REASONING": ..., "SCORE": 0..=10}`.
pub fn parse_rating_verdict(model_output: &str) -> Result<Verdict, ParseFailure> {
    let (reasoning, score) = find_scored_object(model_output)
        .ok_or_else(|| ParseFailure("no JSON object with REASONING and SCORE".into()))?;
    if !(0..=10).contains(&score) {
        return Err(ParseFailure(format!("rating SCORE {score} outside 0-10")));
    }
    Ok(Verdict::new(VerdictKind::Rating(score as u8), reasoning, model_output))
}

const CLAIM_LABELS: [(&str, VerdictKind); 3] = [
    ("supported", VerdictKind::Supported),
    ("contradicted", VerdictKind::Contradicted),
    ("inconclusive", VerdictKind::Inconclusive),
];

/// Match the final non-empty line against the three claim labels.
pub fn parse_claim_verdict(model_output: &str) -> Result<Verdict, ParseFailure> {
    let line = model_output
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| ParseFailure("empty output".into()))?
        .to_lowercase();
    let exact = line.trim_matches(|c: char| !c.is_alphanumeric());
    if let Some((_, kind)) = CLAIM_LABELS.iter().find(|(label, _)| *label == exact) {
        return Ok(Verdict::new(*kind, String::new(), model_output));
    }
    let words: Vec<&str> = line.split(|c: char| !c.is_alphanumeric()).collect();
    let found: Vec<VerdictKind> = CLAIM_LABELS
        .iter()
        .filter(|(label, _)| words.contains(label))
        .map(|(_, k)| *k)
        .collect();
    match found.as_slice() {
        [kind] => Ok(Verdict::new(*kind, String::new(), model_output)),
        [] => Err(ParseFailure(format!("no claim label in {line:?}"))),
        _ => Err(ParseFailure(format!("ambiguous claim labels in {line:?}"))),
    }
}

/// Last JSON array whose elements are all strings.
pub fn parse_claim_list(model_output: &str) -> Result<Vec<String>, ParseFailure> {
    json_candidates(model_output, '[')
        .find_map(|value| {
            value
                .as_array()?
                .iter()
                .map(|v| v.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
        })
        .ok_or_else(|| ParseFailure("no JSON list of strings".into()))
}
