#![allow(dead_code)]

pub mod grpo_oracle;

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::seq::IndexedRandom;
use rand::Rng;
use rar_core::datastore::doc_id_for_url;
use rar_core::verification::{Fact, FactTable, OracleBackend, VerifierBackend};
use rar_core::{Chunk, Document, EngineConfig, PrecacheEntry, PromptSet, RewardEngine};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn document(url: &str, text: &str) -> Document {
    Document {
        doc_id: doc_id_for_url(url),
        source_url: url.to_string(),
        raw_html: None,
        text: text.to_string(),
        fetched_at: DateTime::<Utc>::UNIX_EPOCH,
    }
}

pub fn entry(prompt_id: &str, prompt_text: &str, texts: &[&str]) -> PrecacheEntry {
    let documents: Vec<Document> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| document(&format!("https://example.org/{prompt_id}/{i}"), t))
        .collect();
    PrecacheEntry {
        prompt_id: prompt_id.to_string(),
        prompt_text: prompt_text.to_string(),
        reference_response: None,
        version_hash: PrecacheEntry::compute_version_hash(&documents),
        documents,
    }
}

pub fn engine(entries: Vec<PrecacheEntry>, backend: Arc<dyn VerifierBackend>, max_inflight: usize) -> RewardEngine {
    let mut config = EngineConfig::default();
    config.verifier.max_inflight = max_inflight;
    RewardEngine::new(config, PromptSet::from_entries(entries).unwrap(), backend).unwrap()
}

pub fn oracle(table: FactTable) -> Arc<dyn VerifierBackend> {
    Arc::new(OracleBackend::new(table).unwrap())
}

/// The capital-city table used by several tests.
pub fn capitals() -> FactTable {
    FactTable::load(fixture("facts/capitals.json")).unwrap()
}

pub fn capitals_entry() -> PrecacheEntry {
    entry(
        "capitals",
        "Tell me about European capitals.",
        &[
            "Paris is the capital of France. Paris has about 2.1M residents.",
            "Berlin is the capital of Germany and its largest city.",
            "Madrid is the capital of Spain. The city lies on the Manzanares river.",
        ],
    )
}

pub const RELATIONS: &[(&str, &str)] = &[
    ("birth_year", "{subject} was born in {value}"),
    ("home_city", "{subject} lives in {value}"),
    ("employer", "{subject} works for {value}"),
    ("instrument", "{subject} plays the {value}"),
    ("pet", "{subject} owns a {value}"),
];

const CITIES: &[&str] = &["Oslo", "Lima", "Quito", "Hanoi", "Accra", "Perth", "Dakar", "Riga"];
const EMPLOYERS: &[&str] = &["Acme Corp", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay"];
const INSTRUMENTS: &[&str] = &["violin", "cello", "oboe", "harp", "tuba", "banjo"];
const PETS: &[&str] = &["cat", "parrot", "tortoise", "ferret", "goldfish"];
const FILLERS: &[&str] = &[
    "The weather was pleasant that year.",
    "Many people find this story interesting.",
    "Little else is recorded about the period.",
];

fn value_pool(relation: &str, rng: &mut impl Rng) -> Vec<String> {
    match relation {
        "birth_year" => {
            let base: u32 = rng.random_range(1900..1990);
            (0..6).map(|k| (base + k * 3).to_string()).collect()
        }
        "home_city" => CITIES.iter().map(|s| s.to_string()).collect(),
        "employer" => EMPLOYERS.iter().map(|s| s.to_string()).collect(),
        "instrument" => INSTRUMENTS.iter().map(|s| s.to_string()).collect(),
        _ => PETS.iter().map(|s| s.to_string()).collect(),
    }
}

/// A random fact table over a few subjects, and the truth it encodes.
pub struct World {
    pub table: FactTable,
    pub subjects: Vec<String>,
    /// (subject, relation, value) triples in the table.
    pub triples: Vec<(String, String, String)>,
    pools: Vec<(String, Vec<String>)>,
}

/// A generated response with its brute-force ground truth.
pub struct Case {
    pub response: String,
    pub asserted: Vec<(String, String, String)>,
    pub contradicted: usize,
    pub supported: usize,
}

impl World {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n_subjects = rng.random_range(1..=4);
        let mut names: Vec<String> = (0..n_subjects).map(|i| format!("Person {}", rng.random_range(0..40) * 10 + i)).collect();
        names.dedup();
        let mut facts = Vec::new();
        let mut triples = Vec::new();
        let mut pools = Vec::new();
        for (rel, pattern) in RELATIONS {
            let pool = value_pool(rel, rng);
            for s in &names {
                if rng.random_bool(0.7) {
                    let v = pool.choose(rng).unwrap().clone();
                    facts.push(Fact::new(s, rel, &v, [*pattern]));
                    triples.push((s.clone(), rel.to_string(), v));
                }
            }
            pools.push((rel.to_string(), pool));
        }
        World {
            table: FactTable::from_facts(facts),
            subjects: names,
            triples,
            pools,
        }
    }

    pub fn truth(&self, subject: &str, relation: &str) -> Option<&str> {
        self.triples
            .iter()
            .find(|(s, r, _)| s == subject && r == relation)
            .map(|(_, _, v)| v.as_str())
    }

    /// Evidence pages stating every true triple.
    pub fn entry(&self, prompt_id: &str) -> PrecacheEntry {
        let mut pages = vec![String::from("Biographical notes."); 3];
        for (k, (s, r, v)) in self.triples.iter().enumerate() {
            let pattern = RELATIONS.iter().find(|(rel, _)| rel == r).unwrap().1;
            pages[k % 3].push_str(&format!(" {}.", pattern.replace("{subject}", s).replace("{value}", v)));
        }
        let refs: Vec<&str> = pages.iter().map(String::as_str).collect();
        entry(prompt_id, "Tell me about these people.", &refs)
    }

    /// A response asserting 0..=max_claims triples, some true, some false,
    /// some about relations missing from the table, with filler sentences,
    /// conjunctions and pronouns mixed in.
    pub fn response(&self, rng: &mut impl Rng, max_claims: usize) -> Case {
        let n = rng.random_range(0..=max_claims);
        let mut asserted = Vec::new();
        for _ in 0..n {
            let s = self.subjects.choose(rng).unwrap().clone();
            let (rel, pool) = self.pools.choose(rng).unwrap();
            let v = match self.truth(&s, rel) {
                Some(t) if rng.random_bool(0.6) => t.to_string(),
                _ => pool.choose(rng).unwrap().clone(),
            };
            if !asserted.contains(&(s.clone(), rel.clone(), v.clone())) {
                asserted.push((s, rel.clone(), v));
            }
        }
        self.render(rng, asserted)
    }

    pub fn render(&self, rng: &mut impl Rng, asserted: Vec<(String, String, String)>) -> Case {
        let mut text = String::new();
        let mut previous: Option<&str> = None;
        for (i, (s, r, v)) in asserted.iter().enumerate() {
            let pattern = RELATIONS.iter().find(|(rel, _)| rel == r).unwrap().1;
            let same_subject = previous == Some(s.as_str());
            let subject = if same_subject && rng.random_bool(0.5) { "They" } else { s.as_str() };
            let clause = pattern.replace("{subject}", subject).replace("{value}", v);
            if i > 0 && same_subject && rng.random_bool(0.4) {
                // Join onto the previous sentence.
                text.pop();
                let rest = clause.split_once(' ').map_or("", |(_, r)| r);
                let rest = if subject == "They" { rest.to_string() } else { clause.clone() };
                text.push_str(&format!(" and {rest}."));
            } else {
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(&clause);
                text.push('.');
            }
            if rng.random_bool(0.2) {
                text.push(' ');
                text.push_str(FILLERS.choose(rng).unwrap());
                previous = None;
            } else {
                previous = Some(s.as_str());
            }
        }
        let mut contradicted = 0;
        let mut supported = 0;
        for (s, r, v) in &asserted {
            match self.truth(s, r) {
                Some(t) if t == v => supported += 1,
                Some(_) => contradicted += 1,
                None => {}
            }
        }
        Case {
            response: text,
            asserted,
            contradicted,
            supported,
        }
    }
}

/// Lowercased alphanumeric runs, written independently of the library's
/// analyzer.
pub fn words_of(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Straightforward Okapi BM25 over `chunks`, recomputing every statistic
/// from the raw texts. Returns `(chunk index, score)` sorted best first,
/// ties by chunk id.
pub fn brute_force_bm25(chunks: &[Chunk], query: &str, k1: f64, b: f64) -> Vec<(usize, f64)> {
    let docs: Vec<Vec<String>> = chunks.iter().map(|c| words_of(&c.text)).collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let mut scored: Vec<(usize, f64)> = (0..docs.len()).map(|i| (i, 0.0)).collect();
    for term in words_of(query) {
        let df = docs.iter().filter(|d| d.contains(&term)).count() as f64;
        if df == 0.0 {
            continue;
        }
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        for (i, d) in docs.iter().enumerate() {
            let tf = d.iter().filter(|w| **w == term).count() as f64;
            if tf > 0.0 {
                let norm = 1.0 - b + b * d.len() as f64 / avg;
                scored[i].1 += idf * (tf * (k1 + 1.0)) / (tf + k1 * norm);
            }
        }
    }
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| chunks[x.0].id.cmp(&chunks[y.0].id)));
    scored
}

const CORPUS_WORDS: &[&str] = &[
    "solar", "eclipse", "moon", "sun", "orbit", "shadow", "corona", "totality", "path", "2024", "april", "texas",
    "mexico", "observer", "glasses", "sky", "light", "dark", "minutes", "phase",
];

/// A random sentence-ish text of `n` words drawn from a small vocabulary.
pub fn random_text(rng: &mut impl Rng, n: usize) -> String {
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str(if rng.random_bool(0.1) { ".\n" } else { " " });
        }
        let w = CORPUS_WORDS.choose(rng).unwrap();
        if rng.random_bool(0.1) {
            s.push_str(&w.to_uppercase());
        } else {
            s.push_str(w);
        }
    }
    s
}

pub fn random_query(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=4);
    (0..n).map(|_| *CORPUS_WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}
