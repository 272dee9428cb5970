//! Synthetic knowledge tasks for the toy training loop.
//!
//! Short form: each prompt asks for one subject's home city; the response is
//! a single token, a city or the abstain symbol. Answerable prompts start with
//! most mass on the true city, unanswerable ones on a wrong guess.
//!
//! Long form: each prompt asks for a biography; the response is up to
//! `max_len` detail tokens closed by the stop symbol. Every detail token
//! states one attribute of the subject, correctly for a `known_fraction` of
//! the details and wrongly for the rest, so each extra detail risks a
//! contradiction and the empty response never contradicts anything.
//!
//! Both kinds carry a fact table for the oracle verifier and per-prompt
//! documents, so rewards come from the regular reward engine.

use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{ToySoftmaxPolicy, MAX_LEN, MAX_VOCAB};
use super::{GrpoConfig, GrpoError};
use crate::datastore::{doc_id_for_url, Document, PrecacheEntry, PromptSet};
use crate::evalmetrics::AnswerCategory;
use crate::verification::{Fact, FactTable};

pub const STOP: &str = "<stop>";
pub const ABSTAIN: &str = "I don't know.";

const ATTRIBUTES: [&str; 16] = [
    "was born in",
    "moved abroad in",
    "graduated in",
    "married in",
    "published a first book in",
    "won a national prize in",
    "founded a company in",
    "joined the academy in",
    "retired in",
    "gave a famous lecture in",
    "was elected to office in",
    "visited the capital in",
    "recorded an album in",
    "opened a school in",
    "sold the family farm in",
    "returned home in",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShortFormSpec {
    pub num_prompts: usize,
    pub answerable_fraction: f64,
    /// Number of city tokens; the vocabulary is these plus the abstain symbol.
    pub num_candidates: usize,
    /// Logit bonus of the true city on answerable prompts.
    pub known_margin: f64,
    /// Logit bonus of a wrong city on unanswerable prompts.
    pub guess_margin: f64,
    pub abstain_logit: f64,
    /// Half-width of the uniform noise added to every city logit.
    pub noise: f64,
}

impl Default for ShortFormSpec {
    fn default() -> Self {
        Self {
            num_prompts: 32,
            answerable_fraction: 0.5,
            num_candidates: 16,
            known_margin: 4.0,
            guess_margin: 3.0,
            abstain_logit: 0.5,
            noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LongFormSpec {
    pub num_prompts: usize,
    pub max_len: usize,
    pub num_details: usize,
    /// Share of detail tokens that state the attribute correctly.
    pub known_fraction: f64,
    /// Stop-symbol logit at each position (extended with its last value).
    pub stop_logits: Vec<f64>,
    /// Extra logit on correctly stated details.
    pub known_bias: f64,
    /// Chance that a correctly known detail comes out with a wrong value when
    /// rendered, so that every stated detail carries some risk.
    pub slip_rate: f64,
    pub noise: f64,
}

impl Default for LongFormSpec {
    fn default() -> Self {
        Self {
            num_prompts: 16,
            max_len: 8,
            num_details: 12,
            known_fraction: 0.5,
            stop_logits: vec![-2.0],
            known_bias: 0.0,
            slip_rate: 0.0,
            noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    ShortForm(ShortFormSpec),
    LongForm(LongFormSpec),
}

/// Task file contents: a name, a seed and the generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Step size suited to the task; overrides the configured one when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(flatten)]
    pub kind: TaskKind,
}

fn default_name() -> String {
    "toy".into()
}

impl TaskSpec {
    pub fn from_json(text: &str) -> Result<Self, GrpoError> {
        serde_json::from_str(text).map_err(|e| GrpoError::InvalidTask(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GrpoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GrpoError::InvalidTask(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub id: String,
    pub text: String,
    pub subject: String,
    /// Short form: whether the initial policy knows the answer.
    pub answerable: bool,
    /// Short form: token of the true city.
    pub gold: Option<u32>,
    /// Long form: one entry per detail token.
    pub details: Vec<Detail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detail {
    /// Value the policy states for this attribute.
    pub value: String,
    pub correct: bool,
    /// Wrong value used when rendering slips.
    pub slip_value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticKnowledgeTask {
    pub spec: TaskSpec,
    pub vocab: Vec<String>,
    pub prompts: Vec<TaskPrompt>,
    pub facts: FactTable,
    pub stop_token: Option<u32>,
    pub abstain_token: Option<u32>,
    pub max_len: usize,
    /// Initial (and reference) policy logits.
    pub init_logits: Vec<f64>,
}

fn noise(rng: &mut ChaCha8Rng, width: f64) -> f64 {
    if width > 0.0 {
        rng.random_range(-width..=width)
    } else {
        0.0
    }
}

impl SyntheticKnowledgeTask {
    pub fn generate(spec: &TaskSpec) -> Result<Self, GrpoError> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        match &spec.kind {
            TaskKind::ShortForm(s) => Self::short_form(spec.clone(), s, &mut rng),
            TaskKind::LongForm(l) => Self::long_form(spec.clone(), l, &mut rng),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GrpoError> {
        Self::generate(&TaskSpec::load(path)?)
    }

    fn short_form(spec: TaskSpec, s: &ShortFormSpec, rng: &mut ChaCha8Rng) -> Result<Self, GrpoError> {
        if s.num_prompts == 0 || s.num_candidates < 2 || s.num_candidates + 1 > MAX_VOCAB {
            return Err(GrpoError::InvalidTask(format!(
                "short form needs >= 1 prompt and 2..={} candidates",
                MAX_VOCAB - 1
            )));
        }
        if !(0.0..=1.0).contains(&s.answerable_fraction) {
            return Err(GrpoError::InvalidTask("answerable_fraction outside [0, 1]".into()));
        }
        let mut vocab = vec![ABSTAIN.to_string()];
        vocab.extend((0..s.num_candidates).map(|c| format!("City {c}")));
        let answerable_count = (s.answerable_fraction * s.num_prompts as f64).round() as usize;
        let mut answerable: Vec<bool> = (0..s.num_prompts).map(|i| i < answerable_count).collect();
        answerable.shuffle(rng);

        let v = vocab.len();
        let mut logits = Vec::with_capacity(s.num_prompts * v);
        let mut prompts = Vec::with_capacity(s.num_prompts);
        let mut facts = Vec::with_capacity(s.num_prompts);
        for (i, &known) in answerable.iter().enumerate() {
            let subject = format!("Subject {i}");
            let gold = rng.random_range(0..s.num_candidates);
            let mut row: Vec<f64> = (0..v).map(|_| noise(rng, s.noise)).collect();
            row[0] = s.abstain_logit;
            if known {
                row[1 + gold] += s.known_margin;
            } else {
                let mut guess = rng.random_range(0..s.num_candidates - 1);
                if guess >= gold {
                    guess += 1;
                }
                row[1 + guess] += s.guess_margin;
            }
            logits.extend(row);
            facts.push(Fact::new(&subject, "home_city", &vocab[1 + gold], ["{subject} lives in {value}"]));
            prompts.push(TaskPrompt {
                id: format!("q{i}"),
                text: format!("In which city does {subject} live? Answer \"I don't know\" if unsure."),
                subject,
                answerable: known,
                gold: Some(1 + gold as u32),
                details: Vec::new(),
            });
        }
        Ok(Self {
            spec,
            vocab,
            prompts,
            facts: FactTable::from_facts(facts),
            stop_token: None,
            abstain_token: Some(0),
            max_len: 1,
            init_logits: logits,
        })
    }

    fn long_form(spec: TaskSpec, l: &LongFormSpec, rng: &mut ChaCha8Rng) -> Result<Self, GrpoError> {
        if l.num_prompts == 0 || l.num_details == 0 || l.num_details + 1 > MAX_VOCAB || l.num_details > ATTRIBUTES.len() {
            return Err(GrpoError::InvalidTask(format!(
                "long form needs >= 1 prompt and 1..={} details",
                ATTRIBUTES.len()
            )));
        }
        if !(1..=MAX_LEN).contains(&l.max_len) {
            return Err(GrpoError::InvalidTask(format!("max_len outside 1..={MAX_LEN}")));
        }
        if !(0.0..=1.0).contains(&l.known_fraction) || !(0.0..=1.0).contains(&l.slip_rate) {
            return Err(GrpoError::InvalidTask("known_fraction and slip_rate must lie in [0, 1]".into()));
        }
        let stop_logits = if l.stop_logits.is_empty() { vec![0.0] } else { l.stop_logits.clone() };
        let mut vocab = vec![STOP.to_string()];
        vocab.extend(ATTRIBUTES[..l.num_details].iter().map(|a| format!("<{a}>")));
        let v = vocab.len();
        let known_count = (l.known_fraction * l.num_details as f64).round() as usize;

        let mut logits = Vec::with_capacity(l.num_prompts * l.max_len * v);
        let mut prompts = Vec::with_capacity(l.num_prompts);
        let mut facts = Vec::new();
        for i in 0..l.num_prompts {
            let subject = format!("Subject {i}");
            let mut known: Vec<bool> = (0..l.num_details).map(|j| j < known_count).collect();
            known.shuffle(rng);
            let mut details = Vec::with_capacity(l.num_details);
            for (j, &ok) in known.iter().enumerate() {
                let year: u32 = rng.random_range(1850..1990);
                let wrong = year + rng.random_range(1..=9);
                facts.push(Fact::new(
                    &subject,
                    ATTRIBUTES[j],
                    &year.to_string(),
                    [format!("{{subject}} {} {{value}}", ATTRIBUTES[j])],
                ));
                details.push(Detail {
                    value: if ok { year } else { wrong }.to_string(),
                    correct: ok,
                    slip_value: wrong.to_string(),
                });
            }
            for t in 0..l.max_len {
                let mut row = vec![0.0; v];
                row[0] = stop_logits[t.min(stop_logits.len() - 1)];
                for j in 0..l.num_details {
                    row[1 + j] = noise(rng, l.noise) + if known[j] { l.known_bias } else { 0.0 };
                }
                logits.extend(row);
            }
            prompts.push(TaskPrompt {
                id: format!("bio{i}"),
                text: format!("Tell me a bio of {subject}."),
                subject,
                answerable: true,
                gold: None,
                details,
            });
        }
        Ok(Self {
            spec,
            vocab,
            prompts,
            facts: FactTable::from_facts(facts),
            stop_token: Some(0),
            abstain_token: None,
            max_len: l.max_len,
            init_logits: logits,
        })
    }

    pub fn is_short_form(&self) -> bool {
        matches!(self.spec.kind, TaskKind::ShortForm(_))
    }

    /// Toy-loop defaults with this task's learning rate, if it sets one.
    pub fn grpo_config(&self, kl_coefficient: f64) -> GrpoConfig {
        GrpoConfig {
            kl_coefficient,
            learning_rate: self.spec.learning_rate.unwrap_or(GrpoConfig::TOY_LEARNING_RATE),
            ..GrpoConfig::toy()
        }
    }

    pub fn initial_policy(&self) -> ToySoftmaxPolicy {
        ToySoftmaxPolicy::new(
            self.prompts.iter().map(|p| p.id.clone()).collect(),
            self.max_len,
            self.vocab.len(),
            self.stop_token,
            self.init_logits.clone(),
        )
        .expect("generated tasks have valid shapes")
    }

    /// Number of content tokens in a response (the stop symbol excluded).
    pub fn content_length(&self, tokens: &[u32]) -> usize {
        tokens.iter().filter(|&&t| Some(t) != self.stop_token).count()
    }

    pub fn slip_rate(&self) -> f64 {
        match &self.spec.kind {
            TaskKind::LongForm(l) => l.slip_rate,
            TaskKind::ShortForm(_) => 0.0,
        }
    }

    /// Probability that emitting `tok` adds no wrong statement to a response
    /// to prompt `prompt`; 0 for the stop symbol.
    pub fn truth_probability(&self, prompt: usize, tok: u32) -> f64 {
        if Some(tok) == self.stop_token {
            return 0.0;
        }
        if Some(tok) == self.abstain_token {
            return 1.0;
        }
        let p = &self.prompts[prompt];
        match p.gold {
            Some(g) => f64::from(u8::from(tok == g)),
            None if p.details[tok as usize - 1].correct => 1.0 - self.slip_rate(),
            None => 0.0,
        }
    }

    /// Text shown to the verifier for a sampled response, without slips.
    pub fn render(&self, prompt: usize, tokens: &[u32]) -> String {
        self.render_inner(prompt, tokens, || false)
    }

    /// As [`render`](Self::render), with each correct detail slipping to a
    /// wrong value at the task's slip rate.
    pub fn render_sampled<R: Rng + ?Sized>(&self, prompt: usize, tokens: &[u32], rng: &mut R) -> String {
        let rate = self.slip_rate();
        self.render_inner(prompt, tokens, || rate > 0.0 && rng.random::<f64>() < rate)
    }

    fn render_inner(&self, prompt: usize, tokens: &[u32], mut slip: impl FnMut() -> bool) -> String {
        let p = &self.prompts[prompt];
        let mut sentences: Vec<String> = Vec::new();
        for &tok in tokens {
            if Some(tok) == self.stop_token {
                break;
            }
            let sentence = if Some(tok) == self.abstain_token {
                ABSTAIN.to_string()
            } else if self.is_short_form() {
                format!("{} lives in {}.", p.subject, self.vocab[tok as usize])
            } else {
                let j = tok as usize - 1;
                let d = &p.details[j];
                let value = if d.correct && slip() { &d.slip_value } else { &d.value };
                format!("{} {} {}.", p.subject, ATTRIBUTES[j], value)
            };
            if !sentences.contains(&sentence) {
                sentences.push(sentence);
            }
        }
        sentences.join(" ")
    }

    /// Short-form category of a response; `None` for long-form tasks.
    pub fn categorize(&self, prompt: usize, tokens: &[u32]) -> Option<AnswerCategory> {
        if !self.is_short_form() {
            return None;
        }
        let tok = *tokens.first()?;
        Some(if Some(tok) == self.abstain_token {
            AnswerCategory::Abstain
        } else if Some(tok) == self.prompts[prompt].gold {
            AnswerCategory::Correct
        } else {
            AnswerCategory::Incorrect
        })
    }

    /// Evidence documents: the true facts about each subject spread over
    /// three pages.
    pub fn precache(&self) -> PromptSet {
        let mut entries = Vec::with_capacity(self.prompts.len());
        for p in &self.prompts {
            let mut pages = vec![format!("{} is the subject of this page.", p.subject); 3];
            for (k, fact) in self.facts.facts.iter().filter(|f| f.subject == p.subject).enumerate() {
                let sentence = fact.patterns[0]
                    .replace("{subject}", &fact.subject)
                    .replace("{value}", &fact.value);
                pages[k % 3].push_str(&format!(" {sentence}."));
            }
            let documents = pages
                .into_iter()
                .enumerate()
                .map(|(k, text)| {
                    let url = format!("toy://{}/{k}", p.id);
                    Document {
                        doc_id: doc_id_for_url(&url),
                        source_url: url,
                        raw_html: None,
                        text,
                        fetched_at: DateTime::<Utc>::UNIX_EPOCH,
                    }
                })
                .collect();
            let documents: Vec<Document> = documents;
            entries.push(PrecacheEntry {
                prompt_id: p.id.clone(),
                prompt_text: p.text.clone(),
                reference_response: None,
                version_hash: PrecacheEntry::compute_version_hash(&documents),
                documents,
            });
        }
        PromptSet::from_entries(entries).expect("prompt ids are unique")
    }
}
