use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;

/// Counts tokens for chunk sizing. Implementations report byte spans so that
/// chunk boundaries can be placed without losing any of the source text.
pub trait TokenCounter: Send + Sync {
    /// Byte ranges of the tokens of `text`, in order and non-overlapping.
    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count_tokens(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }

    /// Identifies the counter in cache keys and config digests.
    fn fingerprint(&self) -> String;
}

/// One token per maximal run of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, ch) in text.char_indices() {
            match (ch.is_whitespace(), start) {
                (true, Some(s)) => {
                    spans.push(s..i);
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(s..text.len());
        }
        spans
    }

    fn fingerprint(&self) -> String {
        "whitespace".into()
    }
}

/// Greedy longest-match subword counter over a vocabulary file (one token
/// per line). Within each whitespace-delimited word the longest vocabulary
/// entry matching at the cursor is taken; a character with no match is a
/// token on its own.
#[derive(Debug, Clone)]
pub struct VocabularyCounter {
    vocab: HashSet<String>,
    max_token_chars: usize,
    digest: String,
}

impl VocabularyCounter {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab: Vec<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| !t.is_empty())
            .collect();
        vocab.sort();
        vocab.dedup();
        let max_token_chars = vocab.iter().map(|t| t.chars().count()).max().unwrap_or(1);
        let digest = crate::digest::sha256_hex(vocab.join("\n"));
        Self {
            vocab: vocab.into_iter().collect(),
            max_token_chars,
            digest,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(text.lines().map(|l| l.trim_end_matches('\r').to_string())))
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }
}

impl TokenCounter for VocabularyCounter {
    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        for word in WhitespaceCounter.token_spans(text) {
            let word_text = &text[word.clone()];
            let boundaries: Vec<usize> = word_text
                .char_indices()
                .map(|(i, _)| i)
                .chain(std::iter::once(word_text.len()))
                .collect();
            let mut pos = 0;
            while pos + 1 < boundaries.len() {
                let longest = (pos + 1..boundaries.len().min(pos + self.max_token_chars + 1))
                    .rev()
                    .find(|&end| self.vocab.contains(&word_text[boundaries[pos]..boundaries[end]]))
                    .unwrap_or(pos + 1);
                spans.push(word.start + boundaries[pos]..word.start + boundaries[longest]);
                pos = longest;
            }
        }
        spans
    }

    fn fingerprint(&self) -> String {
        format!("vocab:{}", &self.digest[..16])
    }
}
