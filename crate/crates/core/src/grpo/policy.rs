use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GrpoError;

pub const MAX_VOCAB: usize = 32;
pub const MAX_LEN: usize = 8;

/// A table of logits per (prompt, position) over a small vocabulary. Tokens
/// at different positions are independent given the prompt; generation ends
/// after the stop token or at `max_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySoftmaxPolicy {
    prompt_ids: Vec<String>,
    max_len: usize,
    vocab_size: usize,
    stop_token: Option<u32>,
    logits: Vec<f64>,
}

/// log-softmax of `row`.
fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

impl ToySoftmaxPolicy {
    pub fn new(
        prompt_ids: Vec<String>,
        max_len: usize,
        vocab_size: usize,
        stop_token: Option<u32>,
        logits: Vec<f64>,
    ) -> Result<Self, GrpoError> {
        if prompt_ids.is_empty() {
            return Err(GrpoError::InvalidTask("no prompts".into()));
        }
        if !(1..=MAX_LEN).contains(&max_len) {
            return Err(GrpoError::InvalidTask(format!("max_len {max_len} outside 1..={MAX_LEN}")));
        }
        if !(2..=MAX_VOCAB).contains(&vocab_size) {
            return Err(GrpoError::InvalidTask(format!("vocab size {vocab_size} outside 2..={MAX_VOCAB}")));
        }
        if stop_token.is_some_and(|s| s as usize >= vocab_size) {
            return Err(GrpoError::InvalidTask("stop token outside the vocabulary".into()));
        }
        if logits.len() != prompt_ids.len() * max_len * vocab_size {
            return Err(GrpoError::LengthMismatch(format!(
                "{} logits for {} prompts x {max_len} positions x {vocab_size} symbols",
                logits.len(),
                prompt_ids.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(GrpoError::NonFinite("logits"));
        }
        Ok(Self {
            prompt_ids,
            max_len,
            vocab_size,
            stop_token,
            logits,
        })
    }

    pub fn num_prompts(&self) -> usize {
        self.prompt_ids.len()
    }

    pub fn prompt_ids(&self) -> &[String] {
        &self.prompt_ids
    }

    pub fn index_of(&self, prompt_id: &str) -> Option<usize> {
        self.prompt_ids.iter().position(|p| p == prompt_id)
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn stop_token(&self) -> Option<u32> {
        self.stop_token
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn offset(&self, prompt: usize, pos: usize) -> usize {
        (prompt * self.max_len + pos) * self.vocab_size
    }

    pub fn row(&self, prompt: usize, pos: usize) -> &[f64] {
        let o = self.offset(prompt, pos);
        &self.logits[o..o + self.vocab_size]
    }

    pub fn log_probs(&self, prompt: usize, pos: usize) -> Vec<f64> {
        log_softmax(self.row(prompt, pos))
    }

    pub fn probs(&self, prompt: usize, pos: usize) -> Vec<f64> {
        self.log_probs(prompt, pos).into_iter().map(f64::exp).collect()
    }

    /// Per-token log-probabilities of `tokens` as a response to `prompt`.
    pub fn sequence_logprobs(&self, prompt: usize, tokens: &[u32]) -> Vec<f64> {
        tokens
            .iter()
            .enumerate()
            .map(|(t, &tok)| self.log_probs(prompt, t)[tok as usize])
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, prompt: usize, rng: &mut R) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.max_len);
        for t in 0..self.max_len {
            let probs = self.probs(prompt, t);
            let mut u: f64 = rng.random();
            let mut tok = self.vocab_size - 1;
            for (v, p) in probs.iter().enumerate() {
                if u < *p {
                    tok = v;
                    break;
                }
                u -= p;
            }
            out.push(tok as u32);
            if self.stop_token == Some(tok as u32) {
                break;
            }
        }
        out
    }

    /// Add `g * d logp(token) / d logits` into `grad` (same layout as the
    /// logits) for the token at `pos`.
    pub fn accumulate_token_grad(&self, grad: &mut [f64], prompt: usize, pos: usize, token: u32, g: f64) {
        if g == 0.0 {
            return;
        }
        let o = self.offset(prompt, pos);
        let probs = self.probs(prompt, pos);
        for (v, p) in probs.iter().enumerate() {
            let onehot = if v == token as usize { 1.0 } else { 0.0 };
            grad[o + v] += g * (onehot - p);
        }
    }

    /// Gradient ascent: `logits += lr * grad`.
    pub fn ascend(&mut self, grad: &[f64], lr: f64) {
        for (l, g) in self.logits.iter_mut().zip(grad) {
            *l += lr * g;
        }
    }

    /// Probability that a response to `prompt` has exactly `k` non-stop
    /// tokens, for `k = 0..=max_len`.
    pub fn length_distribution(&self, prompt: usize) -> Vec<f64> {
        let mut dist = vec![0.0; self.max_len + 1];
        let Some(stop) = self.stop_token else {
            dist[self.max_len] = 1.0;
            return dist;
        };
        let mut alive = 1.0;
        for (t, slot) in dist.iter_mut().enumerate().take(self.max_len) {
            let p_stop = self.probs(prompt, t)[stop as usize];
            *slot = alive * p_stop;
            alive *= 1.0 - p_stop;
        }
        dist[self.max_len] = alive;
        dist
    }
}
