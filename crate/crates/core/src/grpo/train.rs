use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::ToySoftmaxPolicy;
use super::task::SyntheticKnowledgeTask;
use super::{surrogate_with_grad, GrpoConfig, GrpoError, RolloutGroup, SurrogateValue};
use crate::config::EngineConfig;
use crate::evalmetrics::AnswerCategory;
use crate::rewards::{RewardEngine, RewardKind, ScoreItem};
use crate::verification::OracleBackend;

/// One ascent step on the mean of the groups' objectives. Each group's
/// `logprob_policy` must come from `policy`; the gradient is mapped onto the
/// logit table through the softmax and averaged over groups.
pub fn toy_policy_step(
    policy: &mut ToySoftmaxPolicy,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<SurrogateValue, GrpoError> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(GrpoError::GroupTooSmall(0));
    }
    let mut grad = vec![0.0; policy.logits().len()];
    let mut total = SurrogateValue {
        objective: 0.0,
        clip_fraction: 0.0,
        kl_value: 0.0,
    };
    for group in groups {
        let prompt = policy
            .index_of(&group.prompt_id)
            .ok_or_else(|| GrpoError::InvalidTask(format!("unknown prompt {}", group.prompt_id)))?;
        let (value, token_grads) = surrogate_with_grad(group, cfg)?;
        for (tokens, g) in group.responses.iter().zip(&token_grads) {
            for (t, (&tok, &gt)) in tokens.iter().zip(g).enumerate() {
                policy.accumulate_token_grad(&mut grad, prompt, t, tok, gt);
            }
        }
        total.objective += value.objective;
        total.clip_fraction += value.clip_fraction;
        total.kl_value += value.kl_value;
    }
    let m = groups.len() as f64;
    policy.ascend(&grad, cfg.learning_rate / m);
    total.objective /= m;
    total.clip_fraction /= m;
    total.kl_value /= m;
    Ok(total)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub rollouts: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub abstain: usize,
}

impl CategoryCounts {
    fn add(&mut self, c: AnswerCategory) {
        self.rollouts += 1;
        match c {
            AnswerCategory::Correct => self.correct += 1,
            AnswerCategory::Incorrect => self.incorrect += 1,
            AnswerCategory::Abstain => self.abstain += 1,
        }
    }

    pub fn abstention_rate(&self) -> f64 {
        ratio(self.abstain, self.rollouts)
    }

    pub fn attempted_accuracy(&self) -> Option<f64> {
        let attempts = self.correct + self.incorrect;
        (attempts > 0).then(|| ratio(self.correct, attempts))
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-step statistics over the sampled rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub reward_mean: f64,
    /// Share of rollouts with reward 0.
    pub hallucination_rate: f64,
    pub abstention_rate: f64,
    /// Mean number of content tokens per rollout.
    pub mean_length: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub objective: f64,
    pub answerable: CategoryCounts,
    pub unanswerable: CategoryCounts,
}

/// Rates implied by the policy's probabilities over all prompts, against the
/// task's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    /// Probability that a response contains a wrong statement.
    pub hallucination_rate: f64,
    pub abstention_answerable: f64,
    pub abstention_unanswerable: f64,
    /// P(correct) / P(attempt) over answerable prompts.
    pub attempted_accuracy_answerable: Option<f64>,
    pub mean_length: f64,
    /// Mean KL(π_θ || π_ref) per prompt, summed over positions reached.
    pub kl_to_reference: f64,
}

pub fn evaluate_policy(
    task: &SyntheticKnowledgeTask,
    policy: &ToySoftmaxPolicy,
    reference: &ToySoftmaxPolicy,
) -> PolicyEvaluation {
    let np = task.prompts.len();
    let (mut halluc, mut len, mut kl) = (0.0, 0.0, 0.0);
    let (mut abst_a, mut abst_u, mut n_a, mut n_u) = (0.0, 0.0, 0usize, 0usize);
    let (mut correct_a, mut attempt_a) = (0.0, 0.0);
    for (i, p) in task.prompts.iter().enumerate() {
        // Probability of reaching each position, and of having only said
        // true things so far.
        let (mut alive, mut clean) = (1.0, 1.0);
        let mut p_clean_response = 0.0;
        for t in 0..policy.max_len() {
            let probs = policy.probs(i, t);
            let ref_lp = reference.log_probs(i, t);
            kl += alive
                * probs
                    .iter()
                    .zip(&ref_lp)
                    .filter(|(q, _)| **q > 0.0)
                    .map(|(q, r)| q * (q.ln() - r))
                    .sum::<f64>();
            let p_stop = task.stop_token.map_or(0.0, |s| probs[s as usize]);
            let p_true: f64 = probs
                .iter()
                .enumerate()
                .map(|(v, q)| q * task.truth_probability(i, v as u32))
                .sum();
            p_clean_response += clean * p_stop;
            len += alive * (1.0 - p_stop);
            alive *= 1.0 - p_stop;
            clean *= p_true;
        }
        p_clean_response += clean;
        halluc += 1.0 - p_clean_response;

        if let Some(abstain) = task.abstain_token {
            let probs = policy.probs(i, 0);
            let pa = probs[abstain as usize];
            if p.answerable {
                abst_a += pa;
                n_a += 1;
                let pc = p.gold.map_or(0.0, |g| probs[g as usize]);
                correct_a += pc;
                attempt_a += 1.0 - pa;
            } else {
                abst_u += pa;
                n_u += 1;
            }
        }
    }
    let mean = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
    PolicyEvaluation {
        hallucination_rate: mean(halluc, np),
        abstention_answerable: mean(abst_a, n_a),
        abstention_unanswerable: mean(abst_u, n_u),
        attempted_accuracy_answerable: (attempt_a > 0.0).then(|| correct_a / attempt_a),
        mean_length: mean(len, np),
        kl_to_reference: mean(kl, np).max(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub task: String,
    pub reward_kind: String,
    pub config: GrpoConfig,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub initial: PolicyEvaluation,
    pub final_eval: PolicyEvaluation,
    pub final_policy: ToySoftmaxPolicy,
}

impl TrainingReport {
    /// Mean of `f` over the first (or last) `window` step records.
    pub fn window_mean(&self, window: usize, last: bool, f: impl Fn(&StepRecord) -> f64) -> f64 {
        let w = window.clamp(1, self.steps.len().max(1));
        let slice = if last {
            &self.steps[self.steps.len() - w..]
        } else {
            &self.steps[..w]
        };
        if slice.is_empty() {
            return 0.0;
        }
        slice.iter().map(f).sum::<f64>() / slice.len() as f64
    }

    /// One JSON object per step.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs the loop with rewards from a caller-supplied function of
/// `(prompt index, tokens)` pairs.
pub fn train_with_rewards<F>(
    task: &SyntheticKnowledgeTask,
    cfg: &GrpoConfig,
    steps: usize,
    seed: u64,
    reward_label: &str,
    mut reward: F,
) -> Result<TrainingReport, GrpoError>
where
    F: FnMut(&[(usize, Vec<u32>)]) -> Result<Vec<f64>, GrpoError>,
{
    cfg.validate()?;
    let reference = task.initial_policy();
    let mut policy = reference.clone();
    let initial = evaluate_policy(task, &policy, &reference);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let np = task.prompts.len();
    let batch = cfg.batch_prompts.min(np);
    let mut order: Vec<usize> = Vec::new();
    let mut records = Vec::with_capacity(steps);

    for step in 0..steps {
        let mut chosen = Vec::with_capacity(batch);
        while chosen.len() < batch {
            if order.is_empty() {
                order = (0..np).collect();
                order.shuffle(&mut rng);
            }
            let next = order.pop().expect("refilled");
            if !chosen.contains(&next) {
                chosen.push(next);
            }
        }
        let old = policy.clone();
        let mut rollouts = Vec::with_capacity(batch * cfg.group_size);
        for &i in &chosen {
            for _ in 0..cfg.group_size {
                rollouts.push((i, old.sample(i, &mut rng)));
            }
        }
        let rewards = reward(&rollouts)?;
        if rewards.len() != rollouts.len() {
            return Err(GrpoError::LengthMismatch(format!(
                "{} rewards for {} rollouts",
                rewards.len(),
                rollouts.len()
            )));
        }

        let mut first: Option<SurrogateValue> = None;
        for _ in 0..cfg.inner_updates {
            let groups: Vec<RolloutGroup> = chosen
                .iter()
                .enumerate()
                .map(|(g, &i)| {
                    let span = g * cfg.group_size..(g + 1) * cfg.group_size;
                    let responses: Vec<Vec<u32>> = rollouts[span.clone()].iter().map(|(_, y)| y.clone()).collect();
                    RolloutGroup {
                        prompt_id: policy.prompt_ids()[i].clone(),
                        logprob_policy: responses.iter().map(|y| policy.sequence_logprobs(i, y)).collect(),
                        logprob_old: responses.iter().map(|y| old.sequence_logprobs(i, y)).collect(),
                        logprob_ref: responses.iter().map(|y| reference.sequence_logprobs(i, y)).collect(),
                        rewards: rewards[span].to_vec(),
                        responses,
                    }
                })
                .collect();
            let value = toy_policy_step(&mut policy, &groups, cfg)?;
            first.get_or_insert(value);
        }
        let value = first.expect("inner_updates >= 1");

        let mut answerable = CategoryCounts::default();
        let mut unanswerable = CategoryCounts::default();
        let mut abstained = 0usize;
        let mut length = 0usize;
        for (i, y) in &rollouts {
            length += task.content_length(y);
            if let Some(c) = task.categorize(*i, y) {
                if c == AnswerCategory::Abstain {
                    abstained += 1;
                }
                if task.prompts[*i].answerable {
                    answerable.add(c);
                } else {
                    unanswerable.add(c);
                }
            }
        }
        let n = rollouts.len();
        records.push(StepRecord {
            step,
            reward_mean: rewards.iter().sum::<f64>() / n as f64,
            hallucination_rate: ratio(rewards.iter().filter(|&&r| r <= 0.0).count(), n),
            abstention_rate: ratio(abstained, n),
            mean_length: length as f64 / n as f64,
            kl: value.kl_value,
            clip_fraction: value.clip_fraction,
            objective: value.objective,
            answerable,
            unanswerable,
        });
    }
    Ok(TrainingReport {
        task: task.spec.name.clone(),
        reward_kind: reward_label.to_string(),
        config: cfg.clone(),
        seed,
        steps: records,
        initial,
        final_eval: evaluate_policy(task, &policy, &reference),
        final_policy: policy,
    })
}

/// GRPO on the toy task with rewards from a [`RewardEngine`] backed by the
/// task's oracle fact table and documents.
pub fn run_toy_training(
    task: &SyntheticKnowledgeTask,
    cfg: &GrpoConfig,
    reward_kind: RewardKind,
    steps: usize,
    seed: u64,
) -> Result<TrainingReport, GrpoError> {
    let oracle = OracleBackend::new(task.facts.clone()).map_err(GrpoError::InvalidTask)?;
    let mut config = EngineConfig::default();
    config.verifier.max_inflight = 1;
    let mut slips = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let engine = RewardEngine::new(config, task.precache(), Arc::new(oracle))
        .map_err(|e| GrpoError::Reward(e.to_string()))?;
    train_with_rewards(task, cfg, steps, seed, &reward_kind.to_string(), |rollouts| {
        let items: Vec<ScoreItem> = rollouts
            .iter()
            .map(|(i, y)| ScoreItem::new(&task.prompts[*i].id, task.render_sampled(*i, y, &mut slips)))
            .collect();
        engine
            .score_batch(&items, reward_kind)
            .into_iter()
            .map(|r| r.map(|r| r.value).map_err(|e| GrpoError::Reward(e.to_string())))
            .collect()
    })
}
