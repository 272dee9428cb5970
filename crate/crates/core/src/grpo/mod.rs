//! GRPO objective arithmetic.
//!
//! For a group of `n` responses to one prompt with rewards `r_i`:
//!
//! ```text
//! A_i  = (r_i - mean r) / std r                       (population std)
//! ρ_it = π_θ(y_it) / π_old(y_it)
//! k_it = u - ln u - 1,  u = π_ref(y_it) / π_θ(y_it)
//! J    = 1/n Σ_i 1/|y_i| Σ_t [ min(ρ_it A_i, clip(ρ_it, 1-ε, 1+ε) A_i) - β k_it ]
//! ```
//!
//! Log-ratios are clamped to [-20, 20] before exponentiation. The KL
//! estimator is applied per token with the same averaging as the surrogate.

mod policy;
mod task;
mod train;

use serde::{Deserialize, Serialize};

pub use policy::{ToySoftmaxPolicy, MAX_LEN, MAX_VOCAB};
pub use task::{LongFormSpec, ShortFormSpec, SyntheticKnowledgeTask, TaskKind, TaskPrompt, TaskSpec, ABSTAIN, STOP};
pub use train::{
    evaluate_policy, run_toy_training, toy_policy_step, train_with_rewards, CategoryCounts, PolicyEvaluation, StepRecord,
    TrainingReport,
};

pub const LOG_RATIO_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group of {0} responses; at least 2 are needed")]
    GroupTooSmall(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("response {0} has no tokens")]
    EmptyResponse(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("reward engine: {0}")]
    Reward(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub learning_rate: f64,
    pub batch_prompts: usize,
    /// Gradient steps taken on each sampled batch before π_old is refreshed.
    pub inner_updates: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_coefficient: 1e-3,
            learning_rate: 1e-6,
            batch_prompts: 16,
            inner_updates: 1,
        }
    }
}

impl GrpoConfig {
    pub const TOY_LEARNING_RATE: f64 = 1e-2;

    /// Defaults with the toy-loop learning rate.
    pub fn toy() -> Self {
        Self {
            learning_rate: Self::TOY_LEARNING_RATE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.into()));
        if self.group_size < 2 {
            return bad("group_size must be >= 2");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.kl_coefficient >= 0.0 && self.kl_coefficient.is_finite()) {
            return bad("kl_coefficient must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and > 0");
        }
        if self.batch_prompts < 1 || self.inner_updates < 1 {
            return bad("batch_prompts and inner_updates must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    /// Set when all rewards are equal; the values are then all zero.
    pub degenerate: bool,
}

pub fn compute_advantages(rewards: &[f64]) -> Result<AdvantageVector, GrpoError> {
    let n = rewards.len();
    if n < 2 {
        return Err(GrpoError::GroupTooSmall(n));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite("rewards"));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let scale = rewards.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if rewards.iter().all(|&r| r == rewards[0]) || std <= 1e-12 * scale {
        return Ok(AdvantageVector {
            values: vec![0.0; n],
            degenerate: true,
        });
    }
    Ok(AdvantageVector {
        values: rewards.iter().map(|r| (r - mean) / std).collect(),
        degenerate: false,
    })
}

fn clamp_log_ratio(x: f64) -> f64 {
    x.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
}

/// `u - ln u - 1` with `ln u = logp_ref - logp_policy`, evaluated as
/// `expm1(d) - d` for accuracy near `u = 1`.
pub fn kl_estimator(logp_ref: f64, logp_policy: f64) -> Result<f64, GrpoError> {
    if !logp_ref.is_finite() || !logp_policy.is_finite() {
        return Err(GrpoError::NonFinite("log-probabilities"));
    }
    let d = clamp_log_ratio(logp_ref - logp_policy);
    Ok((d.exp_m1() - d).max(0.0))
}

/// d/d logp_policy of [`kl_estimator`]: `1 - u` inside the clamp, 0 outside.
pub fn kl_estimator_grad(logp_ref: f64, logp_policy: f64) -> f64 {
    let d = logp_ref - logp_policy;
    if d.abs() > LOG_RATIO_CLAMP {
        0.0
    } else {
        -d.exp_m1()
    }
}

/// One prompt's sampled responses with per-token natural-log probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub responses: Vec<Vec<u32>>,
    pub rewards: Vec<f64>,
    pub logprob_policy: Vec<Vec<f64>>,
    pub logprob_old: Vec<Vec<f64>>,
    pub logprob_ref: Vec<Vec<f64>>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let n = self.responses.len();
        for (name, len) in [
            ("rewards", self.rewards.len()),
            ("logprob_policy", self.logprob_policy.len()),
            ("logprob_old", self.logprob_old.len()),
            ("logprob_ref", self.logprob_ref.len()),
        ] {
            if len != n {
                return Err(GrpoError::LengthMismatch(format!("{name} has {len} entries for {n} responses")));
            }
        }
        for (i, y) in self.responses.iter().enumerate() {
            if y.is_empty() {
                return Err(GrpoError::EmptyResponse(i));
            }
            for (name, arr) in [
                ("logprob_policy", &self.logprob_policy[i]),
                ("logprob_old", &self.logprob_old[i]),
                ("logprob_ref", &self.logprob_ref[i]),
            ] {
                if arr.len() != y.len() {
                    return Err(GrpoError::LengthMismatch(format!(
                        "{name}[{i}] has {} entries for {} tokens",
                        arr.len(),
                        y.len()
                    )));
                }
                if arr.iter().any(|v| !v.is_finite()) {
                    return Err(GrpoError::NonFinite(name));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateValue {
    pub objective: f64,
    /// Share of tokens whose clipped branch is the active minimum.
    pub clip_fraction: f64,
    /// Mean per-token KL estimate, averaged like the objective.
    pub kl_value: f64,
}

pub fn surrogate(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<SurrogateValue, GrpoError> {
    surrogate_with_grad(group, cfg).map(|(v, _)| v)
}

/// The objective and its gradient with respect to `logprob_policy`.
pub fn surrogate_with_grad(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<(SurrogateValue, Vec<Vec<f64>>), GrpoError> {
    let adv = compute_advantages(&group.rewards)?;
    surrogate_with_advantages(group, &adv.values, cfg)
}

/// As [`surrogate_with_grad`] with the advantages supplied directly; the
/// group's rewards are ignored.
pub fn surrogate_with_advantages(
    group: &RolloutGroup,
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<(SurrogateValue, Vec<Vec<f64>>), GrpoError> {
    group.validate()?;
    if advantages.len() != group.len() {
        return Err(GrpoError::LengthMismatch(format!(
            "{} advantages for {} responses",
            advantages.len(),
            group.len()
        )));
    }
    if group.is_empty() {
        return Err(GrpoError::GroupTooSmall(0));
    }
    let n = group.len() as f64;
    let (lo, hi) = (1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let beta = cfg.kl_coefficient;

    let mut objective = 0.0;
    let mut kl_total = 0.0;
    let mut clipped = 0usize;
    let mut tokens = 0usize;
    let mut grad = Vec::with_capacity(group.len());
    for (i, a) in advantages.iter().copied().enumerate() {
        let (lp, lo_old, lp_ref) = (&group.logprob_policy[i], &group.logprob_old[i], &group.logprob_ref[i]);
        let w = 1.0 / (n * lp.len() as f64);
        let mut g_i = Vec::with_capacity(lp.len());
        let (mut seq_obj, mut seq_kl) = (0.0, 0.0);
        for t in 0..lp.len() {
            let raw = lp[t] - lo_old[t];
            let ratio = clamp_log_ratio(raw).exp();
            let unclipped = ratio * a;
            let clipped_term = ratio.clamp(lo, hi) * a;
            let kl = kl_estimator(lp_ref[t], lp[t])?;
            let d_kl = kl_estimator_grad(lp_ref[t], lp[t]);
            let d_term = if clipped_term < unclipped {
                clipped += 1;
                seq_obj += clipped_term;
                0.0
            } else {
                seq_obj += unclipped;
                if raw.abs() > LOG_RATIO_CLAMP {
                    0.0
                } else {
                    unclipped
                }
            };
            seq_kl += kl;
            g_i.push(w * (d_term - beta * d_kl));
        }
        tokens += lp.len();
        let inv_len = 1.0 / lp.len() as f64;
        objective += seq_obj * inv_len;
        kl_total += seq_kl * inv_len;
        grad.push(g_i);
    }
    let kl_value = kl_total / n;
    let value = SurrogateValue {
        objective: objective / n - beta * kl_value,
        clip_fraction: clipped as f64 / tokens as f64,
        kl_value,
    };
    if !value.objective.is_finite() {
        return Err(GrpoError::NonFinite("objective"));
    }
    Ok((value, grad))
}
