//! Straightforward re-implementations of the GRPO quantities.

use rand::Rng;
use rar_core::grpo::{surrogate, GrpoConfig, RolloutGroup};

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// 1/n Σ_i 1/|y_i| Σ_t ρ_it A_i with no clipping and no KL term.
pub fn unclipped_objective(group: &RolloutGroup) -> f64 {
    let (mean, std) = mean_std(&group.rewards);
    let n = group.len() as f64;
    let mut total = 0.0;
    for i in 0..group.len() {
        let a = (group.rewards[i] - mean) / std;
        let len = group.logprob_policy[i].len() as f64;
        let s: f64 = group.logprob_policy[i]
            .iter()
            .zip(&group.logprob_old[i])
            .map(|(p, o)| (p - o).exp() * a)
            .sum();
        total += s / len;
    }
    total / n
}

/// A random group whose ratios stay away from the clip boundaries by at
/// least `margin`.
pub fn random_group(rng: &mut impl Rng, eps: f64, margin: f64) -> RolloutGroup {
    loop {
        let n = rng.random_range(2..=6);
        let mut g = RolloutGroup {
            prompt_id: "p".into(),
            responses: Vec::new(),
            rewards: (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            logprob_policy: Vec::new(),
            logprob_old: Vec::new(),
            logprob_ref: Vec::new(),
        };
        for _ in 0..n {
            let len = rng.random_range(1..=5);
            let old: Vec<f64> = (0..len).map(|_| rng.random_range(-4.0..-0.05)).collect();
            g.logprob_policy.push(old.iter().map(|o| o + rng.random_range(-0.5..0.5)).collect());
            g.logprob_ref.push(old.iter().map(|o| o + rng.random_range(-0.5..0.5)).collect());
            g.responses.push(vec![0; len]);
            g.logprob_old.push(old);
        }
        let near_boundary = g.logprob_policy.iter().flatten().zip(g.logprob_old.iter().flatten()).any(|(p, o)| {
            let r = (p - o).exp();
            (r - (1.0 - eps)).abs() < margin || (r - (1.0 + eps)).abs() < margin
        });
        if !near_boundary {
            return g;
        }
    }
}

/// Central finite differences of the objective with respect to every
/// policy log-probability.
pub fn finite_difference_grad(group: &RolloutGroup, cfg: &GrpoConfig, h: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..group.len() {
        let mut row = Vec::new();
        for t in 0..group.logprob_policy[i].len() {
            let mut up = group.clone();
            up.logprob_policy[i][t] += h;
            let mut down = group.clone();
            down.logprob_policy[i][t] -= h;
            let f = |g: &RolloutGroup| surrogate(g, cfg).unwrap().objective;
            row.push((f(&up) - f(&down)) / (2.0 * h));
        }
        out.push(row);
    }
    out
}

/// Largest relative error between two gradients; entries where both are
/// below `floor` in magnitude are compared absolutely against `floor`.
pub fn max_relative_error(a: &[Vec<f64>], b: &[Vec<f64>], floor: f64) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
