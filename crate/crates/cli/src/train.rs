use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use rar_core::grpo::{run_toy_training, PolicyEvaluation, SyntheticKnowledgeTask, TaskSpec};
use rar_core::RewardKind;

use crate::error::{input, runtime, CliError};
use crate::table;

/// Final expected length below this share of the initial one counts as a
/// length collapse.
const COLLAPSE_RATIO: f64 = 0.25;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Synthetic knowledge task (JSON).
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// KL coefficient.
    #[arg(long, default_value_t = 1e-3)]
    beta: f64,
    #[arg(long, default_value = "binary_rar")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the task's learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Per-step records, one JSON object per line.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full report: config, initial and final evaluation, final policy.
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn eval_rows(initial: &PolicyEvaluation, last: &PolicyEvaluation) -> Vec<Vec<String>> {
    let acc = |e: &PolicyEvaluation| e.attempted_accuracy_answerable.map_or("-".to_string(), table::rate);
    vec![
        table::row([&"metric", &"initial", &"final"]),
        table::row([&"hallucination_rate", &table::rate(initial.hallucination_rate), &table::rate(last.hallucination_rate)]),
        table::row([&"abstention_answerable", &table::rate(initial.abstention_answerable), &table::rate(last.abstention_answerable)]),
        table::row([&"abstention_unanswerable", &table::rate(initial.abstention_unanswerable), &table::rate(last.abstention_unanswerable)]),
        table::row([&"attempted_accuracy", &acc(initial), &acc(last)]),
        table::row([&"mean_length", &table::rate(initial.mean_length), &table::rate(last.mean_length)]),
        table::row([&"kl_to_reference", &table::rate(initial.kl_to_reference), &table::rate(last.kl_to_reference)]),
    ]
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let kind: RewardKind = args.kind.parse().map_err(input)?;
    if !(args.beta >= 0.0 && args.beta.is_finite()) {
        return Err(input("--beta must be a finite non-negative number"));
    }
    if args.steps == 0 {
        return Err(input("--steps must be at least 1"));
    }
    let spec = TaskSpec::load(&args.task).map_err(input)?;
    let task = SyntheticKnowledgeTask::generate(&spec).map_err(input)?;
    let mut cfg = task.grpo_config(args.beta);
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    let report = run_toy_training(&task, &cfg, kind, args.steps, args.seed).map_err(input)?;

    if let Some(out) = &args.out {
        let file = File::create(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        let mut w = BufWriter::new(file);
        report.write_jsonl(&mut w).map_err(runtime)?;
        w.flush().map_err(runtime)?;
    }
    if let Some(path) = &args.summary {
        let file = File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &report).map_err(runtime)?;
        w.write_all(b"\n").map_err(runtime)?;
        w.flush().map_err(runtime)?;
    }

    println!(
        "task={} kind={kind} steps={} beta={} lr={} seed={}",
        report.task, args.steps, cfg.kl_coefficient, cfg.learning_rate, args.seed
    );
    print!("{}", table::render(&eval_rows(&report.initial, &report.final_eval)));
    let collapsed = report.final_eval.mean_length < COLLAPSE_RATIO * report.initial.mean_length;
    println!(
        "length collapse: {} (final/initial expected length {:.3})",
        if collapsed { "yes" } else { "no" },
        report.final_eval.mean_length / report.initial.mean_length
    );
    Ok(())
}
