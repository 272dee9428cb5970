use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::Args;
use rar_core::evalmetrics::{categorize_with_default_markers, long_form_report, short_form_report};
use rar_core::grpo::StepRecord;
use rar_core::rewards::ClaimLabel;
use rar_service::ScoreOutcome;
use serde::Deserialize;

use crate::error::{input, runtime, CliError};
use crate::table;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results file: `score --out` output for --long-form, or
    /// newline-delimited {answer, gold} objects for --short-form.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, conflicts_with = "long_form", required_unless_present = "long_form")]
    short_form: bool,
    #[arg(long)]
    long_form: bool,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Step records written by `train-toy --out`.
    #[arg(long)]
    report: PathBuf,
    /// Steps averaged at each end of the run.
    #[arg(long, default_value_t = 10)]
    window: usize,
}

#[derive(Deserialize)]
struct ShortAnswer {
    answer: String,
    gold: Vec<String>,
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| input(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| input(format!("{} line {}: schema mismatch: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn write_json(path: &Option<PathBuf>, value: &impl serde::Serialize) -> Result<(), CliError> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(value).map_err(runtime)?;
        std::fs::write(p, text + "\n").map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

pub fn run(args: ReportArgs) -> Result<(), CliError> {
    if args.short_form {
        let answers: Vec<ShortAnswer> = read_lines(&args.results)?;
        if answers.is_empty() {
            return Err(input("no answers in the results file"));
        }
        if let Some(i) = answers.iter().position(|a| a.gold.is_empty()) {
            return Err(input(format!("answer {} has an empty gold set", i + 1)));
        }
        let report = short_form_report(answers.iter().map(|a| categorize_with_default_markers(&a.answer, &a.gold)));
        let accuracy = report.attempted_accuracy.map_or("-".to_string(), table::rate);
        print!(
            "{}",
            table::render(&[
                table::row([&"n", &"correct", &"incorrect", &"abstain", &"hallucination_rate", &"attempted_accuracy"]),
                table::row([
                    &report.n,
                    &report.correct,
                    &report.incorrect,
                    &report.abstain,
                    &table::rate(report.hallucination_rate),
                    &accuracy
                ]),
            ])
        );
        return write_json(&args.out, &report);
    }

    let outcomes: Vec<ScoreOutcome> = read_lines(&args.results)?;
    let mut labels = Vec::new();
    let (mut responses, mut errors) = (0, 0);
    for (i, o) in outcomes.iter().enumerate() {
        match o {
            ScoreOutcome::Ok(r) => {
                let claims = r.claims.as_ref().ok_or_else(|| {
                    input(format!("record {} ({}) has no claims; long-form reports need a claim-level kind", i + 1, r.kind))
                })?;
                responses += 1;
                labels.extend(claims.iter().map(|c| c.verdict.unwrap_or(ClaimLabel::Inconclusive)));
            }
            ScoreOutcome::Err { .. } => errors += 1,
        }
    }
    let report = long_form_report(labels);
    print!(
        "{}",
        table::render(&[
            table::row([&"responses", &"claims", &"correct", &"incorrect", &"inconclusive", &"hallucination_rate", &"strict_rate"]),
            table::row([
                &responses,
                &report.total_claims,
                &report.correct,
                &report.incorrect,
                &report.inconclusive,
                &table::rate(report.hallucination_rate),
                &table::rate(report.strict_rate)
            ]),
        ])
    );
    if errors > 0 {
        println!("{errors} record(s) carried errors and were skipped");
    }
    write_json(&args.out, &report)
}

pub fn stats(args: StatsArgs) -> Result<(), CliError> {
    let steps: Vec<StepRecord> = read_lines(&args.report)?;
    if steps.is_empty() {
        return Err(input("no step records"));
    }
    let w = args.window.clamp(1, steps.len());
    let mean = |s: &[StepRecord], f: fn(&StepRecord) -> f64| s.iter().map(f).sum::<f64>() / s.len() as f64;
    let (first, last) = (&steps[..w], &steps[steps.len() - w..]);
    type Field = (&'static str, fn(&StepRecord) -> f64);
    let fields: [Field; 6] = [
        ("reward_mean", |s| s.reward_mean),
        ("hallucination_rate", |s| s.hallucination_rate),
        ("abstention_rate", |s| s.abstention_rate),
        ("mean_length", |s| s.mean_length),
        ("kl", |s| s.kl),
        ("clip_fraction", |s| s.clip_fraction),
    ];
    let first_label = format!("first {w}");
    let last_label = format!("last {w}");
    let mut rows = vec![table::row([&"metric", &first_label, &last_label])];
    for (name, f) in fields {
        rows.push(table::row([&name, &table::rate(mean(first, f)), &table::rate(mean(last, f))]));
    }
    println!("{} steps", steps.len());
    print!("{}", table::render(&rows));
    Ok(())
}
