use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use rar_core::datastore::load_promptset;
use rar_core::rewards::ScoreItem;
use rar_core::verification::{FactTable, OracleBackend};
use rar_core::{EngineConfig, RewardEngine, RewardKind, VerifierBackend};
use rar_service::ScoreOutcome;

use crate::error::{input, runtime, CliError};

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    promptset: PathBuf,
    /// Newline-delimited {prompt_id, response} objects.
    #[arg(long)]
    responses: PathBuf,
    /// binary_rar, veriscore, binary_veriscore[@t], conflict_only or rating_rar.
    #[arg(long)]
    kind: String,
    /// Use the fact-table oracle verifier from this file.
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Engine config (TOML); defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Results file: one result or inline error per input line.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_inflight: Option<usize>,
    /// Exit 3 when any item fails.
    #[arg(long)]
    strict: bool,
    /// Keep per-item latencies in the results file.
    #[arg(long)]
    timings: bool,
}

pub fn read_items(path: &PathBuf) -> Result<Vec<ScoreItem>, CliError> {
    let file = File::open(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| input(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: ScoreItem = serde_json::from_str(&line)
            .map_err(|e| input(format!("{} line {}: {e}", path.display(), i + 1)))?;
        items.push(item);
    }
    Ok(items)
}

pub fn run(args: ScoreArgs) -> Result<(), CliError> {
    let kind: RewardKind = args.kind.parse().map_err(input)?;
    let mut config = match &args.config {
        Some(p) => EngineConfig::load(p).map_err(input)?,
        None => EngineConfig::default(),
    };
    if let Some(n) = args.max_inflight {
        config.verifier.max_inflight = n;
    }
    let backend: Arc<dyn VerifierBackend> = match &args.oracle {
        Some(path) => {
            let table = FactTable::load(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
            Arc::new(OracleBackend::new(table).map_err(input)?)
        }
        None => config.build_backend().map_err(input)?,
    };
    let set = load_promptset(&args.promptset).map_err(input)?;
    let items = read_items(&args.responses)?;
    let engine = RewardEngine::new(config, set, backend).map_err(input)?;
    let results = engine.score_batch(&items, kind);

    let (mut sum, mut ok, mut degenerate, mut calls) = (0.0, 0usize, 0usize, 0u64);
    let mut failures = Vec::new();
    let mut outcomes = Vec::with_capacity(results.len());
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(mut r) => {
                sum += r.value;
                ok += 1;
                degenerate += usize::from(r.degenerate);
                calls += u64::from(r.verifier_calls);
                if !args.timings {
                    r.latency_ms = 0.0;
                }
                outcomes.push(ScoreOutcome::Ok(r));
            }
            Err(e) => {
                failures.push(format!("{}: {}", item.prompt_id, e.code()));
                outcomes.push(ScoreOutcome::Err {
                    error: e.code().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    if let Some(out) = &args.out {
        let file = File::create(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        let mut w = BufWriter::new(file);
        for o in &outcomes {
            serde_json::to_writer(&mut w, o).map_err(runtime)?;
            w.write_all(b"\n").map_err(runtime)?;
        }
        w.flush().map_err(runtime)?;
    }
    let mean = if ok == 0 { 0.0 } else { sum / ok as f64 };
    println!(
        "kind={kind} items={} scored={ok} errors={} mean_reward={mean:.6} degenerate={degenerate} verifier_calls={calls}",
        items.len(),
        failures.len()
    );
    if args.strict && !failures.is_empty() {
        return Err(CliError::Partial(format!("{} item(s) failed: {}", failures.len(), failures.join(", "))));
    }
    Ok(())
}
