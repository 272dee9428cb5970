use std::path::PathBuf;

use clap::Args;
use rar_core::datastore::{build_precache, load_promptset, load_raw_pages, save_promptset, PrecacheOutcome, PrecachePolicy};
use rar_core::PromptSet;

use crate::error::{input, runtime, CliError};
use crate::table;

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory holding the fetched page files.
    #[arg(long)]
    pages: PathBuf,
    /// JSON manifest naming the pages of each prompt.
    #[arg(long)]
    manifest: PathBuf,
    /// Prompt set to create or extend.
    #[arg(long)]
    out: PathBuf,
    /// Replace prompts that already exist in --out.
    #[arg(long)]
    overwrite: bool,
    #[arg(long, default_value_t = PrecachePolicy::default().min_documents)]
    min_documents: usize,
    #[arg(long, default_value_t = PrecachePolicy::default().max_documents)]
    max_documents: usize,
    /// Keep the raw HTML next to the cleaned text.
    #[arg(long)]
    keep_raw_html: bool,
}

pub fn run(args: IngestArgs) -> Result<(), CliError> {
    if args.min_documents > args.max_documents {
        return Err(input("--min-documents exceeds --max-documents"));
    }
    let policy = PrecachePolicy {
        min_documents: args.min_documents,
        max_documents: args.max_documents,
        keep_raw_html: args.keep_raw_html,
    };
    let prompts = load_raw_pages(&args.manifest, &args.pages).map_err(input)?;
    let mut set = if args.out.exists() {
        load_promptset(&args.out).map_err(input)?
    } else {
        PromptSet::new()
    };
    if !args.overwrite {
        if let Some(p) = prompts.iter().find(|p| set.contains(&p.prompt_id)) {
            return Err(input(format!(
                "prompt {:?} already exists in {}; pass --overwrite to replace it",
                p.prompt_id,
                args.out.display()
            )));
        }
    }

    let mut rows = vec![table::row([&"prompt_id", &"status", &"documents", &"reason"])];
    let (mut built, mut discarded) = (0, 0);
    for p in &prompts {
        match build_precache(&p.prompt_id, &p.prompt_text, p.reference_response.as_deref(), &p.pages, &policy) {
            PrecacheOutcome::Built(entry) => {
                built += 1;
                rows.push(table::row([&entry.prompt_id, &"built", &entry.documents.len(), &""]));
                set.upsert(entry);
            }
            PrecacheOutcome::Discarded(d) => {
                discarded += 1;
                rows.push(table::row([&d.prompt_id, &"discarded", &d.surviving_documents, &d.reason.as_str()]));
            }
        }
    }
    save_promptset(&set, &args.out).map_err(runtime)?;
    print!("{}", table::render(&rows));
    println!("built {built}, discarded {discarded}, {} prompts in {}", set.len(), args.out.display());
    Ok(())
}
