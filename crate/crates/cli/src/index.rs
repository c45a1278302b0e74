use std::path::PathBuf;

use clap::Args;
use nl2api_core::corpus::{lint_corpus, load_vocabulary};
use nl2api_core::runtime::{embedder, load_corpus_checked};
use nl2api_core::vector::build_index;

use crate::failure::Failure;
use crate::Context;

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Corpus file; defaults to `data.corpus`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Index output; defaults to `rag.index`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Entries embedded per backend call.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Concurrent embedding calls.
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
}

pub async fn run(ctx: &Context, args: IndexArgs) -> Result<(), Failure> {
    let corpus_path = args.corpus.unwrap_or_else(|| ctx.config.data.corpus.clone());
    let out = args.out.unwrap_or_else(|| ctx.config.rag.index.clone());
    let corpus = load_corpus_checked(&corpus_path)?;
    let backend = embedder(&ctx.config, ctx.mode)?;
    let index = build_index(
        &corpus,
        backend.as_ref(),
        args.batch_size.max(1),
        args.parallelism.max(1),
    )
    .await?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    index.save(&out)?;
    println!(
        "indexed {} entries, dimension {}, backend {} -> {}",
        index.len(),
        index.dimension(),
        index.backend_id(),
        out.display()
    );
    Ok(())
}

/// Warnings only; exit 0 even when some values are unknown.
pub fn lint(ctx: &Context) -> Result<(), Failure> {
    let corpus = load_corpus_checked(&ctx.config.data.corpus)?;
    let vocab = load_vocabulary(&ctx.config.data.vocabulary).map_err(|e| Failure::usage(e.to_string()))?;
    let warnings = lint_corpus(&corpus, &vocab);
    for w in &warnings {
        println!(
            "{} {}: value `{}` of `{}` is not in the vocabulary",
            w.entry_id, w.dialect, w.value, w.attribute
        );
    }
    println!("{} entries, {} warnings", corpus.len(), warnings.len());
    Ok(())
}
