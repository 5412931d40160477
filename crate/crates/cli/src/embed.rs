use std::io::Write;

use lookalike::dataset::{stratified_subsample, write_matrix_csv};
use lookalike::rng::derive_seed;
use lookalike::tsne::{neighborhood_preservation, run_tsne};
use lookalike::{Embedding, UserBase};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, load_user_base, write_file};
use crate::manifest::Manifest;

pub const STREAM_SUBSAMPLE: u64 = 101;
pub const STREAM_TSNE: u64 = 102;
/// Neighbourhood size reported after embedding.
pub const REPORT_K: usize = 10;

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub base: UserBase,
    pub embedding: Embedding,
    pub kl_trace: Vec<(usize, f64)>,
    pub neighborhood_preservation: f64,
    pub config_hash: String,
}

/// Ingest, optionally subsample, embed, and persist.
pub fn cmd_embed(cfg: &RunConfig) -> CliResult<EmbedOutcome> {
    let out = cfg.out_dir();
    let mut manifest = Manifest::new("embed", cfg);

    let mut base = manifest.time("load", || load_user_base(cfg))?;
    if let Some(per_class) = cfg.per_class {
        let s = derive_seed(cfg.seed, &[STREAM_SUBSAMPLE]);
        manifest.seed("subsample", s);
        base = stratified_subsample(&base, per_class, s)?;
    }
    let tsne_seed = derive_seed(cfg.seed, &[STREAM_TSNE]);
    manifest.seed("tsne", tsne_seed);
    let tsne_cfg = cfg.tsne(tsne_seed);
    if tsne_cfg.perplexity >= base.len() as f64 {
        return Err(CliError::Config(format!(
            "perplexity {} needs more than {} points",
            tsne_cfg.perplexity,
            base.len()
        )));
    }
    let result = manifest.time("tsne", || run_tsne(base.features(), &tsne_cfg))?;
    let embedding = Embedding::new(base.ids().to_vec(), result.coords, Some(result.meta.clone()))?;
    let np = if base.len() > REPORT_K {
        manifest.time("neighborhood_preservation", || {
            neighborhood_preservation(base.features(), embedding.coords(), REPORT_K)
        })?
    } else {
        f64::NAN
    };

    create_dir(&out)?;
    let mut outputs = vec![
        write_file(&out, "embedding.csv", |w| {
            write_matrix_csv(w, embedding.ids(), embedding.coords(), base.labels())
        })?,
        write_file(&out, "embedding.meta", |w| result.meta.write(w))?,
        write_file(&out, "kl_trace.csv", |w| {
            writeln!(w, "iteration,kl")?;
            for (it, kl) in &result.kl_trace {
                writeln!(w, "{it},{kl}")?;
            }
            Ok(())
        })?,
    ];
    manifest.outputs.append(&mut outputs);
    manifest.detail("points", base.len());
    manifest.detail("input_dim", base.dim());
    manifest.detail("initial_kl", result.meta.initial_kl);
    manifest.detail("final_kl", result.meta.final_kl);
    manifest.detail("neighborhood_preservation_k10", np);
    manifest.write(&out)?;

    println!(
        "embedded {} points: KL {:.6} -> {:.6}, neighborhood preservation (k={REPORT_K}) {:.4}",
        base.len(),
        result.meta.initial_kl,
        result.meta.final_kl,
        np
    );
    Ok(EmbedOutcome {
        base,
        embedding,
        kl_trace: result.kl_trace,
        neighborhood_preservation: np,
        config_hash: manifest.config_hash,
    })
}
