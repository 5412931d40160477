use std::path::Path;

use lookalike::expansion::resolve_audience_size;
use lookalike::forest::fit;
use lookalike::rng::derive_seed;
use lookalike::training::{build_training_set, NegativeSampling};
use lookalike::{expand, score_pool, ExpansionResult, SeedAudience};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, load_embedding, read_id_file, write_file};
use crate::manifest::Manifest;

pub const STREAM_EXPAND: u64 = 103;

/// Trains on the seed file against the configured negatives and writes the top-`m` audience.
pub fn cmd_expand(cfg: &RunConfig, seed_file: &Path, m: Option<&str>) -> CliResult<ExpansionResult> {
    let out = cfg.out_dir();
    let mut manifest = Manifest::new("expand", cfg);
    if !seed_file.exists() {
        return Err(CliError::Config(format!("seed file {} does not exist", seed_file.display())));
    }
    let m = m
        .or(cfg.m.as_deref())
        .ok_or_else(|| CliError::Config("audience size m is not set".into()))?;

    let (emb, labels) = manifest.time("load", || load_embedding(cfg))?;
    let seed = SeedAudience::new(read_id_file(seed_file)?, &emb)?;
    let m = resolve_audience_size(m, emb.len()).map_err(|e| CliError::Config(e.to_string()))?;

    let neg_seed = derive_seed(cfg.seed, &[STREAM_EXPAND, 1]);
    let forest_seed = derive_seed(cfg.seed, &[STREAM_EXPAND, 2]);
    let sampling = NegativeSampling {
        strategy: cfg.strategy,
        n0: cfg.negatives(),
        padding: cfg.padding,
    };
    let training = build_training_set(&emb, labels.as_deref(), &seed, &sampling, neg_seed)?;
    let model = manifest.time("fit", || fit(&training, &cfg.forest, forest_seed))?;
    let scores = manifest.time("score", || score_pool(&model, &emb, &seed))?;
    let mut result = expand(&scores, m)?;
    result.excluded_seed = seed.ids().collect();
    let em = &mut result.manifest;
    em.seed_size = seed.len();
    em.strategy = Some(cfg.strategy.to_string());
    em.forest = Some(cfg.forest.clone());
    em.config_hash = Some(manifest.config_hash.clone());
    em.rng_seeds.insert("negatives".into(), neg_seed);
    em.rng_seeds.insert("forest".into(), forest_seed);
    manifest.seed("negatives", neg_seed);
    manifest.seed("forest", forest_seed);

    create_dir(&out)?;
    let mut outputs = vec![
        write_file(&out, "audience.csv", |w| result.write_audience_csv(w))?,
        write_file(&out, "ranked.csv", |w| result.write_ranked_csv(w))?,
        write_file(&out, "training.csv", |w| training.write_csv(w))?,
        write_file(&out, "model.json", |w| model.to_json(w))?,
    ];
    manifest.outputs.append(&mut outputs);
    manifest.detail("expansion", &result.manifest);
    manifest.write(&out)?;

    if result.manifest.truncated {
        eprintln!(
            "warning: requested {} users but the pool holds {}",
            result.manifest.m_requested, result.manifest.pool_size
        );
    }
    println!(
        "expanded {} seed users to {} of {} pool users (mean score {:.4})",
        seed.len(),
        result.m,
        result.manifest.pool_size,
        result.audience_score() / result.m as f64
    );
    Ok(result)
}
