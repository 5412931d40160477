//! Scoring the pool and selecting the expanded audience.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{ForestParams, TreeEnsemble};
use crate::training::SeedAudience;
use crate::tsne::Embedding;

/// Run metadata written next to an expansion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionManifest {
    pub m_requested: usize,
    pub m: usize,
    pub truncated: bool,
    pub pool_size: usize,
    pub seed_size: usize,
    pub strategy: Option<String>,
    pub rng_seeds: BTreeMap<String, u64>,
    pub forest: Option<ForestParams>,
    pub config_hash: Option<String>,
}

/// Pool users ranked by posterior score, with the top-`m` audience.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionResult {
    /// Sorted by score descending, then id ascending.
    pub ranked: Vec<(u64, f64)>,
    pub audience: Vec<u64>,
    pub m: usize,
    pub excluded_seed: Vec<u64>,
    pub manifest: ExpansionManifest,
}

/// Total order used for ranking: higher score first, then smaller id.
pub fn rank_order(a: &(u64, f64), b: &(u64, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// `p1` for every user outside the seed, in embedding row order.
pub fn score_pool(model: &TreeEnsemble, emb: &Embedding, seed: &SeedAudience) -> Result<Vec<(u64, f64)>> {
    if model.dim != emb.dim() {
        return Err(Error::Dimension {
            expected: model.dim,
            actual: emb.dim(),
        });
    }
    let rows: Vec<usize> = (0..emb.len()).filter(|&r| !seed.contains(emb.ids()[r])).collect();
    if rows.is_empty() {
        return Err(Error::EmptyPool);
    }
    let points = emb.coords().select_rows(&rows);
    let scores = model.predict_many(&points)?;
    Ok(rows.iter().map(|&r| emb.ids()[r]).zip(scores).collect())
}

/// Selects the `m` highest-scoring users.
///
/// When `m` exceeds the pool the whole pool is returned and the manifest
/// records the truncation.
pub fn expand(scores: &[(u64, f64)], m: usize) -> Result<ExpansionResult> {
    if m == 0 {
        return Err(Error::invalid("audience size m must be at least 1"));
    }
    if let Some((id, s)) = scores.iter().find(|(_, s)| !(0.0..=1.0).contains(s)) {
        return Err(Error::invalid(format!("score {s} of user {id} is outside [0, 1]")));
    }
    let mut ranked = scores.to_vec();
    ranked.sort_unstable_by(rank_order);
    if ranked.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("duplicate user ids in score list"));
    }
    let take = m.min(ranked.len());
    let audience = ranked[..take].iter().map(|(id, _)| *id).collect();
    Ok(ExpansionResult {
        audience,
        m: take,
        excluded_seed: Vec::new(),
        manifest: ExpansionManifest {
            m_requested: m,
            m: take,
            truncated: take < m,
            pool_size: ranked.len(),
            ..ExpansionManifest::default()
        },
        ranked,
    })
}

impl ExpansionResult {
    /// Sum of scores over the audience.
    pub fn audience_score(&self) -> f64 {
        self.ranked[..self.m].iter().map(|(_, s)| s).sum()
    }

    /// `rank,id,score` for the audience (1-based ranks).
    pub fn write_audience_csv<W: Write>(&self, out: W) -> Result<()> {
        write_ranked(out, &self.ranked[..self.m])
    }

    /// `rank,id,score` for the whole pool.
    pub fn write_ranked_csv<W: Write>(&self, out: W) -> Result<()> {
        write_ranked(out, &self.ranked)
    }
}

fn write_ranked<W: Write>(mut out: W, rows: &[(u64, f64)]) -> Result<()> {
    writeln!(out, "rank,id,score")?;
    for (i, (id, s)) in rows.iter().enumerate() {
        writeln!(out, "{},{id},{s}", i + 1)?;
    }
    Ok(())
}

/// Resolves an audience size given as an absolute count (`"500"`) or a
/// percentage of the user base (`"10%"`, rounded to nearest).
pub fn resolve_audience_size(spec: &str, n: usize) -> Result<usize> {
    let spec = spec.trim();
    let m = if let Some(pct) = spec.strip_suffix('%') {
        let pct: f64 = pct
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad percentage {spec:?}")))?;
        if !(pct > 0.0 && pct <= 100.0) {
            return Err(Error::invalid(format!("percentage {pct} outside (0, 100]")));
        }
        (pct / 100.0 * n as f64).round() as usize
    } else {
        spec.parse()
            .map_err(|_| Error::invalid(format!("bad audience size {spec:?}")))?
    };
    if m == 0 {
        return Err(Error::invalid("audience size resolves to zero"));
    }
    Ok(m)
}
