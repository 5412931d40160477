//! Repeated expansion trials against known class labels.
//!
//! Each `(class, repetition)` pair owns random streams derived from the
//! master seed, so trials can run in any order or in parallel and still
//! produce the same report.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::UserBase;
use crate::error::{Error, Result};
use crate::expansion::{expand, score_pool, ExpansionResult};
use crate::forest::{decision_grid, fit, ForestParams, TreeEnsemble};
use crate::metrics::{precision_at_k, recall_at_k, EvalCase};
use crate::rng::derive_seed;
use crate::training::{
    bounding_box, build_training_set, sample_seed, NegativeSampling, NegativeStrategy, SeedAudience,
    TrainingSet, DEFAULT_PADDING,
};
use crate::tsne::Embedding;

const STREAM_SEED: u64 = 0;
const STREAM_NEGATIVES: u64 = 1;
const STREAM_FOREST: u64 = 2;

/// How many users each trial expands to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TopK {
    Fixed(usize),
    /// The number of class members left after removing the seed.
    ClassPool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// Seed classes to evaluate; empty means every class present.
    pub classes: Vec<u8>,
    pub n1: usize,
    pub n0: usize,
    #[serde(serialize_with = "ser_display")]
    pub strategy: NegativeStrategy,
    pub repetitions: usize,
    pub k: TopK,
    pub master_seed: u64,
    pub padding: f64,
    pub forest: ForestParams,
}

fn ser_display<S: serde::Serializer>(v: &NegativeStrategy, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            classes: Vec::new(),
            n1: 250,
            n0: 250,
            strategy: NegativeStrategy::Uniform,
            repetitions: 30,
            k: TopK::Fixed(7000),
            master_seed: 0,
            padding: DEFAULT_PADDING,
            forest: ForestParams::default(),
        }
    }
}

/// One `(class, repetition)` outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub class: u8,
    pub repetition: usize,
    pub strategy: String,
    pub n1: usize,
    pub n0: usize,
    pub k: usize,
    pub p_at_k: f64,
    pub r_at_k: f64,
    pub hits: usize,
    pub true_count: usize,
    /// SHA-256 of the sorted seed ids.
    pub seed_digest: String,
}

/// Everything produced by a single trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub row: ReportRow,
    pub seed: SeedAudience,
    pub training: TrainingSet,
    pub model: TreeEnsemble,
    pub expansion: ExpansionResult,
}

pub fn seed_digest(seed: &SeedAudience) -> String {
    let mut h = Sha256::new();
    for id in seed.ids() {
        h.update(id.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn classes_of(base: &UserBase, cfg: &ExperimentConfig) -> Result<Vec<u8>> {
    let groups = base.class_members()?;
    if cfg.classes.is_empty() {
        return Ok(groups.keys().copied().collect());
    }
    for c in &cfg.classes {
        if !groups.contains_key(c) {
            return Err(Error::invalid(format!("class {c} not present in labels")));
        }
    }
    Ok(cfg.classes.clone())
}

/// Runs one trial: seed sample, training set, fit, score, expand, evaluate.
pub fn run_trial(
    base: &UserBase,
    emb: &Embedding,
    cfg: &ExperimentConfig,
    class: u8,
    repetition: usize,
    strategy: NegativeStrategy,
    n0: usize,
) -> Result<Trial> {
    let path = |stream| derive_seed(cfg.master_seed, &[u64::from(class), repetition as u64, stream]);
    let seed = sample_seed(base, emb, class, cfg.n1, path(STREAM_SEED))?;
    let sampling = NegativeSampling {
        strategy,
        n0,
        padding: cfg.padding,
    };
    let training = build_training_set(emb, base.labels(), &seed, &sampling, path(STREAM_NEGATIVES))?;
    let model = fit(&training, &cfg.forest, path(STREAM_FOREST))?;
    let scores = score_pool(&model, emb, &seed)?;

    let labels = base.labels().ok_or_else(|| Error::invalid("user base has no labels"))?;
    let a_true: BTreeSet<u64> = base
        .ids()
        .iter()
        .zip(labels)
        .filter(|(id, &l)| l == class && !seed.contains(**id))
        .map(|(id, _)| *id)
        .collect();
    let k = match cfg.k {
        TopK::Fixed(k) => k,
        TopK::ClassPool => a_true.len(),
    };
    if k == 0 || k > scores.len() {
        return Err(Error::invalid(format!(
            "k = {k} must lie in [1, {}] (pool size)",
            scores.len()
        )));
    }
    let mut expansion = expand(&scores, k)?;
    expansion.excluded_seed = seed.ids().collect();
    expansion.manifest.seed_size = seed.len();
    expansion.manifest.strategy = Some(strategy.to_string());
    expansion.manifest.forest = Some(cfg.forest.clone());
    expansion.manifest.rng_seeds = BTreeMap::from([
        ("seed_sample".to_string(), path(STREAM_SEED)),
        ("negatives".to_string(), path(STREAM_NEGATIVES)),
        ("forest".to_string(), path(STREAM_FOREST)),
    ]);

    let case = EvalCase::new(a_true, expansion.audience.clone())?;
    let row = ReportRow {
        class,
        repetition,
        strategy: strategy.to_string(),
        n1: cfg.n1,
        n0,
        k,
        p_at_k: precision_at_k(&case),
        r_at_k: recall_at_k(&case),
        hits: case.hits(),
        true_count: case.true_count(),
        seed_digest: seed_digest(&seed),
    };
    Ok(Trial {
        row,
        seed,
        training,
        model,
        expansion,
    })
}

/// Per-class and overall means of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMean {
    pub class: u8,
    pub repetitions: usize,
    pub p_at_k: f64,
    pub r_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

impl ExperimentReport {
    pub fn class_means(&self) -> Vec<ClassMean> {
        let mut by_class: BTreeMap<u8, Vec<&ReportRow>> = BTreeMap::new();
        for r in &self.rows {
            by_class.entry(r.class).or_default().push(r);
        }
        by_class
            .into_iter()
            .map(|(class, rows)| ClassMean {
                class,
                repetitions: rows.len(),
                p_at_k: mean(rows.iter().map(|r| r.p_at_k)),
                r_at_k: mean(rows.iter().map(|r| r.r_at_k)),
            })
            .collect()
    }

    /// Means over every row.
    pub fn global_means(&self) -> (f64, f64) {
        (
            mean(self.rows.iter().map(|r| r.p_at_k)),
            mean(self.rows.iter().map(|r| r.r_at_k)),
        )
    }

    /// `class,repetition,strategy,n1,n0,k,p_at_k,r_at_k`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows_csv(out, &self.rows)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let (p, r) = self.global_means();
        serde_json::json!({
            "config": self.config,
            "per_class": self.class_means(),
            "global": { "p_at_k": p, "r_at_k": r, "rows": self.rows.len() },
        })
    }
}

pub fn write_rows_csv<W: Write>(mut out: W, rows: &[ReportRow]) -> Result<()> {
    writeln!(out, "class,repetition,strategy,n1,n0,k,p_at_k,r_at_k")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.class, r.repetition, r.strategy, r.n1, r.n0, r.k, r.p_at_k, r.r_at_k
        )?;
    }
    Ok(())
}

/// Runs every configured class for every repetition.
pub fn run_experiment(base: &UserBase, emb: &Embedding, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    emb.check_aligned(base)?;
    if cfg.repetitions == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    let classes = classes_of(base, cfg)?;
    let jobs: Vec<(u8, usize)> = classes
        .iter()
        .flat_map(|&c| (0..cfg.repetitions).map(move |r| (c, r)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(c, r)| run_trial(base, emb, cfg, c, r, cfg.strategy, cfg.n0).map(|t| t.row))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        rows,
    })
}

/// Outcome of one imbalance ratio in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub repetition: usize,
    pub n1: usize,
    pub n0: usize,
    /// Lattice points with `p1 >= 0.5`.
    pub region_count: usize,
    pub p_at_k: f64,
    pub r_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub class: u8,
    pub resolution: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// `ratio,repetition,n1,n0,region_count,p_at_k,r_at_k`
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "ratio,repetition,n1,n0,region_count,p_at_k,r_at_k")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.ratio, r.repetition, r.n1, r.n0, r.region_count, r.p_at_k, r.r_at_k
            )?;
        }
        Ok(())
    }

    /// Region counts for one repetition, in ratio order.
    pub fn region_counts(&self, repetition: usize) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.repetition == repetition)
            .map(|r| r.region_count)
            .collect()
    }
}

/// Negative count for an imbalance ratio `n1 / n0`.
pub fn negatives_for_ratio(n1: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::invalid(format!("ratio {ratio} must be positive")));
    }
    Ok(((n1 as f64 / ratio).round() as usize).max(1))
}

/// Fits the same seed sample at several imbalance ratios (`n0 = n1 / ratio`)
/// and measures the size of the `p1 >= 0.5` region on the decision grid.
pub fn imbalance_sweep(
    base: &UserBase,
    emb: &Embedding,
    cfg: &ExperimentConfig,
    class: u8,
    ratios: &[f64],
    resolution: usize,
) -> Result<SweepReport> {
    emb.check_aligned(base)?;
    if ratios.is_empty() {
        return Err(Error::invalid("ratio list is empty"));
    }
    let bbox = bounding_box(emb.coords(), cfg.padding)?;
    let jobs: Vec<(usize, f64)> = (0..cfg.repetitions)
        .flat_map(|rep| ratios.iter().map(move |&q| (rep, q)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(rep, ratio)| {
            let n0 = negatives_for_ratio(cfg.n1, ratio)?;
            let trial = run_trial(base, emb, cfg, class, rep, NegativeStrategy::Uniform, n0)?;
            let grid = decision_grid(&trial.model, &bbox, resolution)?;
            Ok(SweepRow {
                ratio,
                repetition: rep,
                n1: cfg.n1,
                n0,
                region_count: grid.count_at_least(0.5),
                p_at_k: trial.row.p_at_k,
                r_at_k: trial.row.r_at_k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        class,
        resolution,
        rows,
    })
}

/// Uniform negatives against counter-class negatives on identical seed samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineReport {
    pub class: u8,
    pub counter_class: u8,
    pub uniform: Vec<ReportRow>,
    pub counter: Vec<ReportRow>,
}

impl BaselineReport {
    pub fn mean_precision(&self) -> (f64, f64) {
        (
            mean(self.uniform.iter().map(|r| r.p_at_k)),
            mean(self.counter.iter().map(|r| r.p_at_k)),
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<ReportRow> = self.uniform.iter().chain(&self.counter).cloned().collect();
        write_rows_csv(out, &rows)
    }
}

pub fn baseline_comparison(
    base: &UserBase,
    emb: &Embedding,
    cfg: &ExperimentConfig,
    class: u8,
    counter_class: u8,
) -> Result<BaselineReport> {
    emb.check_aligned(base)?;
    let strategies = [NegativeStrategy::Uniform, NegativeStrategy::CounterClass(counter_class)];
    let jobs: Vec<(usize, NegativeStrategy)> = (0..cfg.repetitions)
        .flat_map(|rep| strategies.iter().map(move |&s| (rep, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(rep, s)| run_trial(base, emb, cfg, class, rep, s, cfg.n0).map(|t| t.row))
        .collect::<Result<Vec<_>>>()?;
    let (uniform, counter) = rows
        .into_iter()
        .partition(|r| r.strategy == NegativeStrategy::Uniform.to_string());
    Ok(BaselineReport {
        class,
        counter_class,
        uniform,
        counter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::cluster_map;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            n1: 40,
            n0: 40,
            repetitions: 2,
            k: TopK::ClassPool,
            master_seed: 5,
            forest: ForestParams {
                n_trees: 20,
                ..ForestParams::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn report_shape_and_means() {
        let map = cluster_map(4, 100, 8);
        let cfg = ExperimentConfig {
            classes: vec![1],
            repetitions: 1,
            ..small_cfg()
        };
        let rep = run_experiment(&map.base, &map.embedding, &cfg).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].k, 60);

        let all = run_experiment(&map.base, &map.embedding, &small_cfg()).unwrap();
        assert_eq!(all.rows.len(), 8);
        let (p, r) = all.global_means();
        let p_rows = all.rows.iter().map(|r| r.p_at_k).sum::<f64>() / 8.0;
        assert!((p - p_rows).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r));
        for row in &all.rows {
            // k equals |A_true| under ClassPool
            assert_eq!(row.p_at_k, row.r_at_k);
        }
        assert_eq!(all, run_experiment(&map.base, &map.embedding, &small_cfg()).unwrap());
    }

    #[test]
    fn oversized_k_is_rejected() {
        let map = cluster_map(2, 30, 8);
        let cfg = ExperimentConfig {
            n1: 10,
            n0: 10,
            repetitions: 1,
            k: TopK::Fixed(51),
            ..small_cfg()
        };
        assert!(run_experiment(&map.base, &map.embedding, &cfg).is_err());
    }

    #[test]
    fn baseline_uses_identical_seeds() {
        let map = cluster_map(4, 80, 6);
        let rep = baseline_comparison(&map.base, &map.embedding, &small_cfg(), 2, 0).unwrap();
        assert_eq!(rep.uniform.len(), 2);
        assert_eq!(rep.counter.len(), 2);
        for (u, c) in rep.uniform.iter().zip(&rep.counter) {
            assert_eq!(u.repetition, c.repetition);
            assert_eq!(u.seed_digest, c.seed_digest);
        }
    }

    #[test]
    fn single_ratio_sweep() {
        let map = cluster_map(3, 60, 6);
        let cfg = ExperimentConfig {
            repetitions: 1,
            ..small_cfg()
        };
        let rep = imbalance_sweep(&map.base, &map.embedding, &cfg, 0, &[1.0], 20).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.rows[0].region_count <= 400);
        assert_eq!(negatives_for_ratio(150, 3.0).unwrap(), 50);
        assert!(negatives_for_ratio(150, 0.0).is_err());
    }
}
