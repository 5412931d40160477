//! Two-class training sets: seed members as positives against negatives from
//! one of several sampling strategies.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::dataset::{write_matrix_csv, UserBase};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::tsne::Embedding;

/// Default fraction of each dimension's range added on both sides of the box.
pub const DEFAULT_PADDING: f64 = 0.05;

/// The users a marketer wants to expand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedAudience {
    members: BTreeSet<u64>,
}

impl SeedAudience {
    /// Checks that every id exists in the embedding.
    pub fn new(ids: impl IntoIterator<Item = u64>, emb: &Embedding) -> Result<Self> {
        let members: BTreeSet<u64> = ids.into_iter().collect();
        if members.is_empty() {
            return Err(Error::invalid("seed audience is empty"));
        }
        let known: std::collections::HashSet<u64> = emb.ids().iter().copied().collect();
        let unknown: Vec<u64> = members.iter().copied().filter(|id| !known.contains(id)).collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownIds {
                count: unknown.len(),
                first: unknown[..unknown.len().min(10)].to_vec(),
            });
        }
        Ok(SeedAudience { members })
    }

    pub fn ids(&self) -> impl ExactSizeIterator<Item = u64> + '_ {
        self.members.iter().copied()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.members.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Axis-aligned support of the uniform negative density.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    bounds: Vec<(f64, f64)>,
}

impl BoundingBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::invalid("bounding box needs at least one dimension"));
        }
        for (dim, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid(format!("dimension {dim} has non-finite bounds")));
            }
            if lo >= hi {
                return Err(Error::DegenerateBox { dim });
            }
        }
        Ok(BoundingBox { bounds })
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.bounds)
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// Tight box around the points, widened by `padding * range` on each side.
pub fn bounding_box(coords: &Matrix, padding: f64) -> Result<BoundingBox> {
    if !(padding >= 0.0 && padding.is_finite()) {
        return Err(Error::invalid(format!("padding must be non-negative, got {padding}")));
    }
    if coords.rows() < 2 {
        return Err(Error::invalid("bounding box needs at least two points"));
    }
    let mut bounds = Vec::with_capacity(coords.cols());
    for c in 0..coords.cols() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for row in coords.row_iter() {
            lo = lo.min(row[c]);
            hi = hi.max(row[c]);
        }
        let range = hi - lo;
        if range <= 0.0 {
            return Err(Error::DegenerateBox { dim: c });
        }
        bounds.push((lo - padding * range, hi + padding * range));
    }
    BoundingBox::new(bounds)
}

/// Draws `n1` distinct members of class `class_tag`.
pub fn sample_seed(
    base: &UserBase,
    emb: &Embedding,
    class_tag: u8,
    n1: usize,
    rng_seed: u64,
) -> Result<SeedAudience> {
    emb.check_aligned(base)?;
    if n1 == 0 {
        return Err(Error::invalid("seed size must be positive"));
    }
    let groups = base.class_members()?;
    let members = groups.get(&class_tag).map(Vec::as_slice).unwrap_or(&[]);
    if members.len() < n1 {
        return Err(Error::Capacity {
            class: class_tag,
            available: members.len(),
            requested: n1,
        });
    }
    let mut rng = rng::seeded(rng_seed);
    let picked = sample(&mut rng, members.len(), n1)
        .into_iter()
        .map(|i| base.ids()[members[i]]);
    SeedAudience::new(picked, emb)
}

/// `n0` points i.i.d. uniform over the box.
pub fn sample_uniform_negatives(bbox: &BoundingBox, n0: usize, rng_seed: u64) -> Matrix {
    let mut rng = rng::seeded(rng_seed);
    let mut data = Vec::with_capacity(n0 * bbox.dim());
    for _ in 0..n0 {
        for &(lo, hi) in bbox.bounds() {
            data.push(rng.random_range(lo..hi));
        }
    }
    Matrix::from_vec(n0, bbox.dim(), data).expect("sizes agree")
}

/// Where label-0 examples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NegativeStrategy {
    /// Uniform over the padded bounding box of the embedding.
    Uniform,
    /// Real users outside the seed, drawn uniformly.
    RandomUsers,
    /// Real users of one other class (simulation only).
    CounterClass(u8),
}

impl NegativeStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            NegativeStrategy::Uniform => "uniform",
            NegativeStrategy::RandomUsers => "random_users",
            NegativeStrategy::CounterClass(_) => "counter_class",
        }
    }
}

impl fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NegativeStrategy::CounterClass(c) => write!(f, "counter_class:{c}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for NegativeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(NegativeStrategy::Uniform),
            "random_users" => Ok(NegativeStrategy::RandomUsers),
            other => {
                let tag = other
                    .strip_prefix("counter_class:")
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown strategy {other:?}")))?;
                Ok(NegativeStrategy::CounterClass(tag))
            }
        }
    }
}

/// Labelled points in embedding space, positives first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub points: Matrix,
    pub labels: Vec<u8>,
    pub n0: usize,
    pub n1: usize,
    pub strategy: NegativeStrategy,
}

impl TrainingSet {
    /// Assembles a training set from explicit positive and negative points.
    pub fn from_parts(positives: &Matrix, negatives: &Matrix, strategy: NegativeStrategy) -> Result<Self> {
        if positives.rows() == 0 || negatives.rows() == 0 {
            return Err(Error::invalid("both classes need at least one example"));
        }
        let points = positives.vstack(negatives)?;
        if !points.all_finite() {
            return Err(Error::invalid("training points must be finite"));
        }
        let mut labels = vec![1u8; positives.rows()];
        labels.resize(points.rows(), 0);
        Ok(TrainingSet {
            points,
            labels,
            n0: negatives.rows(),
            n1: positives.rows(),
            strategy,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    /// Writes the set with positional ids and a label column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let ids: Vec<u64> = (0..self.len() as u64).collect();
        write_matrix_csv(out, &ids, &self.points, Some(&self.labels))
    }
}

/// Options for [`build_training_set`].
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSampling {
    pub strategy: NegativeStrategy,
    pub n0: usize,
    /// Box padding for the uniform strategy.
    pub padding: f64,
}

impl NegativeSampling {
    pub fn uniform(n0: usize) -> Self {
        NegativeSampling {
            strategy: NegativeStrategy::Uniform,
            n0,
            padding: DEFAULT_PADDING,
        }
    }
}

/// Builds the training set for a seed.
///
/// `labels` (row-aligned with `emb`) is required only for the counter-class
/// strategy.
pub fn build_training_set(
    emb: &Embedding,
    labels: Option<&[u8]>,
    seed: &SeedAudience,
    sampling: &NegativeSampling,
    rng_seed: u64,
) -> Result<TrainingSet> {
    let n0 = sampling.n0;
    if n0 == 0 {
        return Err(Error::invalid("n0 must be positive"));
    }
    let row_of: HashMap<u64, usize> = emb.ids().iter().enumerate().map(|(r, &id)| (id, r)).collect();
    let seed_rows: Vec<usize> = seed
        .ids()
        .map(|id| {
            row_of
                .get(&id)
                .copied()
                .ok_or_else(|| Error::invalid(format!("seed id {id} not in embedding")))
        })
        .collect::<Result<_>>()?;
    let positives = emb.coords().select_rows(&seed_rows);

    let negatives = match sampling.strategy {
        NegativeStrategy::Uniform => {
            let bbox = bounding_box(emb.coords(), sampling.padding)?;
            sample_uniform_negatives(&bbox, n0, rng_seed)
        }
        NegativeStrategy::RandomUsers => {
            let pool: Vec<usize> = (0..emb.len()).filter(|&r| !seed.contains(emb.ids()[r])).collect();
            draw_rows(emb, &pool, n0, rng_seed)?
        }
        NegativeStrategy::CounterClass(tag) => {
            let labels = labels.ok_or_else(|| Error::invalid("counter_class needs labels"))?;
            if labels.len() != emb.len() {
                return Err(Error::Dimension {
                    expected: emb.len(),
                    actual: labels.len(),
                });
            }
            if seed_rows.iter().any(|&r| labels[r] == tag) {
                return Err(Error::invalid(format!(
                    "counter class {tag} overlaps the seed's own class"
                )));
            }
            let pool: Vec<usize> = (0..emb.len())
                .filter(|&r| labels[r] == tag && !seed.contains(emb.ids()[r]))
                .collect();
            draw_rows(emb, &pool, n0, rng_seed)?
        }
    };
    TrainingSet::from_parts(&positives, &negatives, sampling.strategy)
}

fn draw_rows(emb: &Embedding, pool: &[usize], n0: usize, rng_seed: u64) -> Result<Matrix> {
    if pool.len() < n0 {
        return Err(Error::invalid(format!(
            "negative pool has {} users, {n0} requested",
            pool.len()
        )));
    }
    let mut rng = rng::seeded(rng_seed);
    let mut rows: Vec<usize> = sample(&mut rng, pool.len(), n0).into_iter().map(|i| pool[i]).collect();
    rows.sort_unstable();
    Ok(emb.coords().select_rows(&rows))
}
