//! Extremely Randomized Trees for binary classification.
//!
//! Every tree sees the full training set (no bootstrap). At each node a
//! random subset of features with non-zero range is drawn, each gets a single
//! threshold uniform in its range, and the candidate with the largest Gini
//! decrease wins. Leaves keep the raw fraction of label-1 samples, and the
//! ensemble posterior is the mean leaf fraction.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, StreamRng};
use crate::training::{BoundingBox, TrainingSet};

pub const MODEL_FORMAT: &str = "lookalike-extra-trees";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(dim))`.
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
    /// Additive smoothing `(pos + a) / (n + 2a)` of leaf fractions. Zero disables it.
    pub leaf_smoothing: f64,
    /// Fit a training set with a single label instead of rejecting it.
    pub allow_single_class: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: None,
            min_samples_split: 2,
            leaf_smoothing: 0.0,
            allow_single_class: false,
        }
    }
}

impl ForestParams {
    pub fn features_per_split(&self, dim: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class1_fraction: f64,
        sample_count: usize,
        positive_count: usize,
    },
}

/// A fitted tree as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_for(&self, x: &[f64]) -> &TreeNode {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                leaf => return leaf,
            }
        }
    }

    /// Leaf value at `x` with the given smoothing.
    pub fn predict(&self, x: &[f64], smoothing: f64) -> f64 {
        match self.leaf_for(x) {
            TreeNode::Leaf {
                class1_fraction,
                sample_count,
                positive_count,
            } => {
                if smoothing > 0.0 {
                    (*positive_count as f64 + smoothing) / (*sample_count as f64 + 2.0 * smoothing)
                } else {
                    *class1_fraction
                }
            }
            TreeNode::Split { .. } => unreachable!("leaf_for returns leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

/// Class-membership probabilities. `p0` is always `1 - p1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub p0: f64,
    pub p1: f64,
}

impl Posterior {
    pub fn from_p1(p1: f64) -> Self {
        Posterior { p0: 1.0 - p1, p1 }
    }

    /// Maximum a posteriori class; `p1 = 0.5` goes to class 1.
    pub fn class(&self) -> u8 {
        u8::from(self.p1 >= 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub params: ForestParams,
    pub rng_seed: u64,
    pub training_hash: String,
    pub trees: Vec<Tree>,
}

/// SHA-256 over the labelled training rows, independent of row order.
pub fn training_hash(train: &TrainingSet) -> String {
    let mut rows: Vec<(Vec<u64>, u8)> = train
        .points
        .row_iter()
        .zip(&train.labels)
        .map(|(r, &l)| (r.iter().map(|v| v.to_bits()).collect(), l))
        .collect();
    rows.sort_unstable();
    let mut h = Sha256::new();
    h.update((train.len() as u64).to_le_bytes());
    h.update((train.dim() as u64).to_le_bytes());
    for (bits, label) in rows {
        for b in bits {
            h.update(b.to_le_bytes());
        }
        h.update([label]);
    }
    hex::encode(h.finalize())
}

/// Fits an ensemble; tree `t` draws from the stream derived from `(rng_seed, t)`.
pub fn fit(train: &TrainingSet, params: &ForestParams, rng_seed: u64) -> Result<TreeEnsemble> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees must be at least 1"));
    }
    if params.min_samples_split < 2 {
        return Err(Error::invalid("min_samples_split must be at least 2"));
    }
    if train.labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let positives = train.labels.iter().filter(|&&l| l == 1).count();
    if (positives == 0 || positives == train.len()) && !params.allow_single_class {
        return Err(Error::invalid("training set contains a single class"));
    }
    let k = params.features_per_split(train.dim());
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(rng_seed, &[t as u64]);
            grow_tree(&train.points, &train.labels, k, params.min_samples_split, &mut rng)
        })
        .collect();
    Ok(TreeEnsemble {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        dim: train.dim(),
        params: params.clone(),
        rng_seed,
        training_hash: training_hash(train),
        trees,
    })
}

fn gini(n: usize, pos: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

// uniform in (lo, hi); falls back to lo only when no float lies strictly between
fn draw_threshold(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    for _ in 0..64 {
        let t = rng.random_range(lo..hi);
        if t > lo {
            return t;
        }
    }
    lo
}

fn grow_tree(points: &Matrix, labels: &[u8], k: usize, min_split: usize, rng: &mut StreamRng) -> Tree {
    let dim = points.cols();
    let mut nodes = vec![TreeNode::Leaf {
        class1_fraction: 0.0,
        sample_count: 0,
        positive_count: 0,
    }];
    let mut stack = vec![(0usize, (0..points.rows()).collect::<Vec<usize>>())];
    let mut ranges = vec![(0.0, 0.0); dim];
    let mut candidates = Vec::with_capacity(dim);

    while let Some((slot, samples)) = stack.pop() {
        let n = samples.len();
        let pos = samples.iter().filter(|&&s| labels[s] == 1).count();
        let leaf = TreeNode::Leaf {
            class1_fraction: pos as f64 / n as f64,
            sample_count: n,
            positive_count: pos,
        };
        if pos == 0 || pos == n || n < min_split {
            nodes[slot] = leaf;
            continue;
        }
        for (f, r) in ranges.iter_mut().enumerate() {
            *r = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                let v = points.get(s, f);
                (lo.min(v), hi.max(v))
            });
        }
        candidates.clear();
        candidates.extend((0..dim).filter(|&f| ranges[f].1 > ranges[f].0));
        if candidates.is_empty() {
            // contradictory duplicates
            nodes[slot] = leaf;
            continue;
        }
        let parent = gini(n, pos);
        let mut best: Option<(f64, usize, f64)> = None;
        let take = k.min(candidates.len());
        for pick in sample(rng, candidates.len(), take) {
            let f = candidates[pick];
            let (lo, hi) = ranges[f];
            let t = draw_threshold(rng, lo, hi);
            let (mut nl, mut pl) = (0usize, 0usize);
            for &s in &samples {
                if points.get(s, f) <= t {
                    nl += 1;
                    pl += usize::from(labels[s] == 1);
                }
            }
            let (nr, pr) = (n - nl, pos - pl);
            let decrease = parent
                - (nl as f64 / n as f64) * gini(nl, pl)
                - (nr as f64 / n as f64) * gini(nr, pr);
            if best.is_none_or(|(b, _, _)| decrease > b) {
                best = Some((decrease, f, t));
            }
        }
        let (_, feature, threshold) = best.expect("at least one candidate");
        let (left_s, right_s): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&s| points.get(s, feature) <= threshold);
        let left = nodes.len();
        let right = left + 1;
        nodes.push(leaf.clone());
        nodes.push(leaf);
        nodes[slot] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        stack.push((right, right_s));
        stack.push((left, left_s));
    }
    Tree { nodes }
}

impl TreeEnsemble {
    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Per-tree leaf values at `x`.
    pub fn tree_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let a = self.params.leaf_smoothing;
        Ok(self.trees.iter().map(|t| t.predict(x, a)).collect())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Posterior> {
        let values = self.tree_values(x)?;
        let p1 = values.iter().sum::<f64>() / values.len() as f64;
        Ok(Posterior::from_p1(p1))
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<u8> {
        Ok(self.predict_proba(x)?.class())
    }

    /// `p1` for every row.
    pub fn predict_many(&self, points: &Matrix) -> Result<Vec<f64>> {
        if points.cols() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: points.cols(),
            });
        }
        (0..points.rows())
            .into_par_iter()
            .map(|i| self.predict_proba(points.row(i)).map(|p| p.p1))
            .collect()
    }

    pub fn to_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn from_json<R: Read>(input: R) -> Result<Self> {
        let model: TreeEnsemble = serde_json::from_reader(input)?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format {} v{}",
                model.format, model.version
            )));
        }
        Ok(model)
    }
}

/// `p1` on a regular lattice over a two-dimensional box.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major: `values[r * xs.len() + c]` is at `(xs[c], ys[r])`.
    pub values: Vec<f64>,
}

impl DecisionGrid {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.xs.len() + col]
    }

    /// Lattice points with `p1 >= level`.
    pub fn count_at_least(&self, level: f64) -> usize {
        self.values.iter().filter(|&&v| v >= level).count()
    }

    /// `x,y,p1` rows in lattice order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,p1")?;
        for (r, y) in self.ys.iter().enumerate() {
            for (c, x) in self.xs.iter().enumerate() {
                writeln!(out, "{x},{y},{}", self.at(r, c))?;
            }
        }
        Ok(())
    }
}

/// Evenly spaced points covering `[lo, hi]`; a single point sits at the middle.
pub fn lattice_axis(lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    if resolution == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (resolution - 1) as f64;
    (0..resolution).map(|i| lo + step * i as f64).collect()
}

/// Evaluates `score` on a `resolution x resolution` lattice over `bbox`.
pub fn grid_with<F>(bbox: &BoundingBox, resolution: usize, score: F) -> Result<DecisionGrid>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if bbox.dim() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            actual: bbox.dim(),
        });
    }
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let [(x0, x1), (y0, y1)] = [bbox.bounds()[0], bbox.bounds()[1]];
    let xs = lattice_axis(x0, x1, resolution);
    let ys = lattice_axis(y0, y1, resolution);
    let values = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| score(&[xs[k % resolution], ys[k / resolution]]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(DecisionGrid { xs, ys, values })
}

pub fn decision_grid(model: &TreeEnsemble, bbox: &BoundingBox, resolution: usize) -> Result<DecisionGrid> {
    grid_with(bbox, resolution, |x| model.predict_proba(x).map(|p| p.p1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::NegativeStrategy;

    fn set(pos: &[[f64; 2]], neg: &[[f64; 2]]) -> TrainingSet {
        let p = Matrix::from_rows(pos).unwrap();
        let n = Matrix::from_rows(neg).unwrap();
        TrainingSet::from_parts(&p, &n, NegativeStrategy::Uniform).unwrap()
    }

    #[test]
    fn pure_fit_predicts_one_everywhere() {
        let p = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]]).unwrap();
        let train = TrainingSet {
            points: p,
            labels: vec![1, 1, 1],
            n0: 0,
            n1: 3,
            strategy: NegativeStrategy::Uniform,
        };
        assert!(fit(&train, &ForestParams::default(), 1).is_err());
        let params = ForestParams {
            allow_single_class: true,
            n_trees: 5,
            ..ForestParams::default()
        };
        let model = fit(&train, &params, 1).unwrap();
        for x in [[0.0, 0.0], [-50.0, 9.0], [1e6, -1e6]] {
            assert_eq!(model.predict_proba(&x).unwrap().p1, 1.0);
        }
        let bbox = BoundingBox::new(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let grid = decision_grid(&model, &bbox, 7).unwrap();
        assert!(grid.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_points_give_stumps() {
        let train = set(&[[1.0, 1.0]], &[[0.0, 0.0]]);
        let model = fit(&train, &ForestParams::default(), 9).unwrap();
        for tree in &model.trees {
            assert_eq!(tree.depth(), 1);
        }
        assert_eq!(model.predict_proba(&[1.0, 1.0]).unwrap().p1, 1.0);
        assert_eq!(model.predict_proba(&[0.0, 0.0]).unwrap().p1, 0.0);
    }

    #[test]
    fn mixed_leaf_fraction() {
        let tree = Tree {
            nodes: vec![TreeNode::Leaf {
                class1_fraction: 0.75,
                sample_count: 4,
                positive_count: 3,
            }],
        };
        let model = TreeEnsemble {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            dim: 1,
            params: ForestParams::default(),
            rng_seed: 0,
            training_hash: String::new(),
            trees: vec![tree],
        };
        let post = model.predict_proba(&[0.3]).unwrap();
        assert_eq!(post.p1, 0.75);
        assert_eq!(post.class(), 1);
        assert!(model.predict_proba(&[0.3, 0.1]).is_err());
    }

    #[test]
    fn tie_rule() {
        assert_eq!(Posterior::from_p1(0.75).class(), 1);
        assert_eq!(Posterior::from_p1(0.25).class(), 0);
        assert_eq!(Posterior::from_p1(0.5).class(), 1);
    }

    #[test]
    fn contradictory_duplicates_make_mixed_leaf() {
        let train = set(&[[1.0, 1.0], [2.0, 2.0]], &[[1.0, 1.0]]);
        let model = fit(&train, &ForestParams::default(), 3).unwrap();
        assert_eq!(model.predict_proba(&[1.0, 1.0]).unwrap().p1, 0.5);
        assert_eq!(model.predict_proba(&[2.0, 2.0]).unwrap().p1, 1.0);
    }

    #[test]
    fn smoothing_is_opt_in() {
        let train = set(&[[1.0, 1.0]], &[[0.0, 0.0]]);
        let params = ForestParams {
            leaf_smoothing: 1.0,
            ..ForestParams::default()
        };
        let model = fit(&train, &params, 9).unwrap();
        assert!((model.predict_proba(&[1.0, 1.0]).unwrap().p1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let train = set(&[[1.0, 1.0], [1.5, 0.5]], &[[0.0, 0.0], [3.0, 3.0]]);
        let model = fit(&train, &ForestParams { n_trees: 3, ..ForestParams::default() }, 2).unwrap();
        let mut buf = Vec::new();
        model.to_json(&mut buf).unwrap();
        assert_eq!(TreeEnsemble::from_json(&buf[..]).unwrap(), model);
        let text = String::from_utf8(buf).unwrap().replace("\"version\":1", "\"version\":9");
        assert!(TreeEnsemble::from_json(text.as_bytes()).is_err());
    }

    #[test]
    fn lattice_axis_endpoints() {
        assert_eq!(lattice_axis(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(lattice_axis(0.0, 1.0, 1), vec![0.5]);
    }
}
