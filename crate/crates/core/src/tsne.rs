//! Exact t-SNE: the two-dimensional, neighborhood-preserving map in which
//! training and expansion happen.
//!
//! All pairwise work is `O(N^2)` and accumulated in ascending column order per
//! row, so a run is bit-reproducible for a given seed whatever the number of
//! worker threads.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::{format_f64, MatrixTable, UserBase};
use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::rng;

/// Lower clamp for joint affinities.
pub const AFFINITY_FLOOR: f64 = 1e-12;
/// Iterations run with exaggerated affinities and low momentum.
pub const EXAGGERATION_ITERS: usize = 250;
const MAX_BISECTION_STEPS: usize = 50;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub init_scale: f64,
    pub out_dim: usize,
    pub rng_seed: u64,
    /// Record the (unexaggerated) KL every this many iterations.
    pub checkpoint_every: Option<usize>,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            momentum_early: 0.5,
            momentum_late: 0.8,
            init_scale: 1e-4,
            out_dim: 2,
            rng_seed: 0,
            checkpoint_every: None,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 10 {
            return Err(Error::invalid(format!("t-SNE needs at least 10 points, got {n}")));
        }
        if !(self.perplexity > 0.0 && self.perplexity < n as f64) {
            return Err(Error::invalid(format!(
                "perplexity {} must lie in (0, {n})",
                self.perplexity
            )));
        }
        if self.iterations < EXAGGERATION_ITERS {
            return Err(Error::invalid(format!(
                "iterations must be at least {EXAGGERATION_ITERS}"
            )));
        }
        if !(self.learning_rate > 0.0 && self.early_exaggeration > 0.0 && self.init_scale > 0.0) {
            return Err(Error::invalid("learning rate, exaggeration and init scale must be positive"));
        }
        if self.out_dim == 0 {
            return Err(Error::invalid("output dimension must be at least 1"));
        }
        Ok(())
    }
}

/// Run parameters stored alongside an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TsneMeta {
    pub perplexity: f64,
    pub iterations: usize,
    pub rng_seed: u64,
    pub initial_kl: f64,
    pub final_kl: f64,
}

impl TsneMeta {
    /// Writes the `key=value` sidecar.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "perplexity={}", format_f64(self.perplexity))?;
        writeln!(out, "iterations={}", self.iterations)?;
        writeln!(out, "rng_seed={}", self.rng_seed)?;
        writeln!(out, "initial_kl={}", format_f64(self.initial_kl))?;
        writeln!(out, "final_kl={}", format_f64(self.final_kl))?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: n + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            kv.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::invalid(format!("meta field {key} missing or malformed")))
        }
        Ok(TsneMeta {
            perplexity: get(&kv, "perplexity")?,
            iterations: get(&kv, "iterations")?,
            rng_seed: get(&kv, "rng_seed")?,
            initial_kl: get(&kv, "initial_kl")?,
            final_kl: get(&kv, "final_kl")?,
        })
    }
}

/// Low-dimensional coordinates row-aligned with a user base.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    ids: Vec<u64>,
    coords: Matrix,
    pub meta: Option<TsneMeta>,
}

impl Embedding {
    pub fn new(ids: Vec<u64>, coords: Matrix, meta: Option<TsneMeta>) -> Result<Self> {
        if ids.len() != coords.rows() {
            return Err(Error::Dimension {
                expected: coords.rows(),
                actual: ids.len(),
            });
        }
        if coords.cols() == 0 {
            return Err(Error::invalid("embedding needs at least one coordinate"));
        }
        if !coords.all_finite() {
            return Err(Error::invalid("embedding has non-finite coordinates"));
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::invalid(format!("duplicate user id {dup}")));
        }
        Ok(Embedding { ids, coords, meta })
    }

    /// Accepts a precomputed map loaded with `read_matrix_csv`.
    pub fn from_table(table: MatrixTable) -> Result<Self> {
        Embedding::new(table.ids, table.matrix, None)
    }

    /// Embeds every user of `base`.
    pub fn compute(base: &UserBase, cfg: &TsneConfig) -> Result<Self> {
        let run = run_tsne(base.features(), cfg)?;
        Embedding::new(base.ids().to_vec(), run.coords, Some(run.meta))
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn coords(&self) -> &Matrix {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }

    pub fn point(&self, row: usize) -> &[f64] {
        self.coords.row(row)
    }

    /// Checks that the embedding lists exactly the users of `base` in the same order.
    pub fn check_aligned(&self, base: &UserBase) -> Result<()> {
        if self.ids != base.ids() {
            return Err(Error::invalid("embedding ids are not aligned with the user base"));
        }
        Ok(())
    }
}

fn row_entropy(shifted: &[f64], beta: f64, skip: usize) -> (f64, f64) {
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, &s) in shifted.iter().enumerate() {
        if j == skip {
            continue;
        }
        let w = (-beta * s).exp();
        z += w;
        weighted += w * s;
    }
    // H = ln Z + beta * E[s]
    (z.ln() + beta * weighted / z, z)
}

/// Gaussian conditional affinities with per-row bandwidths calibrated to a
/// target perplexity.
///
/// Row `i` holds `p(j|i)` for `j != i`; the diagonal is zero. Each precision
/// is found by 50 halvings of a bracket in log space; entropy is flat near the
/// uniform row, so there is no early exit on a perplexity tolerance.
pub fn conditional_affinities(x: &Matrix, perplexity: f64) -> Result<Matrix> {
    let n = x.rows();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 points, got {n}")));
    }
    if !(perplexity > 0.0 && perplexity < n as f64) {
        return Err(Error::invalid(format!("perplexity {perplexity} must lie in (0, {n})")));
    }
    let target = perplexity.ln();
    let mut p = Matrix::zeros(n, n);
    p.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            let xi = x.row(i);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = if j == i { 0.0 } else { squared_distance(xi, x.row(j)) };
            }
            let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
            for (j, &d) in row.iter().enumerate() {
                if j != i {
                    dmin = dmin.min(d);
                    dmax = dmax.max(d);
                }
            }
            if dmax == 0.0 {
                return Err(Error::DegenerateRow { row: i });
            }
            let mut mean = 0.0;
            for (j, d) in row.iter_mut().enumerate() {
                if j != i {
                    *d -= dmin;
                    mean += *d;
                }
            }
            mean /= (n - 1) as f64;
            let beta = if mean == 0.0 {
                0.0
            } else {
                let (mut lo, mut hi) = (-50.0f64, 50.0f64);
                let mut u = 0.0;
                for _ in 0..MAX_BISECTION_STEPS {
                    u = 0.5 * (lo + hi);
                    let (h, _) = row_entropy(row, u.exp() / mean, i);
                    if h > target {
                        lo = u;
                    } else {
                        hi = u;
                    }
                }
                u.exp() / mean
            };
            let mut z = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                *v = if j == i { 0.0 } else { (-beta * *v).exp() };
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
            Ok(())
        })?;
    Ok(p)
}

/// Perplexity `2^H` of each row of a conditional affinity matrix.
pub fn row_perplexities(p: &Matrix) -> Vec<f64> {
    p.row_iter()
        .map(|row| {
            let h: f64 = row
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| -v * v.log2())
                .sum();
            h.exp2()
        })
        .collect()
}

/// Joint affinities `(p(j|i) + p(i|j)) / 2N`.
///
/// Off-diagonal entries are floored at [`AFFINITY_FLOOR`]; the unclamped
/// entries are rescaled so the total mass stays 1. The diagonal stays zero.
pub fn symmetrize(cond: &Matrix) -> Result<Matrix> {
    let n = cond.rows();
    if cond.cols() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: cond.cols(),
        });
    }
    let denom = 2.0 * n as f64;
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (cond.get(i, j) + cond.get(j, i)) / denom;
            p.set(i, j, v);
            p.set(j, i, v);
        }
    }
    // a rescale can push an entry just above the floor below it, hence the loop
    for _ in 0..8 {
        let mut clamped = 0usize;
        let mut free_mass = 0.0;
        for (k, v) in p.as_slice().iter().enumerate() {
            if k / n == k % n {
                continue;
            }
            if *v <= AFFINITY_FLOOR {
                clamped += 1;
            } else {
                free_mass += v;
            }
        }
        let clamped_mass = clamped as f64 * AFFINITY_FLOOR;
        let needs_clamp = p
            .as_slice()
            .iter()
            .enumerate()
            .any(|(k, v)| k / n != k % n && *v < AFFINITY_FLOOR);
        if !needs_clamp {
            break;
        }
        let scale = (1.0 - clamped_mass) / free_mass;
        for (k, v) in p.as_mut_slice().iter_mut().enumerate() {
            if k / n == k % n {
                continue;
            }
            if *v <= AFFINITY_FLOOR {
                *v = AFFINITY_FLOOR;
            } else {
                *v *= scale;
            }
        }
    }
    Ok(p)
}

/// Unnormalized Student-t kernel rows, returned with their total.
fn student_kernel(y: &Matrix, num: &mut [f64]) -> f64 {
    let n = y.rows();
    let row_sums: Vec<f64> = num
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| {
            let yi = y.row(i);
            let mut s = 0.0;
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = if i == j {
                    0.0
                } else {
                    1.0 / (1.0 + squared_distance(yi, y.row(j)))
                };
                s += *slot;
            }
            s
        })
        .collect();
    row_sums.iter().sum()
}

/// `KL(P || Q)` with `Q` the normalized Student-t kernel of `coords`.
pub fn kl_divergence(p: &Matrix, coords: &Matrix) -> Result<f64> {
    let n = p.rows();
    if p.cols() != n || coords.rows() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: coords.rows(),
        });
    }
    let mut num = vec![0.0; n * n];
    let z = student_kernel(coords, &mut num);
    Ok(kl_with_kernel(p, &num, z))
}

fn kl_with_kernel(p: &Matrix, num: &[f64], z: f64) -> f64 {
    let n = p.rows();
    let terms: Vec<f64> = p
        .as_slice()
        .par_chunks(n)
        .zip(num.par_chunks(n))
        .map(|(prow, qrow)| {
            let mut s = 0.0;
            for (&pij, &nij) in prow.iter().zip(qrow) {
                if pij > 0.0 {
                    let q = (nij / z).max(f64::MIN_POSITIVE);
                    s += pij * (pij / q).ln();
                }
            }
            s
        })
        .collect();
    terms.iter().sum::<f64>().max(0.0)
}

/// Result of an optimization run.
#[derive(Debug, Clone)]
pub struct TsneOutput {
    pub coords: Matrix,
    pub meta: TsneMeta,
    /// `(iteration, KL)` at each checkpoint, measured with unexaggerated affinities.
    pub kl_trace: Vec<(usize, f64)>,
}

/// Runs t-SNE on the rows of `x`.
pub fn run_tsne(x: &Matrix, cfg: &TsneConfig) -> Result<TsneOutput> {
    let n = x.rows();
    cfg.validate(n)?;
    let p = symmetrize(&conditional_affinities(x, cfg.perplexity)?)?;
    optimize(&p, cfg)
}

/// Gradient descent on a precomputed joint affinity matrix.
pub fn optimize(p: &Matrix, cfg: &TsneConfig) -> Result<TsneOutput> {
    let n = p.rows();
    cfg.validate(n)?;
    let e = cfg.out_dim;

    let mut rng = rng::seeded(cfg.rng_seed);
    let normal = Normal::new(0.0, cfg.init_scale).map_err(|e| Error::invalid(e.to_string()))?;
    let init: Vec<f64> = (0..n * e).map(|_| normal.sample(&mut rng)).collect();
    let mut y = Matrix::from_vec(n, e, init)?;

    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; n * e];
    let mut update = vec![0.0; n * e];
    let mut gains = vec![1.0f64; n * e];

    let z0 = student_kernel(&y, &mut num);
    let initial_kl = kl_with_kernel(p, &num, z0);
    let mut kl_trace = vec![(0, initial_kl)];

    for it in 0..cfg.iterations {
        let (exaggeration, momentum) = if it < EXAGGERATION_ITERS {
            (cfg.early_exaggeration, cfg.momentum_early)
        } else {
            (1.0, cfg.momentum_late)
        };
        let z = student_kernel(&y, &mut num);
        let inv_z = 1.0 / z;
        grad.par_chunks_mut(e).enumerate().for_each(|(i, g)| {
            g.fill(0.0);
            let yi = y.row(i);
            let prow = p.row(i);
            let nrow = &num[i * n..(i + 1) * n];
            for j in 0..n {
                let w = (exaggeration * prow[j] - nrow[j] * inv_z) * nrow[j];
                let yj = y.row(j);
                for c in 0..e {
                    g[c] += w * (yi[c] - yj[c]);
                }
            }
            for v in g.iter_mut() {
                *v *= 4.0;
            }
        });
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration: it });
        }

        // adaptive per-coordinate gains
        let ys = y.as_mut_slice();
        for k in 0..n * e {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            ys[k] += update[k];
        }
        for c in 0..e {
            let mean = (0..n).map(|i| ys[i * e + c]).sum::<f64>() / n as f64;
            for i in 0..n {
                ys[i * e + c] -= mean;
            }
        }
        if ys.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: it });
        }

        let done = it + 1;
        if let Some(every) = cfg.checkpoint_every {
            if every > 0 && done % every == 0 && done != cfg.iterations {
                kl_trace.push((done, kl_divergence(p, &y)?));
            }
        }
    }

    let final_kl = kl_divergence(p, &y)?;
    kl_trace.push((cfg.iterations, final_kl));
    Ok(TsneOutput {
        coords: y,
        meta: TsneMeta {
            perplexity: cfg.perplexity,
            iterations: cfg.iterations,
            rng_seed: cfg.rng_seed,
            initial_kl,
            final_kl,
        },
        kl_trace,
    })
}

/// Indices of the `k` nearest rows to `i` (excluding `i`), ties broken by index.
fn knn(x: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let xi = x.row(i);
    let mut d: Vec<(f64, usize)> = (0..x.rows())
        .filter(|&j| j != i)
        .map(|j| (squared_distance(xi, x.row(j)), j))
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, by);
        d.truncate(k);
    }
    let mut idx: Vec<usize> = d.into_iter().map(|(_, j)| j).collect();
    idx.sort_unstable();
    idx
}

/// Mean fraction of each point's `k` nearest neighbours in `x` that are also
/// among its `k` nearest neighbours in `coords`.
pub fn neighborhood_preservation(x: &Matrix, coords: &Matrix, k: usize) -> Result<f64> {
    let n = x.rows();
    if coords.rows() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: coords.rows(),
        });
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k must lie in [1, {}), got {k}", n)));
    }
    let overlaps: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = knn(x, i, k);
            let b = knn(coords, i, k);
            // both sorted
            let (mut p, mut q, mut hits) = (0, 0, 0);
            while p < a.len() && q < b.len() {
                match a[p].cmp(&b[q]) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        hits += 1;
                        p += 1;
                        q += 1;
                    }
                }
            }
            hits
        })
        .collect();
    Ok(overlaps.iter().sum::<usize>() as f64 / (n * k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn equilateral_triangle_is_uniform() {
        let h = 3f64.sqrt() / 2.0;
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]).unwrap();
        let p = conditional_affinities(&x, 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 0.5 };
                assert!((p.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_hit_target_perplexity() {
        let x = fixtures::gaussian_clusters(3, 20, 5, 4.0, 1.0, 9);
        for perp in [2.0, 5.0, 15.0] {
            let p = conditional_affinities(&x, perp).unwrap();
            for (i, got) in row_perplexities(&p).into_iter().enumerate() {
                assert!((got - perp).abs() < 1e-5, "row {i}: {got} vs {perp}");
                let s: f64 = p.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert_eq!(p.get(i, i), 0.0);
            }
        }
    }

    #[test]
    fn far_clusters_do_not_share_mass() {
        let mut rows = Vec::new();
        for c in 0..2 {
            for k in 0..10 {
                rows.push([c as f64 * 100.0 + (k as f64 * 0.37).sin(), (k as f64 * 0.91).cos()]);
            }
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let p = conditional_affinities(&x, 3.0).unwrap();
        for i in 0..20 {
            let cross: f64 = (0..20).filter(|j| (j / 10) != (i / 10)).map(|j| p.get(i, j)).sum();
            assert!(cross < 1e-6);
        }
    }

    #[test]
    fn duplicate_points_are_degenerate() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            conditional_affinities(&x, 2.0),
            Err(Error::DegenerateRow { row: 0 })
        ));
    }

    #[test]
    fn symmetrize_properties() {
        let x = fixtures::gaussian_clusters(2, 15, 3, 3.0, 1.0, 4);
        let p = symmetrize(&conditional_affinities(&x, 5.0).unwrap()).unwrap();
        let n = p.rows();
        let total: f64 = p.as_slice().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(p.get(i, j), p.get(j, i));
                if i != j {
                    assert!(p.get(i, j) >= AFFINITY_FLOOR);
                }
            }
        }
    }

    #[test]
    fn symmetric_input_is_divided_by_n() {
        let c = Matrix::from_rows(&[[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]).unwrap();
        let p = symmetrize(&c).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((p.get(i, j) - c.get(i, j) / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn kl_is_zero_when_p_matches_q() {
        let y = fixtures::gaussian_clusters(2, 6, 2, 2.0, 1.0, 1);
        let n = y.rows();
        let mut num = vec![0.0; n * n];
        let z = student_kernel(&y, &mut num);
        let q = Matrix::from_vec(n, n, num.iter().map(|v| v / z).collect()).unwrap();
        assert!(kl_divergence(&q, &y).unwrap().abs() < 1e-9);
    }

    #[test]
    fn kl_is_translation_invariant() {
        let x = fixtures::gaussian_clusters(2, 8, 4, 3.0, 1.0, 2);
        let p = symmetrize(&conditional_affinities(&x, 4.0).unwrap()).unwrap();
        let y = fixtures::gaussian_clusters(2, 8, 2, 1.0, 1.0, 3);
        let mut shifted = y.clone();
        for v in shifted.as_mut_slice().chunks_mut(2) {
            v[0] += 13.5;
            v[1] -= 4.25;
        }
        let a = kl_divergence(&p, &y).unwrap();
        let b = kl_divergence(&p, &shifted).unwrap();
        assert!(a >= 0.0);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn identity_embedding_preserves_neighborhoods() {
        let x = fixtures::gaussian_clusters(2, 10, 3, 3.0, 1.0, 5);
        assert_eq!(neighborhood_preservation(&x, &x, 5).unwrap(), 1.0);
    }

    #[test]
    fn meta_sidecar_round_trip() {
        let meta = TsneMeta {
            perplexity: 30.0,
            iterations: 1000,
            rng_seed: 42,
            initial_kl: 4.123456789,
            final_kl: 1.0 / 3.0,
        };
        let mut buf = Vec::new();
        meta.write(&mut buf).unwrap();
        assert_eq!(TsneMeta::read(&buf[..]).unwrap(), meta);
    }

    #[test]
    fn config_validation() {
        let cfg = TsneConfig::default();
        assert!(cfg.validate(9).is_err());
        assert!(cfg.validate(30).is_err());
        assert!(cfg.validate(31).is_ok());
        let short = TsneConfig {
            iterations: 100,
            ..TsneConfig::default()
        };
        assert!(short.validate(100).is_err());
    }
}
