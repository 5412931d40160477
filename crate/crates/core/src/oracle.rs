//! Ground truth for the posterior `p(1|x) = n1 f(x) / (n0 g(x) + n1 f(x))`.
//!
//! Three independent checks on what the classifier should learn: closed-form
//! one-dimensional scenarios, a kernel-density stand-in for the seed density
//! in two dimensions, and Spearman rank agreement between score lists.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixtures::SeedMapFixture;
use crate::forest::{lattice_axis, TreeEnsemble};
use crate::matrix::{squared_distance, Matrix};
use crate::training::{bounding_box, BoundingBox};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal1 {
    pub mean: f64,
    pub sd: f64,
}

impl Normal1 {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::invalid(format!("invalid normal ({mean}, {sd})")));
        }
        Ok(Normal1 { mean, sd })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        (-0.5 * z * z).exp() / (self.sd * SQRT_2PI)
    }
}

/// Density of the negative examples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NegativeDensity {
    Normal(Normal1),
    Uniform { low: f64, high: f64 },
}

impl NegativeDensity {
    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        if !(low < high && low.is_finite() && high.is_finite()) {
            return Err(Error::invalid(format!("uniform support [{low}, {high}] is empty")));
        }
        Ok(NegativeDensity::Uniform { low, high })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            NegativeDensity::Normal(n) => n.pdf(x),
            NegativeDensity::Uniform { low, high } => {
                if (low..=high).contains(&x) {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
        }
    }
}

/// A seed density `f`, a negative density `g`, and the class weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnivariateScenario {
    pub seed: Normal1,
    pub negatives: NegativeDensity,
    pub n0: f64,
    pub n1: f64,
}

impl UnivariateScenario {
    pub fn new(seed: Normal1, negatives: NegativeDensity, n0: f64, n1: f64) -> Result<Self> {
        if !(n0 >= 1.0 && n1 >= 1.0) {
            return Err(Error::invalid("class weights must be at least 1"));
        }
        Ok(UnivariateScenario {
            seed,
            negatives,
            n0,
            n1,
        })
    }

    /// Weighted density difference `n1 f(x) - n0 g(x)`.
    pub fn margin(&self, x: f64) -> f64 {
        self.n1 * self.seed.pdf(x) - self.n0 * self.negatives.pdf(x)
    }

    fn scan_range(&self) -> (f64, f64) {
        let (m, s) = (self.seed.mean, self.seed.sd);
        let (mut lo, mut hi) = (m - 10.0 * s, m + 10.0 * s);
        match self.negatives {
            NegativeDensity::Uniform { low, high } => {
                lo = lo.min(low);
                hi = hi.max(high);
            }
            NegativeDensity::Normal(n) => {
                lo = lo.min(n.mean - 10.0 * n.sd);
                hi = hi.max(n.mean + 10.0 * n.sd);
            }
        }
        (lo, hi)
    }
}

/// `p(1|x)` by Bayes' rule with `P(1)/P(0) = n1/n0`.
///
/// Outside a uniform support with `f(x) > 0` this is 1. Errors when both
/// densities vanish.
pub fn analytic_posterior(x: f64, s: &UnivariateScenario) -> Result<f64> {
    let pos = s.n1 * s.seed.pdf(x);
    let neg = s.n0 * s.negatives.pdf(x);
    let total = neg + pos;
    if total == 0.0 {
        return Err(Error::invalid(format!("both densities vanish at x = {x}")));
    }
    Ok(pos / total)
}

/// `p(0|x)`, the complement of [`analytic_posterior`]; sums with it to exactly 1.
pub fn analytic_posterior_class0(x: f64, s: &UnivariateScenario) -> Result<f64> {
    Ok(1.0 - analytic_posterior(x, s)?)
}

/// `p(0|x)` evaluated directly as `n0 g / (n1 f + n0 g)`.
pub fn analytic_posterior_class0_direct(x: f64, s: &UnivariateScenario) -> Result<f64> {
    let pos = s.n1 * s.seed.pdf(x);
    let neg = s.n0 * s.negatives.pdf(x);
    let total = pos + neg;
    if total == 0.0 {
        return Err(Error::invalid(format!("both densities vanish at x = {x}")));
    }
    Ok(neg / total)
}

pub const SCAN_STEP: f64 = 1e-3;
pub const ROOT_TOLERANCE: f64 = 1e-10;
/// Refined roots must satisfy `|n1 f - n0 g|` below this.
pub const ROOT_RESIDUAL: f64 = 1e-9;

/// Points where `n1 f(x) = n0 g(x)`, ascending.
///
/// Sign changes on a `1e-3` scan grid are refined by bisection. Sign changes
/// caused by the jump of a uniform density at its support edge are discarded
/// because they are not roots.
pub fn decision_thresholds(s: &UnivariateScenario) -> Vec<f64> {
    let (lo, hi) = s.scan_range();
    let steps = ((hi - lo) / SCAN_STEP).ceil() as usize;
    let mut roots = Vec::new();
    let mut prev_x = lo;
    let mut prev = s.margin(lo);
    for i in 1..=steps {
        let x = (lo + i as f64 * SCAN_STEP).min(hi);
        let cur = s.margin(x);
        if prev == 0.0 {
            roots.push(prev_x);
        } else if prev.signum() != cur.signum() && cur != 0.0 {
            let (mut a, mut b) = (prev_x, x);
            let fa_sign = prev.signum();
            for _ in 0..200 {
                if b - a <= ROOT_TOLERANCE * 1e-2 {
                    break;
                }
                let mid = 0.5 * (a + b);
                if s.margin(mid).signum() == fa_sign {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let r = 0.5 * (a + b);
            // a jump of g leaves a large residual on one side
            if s.margin(a).abs().max(s.margin(b).abs()) < ROOT_RESIDUAL {
                roots.push(r);
            }
        }
        prev_x = x;
        prev = cur;
    }
    if prev == 0.0 {
        roots.push(prev_x);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < ROOT_TOLERANCE);
    roots
}

/// Gaussian kernel density of the seed against a uniform negative density on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeOracle {
    pub centers: Matrix,
    /// Standard deviation of the isotropic Gaussian kernel.
    pub bandwidth: f64,
    pub bbox: BoundingBox,
    pub n0: f64,
    pub n1: f64,
}

/// Silverman's rule `1.06 * sigma * n^(-1/5)`, with `sigma` the root mean
/// per-dimension sample variance so that one bandwidth serves every axis.
pub fn silverman_bandwidth(centers: &Matrix) -> Result<f64> {
    let n = centers.rows();
    let d = centers.cols();
    if n < 2 {
        return Err(Error::invalid("Silverman bandwidth needs at least two points"));
    }
    let mut total_var = 0.0;
    for c in 0..d {
        let mean = centers.row_iter().map(|r| r[c]).sum::<f64>() / n as f64;
        let var = centers.row_iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if var <= 0.0 {
            return Err(Error::DegenerateBox { dim: c });
        }
        total_var += var;
    }
    let sigma = (total_var / d as f64).sqrt();
    Ok(1.06 * sigma * (n as f64).powf(-0.2))
}

impl KdeOracle {
    pub fn new(centers: Matrix, bandwidth: f64, bbox: BoundingBox, n0: f64, n1: f64) -> Result<Self> {
        if centers.rows() == 0 {
            return Err(Error::invalid("KDE needs at least one center"));
        }
        if bbox.dim() != centers.cols() {
            return Err(Error::Dimension {
                expected: centers.cols(),
                actual: bbox.dim(),
            });
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if !(n0 > 0.0 && n1 > 0.0) {
            return Err(Error::invalid("class weights must be positive"));
        }
        Ok(KdeOracle {
            centers,
            bandwidth,
            bbox,
            n0,
            n1,
        })
    }

    /// Oracle with the Silverman bandwidth.
    pub fn silverman(centers: Matrix, bbox: BoundingBox, n0: f64, n1: f64) -> Result<Self> {
        let h = silverman_bandwidth(&centers)?;
        KdeOracle::new(centers, h, bbox, n0, n1)
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        let d = self.centers.cols();
        if x.len() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: x.len(),
            });
        }
        let h = self.bandwidth;
        let norm = (h * SQRT_2PI).powi(d as i32);
        let total: f64 = self
            .centers
            .row_iter()
            .map(|c| (-0.5 * squared_distance(c, x) / (h * h)).exp())
            .sum();
        Ok(total / (norm * self.centers.rows() as f64))
    }
}

/// Posterior with `f` replaced by the kernel density and `g = 1 / volume(box)`.
pub fn kde_posterior(oracle: &KdeOracle, x: &[f64]) -> Result<f64> {
    let f = oracle.density(x)?;
    let pos = oracle.n1 * f;
    Ok(pos / (oracle.n0 / oracle.bbox.volume() + pos))
}

/// Ranks starting at 1, tied values sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (va > 0.0 && vb > 0.0).then(|| (cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average-rank ties.
pub fn rank_agreement(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::invalid("rank agreement needs at least two values"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::invalid("a score list is constant"))
}

/// Lattice of `nx * ny` points over a two-dimensional box, rows varying fastest in x.
pub fn probe_grid(bbox: &BoundingBox, nx: usize, ny: usize) -> Result<Matrix> {
    if bbox.dim() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            actual: bbox.dim(),
        });
    }
    if nx < 2 || ny < 2 {
        return Err(Error::invalid("probe grid needs at least two points per axis"));
    }
    let b = bbox.bounds();
    let xs = lattice_axis(b[0].0, b[0].1, nx);
    let ys = lattice_axis(b[1].0, b[1].1, ny);
    let data = ys.iter().flat_map(|&y| xs.iter().flat_map(move |&x| [x, y])).collect();
    Matrix::from_vec(nx * ny, 2, data)
}

/// Spearman correlation between classifier scores and KDE posteriors at the probes.
pub fn classifier_agreement(model: &TreeEnsemble, kde: &KdeOracle, probes: &Matrix) -> Result<f64> {
    let scores = model.predict_many(probes)?;
    let truth = probes
        .row_iter()
        .map(|p| kde_posterior(kde, p))
        .collect::<Result<Vec<_>>>()?;
    rank_agreement(&scores, &truth)
}

/// Padding, relative to the seed's range, of the region probed on the seed-map fixture.
pub const SEED_REGION_PADDING: f64 = 0.25;
pub const PROBE_NX: usize = 50;
pub const PROBE_NY: usize = 40;

/// Classifier against KDE on a [`SeedMapFixture`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureAgreement {
    /// Spearman correlation over the `PROBE_NX x PROBE_NY` seed-region lattice.
    pub rank_correlation: f64,
    pub probes: usize,
    pub training_accuracy: f64,
    /// Mean `p1` within half a standard deviation of the seed centroid.
    pub centroid_mean: f64,
    /// Mean `p1` over the tenth of the box in the corner farthest from the centroid.
    pub corner_mean: f64,
    pub bandwidth: f64,
}

fn mean_score(model: &TreeEnsemble, bbox: &BoundingBox) -> Result<f64> {
    let probes = probe_grid(bbox, 20, 20)?;
    let scores = model.predict_many(&probes)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn fixture_agreement(fixture: &SeedMapFixture, model: &TreeEnsemble) -> Result<FixtureAgreement> {
    let t = &fixture.training;
    let correct = t
        .points
        .row_iter()
        .zip(&t.labels)
        .map(|(x, &l)| model.predict_class(x).map(|c| c == l))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    let training_accuracy = correct as f64 / t.len() as f64;

    let kde = KdeOracle::silverman(fixture.positives.clone(), fixture.bbox.clone(), t.n0 as f64, t.n1 as f64)?;
    let region = bounding_box(&fixture.positives, SEED_REGION_PADDING)?;
    let probes = probe_grid(&region, PROBE_NX, PROBE_NY)?;
    let rank_correlation = classifier_agreement(model, &kde, &probes)?;

    let n = fixture.positives.rows() as f64;
    let mut centroid = Vec::new();
    let mut corner = Vec::new();
    for (c, &(lo, hi)) in fixture.bbox.bounds().iter().enumerate() {
        let col: Vec<f64> = fixture.positives.row_iter().map(|r| r[c]).collect();
        let m = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        centroid.push((m - 0.5 * sd, m + 0.5 * sd));
        let w = 0.1 * (hi - lo);
        corner.push(if m - lo > hi - m { (lo, lo + w) } else { (hi - w, hi) });
    }
    Ok(FixtureAgreement {
        rank_correlation,
        probes: probes.rows(),
        training_accuracy,
        centroid_mean: mean_score(model, &BoundingBox::new(centroid)?)?,
        corner_mean: mean_score(model, &BoundingBox::new(corner)?)?,
        bandwidth: kde.bandwidth,
    })
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Seed `Normal(3, 1)` against `Uniform(-6, 12)` with weights `n0`, `n1`.
pub fn uniform_regime(n0: f64, n1: f64) -> UnivariateScenario {
    UnivariateScenario::new(
        Normal1 { mean: 3.0, sd: 1.0 },
        NegativeDensity::Uniform { low: -6.0, high: 12.0 },
        n0,
        n1,
    )
    .expect("weights are at least 1")
}

/// Seed `Normal(3, 1)` against `Normal(1, 1)` with equal weights.
pub fn normal_regime() -> UnivariateScenario {
    UnivariateScenario::new(
        Normal1 { mean: 3.0, sd: 1.0 },
        NegativeDensity::Normal(Normal1 { mean: 1.0, sd: 1.0 }),
        1.0,
        1.0,
    )
    .expect("weights are at least 1")
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Posterior identities and decision-threshold checks on the two regimes.
pub fn univariate_checks() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let even = uniform_regime(1.0, 1.0);
    let heavy = uniform_regime(1.0, 3.0);
    let normal = normal_regime();

    let mut evaluated = 0usize;
    let mut exact = true;
    let mut worst_direct = 0.0f64;
    for s in [&even, &heavy, &normal] {
        let (lo, hi) = s.scan_range();
        for x in grid(lo, hi, 1e-2) {
            let (Ok(p1), Ok(p0), Ok(d)) = (
                analytic_posterior(x, s),
                analytic_posterior_class0(x, s),
                analytic_posterior_class0_direct(x, s),
            ) else {
                continue;
            };
            evaluated += 1;
            exact &= p1 + p0 == 1.0;
            worst_direct = worst_direct.max((p1 + d - 1.0).abs());
        }
    }
    out.push(CheckOutcome::new(
        "posterior_sums_to_one",
        exact && worst_direct <= 1e-15,
        format!("{evaluated} points, direct-route deviation {worst_direct:e}"),
    ));

    // with g constant, sorting by f must sort the posterior
    let mut pairs: Vec<(f64, f64)> = grid(-5.99, 11.99, 1e-2)
        .into_iter()
        .map(|x| (even.seed.pdf(x), analytic_posterior(x, &even).unwrap_or(f64::NAN)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = pairs.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        if b.0 > a.0 * (1.0 + 1e-12) {
            b.1 > a.1
        } else {
            b.1 >= a.1
        }
    });
    out.push(CheckOutcome::new(
        "uniform_posterior_monotone_in_density",
        monotone,
        format!("{} points ordered by f", pairs.len()),
    ));

    let right: Vec<f64> = grid(3.0 + 1e-3, 13.0, 1e-3)
        .into_iter()
        .map(|x| analytic_posterior(x, &normal).unwrap_or(f64::NAN))
        .collect();
    out.push(CheckOutcome::new(
        "normal_posterior_grows_rightward",
        strictly_increasing(&right),
        format!(
            "p1 from {:.6} to {:.12} over (3, 13]",
            right[0],
            right[right.len() - 1]
        ),
    ));

    let left: Vec<f64> = grid(-5.999, 3.0, 1e-3)
        .into_iter()
        .map(|x| analytic_posterior(x, &even).unwrap_or(f64::NAN))
        .collect();
    let falling: Vec<f64> = grid(3.0, 11.999, 1e-3)
        .into_iter()
        .map(|x| -analytic_posterior(x, &even).unwrap_or(f64::NAN))
        .collect();
    out.push(CheckOutcome::new(
        "uniform_posterior_peaks_at_seed_mean",
        strictly_increasing(&left) && strictly_increasing(&falling),
        format!("p1(3) = {:.12}", left[left.len() - 1]),
    ));

    let mut worst = 0.0f64;
    let mut counts = Vec::new();
    for s in [&even, &heavy, &normal] {
        let roots = decision_thresholds(s);
        counts.push(roots.len());
        for r in roots {
            worst = worst.max(s.margin(r).abs());
        }
    }
    out.push(CheckOutcome::new(
        "threshold_residuals",
        worst < ROOT_RESIDUAL && counts == [2, 2, 1],
        format!("root counts {counts:?}, max residual {worst:e}"),
    ));

    let half = (2.0 * (18.0 / SQRT_2PI).ln()).sqrt();
    let roots = decision_thresholds(&even);
    let err = match roots.as_slice() {
        [a, b] => (a - (3.0 - half)).abs().max((b - (3.0 + half)).abs()),
        _ => f64::INFINITY,
    };
    out.push(CheckOutcome::new(
        "uniform_roots_closed_form",
        err < 1e-6,
        format!("roots {roots:?}, error {err:e}"),
    ));

    let single = decision_thresholds(&normal);
    out.push(CheckOutcome::new(
        "normal_single_threshold",
        single.len() == 1 && single[0] > 1.0 && single[0] < 3.0,
        format!("roots {single:?}"),
    ));

    let wide = decision_thresholds(&heavy);
    let widens = roots.len() == 2 && wide.len() == 2 && wide[0] < roots[0] && wide[1] > roots[1];
    out.push(CheckOutcome::new(
        "imbalance_widens_interval",
        widens,
        format!("n1/n0 = 1: {roots:?}, n1/n0 = 3: {wide:?}"),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_scenario(n0: f64, n1: f64) -> UnivariateScenario {
        UnivariateScenario::new(
            Normal1::new(3.0, 1.0).unwrap(),
            NegativeDensity::uniform(-6.0, 12.0).unwrap(),
            n0,
            n1,
        )
        .unwrap()
    }

    #[test]
    fn posterior_at_seed_mean() {
        // f(3) = 1/sqrt(2 pi), g = 1/18; 30-digit evaluation gives 0.8777649723269241263...
        let p = analytic_posterior(3.0, &uniform_scenario(1.0, 1.0)).unwrap();
        assert!((p - 0.877_764_972_326_924_1).abs() < 1e-14, "{p}");
    }

    #[test]
    fn posterior_edge_cases() {
        let s = uniform_scenario(1.0, 1.0);
        // beyond the uniform support only f remains
        assert_eq!(analytic_posterior(13.0, &s).unwrap(), 1.0);
        assert!(analytic_posterior(1e3, &s).is_err());
        let same = UnivariateScenario::new(
            Normal1::new(0.0, 1.0).unwrap(),
            NegativeDensity::Normal(Normal1::new(0.0, 1.0).unwrap()),
            5.0,
            5.0,
        )
        .unwrap();
        assert_eq!(analytic_posterior(0.7, &same).unwrap(), 0.5);
    }

    #[test]
    fn class0_routes_agree() {
        let s = uniform_scenario(2.0, 3.0);
        for i in 0..200 {
            let x = -5.0 + i as f64 * 0.08;
            let p1 = analytic_posterior(x, &s).unwrap();
            assert_eq!(p1 + analytic_posterior_class0(x, &s).unwrap(), 1.0);
            let direct = analytic_posterior_class0_direct(x, &s).unwrap();
            assert!((p1 + direct - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_roots_match_closed_form() {
        let roots = decision_thresholds(&uniform_scenario(1.0, 1.0));
        let half = (2.0 * (18.0 / SQRT_2PI).ln()).sqrt();
        assert_eq!(roots.len(), 2);
        assert!((roots[0] - (3.0 - half)).abs() < 1e-6);
        assert!((roots[1] - (3.0 + half)).abs() < 1e-6);
    }

    #[test]
    fn normal_negatives_have_one_threshold() {
        let s = UnivariateScenario::new(
            Normal1::new(3.0, 1.0).unwrap(),
            NegativeDensity::Normal(Normal1::new(1.0, 1.0).unwrap()),
            1.0,
            1.0,
        )
        .unwrap();
        let roots = decision_thresholds(&s);
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn imbalance_widens_the_interval() {
        let even = decision_thresholds(&uniform_scenario(1.0, 1.0));
        let heavy = decision_thresholds(&uniform_scenario(1.0, 3.0));
        assert!(heavy[0] < even[0] && heavy[1] > even[1]);
    }

    #[test]
    fn no_sign_change_gives_no_roots() {
        // n1 f exceeds n0 g everywhere
        let s = UnivariateScenario::new(
            Normal1::new(0.0, 1.0).unwrap(),
            NegativeDensity::uniform(-0.5, 0.5).unwrap(),
            1.0,
            100.0,
        )
        .unwrap();
        assert!(decision_thresholds(&s).is_empty());
    }

    #[test]
    fn kde_limits() {
        let centers = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let small = BoundingBox::new(vec![(-50.0, 50.0), (-50.0, 50.0)]).unwrap();
        let k = KdeOracle::new(centers.clone(), 1.0, small, 1.0, 1.0).unwrap();
        assert!(kde_posterior(&k, &[20.0, 0.0]).unwrap() < 1e-6);
        let huge = BoundingBox::new(vec![(-1e9, 1e9), (-1e9, 1e9)]).unwrap();
        let k = KdeOracle::new(centers, 1.0, huge, 1.0, 1.0).unwrap();
        assert!(kde_posterior(&k, &[0.0, 0.0]).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn silverman_rule() {
        let c = Matrix::from_rows(&[[0.0, 0.0], [2.0, 4.0]]).unwrap();
        // variances 2 and 8, d = 2, n = 2
        let h = silverman_bandwidth(&c).unwrap();
        assert!((h - 1.06 * 5f64.sqrt() * 2f64.powf(-0.2)).abs() < 1e-12);
        let line = Matrix::from_vec(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let h1 = silverman_bandwidth(&line).unwrap();
        assert!((h1 - 1.06 * 3f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn default_checks_pass() {
        for c in univariate_checks() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn probe_grid_layout() {
        let b = BoundingBox::new(vec![(0.0, 1.0), (10.0, 12.0)]).unwrap();
        let g = probe_grid(&b, 3, 2).unwrap();
        assert_eq!(g.rows(), 6);
        assert_eq!(g.row(1), &[0.5, 10.0]);
        assert_eq!(g.row(5), &[1.0, 12.0]);
    }

    #[test]
    fn spearman_cases() {
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 1.5).collect();
        assert!((rank_agreement(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        assert!((rank_agreement(&a, &rev).unwrap() + 1.0).abs() < 1e-12);
        let mut swapped = a.clone();
        swapped.swap(4, 5);
        let want = 1.0 - 6.0 * 2.0 / (10.0 * 99.0);
        assert!((rank_agreement(&a, &swapped).unwrap() - want).abs() < 1e-12);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!(rank_agreement(&a, &[1.0; 10]).is_err());
    }
}
