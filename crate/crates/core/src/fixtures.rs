//! Deterministic synthetic data sets used by tests and the oracle report.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::UserBase;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::training::{
    bounding_box, sample_uniform_negatives, BoundingBox, NegativeStrategy, TrainingSet, DEFAULT_PADDING,
};
use crate::tsne::Embedding;

/// `clusters` isotropic Gaussian blobs of `per_cluster` points in `dim`
/// dimensions. Cluster `c` is centred at `separation` along axis `c % dim`
/// (shifted further out on later wraps), rows are grouped by cluster.
pub fn gaussian_clusters(
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Matrix {
    let mut rng = rng::seeded(seed);
    let mut data = Vec::with_capacity(clusters * per_cluster * dim);
    for c in 0..clusters {
        let mut center = vec![0.0; dim];
        center[c % dim] = separation * (1 + c / dim) as f64;
        for _ in 0..per_cluster {
            for &m in &center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(m + spread * z);
            }
        }
    }
    Matrix::from_vec(clusters * per_cluster, dim, data).expect("sizes agree")
}

/// A labelled two-dimensional "map" of several elongated clusters, standing in
/// for an embedded user base.
#[derive(Debug, Clone)]
pub struct ClusterMap {
    pub base: UserBase,
    pub embedding: Embedding,
}

/// Builds `classes` clusters of `per_class` points laid out on a ring of
/// radius 12. Each cluster is a Gaussian with standard deviations 1.6 and 0.8
/// rotated by a class-dependent angle. Row order is shuffled so ids do not
/// encode the class.
pub fn cluster_map(classes: u8, per_class: usize, seed: u64) -> ClusterMap {
    let mut rng = rng::seeded(seed);
    let mut rows: Vec<([f64; 2], u8)> = Vec::with_capacity(classes as usize * per_class);
    for c in 0..classes {
        let angle = std::f64::consts::TAU * f64::from(c) / f64::from(classes);
        let (cx, cy) = (12.0 * angle.cos(), 12.0 * angle.sin());
        let tilt = 0.7 * f64::from(c);
        let (s, co) = tilt.sin_cos();
        for _ in 0..per_class {
            let a: f64 = 1.6 * rng.sample::<f64, _>(StandardNormal);
            let b: f64 = 0.8 * rng.sample::<f64, _>(StandardNormal);
            rows.push(([cx + co * a - s * b, cy + s * a + co * b], c));
        }
    }
    // Fisher-Yates with the same stream
    for i in (1..rows.len()).rev() {
        let j = rng.random_range(0..=i);
        rows.swap(i, j);
    }
    let coords = Matrix::from_rows(&rows.iter().map(|r| r.0).collect::<Vec<_>>())
        .expect("rows have equal width");
    let labels = rows.iter().map(|r| r.1).collect();
    let ids: Vec<u64> = (0..rows.len() as u64).collect();
    let base = UserBase::new(ids.clone(), coords.clone(), Some(labels)).expect("valid base");
    let embedding = Embedding::new(ids, coords, None).expect("finite coordinates");
    ClusterMap { base, embedding }
}

/// One cluster of a [`cluster_map`] used as the seed, contrasted with uniform
/// negatives over the padded bounding box of the whole map.
#[derive(Debug, Clone)]
pub struct SeedMapFixture {
    pub map: ClusterMap,
    pub seed_class: u8,
    pub seed_rows: Vec<usize>,
    pub positives: Matrix,
    pub bbox: BoundingBox,
    pub training: TrainingSet,
}

pub const SEED_MAP_CLASSES: u8 = 10;
pub const SEED_MAP_PER_CLASS: usize = 300;

/// Ten clusters of 300 points, `n1` members of class 0 as the seed and `n0`
/// uniform negatives.
pub fn seed_map_fixture(n1: usize, n0: usize, seed: u64) -> Result<SeedMapFixture> {
    let map = cluster_map(SEED_MAP_CLASSES, SEED_MAP_PER_CLASS, seed);
    let seed_class = 0;
    let members = &map.base.class_members()?[&seed_class];
    if n1 > members.len() {
        return Err(Error::Capacity {
            class: seed_class,
            available: members.len(),
            requested: n1,
        });
    }
    let seed_rows = members[..n1].to_vec();
    let positives = map.embedding.coords().select_rows(&seed_rows);
    let bbox = bounding_box(map.embedding.coords(), DEFAULT_PADDING)?;
    let negatives = sample_uniform_negatives(&bbox, n0, rng::derive_seed(seed, &[1]));
    let training = TrainingSet::from_parts(&positives, &negatives, NegativeStrategy::Uniform)?;
    Ok(SeedMapFixture {
        map,
        seed_class,
        seed_rows,
        positives,
        bbox,
        training,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let x = gaussian_clusters(3, 50, 10, 10.0, 1.0, 1);
        assert_eq!((x.rows(), x.cols()), (150, 10));
        assert_eq!(x, gaussian_clusters(3, 50, 10, 10.0, 1.0, 1));
        let m = cluster_map(10, 40, 3);
        assert_eq!(m.base.len(), 400);
        let groups = m.base.class_members().unwrap();
        assert!(groups.values().all(|g| g.len() == 40));

        let f = seed_map_fixture(250, 250, 11).unwrap();
        assert_eq!((f.training.n1, f.training.n0), (250, 250));
        assert!(f.seed_rows.iter().all(|&r| f.map.base.labels().unwrap()[r] == 0));
        assert!(seed_map_fixture(301, 10, 11).is_err());
    }
}
