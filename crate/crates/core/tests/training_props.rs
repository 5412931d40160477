use std::collections::HashMap;

use lookalike::fixtures::cluster_map;
use lookalike::training::{
    bounding_box, build_training_set, sample_seed, sample_uniform_negatives, NegativeSampling,
};
use lookalike::{BoundingBox, Matrix, NegativeStrategy};
use proptest::prelude::*;

#[test]
fn padded_box_of_two_points() {
    let coords = Matrix::from_rows(&[[0.0, 0.0], [2.0, 4.0]]).unwrap();
    let bbox = bounding_box(&coords, 0.05).unwrap();
    assert_eq!(bbox.bounds(), &[(-0.1, 2.1), (-0.2, 4.2)]);
    assert!(bounding_box(&Matrix::from_rows(&[[1.0, 0.0], [1.0, 3.0]]).unwrap(), 0.05).is_err());
}

#[test]
fn uniform_negatives_are_centred() {
    let bbox = BoundingBox::new(vec![(-3.0, 5.0), (10.0, 11.0)]).unwrap();
    let n0 = 10_000;
    let neg = sample_uniform_negatives(&bbox, n0, 42);
    assert_eq!(neg.rows(), n0);
    for (c, &(lo, hi)) in bbox.bounds().iter().enumerate() {
        let mean = neg.row_iter().map(|r| r[c]).sum::<f64>() / n0 as f64;
        let tol = 3.0 * (hi - lo) / (12.0 * n0 as f64).sqrt();
        assert!((mean - (lo + hi) / 2.0).abs() < tol, "dim {c}: {mean}");
    }
    assert_eq!(neg, sample_uniform_negatives(&bbox, n0, 42));
    assert_ne!(neg, sample_uniform_negatives(&bbox, n0, 43));
}

proptest! {
    #[test]
    fn negatives_stay_in_the_box(
        bounds in prop::collection::vec((-100.0f64..100.0, 0.001f64..50.0), 1..5),
        n0 in 1usize..300,
        seed in any::<u64>(),
    ) {
        let bbox = BoundingBox::new(bounds.iter().map(|&(lo, w)| (lo, lo + w)).collect()).unwrap();
        let neg = sample_uniform_negatives(&bbox, n0, seed);
        prop_assert_eq!(neg.cols(), bbox.dim());
        prop_assert!(neg.row_iter().all(|r| bbox.contains(r)));
    }

    #[test]
    fn real_user_negatives_avoid_the_seed(seed in any::<u64>(), tag in 0u8..5, counter in 0u8..5) {
        prop_assume!(tag != counter);
        let map = cluster_map(5, 60, seed);
        let labels = map.base.labels().unwrap();
        let row_of: HashMap<[u64; 2], usize> = map
            .embedding
            .coords()
            .row_iter()
            .enumerate()
            .map(|(r, p)| ([p[0].to_bits(), p[1].to_bits()], r))
            .collect();
        let audience = sample_seed(&map.base, &map.embedding, tag, 40, seed ^ 1).unwrap();
        prop_assert_eq!(audience.len(), 40);
        prop_assert!(audience.ids().all(|id| labels[id as usize] == tag));

        for strategy in [NegativeStrategy::RandomUsers, NegativeStrategy::CounterClass(counter)] {
            let sampling = NegativeSampling { strategy, n0: 50, padding: 0.05 };
            let t = build_training_set(&map.embedding, Some(labels), &audience, &sampling, seed).unwrap();
            prop_assert_eq!((t.n1, t.n0), (40, 50));
            let mut seen = std::collections::HashSet::new();
            for (p, &l) in t.points.row_iter().zip(&t.labels).skip(40) {
                prop_assert_eq!(l, 0);
                let r = row_of[&[p[0].to_bits(), p[1].to_bits()]];
                prop_assert!(!audience.contains(map.embedding.ids()[r]));
                prop_assert!(seen.insert(r));
                if strategy == NegativeStrategy::CounterClass(counter) {
                    prop_assert_eq!(labels[r], counter);
                }
            }
            let again = build_training_set(&map.embedding, Some(labels), &audience, &sampling, seed).unwrap();
            prop_assert_eq!(&t, &again);
        }
    }
}

#[test]
fn seed_capacity_is_checked() {
    let map = cluster_map(3, 20, 1);
    assert!(sample_seed(&map.base, &map.embedding, 0, 21, 0).is_err());
    assert!(sample_seed(&map.base, &map.embedding, 7, 1, 0).is_err());
    let audience = sample_seed(&map.base, &map.embedding, 1, 20, 0).unwrap();
    let t = build_training_set(&map.embedding, None, &audience, &NegativeSampling::uniform(30), 5).unwrap();
    let bbox = bounding_box(map.embedding.coords(), 0.05).unwrap();
    assert!(t.points.row_iter().skip(20).all(|r| bbox.contains(r)));
    let counter = NegativeSampling {
        strategy: NegativeStrategy::CounterClass(2),
        n0: 30,
        padding: 0.05,
    };
    assert!(build_training_set(&map.embedding, None, &audience, &counter, 5).is_err());
}
