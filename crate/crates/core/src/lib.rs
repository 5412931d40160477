//! Lookalike audience expansion by density estimation through classification.
//!
//! A user base is embedded into a low-dimensional, neighborhood-preserving
//! map ([`tsne`]). A seed audience is contrasted against negatives drawn
//! uniformly over the map's bounding box ([`training`]), an Extremely
//! Randomized Trees ensemble learns the posterior `p(1|x)` ([`forest`]), and
//! the pool is ranked by that score to form the expanded audience
//! ([`expansion`]). With a constant negative density the posterior is a
//! monotone function of the seed density, which [`oracle`] checks against
//! analytic and kernel-density ground truth. [`metrics`] and [`experiment`]
//! score expansions against known class labels.

pub mod dataset;
pub mod error;
pub mod expansion;
pub mod experiment;
pub mod fixtures;
pub mod forest;
pub mod matrix;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod training;
pub mod tsne;

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use dataset::{LabelVector, UserBase};
pub use error::{Error, Result};
pub use expansion::{expand, score_pool, ExpansionResult};
pub use forest::{ForestParams, Posterior, TreeEnsemble};
pub use matrix::Matrix;
pub use training::{BoundingBox, NegativeStrategy, SeedAudience, TrainingSet};
pub use tsne::{Embedding, TsneConfig};
