//! Precision and recall of the top-`k` ranked users.

use std::collections::BTreeSet;

use num_rational::Ratio;

use crate::error::{Error, Result};

/// The true positive-class pool members and a ranked list of length `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    a_true: BTreeSet<u64>,
    a_k: Vec<u64>,
}

impl EvalCase {
    pub fn new(a_true: impl IntoIterator<Item = u64>, a_k: Vec<u64>) -> Result<Self> {
        let a_true: BTreeSet<u64> = a_true.into_iter().collect();
        if a_true.is_empty() {
            return Err(Error::invalid("A_true is empty"));
        }
        if a_k.is_empty() {
            return Err(Error::invalid("A_k is empty"));
        }
        let distinct: BTreeSet<u64> = a_k.iter().copied().collect();
        if distinct.len() != a_k.len() {
            return Err(Error::invalid("A_k contains duplicate ids"));
        }
        Ok(EvalCase { a_true, a_k })
    }

    pub fn k(&self) -> usize {
        self.a_k.len()
    }

    pub fn true_count(&self) -> usize {
        self.a_true.len()
    }

    /// `|A_true ∩ A_k|`
    pub fn hits(&self) -> usize {
        self.a_k.iter().filter(|id| self.a_true.contains(id)).count()
    }

    pub fn precision_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.hits() as u64, self.k() as u64)
    }

    pub fn recall_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.hits() as u64, self.true_count() as u64)
    }
}

/// `|A_true ∩ A_k| / |A_k|`
pub fn precision_at_k(case: &EvalCase) -> f64 {
    case.hits() as f64 / case.k() as f64
}

/// `|A_true ∩ A_k| / |A_true|`
pub fn recall_at_k(case: &EvalCase) -> f64 {
    case.hits() as f64 / case.true_count() as f64
}
