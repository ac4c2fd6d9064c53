//! Classifiers trained on knowledge-base snapshots.
//!
//! The recognizer ships a naive Bayes model over MDL-discretized attributes;
//! a Euclidean 1-nearest-neighbour model is kept for comparison runs.

mod discretize;
mod naive_bayes;
mod nearest;

pub use discretize::{bin_of, discretize_attribute, mdl_accepts};
pub use naive_bayes::{train_naive_bayes, NaiveBayesModel};
pub use nearest::{train_nearest_neighbor, NearestNeighborModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("length mismatch: {0} values vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to train on: no records in non-excluded classes")]
    EmptyTrainingSet,
    #[error("query has {got} attributes, model expects {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "nb")]
    NaiveBayes,
    #[serde(rename = "1nn")]
    NearestNeighbor,
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nb" | "naive_bayes" => Ok(Self::NaiveBayes),
            "1nn" | "nearest_neighbor" => Ok(Self::NearestNeighbor),
            other => Err(format!("unknown algorithm '{other}' (expected nb or 1nn)")),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::NaiveBayes => "naive_bayes",
            Algorithm::NearestNeighbor => "nearest_neighbor",
        })
    }
}

/// One entry of a ranked classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub posterior: f64,
}
