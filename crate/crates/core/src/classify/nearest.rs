use serde::{Deserialize, Serialize};

use super::ClassifyError;
use crate::confidence::euclidean;
use crate::kb::TrainingSet;

/// Euclidean 1-NN over the stored instances, in storage order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestNeighborModel {
    pub instances: Vec<(String, Vec<f64>)>,
    pub trained_revision: u64,
}

pub fn train_nearest_neighbor(set: &TrainingSet) -> Result<NearestNeighborModel, ClassifyError> {
    if set.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    Ok(NearestNeighborModel {
        instances: set
            .samples
            .iter()
            .map(|s| (s.label.clone(), s.features.values().to_vec()))
            .collect(),
        trained_revision: set.revision,
    })
}

impl NearestNeighborModel {
    /// Class of the closest instance and its distance; the earliest stored
    /// instance wins ties.
    pub fn classify(&self, query: &[f64]) -> Result<(String, f64), ClassifyError> {
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, x)) in self.instances.iter().enumerate() {
            let d = euclidean(x, query).map_err(|_| ClassifyError::Dimension {
                expected: x.len(),
                got: query.len(),
            })?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, d) = best.expect("model is never empty");
        Ok((self.instances[i].0.clone(), d))
    }
}
