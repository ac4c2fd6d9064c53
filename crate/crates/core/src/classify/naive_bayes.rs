use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::discretize::{bin_of, discretize_attribute};
use super::{ClassScore, ClassifyError};
use crate::kb::TrainingSet;

/// Naive Bayes over discretized attributes with add-one smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    /// Sorted class names; indices below refer to this order.
    pub classes: Vec<String>,
    /// Ascending cut points per attribute.
    pub cuts: Vec<Vec<f64>>,
    /// Raw per-class record counts.
    pub class_counts: Vec<usize>,
    /// `bin_counts[class][attribute][bin]`, raw counts.
    pub bin_counts: Vec<Vec<Vec<usize>>>,
    pub trained_revision: u64,
    /// Classes with fewer than the recommended number of records.
    pub underpopulated: Vec<String>,
}

pub fn train_naive_bayes(set: &TrainingSet) -> Result<NaiveBayesModel, ClassifyError> {
    if set.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    let classes = set.labels();
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let labels: Vec<usize> = set.samples.iter().map(|s| index[s.label.as_str()]).collect();
    let dims = set.samples[0].features.values().len();

    let cuts: Vec<Vec<f64>> = (0..dims)
        .map(|a| {
            let column: Vec<f64> = set.samples.iter().map(|s| s.features.values()[a]).collect();
            discretize_attribute(&column, &labels).expect("column and labels have equal length")
        })
        .collect();

    let mut class_counts = vec![0; classes.len()];
    let mut bin_counts: Vec<Vec<Vec<usize>>> = (0..classes.len())
        .map(|_| cuts.iter().map(|c| vec![0; c.len() + 1]).collect())
        .collect();
    for (sample, &c) in set.samples.iter().zip(&labels) {
        class_counts[c] += 1;
        for (a, &v) in sample.features.values().iter().enumerate() {
            bin_counts[c][a][bin_of(&cuts[a], v)] += 1;
        }
    }
    let underpopulated = classes
        .iter()
        .zip(&class_counts)
        .filter(|(_, &n)| n < crate::kb::MIN_RECORDS_PER_CLASS)
        .map(|(c, _)| c.clone())
        .collect();
    Ok(NaiveBayesModel {
        classes,
        cuts,
        class_counts,
        bin_counts,
        trained_revision: set.revision,
        underpopulated,
    })
}

impl NaiveBayesModel {
    pub fn dims(&self) -> usize {
        self.cuts.len()
    }

    /// Unnormalized log posterior per class, in `classes` order.
    pub fn log_scores(&self, query: &[f64]) -> Result<Vec<f64>, ClassifyError> {
        if query.len() != self.dims() {
            return Err(ClassifyError::Dimension {
                expected: self.dims(),
                got: query.len(),
            });
        }
        let total: usize = self.class_counts.iter().sum();
        let k = self.classes.len() as f64;
        let bins: Vec<usize> = query.iter().zip(&self.cuts).map(|(&v, c)| bin_of(c, v)).collect();
        Ok(self
            .class_counts
            .iter()
            .zip(&self.bin_counts)
            .map(|(&n_c, per_attr)| {
                let prior = ((n_c + 1) as f64 / (total as f64 + k)).ln();
                let likelihood: f64 = per_attr
                    .iter()
                    .zip(&bins)
                    .map(|(counts, &b)| ((counts[b] + 1) as f64 / (n_c + counts.len()) as f64).ln())
                    .sum();
                prior + likelihood
            })
            .collect())
    }

    /// Posteriors ranked high to low; ties go to the lexicographically
    /// smaller class name.
    pub fn classify(&self, query: &[f64]) -> Result<Vec<ClassScore>, ClassifyError> {
        let logs = self.log_scores(query)?;
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut ranked: Vec<ClassScore> = self
            .classes
            .iter()
            .zip(exps)
            .map(|(c, e)| ClassScore {
                class: c.clone(),
                posterior: e / z,
            })
            .collect();
        // classes are already sorted by name, so a stable sort keeps name order on ties
        ranked.sort_by(|a, b| b.posterior.total_cmp(&a.posterior));
        Ok(ranked)
    }

    pub fn predict(&self, query: &[f64]) -> Result<ClassScore, ClassifyError> {
        Ok(self.classify(query)?.swap_remove(0))
    }
}
