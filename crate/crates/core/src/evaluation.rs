//! Stratified k-fold cross-validation, learning curves and timing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{train_naive_bayes, train_nearest_neighbor, Algorithm, ClassifyError};
use crate::features::extract_segment_features;
use crate::kb::{KnowledgeBase, TrainingSet};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("fold count must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("nothing to evaluate: the knowledge base has no trainable records")]
    Empty,
    #[error("grid value {value} exceeds what the knowledge base holds ({limit})")]
    GridTooLarge { value: usize, limit: usize },
    #[error("grid values must be positive")]
    ZeroGrid,
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

/// Per-record fold assignment, stratified by class and shuffled by `seed`.
///
/// Records of each class are shuffled and dealt round-robin, continuing the
/// deal where the previous class stopped so fold sizes stay balanced.
pub fn stratified_folds(labels: &[String], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewFolds(k));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Anything that can be fit on a training set and asked for one label.
pub enum FittedModel {
    NaiveBayes(crate::classify::NaiveBayesModel),
    NearestNeighbor(crate::classify::NearestNeighborModel),
}

impl FittedModel {
    pub fn fit(algorithm: Algorithm, set: &TrainingSet) -> Result<Self, ClassifyError> {
        Ok(match algorithm {
            Algorithm::NaiveBayes => Self::NaiveBayes(train_naive_bayes(set)?),
            Algorithm::NearestNeighbor => Self::NearestNeighbor(train_nearest_neighbor(set)?),
        })
    }

    pub fn predict(&self, query: &[f64]) -> Result<String, ClassifyError> {
        Ok(match self {
            Self::NaiveBayes(m) => m.predict(query)?.class,
            Self::NearestNeighbor(m) => m.classify(query)?.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub correct: usize,
    pub train_ms: f64,
    pub classify_ms: f64,
}

impl FoldResult {
    pub fn accuracy(&self) -> f64 {
        if self.test_size == 0 {
            return 0.0;
        }
        self.correct as f64 / self.test_size as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: Algorithm,
    pub fold_count: usize,
    pub seed: u64,
    /// Sorted class names; rows and columns of `confusion` follow this order.
    pub classes: Vec<String>,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub folds: Vec<FoldResult>,
    /// Some class has fewer records than folds, so stratification is partial.
    pub imbalanced_folds: bool,
    /// Fewer than two classes: accuracy says nothing.
    pub degenerate: bool,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes.len()).map(|i| self.confusion[i][i]).sum()
    }

    /// Same outcome, ignoring wall-clock fields.
    pub fn same_outcome(&self, other: &EvalReport) -> bool {
        let strip = |r: &EvalReport| {
            let mut r = r.clone();
            for f in &mut r.folds {
                f.train_ms = 0.0;
                f.classify_ms = 0.0;
            }
            r
        };
        strip(self) == strip(other)
    }

    /// One row per fold followed by a summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,algorithm,train_size,test_size,correct,accuracy,train_ms,classify_ms\n");
        for f in &self.folds {
            let _ = writeln!(
                out,
                "fold{},{},{},{},{},{:.6},{:.3},{:.3}",
                f.fold,
                self.algorithm,
                f.train_size,
                f.test_size,
                f.correct,
                f.accuracy(),
                f.train_ms,
                f.classify_ms
            );
        }
        let train_ms: f64 = self.folds.iter().map(|f| f.train_ms).sum::<f64>() / self.folds.len().max(1) as f64;
        let classify_ms: f64 = self.folds.iter().map(|f| f.classify_ms).sum::<f64>() / self.folds.len().max(1) as f64;
        let _ = writeln!(
            out,
            "summary,{},{},{},{},{:.6},{:.3},{:.3}",
            self.algorithm,
            self.total() * (self.fold_count - 1) / self.fold_count.max(1),
            self.total(),
            self.trace(),
            self.accuracy,
            train_ms,
            classify_ms
        );
        out
    }
}

/// Trains `algorithm` on everything outside `test` and scores `test`.
pub fn fit_fold(
    set: &TrainingSet,
    test: &[usize],
    algorithm: Algorithm,
) -> Result<(FittedModel, Vec<String>, f64, f64), EvalError> {
    let mut in_test = vec![false; set.len()];
    for &i in test {
        in_test[i] = true;
    }
    let train_idx: Vec<usize> = (0..set.len()).filter(|&i| !in_test[i]).collect();
    let train = set.subset(&train_idx);
    let t0 = Instant::now();
    let model = FittedModel::fit(algorithm, &train)?;
    let train_ms = t0.elapsed().as_secs_f64() * 1e3;
    let t1 = Instant::now();
    let predictions = test
        .iter()
        .map(|&i| model.predict(set.samples[i].features.values()))
        .collect::<Result<Vec<_>, _>>()?;
    let classify_ms = t1.elapsed().as_secs_f64() * 1e3 / test.len().max(1) as f64;
    Ok((model, predictions, train_ms, classify_ms))
}

pub fn cross_validate_set(set: &TrainingSet, k: usize, algorithm: Algorithm, seed: u64) -> Result<EvalReport, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewFolds(k));
    }
    if set.is_empty() {
        return Err(EvalError::Empty);
    }
    let labels: Vec<String> = set.samples.iter().map(|s| s.label.clone()).collect();
    let classes = set.labels();
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let folds = stratified_folds(&labels, k, seed)?;

    let outcomes = folds
        .par_iter()
        .enumerate()
        .filter(|(_, test)| !test.is_empty() && test.len() < set.len())
        .map(|(fold, test)| {
            let (_, predictions, train_ms, classify_ms) = fit_fold(set, test, algorithm)?;
            Ok((fold, test.clone(), predictions, train_ms, classify_ms))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let n = classes.len();
    let mut confusion = vec![vec![0; n]; n];
    let mut fold_results = Vec::with_capacity(outcomes.len());
    for (fold, test, predictions, train_ms, classify_ms) in outcomes {
        let mut correct = 0;
        for (&i, predicted) in test.iter().zip(&predictions) {
            let actual = index[labels[i].as_str()];
            let p = index[predicted.as_str()];
            confusion[actual][p] += 1;
            correct += usize::from(actual == p);
        }
        fold_results.push(FoldResult {
            fold,
            train_size: set.len() - test.len(),
            test_size: test.len(),
            correct,
            train_ms,
            classify_ms,
        });
    }
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..n).map(|i| confusion[i][i]).sum();
    let per_class = classes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let support: usize = confusion[i].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[i]).sum();
            ClassMetrics {
                class: c.clone(),
                support,
                precision: if predicted == 0 { 0.0 } else { confusion[i][i] as f64 / predicted as f64 },
                recall: if support == 0 { 0.0 } else { confusion[i][i] as f64 / support as f64 },
            }
        })
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &labels {
        *counts.entry(l).or_default() += 1;
    }
    Ok(EvalReport {
        algorithm,
        fold_count: k,
        seed,
        imbalanced_folds: counts.values().any(|&c| c < k),
        degenerate: n < 2,
        accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
        classes,
        confusion,
        per_class,
        folds: fold_results,
    })
}

pub fn cross_validate(kb: &KnowledgeBase, k: usize, algorithm: Algorithm, seed: u64) -> Result<EvalReport, EvalError> {
    cross_validate_set(&kb.training_set(None), k, algorithm, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub grid_value: usize,
    pub accuracy: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurves {
    pub algorithm: Algorithm,
    pub instances_per_class: Vec<CurvePoint>,
    pub classes: Vec<CurvePoint>,
}

impl LearningCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (name, points) in [("instances_per_class", &self.instances_per_class), ("classes", &self.classes)] {
            let _ = writeln!(out, "# {name}");
            out.push_str("grid_value,accuracy,stderr\n");
            for p in points {
                let _ = writeln!(out, "{},{:.6},{:.6}", p.grid_value, p.accuracy, p.stderr);
            }
        }
        out
    }
}

fn group_by_class(set: &TrainingSet) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in set.samples.iter().enumerate() {
        groups.entry(s.label.clone()).or_default().push(i);
    }
    groups
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone)]
pub struct CurveSettings {
    pub folds: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for CurveSettings {
    fn default() -> Self {
        Self {
            folds: 10,
            repetitions: 3,
            seed: 0,
        }
    }
}

/// Accuracy as the number of instances per class grows (all classes kept)
/// and as the number of classes grows (all instances kept). Each point is
/// averaged over seeded subsamples.
pub fn learning_curves(
    set: &TrainingSet,
    instance_grid: &[usize],
    class_grid: &[usize],
    algorithm: Algorithm,
    settings: &CurveSettings,
) -> Result<LearningCurves, EvalError> {
    let groups = group_by_class(set);
    if groups.is_empty() {
        return Err(EvalError::Empty);
    }
    let min_per_class = groups.values().map(Vec::len).min().unwrap_or(0);
    for &v in instance_grid.iter().chain(class_grid) {
        if v == 0 {
            return Err(EvalError::ZeroGrid);
        }
    }
    if let Some(&v) = instance_grid.iter().find(|&&v| v > min_per_class) {
        return Err(EvalError::GridTooLarge { value: v, limit: min_per_class });
    }
    if let Some(&v) = class_grid.iter().find(|&&v| v > groups.len()) {
        return Err(EvalError::GridTooLarge { value: v, limit: groups.len() });
    }

    let run = |subset: Vec<usize>, seed: u64| -> Result<f64, EvalError> {
        let sub = set.subset(&subset);
        let k = settings.folds.min(sub.len()).max(2);
        Ok(cross_validate_set(&sub, k, algorithm, seed)?.accuracy)
    };

    let mut instances_per_class = Vec::new();
    for &m in instance_grid {
        let mut accs = Vec::new();
        for r in 0..settings.repetitions {
            let seed = settings.seed.wrapping_add(r as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (m as u64) << 32);
            let mut subset = Vec::new();
            for members in groups.values() {
                let mut m_idx = members.clone();
                m_idx.shuffle(&mut rng);
                subset.extend_from_slice(&m_idx[..m]);
            }
            subset.sort_unstable();
            accs.push(run(subset, seed)?);
        }
        let (accuracy, stderr) = mean_and_stderr(&accs);
        instances_per_class.push(CurvePoint { grid_value: m, accuracy, stderr });
    }

    let names: Vec<&String> = groups.keys().collect();
    let mut classes = Vec::new();
    for &c in class_grid {
        let mut accs = Vec::new();
        for r in 0..settings.repetitions {
            let seed = settings.seed.wrapping_add(r as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64) << 40);
            let mut picked = names.clone();
            picked.shuffle(&mut rng);
            let mut subset: Vec<usize> = picked[..c].iter().flat_map(|n| groups[*n].iter().copied()).collect();
            subset.sort_unstable();
            accs.push(run(subset, seed)?);
        }
        let (accuracy, stderr) = mean_and_stderr(&accs);
        classes.push(CurvePoint { grid_value: c, accuracy, stderr });
    }
    Ok(LearningCurves {
        algorithm,
        instances_per_class,
        classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub samples: usize,
}

impl TimingStats {
    pub fn from_ms(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        let n = values.len();
        if n == 0 {
            return Self { median_ms: 0.0, p95_ms: 0.0, samples: 0 };
        }
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            (values[n / 2 - 1] + values[n / 2]) / 2.0
        };
        // nearest-rank percentile
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            median_ms: median,
            p95_ms: if n == 1 { median } else { values[rank - 1] },
            samples: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingProfile {
    pub algorithm: Algorithm,
    pub train: TimingStats,
    /// Feature extraction through classification, over stored recordings.
    pub recognize: Option<TimingStats>,
    pub classify_only: TimingStats,
}

/// Wall-clock profile of training and recognition on the whole knowledge base.
pub fn timing_profile(kb: &KnowledgeBase, algorithm: Algorithm, repetitions: usize) -> Result<TimingProfile, EvalError> {
    let set = kb.training_set(None);
    if set.is_empty() {
        return Err(EvalError::Empty);
    }
    let reps = repetitions.max(1);
    let mut model = FittedModel::fit(algorithm, &set)?;
    let mut train = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        model = FittedModel::fit(algorithm, &set)?;
        train.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mut classify_only = Vec::with_capacity(reps);
    let mut recognize = Vec::new();
    let audio: Vec<_> = kb.records().iter().filter_map(|r| r.audio.as_ref()).collect();
    for r in 0..reps {
        let query = set.samples[r % set.len()].features.values();
        let t = Instant::now();
        std::hint::black_box(model.predict(query)?);
        classify_only.push(t.elapsed().as_secs_f64() * 1e3);
        if let Some(buf) = audio.get(r % audio.len().max(1)) {
            let t = Instant::now();
            let v = extract_segment_features(&crate::audio::frame_stream(buf))
                .expect("stored recordings are non-empty");
            std::hint::black_box(model.predict(v.values())?);
            recognize.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(TimingProfile {
        algorithm,
        train: TimingStats::from_ms(train),
        recognize: (!recognize.is_empty()).then(|| TimingStats::from_ms(recognize)),
        classify_only: TimingStats::from_ms(classify_only),
    })
}
