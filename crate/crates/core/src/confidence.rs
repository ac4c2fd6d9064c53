//! Group pertinence index and the 0–5 confidence scale.
//!
//! For a query `a` and the instances `P` of the class it was assigned to:
//! `g = d(a, c) - d(p*, c)` where `c` is the centroid of `P` and `p*` the
//! instance nearest to `a`. Negative `g` means `a` sits closer to the middle
//! of the class than its nearest member does.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfidenceError {
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("the recognized class has no instances")]
    EmptyClass,
    #[error("pertinence index is not finite: {0}")]
    NotFinite(f64),
    #[error("level bounds must be finite and strictly increasing")]
    BadBounds,
}

pub fn euclidean(x: &[f64], y: &[f64]) -> Result<f64, ConfidenceError> {
    if x.len() != y.len() {
        return Err(ConfidenceError::LengthMismatch(x.len(), y.len()));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

pub fn centroid<P: AsRef<[f64]>>(points: &[P]) -> Result<Vec<f64>, ConfidenceError> {
    let first = points.first().ok_or(ConfidenceError::EmptyClass)?.as_ref();
    let mut sum = vec![0.0; first.len()];
    for p in points {
        let p = p.as_ref();
        if p.len() != sum.len() {
            return Err(ConfidenceError::LengthMismatch(sum.len(), p.len()));
        }
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let m = points.len() as f64;
    Ok(sum.into_iter().map(|s| s / m).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpiResult {
    pub g: f64,
    pub level: u8,
    pub class_name: String,
    pub centroid_distance: f64,
    pub nearest_distance: f64,
}

/// Lower bounds of levels 4, 3, 2, 1 and 0. Level 5 is everything below
/// the first bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelBounds(pub [f64; 5]);

impl Default for LevelBounds {
    fn default() -> Self {
        Self([0.0, 0.5, 1.0, 1.5, 2.0])
    }
}

impl LevelBounds {
    pub fn new(bounds: [f64; 5]) -> Result<Self, ConfidenceError> {
        if bounds.iter().any(|b| !b.is_finite()) || bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfidenceError::BadBounds);
        }
        Ok(Self(bounds))
    }

    pub fn level(&self, g: f64) -> Result<u8, ConfidenceError> {
        if !g.is_finite() {
            return Err(ConfidenceError::NotFinite(g));
        }
        Ok(5 - self.0.iter().filter(|&&b| g >= b).count() as u8)
    }
}

/// Global bounds plus optional per-class overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    pub default: LevelBounds,
    #[serde(default)]
    pub per_class: BTreeMap<String, LevelBounds>,
}

impl ConfidenceConfig {
    pub fn bounds_for(&self, class: &str) -> &LevelBounds {
        self.per_class.get(class).unwrap_or(&self.default)
    }
}

/// Level for `g` under the default thresholds.
pub fn confidence_level(g: f64) -> Result<u8, ConfidenceError> {
    LevelBounds::default().level(g)
}

pub fn gpi<P: AsRef<[f64]>>(
    query: &[f64],
    instances: &[P],
    class_name: &str,
) -> Result<GpiResult, ConfidenceError> {
    gpi_with(query, instances, class_name, &LevelBounds::default())
}

pub fn gpi_with<P: AsRef<[f64]>>(
    query: &[f64],
    instances: &[P],
    class_name: &str,
    bounds: &LevelBounds,
) -> Result<GpiResult, ConfidenceError> {
    let c = centroid(instances)?;
    let mut nearest: Option<(usize, f64)> = None;
    for (i, p) in instances.iter().enumerate() {
        let d = euclidean(query, p.as_ref())?;
        if nearest.is_none_or(|(_, best)| d < best) {
            nearest = Some((i, d));
        }
    }
    let (i, _) = nearest.expect("centroid() rejected the empty case");
    let centroid_distance = euclidean(query, &c)?;
    let nearest_distance = euclidean(instances[i].as_ref(), &c)?;
    let g = centroid_distance - nearest_distance;
    Ok(GpiResult {
        g,
        level: bounds.level(g)?,
        class_name: class_name.to_string(),
        centroid_distance,
        nearest_distance,
    })
}
