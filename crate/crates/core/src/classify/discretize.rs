//! Supervised entropy discretization with the Fayyad–Irani MDL stop rule.

use std::collections::BTreeMap;

use super::ClassifyError;

/// Class entropy in bits from per-class counts.
pub(crate) fn entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

fn distinct(counts: &[usize]) -> usize {
    counts.iter().filter(|&&c| c > 0).count()
}

/// MDL acceptance test for splitting a set into two halves.
pub fn mdl_accepts(whole: &[usize], left: &[usize], right: &[usize]) -> bool {
    let n: usize = whole.iter().sum();
    if n < 2 {
        return false;
    }
    let nf = n as f64;
    let (nl, nr) = (left.iter().sum::<usize>() as f64, right.iter().sum::<usize>() as f64);
    let (e, el, er) = (entropy(whole), entropy(left), entropy(right));
    let gain = e - (nl / nf) * el - (nr / nf) * er;
    let (k, k1, k2) = (distinct(whole) as f64, distinct(left) as f64, distinct(right) as f64);
    let delta = (3f64.powf(k) - 2.0).log2() - (k * e - k1 * el - k2 * er);
    gain > ((nf - 1.0).log2() + delta) / nf
}

/// Cut points for one attribute, ascending. A value `v` falls in bin
/// `#{cuts c : c < v}`.
pub fn discretize_attribute<L: Ord + Clone>(values: &[f64], labels: &[L]) -> Result<Vec<f64>, ClassifyError> {
    if values.len() != labels.len() {
        return Err(ClassifyError::LengthMismatch(values.len(), labels.len()));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let classes: BTreeMap<&L, usize> = {
        let mut m = BTreeMap::new();
        for l in labels {
            let next = m.len();
            m.entry(l).or_insert(next);
        }
        m
    };
    let mut pairs: Vec<(f64, usize)> = values
        .iter()
        .zip(labels)
        .map(|(&v, l)| (v, classes[l]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    // Collapse equal values into blocks of per-class counts.
    let k = classes.len();
    let mut block_values: Vec<f64> = Vec::new();
    let mut block_counts: Vec<Vec<usize>> = Vec::new();
    for (v, c) in pairs {
        if block_values.last() != Some(&v) {
            block_values.push(v);
            block_counts.push(vec![0; k]);
        }
        block_counts.last_mut().unwrap()[c] += 1;
    }

    let mut cuts = Vec::new();
    split(&block_values, &block_counts, k, &mut cuts);
    cuts.sort_by(f64::total_cmp);
    Ok(cuts)
}

/// A boundary lies between two blocks unless both are pure in the same class.
pub(crate) fn is_boundary(a: &[usize], b: &[usize]) -> bool {
    let pure = |c: &[usize]| {
        let mut it = c.iter().enumerate().filter(|(_, &n)| n > 0);
        match (it.next(), it.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    };
    match (pure(a), pure(b)) {
        (Some(x), Some(y)) => x != y,
        _ => true,
    }
}

fn split(values: &[f64], counts: &[Vec<usize>], k: usize, cuts: &mut Vec<f64>) {
    if values.len() < 2 {
        return;
    }
    let mut whole = vec![0; k];
    for c in counts {
        for (w, x) in whole.iter_mut().zip(c) {
            *w += x;
        }
    }
    let n: usize = whole.iter().sum();
    let mut left = vec![0; k];
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for i in 0..values.len() - 1 {
        for (l, x) in left.iter_mut().zip(&counts[i]) {
            *l += x;
        }
        if !is_boundary(&counts[i], &counts[i + 1]) {
            continue;
        }
        let right: Vec<usize> = whole.iter().zip(&left).map(|(w, l)| w - l).collect();
        let nl: usize = left.iter().sum();
        let score = (nl as f64 * entropy(&left) + (n - nl) as f64 * entropy(&right)) / n as f64;
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, i, left.clone()));
        }
    }
    let Some((_, i, left)) = best else { return };
    let right: Vec<usize> = whole.iter().zip(&left).map(|(w, l)| w - l).collect();
    if !mdl_accepts(&whole, &left, &right) {
        return;
    }
    cuts.push((values[i] + values[i + 1]) / 2.0);
    split(&values[..=i], &counts[..=i], k, cuts);
    split(&values[i + 1..], &counts[i + 1..], k, cuts);
}

/// Bin index of `value` under ascending `cuts`.
pub fn bin_of(cuts: &[f64], value: f64) -> usize {
    cuts.partition_point(|&c| c < value)
}
