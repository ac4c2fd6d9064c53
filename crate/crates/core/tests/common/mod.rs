//! Independent reference implementations and signal fixtures shared by the
//! integration tests. Nothing here calls into the code under test except
//! to build inputs.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use auris_core::audio::{SampleBuffer, SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: f64 = SAMPLE_RATE as f64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- signals

pub fn tone(freq: f64, amp: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / SR).sin()).collect()
}

pub fn white_noise(amp: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| amp * r.random_range(-1.0..1.0)).collect()
}

pub fn silence(n: usize) -> Vec<f64> {
    vec![0.0; n]
}

pub fn secs(s: f64) -> usize {
    (s * SR).round() as usize
}

/// `pre` seconds of silence, a tone burst, `post` seconds of silence.
pub fn burst(freq: f64, amp: f64, pre: f64, dur: f64, post: f64) -> Vec<f64> {
    let mut v = silence(secs(pre));
    v.extend(tone(freq, amp, secs(dur)));
    v.extend(silence(secs(post)));
    v
}

pub fn buffer(samples: Vec<f64>) -> SampleBuffer {
    SampleBuffer::new(samples).expect("fixture samples are in range")
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos())).collect()
}

// ---------------------------------------------------------------- DSP

/// Direct-summation DFT magnitudes for bins 0..n/2.
pub fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let phi = -2.0 * PI * (k * t % n) as f64 / n as f64;
                re += v * phi.cos();
                im += v * phi.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// |X[n/2]|, the bin the magnitude spectrum leaves out.
pub fn nyquist_magnitude(x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(t, v)| if t % 2 == 0 { *v } else { -*v })
        .sum::<f64>()
        .abs()
}

pub fn rolloff_oracle(mags: &[f64], cutoff: f64) -> f64 {
    let energies: Vec<f64> = mags.iter().map(|m| m * m).collect();
    let total: f64 = energies.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    // smallest r with cumulative energy ≥ cutoff · total, by scanning prefixes
    for r in 0..mags.len() {
        let prefix: f64 = energies[..=r].iter().sum();
        if prefix >= cutoff * total {
            return r as f64 / mags.len() as f64;
        }
    }
    (mags.len() - 1) as f64 / mags.len() as f64
}

pub fn flux_oracle(cur: &[f64], prev: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..cur.len() {
        let d = cur[k] - prev[k];
        s += d * d;
    }
    s
}

pub fn compactness_oracle(mags: &[f64]) -> f64 {
    let l = |k: usize| 20.0 * (mags[k] + 1e-10).log10();
    let mut s = 0.0;
    for k in 1..mags.len() - 1 {
        let local = (l(k - 1) + l(k) + l(k + 1)) / 3.0;
        s += (l(k) - local).abs();
    }
    s
}

/// Two-pass population standard deviation.
pub fn two_pass_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / n).sqrt()
}

/// MFCCs recomputed from scratch: Hann window, direct DFT, 26 triangular
/// mel filters on the power spectrum, natural log, orthonormal DCT-II.
pub fn mfcc_reference(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let w = hann(n);
    let windowed: Vec<f64> = frame.iter().zip(&w).map(|(a, b)| a * b).collect();
    let power: Vec<f64> = dft_magnitudes(&windowed).iter().map(|m| m * m).collect();
    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let inv = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
    let filters = 26;
    let top = mel(SR / 2.0);
    let points: Vec<f64> = (0..filters + 2).map(|i| inv(top * i as f64 / (filters + 1) as f64)).collect();
    let mut logs = Vec::with_capacity(filters);
    for m in 0..filters {
        let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
        let mut e = 0.0;
        for (k, p) in power.iter().enumerate() {
            let f = k as f64 * SR / n as f64;
            let rise = (f - lo) / (mid - lo);
            let fall = (hi - f) / (hi - mid);
            let weight = if f <= lo || f >= hi { 0.0 } else { rise.min(fall).max(0.0) };
            e += weight * p;
        }
        logs.push((e + 1e-10).ln());
    }
    (0..13)
        .map(|k| {
            let scale = if k == 0 { (1.0 / filters as f64).sqrt() } else { (2.0 / filters as f64).sqrt() };
            scale
                * logs
                    .iter()
                    .enumerate()
                    .map(|(m, l)| l * (PI * k as f64 * (2 * m + 1) as f64 / (2 * filters) as f64).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Predictor coefficients from the Toeplitz normal equations `R a = r`.
pub fn lpc_normal_equations(x: &[f64], order: usize) -> Vec<f64> {
    let r: Vec<f64> = (0..=order)
        .map(|lag| (lag..x.len()).map(|t| x[t] * x[t - lag]).sum())
        .collect();
    let a = (0..order)
        .map(|i| (0..order).map(|j| r[i.abs_diff(j)]).collect())
        .collect();
    dense_solve(a, r[1..].to_vec())
}

pub fn ar2(a1: f64, a2: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut x = vec![0.0; n + 200];
    for t in 2..x.len() {
        x[t] = a1 * x[t - 1] + a2 * x[t - 2] + noise.sample(&mut r);
    }
    x.split_off(200)
}

// ---------------------------------------------------------------- classifiers

fn entropy_bits(labels: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let n = labels.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn distinct_labels(labels: &[usize]) -> usize {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Recursive minimum-entropy splitting with the MDL stop rule, written
/// point-by-point: every position between two distinct values is scored,
/// and a position is a candidate unless the values on both sides are all
/// of one and the same class.
pub fn mdl_cuts_oracle(values: &[f64], labels: &[usize]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(labels[a].cmp(&labels[b])));
    let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let mut cuts = Vec::new();
    oracle_split(&v, &l, &mut cuts);
    cuts.sort_by(f64::total_cmp);
    cuts
}

fn oracle_split(v: &[f64], l: &[usize], cuts: &mut Vec<f64>) {
    let n = v.len();
    if n < 2 {
        return;
    }
    let mut best: Option<(f64, usize)> = None;
    for i in 1..n {
        if v[i] == v[i - 1] {
            continue;
        }
        let left_val = v[i - 1];
        let right_val = v[i];
        let left_block: Vec<usize> = (0..n).filter(|&j| v[j] == left_val).map(|j| l[j]).collect();
        let right_block: Vec<usize> = (0..n).filter(|&j| v[j] == right_val).map(|j| l[j]).collect();
        let pure_same = distinct_labels(&left_block) == 1
            && distinct_labels(&right_block) == 1
            && left_block[0] == right_block[0];
        if pure_same {
            continue;
        }
        let score = (i as f64 * entropy_bits(&l[..i]) + (n - i) as f64 * entropy_bits(&l[i..])) / n as f64;
        if best.is_none_or(|(s, _)| score < s - 1e-12) {
            best = Some((score, i));
        }
    }
    let Some((_, i)) = best else { return };
    let nf = n as f64;
    let (e, e1, e2) = (entropy_bits(l), entropy_bits(&l[..i]), entropy_bits(&l[i..]));
    let gain = e - (i as f64 / nf) * e1 - ((n - i) as f64 / nf) * e2;
    let (k, k1, k2) = (
        distinct_labels(l) as f64,
        distinct_labels(&l[..i]) as f64,
        distinct_labels(&l[i..]) as f64,
    );
    let threshold = ((nf - 1.0).log2() + (3f64.powf(k) - 2.0).log2() - (k * e - k1 * e1 - k2 * e2)) / nf;
    if gain <= threshold {
        return;
    }
    cuts.push((v[i - 1] + v[i]) / 2.0);
    oracle_split(&v[..i], &l[..i], cuts);
    oracle_split(&v[i..], &l[i..], cuts);
}

/// Posterior of every class for `query`, in linear space straight from raw
/// counts: same-bin membership is decided by comparing against every cut.
pub fn nb_posterior_oracle(
    rows: &[(String, Vec<f64>)],
    cuts: &[Vec<f64>],
    query: &[f64],
) -> BTreeMap<String, f64> {
    let mut classes: BTreeMap<String, Vec<&Vec<f64>>> = BTreeMap::new();
    for (label, x) in rows {
        classes.entry(label.clone()).or_default().push(x);
    }
    let total = rows.len() as f64;
    let k = classes.len() as f64;
    let same_bin = |a_cuts: &[f64], x: f64, q: f64| a_cuts.iter().all(|&c| (c < x) == (c < q));
    let mut scores = BTreeMap::new();
    for (label, members) in &classes {
        let n_c = members.len() as f64;
        let mut p = (n_c + 1.0) / (total + k);
        for (a, a_cuts) in cuts.iter().enumerate() {
            let bins = (a_cuts.len() + 1) as f64;
            let hits = members.iter().filter(|x| same_bin(a_cuts, x[a], query[a])).count() as f64;
            p *= (hits + 1.0) / (n_c + bins);
        }
        scores.insert(label.clone(), p);
    }
    let z: f64 = scores.values().sum();
    scores.into_iter().map(|(c, p)| (c, p / z)).collect()
}

/// Label of the first row at minimum Euclidean distance.
pub fn nearest_oracle(rows: &[(String, Vec<f64>)], query: &[f64]) -> (String, f64) {
    let dists: Vec<f64> = rows
        .iter()
        .map(|(_, x)| x.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .collect();
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let i = dists.iter().position(|&d| d == min).unwrap();
    (rows[i].0.clone(), min)
}

/// Random toy data set: `classes` labels, `n` rows, `dims` small-integer
/// attributes so equal values and ties actually occur.
pub fn toy_rows(r: &mut impl Rng, classes: usize, n: usize, dims: usize) -> Vec<(String, Vec<f64>)> {
    (0..n)
        .map(|i| {
            let c = if i < classes { i } else { r.random_range(0..classes) };
            let x = (0..dims)
                .map(|_| (r.random_range(0..8) as f64) + c as f64 * r.random_range(0.0..2.0))
                .collect();
            (format!("c{c}"), x)
        })
        .collect()
}
