//! Small numeric helpers shared across modules.

use std::collections::BTreeMap;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by n).
pub fn pop_sd(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Sample standard deviation (divides by n-1); 0.0 for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Min-max normalization to [0,1]. A constant (or empty) vector maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let (min, max) = match values.iter().fold(None::<(f64, f64)>, |acc, &v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    }) {
        Some(range) => range,
        None => return Vec::new(),
    };
    if max - min <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - min) / (max - min)).collect()
}

/// Z-scores with population sd; a zero-sd vector maps to all zeros.
pub fn z_scores(values: &[f64]) -> Vec<f64> {
    let m = mean(values);
    let sd = pop_sd(values);
    if sd == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - m) / sd).collect()
}

/// Order-statistic quantile: the element at index floor(q*n), clamped to the
/// last index. At least a q-fraction of the values sort strictly below it.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite quantile input"));
    let idx = ((q * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    Some(sorted[idx])
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// FNV-1a 64-bit hash. Stable across platforms and releases, unlike the
/// std hasher, so anything derived from it stays byte-reproducible.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Derive a sub-seed from a base seed and a salt string (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: &str) -> u64 {
    let mut z = seed ^ fnv1a(salt.as_bytes());
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Apply z-scoring to two aligned score maps and average them per key.
pub fn paired_z_average(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> BTreeMap<String, f64> {
    debug_assert!(a.len() == b.len());
    let keys: Vec<&String> = a.keys().collect();
    let za = z_scores(&a.values().copied().collect::<Vec<_>>());
    let zb = z_scores(&keys.iter().map(|k| b[*k]).collect::<Vec<_>>());
    keys.into_iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), (za[i] + zb[i]) / 2.0))
        .collect()
}
