//! Text embedding contract and the offline fallback provider.

use crate::stats::fnv1a;

/// Produces a fixed-dimension unit vector for a piece of text.
///
/// Implementations must be deterministic per input and return vectors with
/// L2 norm within 1e-6 of 1.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Hashed character-trigram embeddings.
///
/// Each lowercase trigram of the input is hashed into one of `dim` buckets
/// with a hash-derived sign, and the result is L2-normalized. Fully
/// deterministic, no external service required.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be >= 1");
        Self { dim }
    }
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self::new(64)
    }
}

impl EmbeddingProvider for TrigramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let chars: Vec<char> = text
            .to_lowercase()
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        if chars.len() >= 3 {
            for window in chars.windows(3) {
                let tri: String = window.iter().collect();
                if tri.trim().is_empty() {
                    continue;
                }
                let h = fnv1a(tri.as_bytes());
                let bucket = (h % self.dim as u64) as usize;
                let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
                v[bucket] += sign;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Degenerate input (empty or too short): a fixed unit vector.
            v[0] = 1.0;
            return v;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding dimension mismatch");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_and_deterministic() {
        let e = TrigramEmbedder::default();
        let a = e.embed("dizziness and vertigo");
        let b = e.embed("dizziness and vertigo");
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_falls_back_to_fixed_vector() {
        let e = TrigramEmbedder::default();
        let v = e.embed("");
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_labels_cosine_one() {
        let e = TrigramEmbedder::default();
        let a = e.embed("chest pain");
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
    }
}
