//! Deterministic stand-in for an LLM text encoder.
//!
//! Every token is hashed (with a seed) to a sparse signed pattern
//! φ(token) ∈ {−1, 0, +1}^D with exactly `D/16` non-zeros. Texts embed as the
//! L2-normalised sum of their token patterns; a response history embeds as
//! Σ ±φ(concept) (+ for correct, − for incorrect), normalised. Sums are taken
//! over integers, so the result does not depend on token order.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StudentHistoryKey;
use crate::autodiff::derive_seed;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoEmbedder {
    dim: usize,
    seed: u64,
    nonzeros: usize,
}

impl PseudoEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "pseudo-embedding dimension must be positive");
        Self {
            dim,
            seed,
            nonzeros: (dim / 16).max(1),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sparse pattern of one token as `(index, ±1)` pairs sorted by index.
    pub fn pattern(&self, token: &str) -> Vec<(usize, i64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, token));
        let mut idx = sample(&mut rng, self.dim, self.nonzeros).into_vec();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| (i, if rng.gen::<bool>() { 1 } else { -1 }))
            .collect()
    }

    /// Normalised sum of token patterns. An empty token list embeds as the
    /// pattern of the empty token.
    pub fn embed_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let weighted: Vec<(&str, i64)> = tokens.iter().map(|t| (t.as_ref(), 1)).collect();
        self.signed_sum(&weighted)
    }

    /// Embeds free text by its lower-cased alphanumeric tokens.
    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        self.embed_tokens(&tokenize(text))
    }

    /// Σ over the history of ±φ(concept key), normalised.
    pub fn embed_history(&self, history: &StudentHistoryKey) -> Vec<f64> {
        let weighted: Vec<(&str, i64)> = history
            .entries()
            .iter()
            .map(|(c, r)| (c.as_str(), if *r == 1 { 1 } else { -1 }))
            .collect();
        self.signed_sum(&weighted)
    }

    fn signed_sum(&self, weighted: &[(&str, i64)]) -> Vec<f64> {
        // Group by token first; BTreeMap gives an order-free traversal.
        let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
        for &(t, w) in weighted {
            *counts.entry(t).or_insert(0) += w;
        }
        let mut acc = vec![0i64; self.dim];
        for (t, &w) in &counts {
            if w == 0 {
                continue;
            }
            for (i, s) in self.pattern(t) {
                acc[i] += w * s;
            }
        }
        if acc.iter().all(|&v| v == 0) {
            // Degenerate sum: fall back to the pattern of the smallest token.
            let first = counts.keys().next().copied().unwrap_or("");
            acc = vec![0; self.dim];
            for (i, s) in self.pattern(first) {
                acc[i] = s;
            }
        }
        normalize_int(&acc)
    }
}

fn normalize_int(acc: &[i64]) -> Vec<f64> {
    let sq: i64 = acc.iter().map(|v| v * v).sum();
    let norm = (sq as f64).sqrt();
    acc.iter().map(|&v| v as f64 / norm).collect()
}

/// Lower-cased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
