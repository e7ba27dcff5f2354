use std::collections::HashMap;
use std::sync::Mutex;

use super::LlmError;
use crate::text::{fnv1a64, tokenize};

/// Maps text to a unit-length vector. Deterministic backends return the same
/// vector for the same text.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError>;
}

pub(crate) fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Token counts hashed into `dim` buckets, L2-normalized. Text without tokens
/// maps to the zero vector.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl HashingEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        HashingEmbedder { dim: dim.max(1) }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for t in tokenize(text) {
            v[self.bucket(&t)] += 1.0;
        }
        normalize(&mut v);
        v
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(Self::DEFAULT_DIM)
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        Ok(self.vector(text))
    }
}

/// Gives every distinct token its own basis vector, so distinct tokens are
/// exactly orthogonal. Capacity bounds the number of distinct tokens.
#[derive(Debug)]
pub struct OrthogonalEmbedder {
    dim: usize,
    vocab: Mutex<HashMap<String, usize>>,
}

impl OrthogonalEmbedder {
    pub fn new(dim: usize) -> Self {
        OrthogonalEmbedder {
            dim,
            vocab: Mutex::new(HashMap::new()),
        }
    }
}

impl Embedder for OrthogonalEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        let mut v = vec![0.0; self.dim];
        let mut vocab = self.vocab.lock().unwrap();
        for t in tokenize(text) {
            let next = vocab.len();
            let i = *vocab.entry(t).or_insert(next);
            if i >= self.dim {
                return Err(LlmError::InvalidRequest(format!(
                    "orthogonal embedder capacity {} exceeded",
                    self.dim
                )));
            }
            v[i] += 1.0;
        }
        normalize(&mut v);
        Ok(v)
    }
}
