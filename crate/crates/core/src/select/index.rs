use std::cmp::Ordering;

use super::SelectError;
use crate::par::{self, Parallelism};

/// Exact cosine top-k over stored vectors. Norms are computed once at
/// insertion.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Sorted top-k of `scored` under [`rank_order`].
pub(crate) fn top_k(mut scored: Vec<(usize, f64)>, ids: &[String], k: usize) -> Vec<(String, f64)> {
    let cmp = |a: &(usize, f64), b: &(usize, f64)| rank_order((&ids[a.0], a.1), (&ids[b.0], b.1));
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored
        .into_iter()
        .map(|(i, s)| (ids[i].clone(), s))
        .collect()
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        VectorIndex {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn add(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<(), SelectError> {
        if vector.len() != self.dim {
            return Err(SelectError::Dimension {
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.ids.push(id.into());
        self.data.extend_from_slice(vector);
        self.norms.push(norm(vector));
        Ok(())
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine of the probe against entry `i`; zero vectors score 0.
    fn cosine(&self, i: usize, probe: &[f64], probe_norm: f64) -> f64 {
        let denom = self.norms[i] * probe_norm;
        if denom == 0.0 {
            0.0
        } else {
            dot(self.vector(i), probe) / denom
        }
    }

    /// Top-k entries by cosine, ties by ascending id. `k` beyond the index
    /// size returns everything.
    pub fn search(&self, probe: &[f64], k: usize) -> Result<Vec<(String, f64)>, SelectError> {
        if probe.len() != self.dim {
            return Err(SelectError::Dimension {
                expected: self.dim,
                found: probe.len(),
            });
        }
        let pn = norm(probe);
        let scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, self.cosine(i, probe, pn)))
            .collect();
        Ok(top_k(scored, &self.ids, k))
    }

    pub fn search_batch(
        &self,
        probes: &[Vec<f64>],
        k: usize,
        parallelism: Parallelism,
    ) -> Result<Vec<Vec<(String, f64)>>, SelectError> {
        par::map(parallelism, probes, |p| self.search(p, k))
            .into_iter()
            .collect()
    }
}
