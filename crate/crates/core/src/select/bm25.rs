use std::collections::{HashMap, HashSet};

use super::index::top_k;
use crate::par::{self, Parallelism};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 over an inverted index. Postings are kept in doc order.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    doc_len: Vec<u32>,
    avgdl: f64,
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build<'a>(
        docs: impl IntoIterator<Item = (&'a str, &'a str)>,
        params: Bm25Params,
    ) -> Self {
        let mut ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        for (i, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            doc_len.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i as u32, n));
            }
            ids.push(id.to_string());
        }
        let total: u64 = doc_len.iter().map(|&l| u64::from(l)).sum();
        let avgdl = if ids.is_empty() {
            0.0
        } else {
            total as f64 / ids.len() as f64
        };
        Bm25Index {
            params,
            ids,
            doc_len,
            avgdl,
            postings,
        }
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

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.postings(term).len() as f64;
        let total = self.ids.len() as f64;
        ((total - n + 0.5) / (n + 0.5) + 1.0).ln()
    }

    /// Score contributions per matching document, query terms deduplicated.
    fn accumulate(&self, query: &str) -> Vec<(usize, f64)> {
        let Bm25Params { k1, b } = self.params;
        let mut seen = HashSet::new();
        let mut acc: HashMap<usize, f64> = HashMap::new();
        let mut order = Vec::new();
        for term in tokenize(query) {
            if !seen.insert(term.clone()) {
                continue;
            }
            let idf = self.idf(&term);
            for &(doc, tf) in self.postings(&term) {
                let d = doc as usize;
                let tf = f64::from(tf);
                let norm = 1.0 - b + b * f64::from(self.doc_len[d]) / self.avgdl;
                let s = idf * tf * (k1 + 1.0) / (tf + k1 * norm);
                acc.entry(d).and_modify(|x| *x += s).or_insert_with(|| {
                    order.push(d);
                    s
                });
            }
        }
        order.into_iter().map(|d| (d, acc[&d])).collect()
    }

    /// Top-k matching documents; documents sharing no term with the query
    /// are never returned.
    pub fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        top_k(self.accumulate(query), &self.ids, k)
    }

    pub fn search_batch(
        &self,
        queries: &[String],
        k: usize,
        parallelism: Parallelism,
    ) -> Vec<Vec<(String, f64)>> {
        par::map(parallelism, queries, |q| self.search(q, k))
    }
}
