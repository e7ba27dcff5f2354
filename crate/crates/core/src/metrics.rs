//! Rouge-1, embedding greedy-match F1, MAP and Recall@K.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llmio::{Embedder, LlmError};
use crate::text::tokenize;

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Unigram F1 with clipped (multiset) overlap.
pub fn rouge1_f1(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &refs {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &cand {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    f1(
        overlap as f64 / cand.len() as f64,
        overlap as f64 / refs.len() as f64,
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Greedy maximum-cosine token matching, combined as F1 (BERTScore without
/// a fixed encoder). Token vectors come from `embedder`.
pub fn embed_match_f1(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<f64, LlmError> {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    if cand.is_empty() || refs.is_empty() {
        return Ok(0.0);
    }
    let mut memo: HashMap<String, Vec<f64>> = HashMap::new();
    for t in cand.iter().chain(&refs) {
        if !memo.contains_key(t) {
            memo.insert(t.clone(), embedder.embed(t)?);
        }
    }
    let greedy = |from: &[String], to: &[String]| -> f64 {
        let total: f64 = from
            .iter()
            .map(|a| {
                to.iter()
                    .map(|b| dot(&memo[a], &memo[b]))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        total / from.len() as f64
    };
    let p = greedy(&cand, &refs);
    let r = greedy(&refs, &cand);
    Ok(f1(p, r).clamp(0.0, 1.0))
}

/// query id → relevant patient ids.
pub type Qrels = BTreeMap<String, HashSet<String>>;
/// query id → ranked patient ids, best first.
pub type Run = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("duplicate id {doc} in ranking for query {query}")]
    DuplicateId { query: String, doc: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

fn check_unique(query: &str, ranking: &[String]) -> Result<(), MetricError> {
    let mut seen = HashSet::with_capacity(ranking.len());
    for d in ranking {
        if !seen.insert(d) {
            return Err(MetricError::DuplicateId {
                query: query.to_string(),
                doc: d.clone(),
            });
        }
    }
    Ok(())
}

/// Average precision with |relevant| as denominator.
pub fn average_precision(ranking: &[String], relevant: &HashSet<String>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if relevant.contains(d) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

fn mean_over_judged(
    run: &Run,
    qrels: &Qrels,
    per_query: impl Fn(&[String], &HashSet<String>) -> f64,
) -> Result<f64, MetricError> {
    for (q, ranking) in run {
        check_unique(q, ranking)?;
    }
    let empty = Vec::new();
    let judged: Vec<f64> = qrels
        .iter()
        .filter(|(_, rel)| !rel.is_empty())
        .map(|(q, rel)| per_query(run.get(q).unwrap_or(&empty), rel))
        .collect();
    if judged.is_empty() {
        return Ok(0.0);
    }
    Ok(judged.iter().sum::<f64>() / judged.len() as f64)
}

/// Mean AP over queries with at least one relevant patient. Queries missing
/// from the run score 0.
pub fn map(run: &Run, qrels: &Qrels) -> Result<f64, MetricError> {
    mean_over_judged(run, qrels, average_precision)
}

pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64, MetricError> {
    mean_over_judged(run, qrels, |ranking, rel| {
        let found = ranking.iter().take(k).filter(|d| rel.contains(*d)).count();
        found as f64 / rel.len() as f64
    })
}

/// Number of queries with empty qrels, which the means leave out.
pub fn unjudged_queries(qrels: &Qrels) -> usize {
    qrels.values().filter(|r| r.is_empty()).count()
}

/// Reads `query_id 0 patient_id 1` lines. Lines with relevance 0 are kept as
/// judged-irrelevant (they register the query without adding a relevant id).
pub fn read_qrels(path: &Path) -> Result<Qrels, MetricError> {
    let file = std::fs::File::open(path)
        .map_err(|e| MetricError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Qrels::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| MetricError::Io(e.to_string()))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 4 {
            return Err(MetricError::Parse {
                line: i + 1,
                message: "expected 4 fields".into(),
            });
        }
        let rel: i64 = f[3].parse().map_err(|_| MetricError::Parse {
            line: i + 1,
            message: "bad relevance".into(),
        })?;
        let entry = out.entry(f[0].to_string()).or_default();
        if rel > 0 {
            entry.insert(f[2].to_string());
        }
    }
    Ok(out)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (q, rel) in qrels {
        let mut ids: Vec<&String> = rel.iter().collect();
        ids.sort();
        for d in ids {
            writeln!(out, "{q} 0 {d} 1")?;
        }
    }
    out.flush()
}

/// The four reported metrics on the percent scale; `None` is shown as N/A.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub b_score: Option<f64>,
    pub r1: Option<f64>,
    pub map: Option<f64>,
    pub recall: Option<f64>,
}

impl ScoreRow {
    pub const HEADERS: [&'static str; 4] = ["B_score", "R-1", "MAP", "R"];

    pub fn extraction(b_score: f64, r1: f64) -> Self {
        ScoreRow {
            b_score: Some(b_score),
            r1: Some(r1),
            map: None,
            recall: None,
        }
    }

    pub fn retrieval(map: f64, recall: f64) -> Self {
        ScoreRow {
            b_score: None,
            r1: None,
            map: Some(map),
            recall: Some(recall),
        }
    }

    pub fn values(&self) -> [Option<f64>; 4] {
        [self.b_score, self.r1, self.map, self.recall]
    }

    pub fn from_values(v: [Option<f64>; 4]) -> Self {
        ScoreRow {
            b_score: v[0],
            r1: v[1],
            map: v[2],
            recall: v[3],
        }
    }

    /// Fills this row's N/A cells from `other`.
    pub fn merge(&self, other: &ScoreRow) -> ScoreRow {
        let (a, b) = (self.values(), other.values());
        ScoreRow::from_values([a[0].or(b[0]), a[1].or(b[1]), a[2].or(b[2]), a[3].or(b[3])])
    }
}

/// Fraction in [0, 1] to percent, rounded to 2 decimals.
pub fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

pub fn render_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "N/A".into(),
    }
}

impl fmt::Display for ScoreRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<String> = self.values().iter().map(|v| render_cell(*v)).collect();
        f.write_str(&cells.join(" "))
    }
}
