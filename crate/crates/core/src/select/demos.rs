use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SelectError, VectorIndex};
use crate::datasets::{Example, ExampleDB};
use crate::llmio::Embedder;
use crate::model::{PatientRecord, Repository, Task};
use crate::serialize::serialize_txt;
use crate::text::fnv1a64;

pub const MAX_DEMOS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoStrategy {
    /// By similarity of the serialized patient (σ_p).
    Patient,
    /// By similarity of the query text (σ_q).
    Query,
    Random,
}

impl DemoStrategy {
    pub const ALL: [DemoStrategy; 3] = [
        DemoStrategy::Patient,
        DemoStrategy::Query,
        DemoStrategy::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DemoStrategy::Patient => "patient",
            DemoStrategy::Query => "query",
            DemoStrategy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "patient" | "sigma_p" => Some(DemoStrategy::Patient),
            "query" | "sigma_q" => Some(DemoStrategy::Query),
            "random" => Some(DemoStrategy::Random),
            _ => None,
        }
    }

    pub fn valid_for(self, task: Task) -> bool {
        !(self == DemoStrategy::Patient && task == Task::Retrieval)
    }
}

impl fmt::Display for DemoStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoSelector {
    pub strategy: DemoStrategy,
    pub k: usize,
    pub seed: u64,
}

impl DemoSelector {
    pub fn new(strategy: DemoStrategy, k: usize, seed: u64) -> Result<Self, SelectError> {
        if k > MAX_DEMOS {
            return Err(SelectError::InvalidSelector(format!(
                "k = {k} exceeds {MAX_DEMOS}"
            )));
        }
        Ok(DemoSelector { strategy, k, seed })
    }

    pub fn none() -> Self {
        DemoSelector {
            strategy: DemoStrategy::Query,
            k: 0,
            seed: 0,
        }
    }
}

/// What the selector knows about the item being answered.
#[derive(Debug, Clone, Copy)]
pub struct DemoInput<'a> {
    pub id: &'a str,
    pub query: &'a str,
    pub patient: Option<&'a PatientRecord>,
}

/// Example database with precomputed query and patient embeddings. Patient
/// vectors come from the txt serialization of the full record.
pub struct DemoIndex {
    entries: Vec<Example>,
    by_id: HashMap<String, usize>,
    queries: VectorIndex,
    patients: VectorIndex,
}

fn embed(embedder: &dyn Embedder, text: &str) -> Result<Vec<f64>, SelectError> {
    embedder.embed(text).map_err(SelectError::Embed)
}

impl DemoIndex {
    pub fn build(
        db: &ExampleDB,
        repo: Option<&Repository>,
        embedder: &dyn Embedder,
    ) -> Result<Self, SelectError> {
        let mut queries: Option<VectorIndex> = None;
        let mut patients: Option<VectorIndex> = None;
        let mut patient_vecs: HashMap<String, Vec<f64>> = HashMap::new();
        for e in &db.entries {
            let v = embed(embedder, &e.query)?;
            queries
                .get_or_insert_with(|| VectorIndex::new(v.len()))
                .add(e.id.clone(), &v)?;
            let record = e.patient.as_ref().zip(repo).and_then(|(p, r)| r.patient(p));
            if let Some(record) = record {
                let key = record.patient_id.as_str().to_string();
                if !patient_vecs.contains_key(&key) {
                    patient_vecs.insert(key.clone(), embed(embedder, &serialize_txt(record).text)?);
                }
                let pv = &patient_vecs[&key];
                patients
                    .get_or_insert_with(|| VectorIndex::new(pv.len()))
                    .add(e.id.clone(), pv)?;
            }
        }
        let by_id = db
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        Ok(DemoIndex {
            entries: db.entries.clone(),
            by_id,
            queries: queries.unwrap_or_else(|| VectorIndex::new(0)),
            patients: patients.unwrap_or_else(|| VectorIndex::new(0)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: &str) -> Option<&Example> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    fn nearest(
        &self,
        index: &VectorIndex,
        probe: &[f64],
        k: usize,
        own: &str,
    ) -> Result<Vec<&Example>, SelectError> {
        let hits = index.search(probe, k + 1)?;
        Ok(hits
            .into_iter()
            .filter(|(id, _)| id != own)
            .take(k)
            .filter_map(|(id, _)| self.entry(&id))
            .collect())
    }
}

/// Up to `k` examples, most similar first; the input's own entry is never
/// returned.
pub fn select_demonstrations<'a>(
    sel: &DemoSelector,
    input: &DemoInput,
    index: &'a DemoIndex,
    embedder: &dyn Embedder,
) -> Result<Vec<&'a Example>, SelectError> {
    if sel.k == 0 {
        return Ok(Vec::new());
    }
    if sel.k > index.len() {
        return Err(SelectError::TooFewExamples {
            k: sel.k,
            available: index.len(),
        });
    }
    match sel.strategy {
        DemoStrategy::Query => {
            let probe = embed(embedder, input.query)?;
            index.nearest(&index.queries, &probe, sel.k, input.id)
        }
        DemoStrategy::Patient => {
            let record = input.patient.ok_or(SelectError::MissingPatient)?;
            let probe = embed(embedder, &serialize_txt(record).text)?;
            index.nearest(&index.patients, &probe, sel.k, input.id)
        }
        DemoStrategy::Random => {
            let pool: Vec<&Example> = index.entries.iter().filter(|e| e.id != input.id).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(sel.seed ^ fnv1a64(input.id.as_bytes()));
            let picks = rand::seq::index::sample(&mut rng, pool.len(), sel.k.min(pool.len()));
            Ok(picks.into_iter().map(|i| pool[i]).collect())
        }
    }
}
