//! Extraction and retrieval datasets built from question/SQL pairs, their
//! splits, the labeled example database and corpus statistics.

mod reformulate;
mod split;

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{repository_stats, PatientId, Query, Repository};
use crate::sqlmini::{clean_answer, eval_sql, parse_sql, PairKind, QaPair};

pub use reformulate::{reformulate_query, Reformulated, Rule, RuleTable};
pub use split::{split_dataset, Grouped, Ratios, SplitDataset};

/// Size of the small retrieval test variant.
pub const SMALL_TEST: usize = 250;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid ratios: {0}")]
    Ratios(String),
    #[error("{0} split would be empty")]
    EmptySplit(&'static str),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionItem {
    pub id: String,
    pub query: Query,
    pub gold: String,
    pub sql: String,
}

impl ExtractionItem {
    pub fn patient(&self) -> &PatientId {
        self.query
            .target_patient
            .as_ref()
            .expect("extraction items carry a target patient")
    }
}

impl Grouped for ExtractionItem {
    fn group(&self) -> Option<&str> {
        self.query.target_patient.as_ref().map(PatientId::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalItem {
    pub id: String,
    pub query: Query,
    pub relevant: BTreeSet<PatientId>,
    pub sql: String,
}

impl Grouped for RetrievalItem {
    fn group(&self) -> Option<&str> {
        None
    }
}

/// Builder output: kept items plus one reason per dropped pair. Pairs of
/// the other kind are skipped without a reason.
#[derive(Debug, Clone)]
pub struct Built<T> {
    pub items: Vec<T>,
    pub dropped: Vec<String>,
}

fn drop_pair(dropped: &mut Vec<String>, index: usize, reason: String) {
    log::warn!("dropping pair {index}: {reason}");
    dropped.push(format!("pair {index}: {reason}"));
}

/// Gold answers for single-patient pairs. Pairs that fail to parse or run,
/// or that do not name exactly one patient, are dropped and logged.
pub fn build_extraction(repo: &Repository, pairs: &[QaPair]) -> Built<ExtractionItem> {
    let mut items = Vec::new();
    let mut dropped = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.kind != PairKind::Single {
            continue;
        }
        let ast = match parse_sql(&p.sql) {
            Ok(a) => a,
            Err(e) => {
                drop_pair(&mut dropped, i, e.to_string());
                continue;
            }
        };
        let subjects = ast.subject_literals();
        if subjects.len() != 1 {
            drop_pair(
                &mut dropped,
                i,
                format!(
                    "expected one subject_id predicate, found {}",
                    subjects.len()
                ),
            );
            continue;
        }
        let patient = PatientId::new(subjects[0].clone());
        if repo.patient(&patient).is_none() {
            drop_pair(
                &mut dropped,
                i,
                format!("patient {patient} not in repository"),
            );
            continue;
        }
        match eval_sql(&ast, repo) {
            Ok(result) => items.push(ExtractionItem {
                id: format!("ext-{i:05}"),
                query: Query::extraction(p.question.clone(), patient),
                gold: clean_answer(&result),
                sql: p.sql.clone(),
            }),
            Err(e) => drop_pair(&mut dropped, i, e.to_string()),
        }
    }
    Built { items, dropped }
}

/// Relevance judgments for multi-patient pairs: the distinct subjects the
/// gold SQL selects. The question is reformulated to target patients.
pub fn build_retrieval(repo: &Repository, pairs: &[QaPair]) -> Built<RetrievalItem> {
    let mut items = Vec::new();
    let mut dropped = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.kind != PairKind::Multiple {
            continue;
        }
        let ast = match parse_sql(&p.sql) {
            Ok(a) => a,
            Err(e) => {
                drop_pair(&mut dropped, i, e.to_string());
                continue;
            }
        };
        match eval_sql(&ast.subject_projection(), repo) {
            Ok(result) => {
                let relevant = result
                    .rows
                    .iter()
                    .filter_map(|r| r[0].as_ref().map(|v| PatientId::new(v.render())))
                    .filter(|id| repo.patient(id).is_some())
                    .collect();
                items.push(RetrievalItem {
                    id: format!("ret-{i:05}"),
                    query: Query::retrieval(reformulate_query(&p.question).text),
                    relevant,
                    sql: p.sql.clone(),
                });
            }
            Err(e) => drop_pair(&mut dropped, i, e.to_string()),
        }
    }
    Built { items, dropped }
}

/// A labeled example, `(q, p, a)` for extraction or `(q, a)` for retrieval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub query: String,
    pub patient: Option<PatientId>,
    pub answer: String,
    pub relevant: Vec<PatientId>,
}

/// Examples drawn from a train split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExampleDB {
    pub entries: Vec<Example>,
}

impl ExampleDB {
    pub fn from_extraction(train: &[ExtractionItem]) -> Self {
        let entries = train
            .iter()
            .map(|it| Example {
                id: it.id.clone(),
                query: it.query.text.clone(),
                patient: it.query.target_patient.clone(),
                answer: it.gold.clone(),
                relevant: Vec::new(),
            })
            .collect();
        ExampleDB { entries }
    }

    pub fn from_retrieval(train: &[RetrievalItem]) -> Self {
        let entries = train
            .iter()
            .map(|it| {
                let relevant: Vec<PatientId> = it.relevant.iter().cloned().collect();
                Example {
                    id: it.id.clone(),
                    query: it.query.text.clone(),
                    patient: None,
                    answer: relevant
                        .iter()
                        .map(PatientId::as_str)
                        .collect::<Vec<_>>()
                        .join(", "),
                    relevant,
                }
            })
            .collect();
        ExampleDB { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// One row of the corpus summary: patients, features, features per
/// patient and split sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub n_patients: usize,
    pub n_features: usize,
    pub mean_features_per_patient: f64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub test_small: Option<usize>,
}

impl DatasetStats {
    pub fn new<T>(
        name: &str,
        repo: &Repository,
        split: &SplitDataset<T>,
        test_small: Option<usize>,
    ) -> Self {
        let (n, k, mean) = match repository_stats(repo) {
            Ok(s) => (
                s.n_patients,
                s.n_catalog_features,
                s.mean_features_per_patient,
            ),
            Err(_) => (0, 0, 0.0),
        };
        DatasetStats {
            name: name.to_string(),
            n_patients: n,
            n_features: k,
            mean_features_per_patient: mean,
            train: split.train.len(),
            dev: split.dev.len(),
            test: split.test.len(),
            test_small: test_small.map(|s| s.min(split.test.len())),
        }
    }

    pub const HEADER: &'static str =
        "Dataset | # patients(n) | # features(k) | # k/n | # train | # dev | # test";
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let test = match self.test_small {
            Some(s) => format!("{} (full) | {s} (small)", self.test),
            None => self.test.to_string(),
        };
        write!(
            f,
            "{} | {} | {} | {:.2} | {} | {} | {test}",
            self.name,
            self.n_patients,
            self.n_features,
            self.mean_features_per_patient,
            self.train,
            self.dev
        )
    }
}

#[derive(Serialize, Deserialize)]
struct ExtractionLine {
    id: String,
    query: String,
    target_patient: PatientId,
    gold: String,
    sql: String,
}

#[derive(Serialize, Deserialize)]
struct RetrievalLine {
    id: String,
    query: String,
    qrels: Vec<PatientId>,
    sql: String,
}

/// JSON-lines form of dataset items.
pub trait JsonLine: Sized {
    fn to_line(&self) -> String;
    fn from_line(line: &str) -> Result<Self, serde_json::Error>;
}

impl JsonLine for ExtractionItem {
    fn to_line(&self) -> String {
        serde_json::to_string(&ExtractionLine {
            id: self.id.clone(),
            query: self.query.text.clone(),
            target_patient: self.patient().clone(),
            gold: self.gold.clone(),
            sql: self.sql.clone(),
        })
        .expect("line serializes")
    }

    fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        let l: ExtractionLine = serde_json::from_str(line)?;
        Ok(ExtractionItem {
            id: l.id,
            query: Query::extraction(l.query, l.target_patient),
            gold: l.gold,
            sql: l.sql,
        })
    }
}

impl JsonLine for RetrievalItem {
    fn to_line(&self) -> String {
        serde_json::to_string(&RetrievalLine {
            id: self.id.clone(),
            query: self.query.text.clone(),
            qrels: self.relevant.iter().cloned().collect(),
            sql: self.sql.clone(),
        })
        .expect("line serializes")
    }

    fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        let l: RetrievalLine = serde_json::from_str(line)?;
        Ok(RetrievalItem {
            id: l.id,
            query: Query::retrieval(l.query),
            relevant: l.qrels.into_iter().collect(),
            sql: l.sql,
        })
    }
}

fn file_err(path: &Path, e: impl fmt::Display) -> DatasetError {
    DatasetError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_items<T: JsonLine>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let f = std::fs::File::create(path).map_err(|e| file_err(path, e))?;
    let mut out = std::io::BufWriter::new(f);
    for it in items {
        writeln!(out, "{}", it.to_line()).map_err(|e| file_err(path, e))?;
    }
    out.flush().map_err(|e| file_err(path, e))
}

pub fn read_items<T: JsonLine>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let f = std::fs::File::open(path).map_err(|e| file_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(T::from_line(&line).map_err(|e| file_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Writes `train.jsonl`, `dev.jsonl` and `test.jsonl` under `dir`.
pub fn write_split<T: JsonLine>(dir: &Path, split: &SplitDataset<T>) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    write_items(&dir.join("train.jsonl"), &split.train)?;
    write_items(&dir.join("dev.jsonl"), &split.dev)?;
    write_items(&dir.join("test.jsonl"), &split.test)
}

pub fn read_split<T: JsonLine>(dir: &Path, seed: u64) -> Result<SplitDataset<T>, DatasetError> {
    Ok(SplitDataset {
        train: read_items(&dir.join("train.jsonl"))?,
        dev: read_items(&dir.join("dev.jsonl"))?,
        test: read_items(&dir.join("test.jsonl"))?,
        seed,
    })
}

/// Reads any serde JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| file_err(path, e))
}
