//! Core domain types: patients, feature series, repositories and queries.

mod snapshot;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::TableSet;
use crate::text::format_number;

pub use snapshot::{load_snapshot, save_snapshot, SnapshotError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty repository")]
    EmptyRepository,
    #[error("duplicate patient id {0}")]
    DuplicatePatient(PatientId),
}

/// Patient identifier (MIMIC `subject_id`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub String);

impl PatientId {
    pub fn new(id: impl Into<String>) -> Self {
        PatientId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PatientId {
    fn from(s: &str) -> Self {
        PatientId(s.to_string())
    }
}

/// A feature is addressed by its source table and column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub table: String,
    pub column: String,
}

impl FeatureKey {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        FeatureKey {
            table: table.into(),
            column: column.into(),
        }
    }

    fn folded(&self) -> (String, String) {
        (self.table.to_lowercase(), self.column.to_lowercase())
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.table, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Number,
    Text,
    #[serde(rename = "datetime")]
    DateTime,
}

/// A single cell. Dates are ISO-8601 strings.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Text(String),
    DateTime(String),
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Number(_) => ValueKind::Number,
            Value::Text(_) => ValueKind::Text,
            Value::DateTime(_) => ValueKind::DateTime,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) | Value::DateTime(s) => Some(s),
            Value::Number(_) => None,
        }
    }

    /// Human-facing rendering used by serializers and gold answers.
    pub fn render(&self) -> String {
        match self {
            Value::Number(x) => format_number(*x),
            Value::Text(s) | Value::DateTime(s) => s.clone(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureValue {
    pub value: Value,
    pub timestamp: Option<String>,
}

impl FeatureValue {
    pub fn new(value: Value) -> Self {
        FeatureValue {
            value,
            timestamp: None,
        }
    }

    pub fn at(value: Value, timestamp: impl Into<String>) -> Self {
        FeatureValue {
            value,
            timestamp: Some(timestamp.into()),
        }
    }
}

/// All longitudinal values of one feature for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub key: FeatureKey,
    pub values: Vec<FeatureValue>,
}

impl FeatureSeries {
    pub fn new(key: FeatureKey, values: Vec<FeatureValue>) -> Self {
        FeatureSeries { key, values }
    }
}

/// One patient's EHR table: feature series in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: PatientId,
    pub series: Vec<FeatureSeries>,
}

impl PatientRecord {
    pub fn new(patient_id: impl Into<PatientId>, series: Vec<FeatureSeries>) -> Self {
        PatientRecord {
            patient_id: patient_id.into(),
            series,
        }
    }

    /// Number of distinct features in the record.
    pub fn feature_count(&self) -> usize {
        self.series
            .iter()
            .map(|s| &s.key)
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn get(&self, key: &FeatureKey) -> Option<&FeatureSeries> {
        self.series.iter().find(|s| &s.key == key)
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

impl From<String> for PatientId {
    fn from(s: String) -> Self {
        PatientId(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    #[serde(flatten)]
    pub key: FeatureKey,
    pub kind: ValueKind,
}

/// All patients plus the reference feature catalog. Optionally carries the
/// raw relational tables the records were derived from, which the SQL
/// evaluator runs against.
#[derive(Debug, Clone, PartialEq)]
pub struct Repository {
    catalog: Vec<CatalogEntry>,
    patients: BTreeMap<PatientId, PatientRecord>,
    tables: TableSet,
}

impl Repository {
    pub fn from_records(
        catalog: Vec<CatalogEntry>,
        records: impl IntoIterator<Item = PatientRecord>,
    ) -> Result<Self, ModelError> {
        Self::with_tables(catalog, records, TableSet::default())
    }

    pub fn with_tables(
        catalog: Vec<CatalogEntry>,
        records: impl IntoIterator<Item = PatientRecord>,
        tables: TableSet,
    ) -> Result<Self, ModelError> {
        let mut patients = BTreeMap::new();
        for r in records {
            if patients.contains_key(&r.patient_id) {
                return Err(ModelError::DuplicatePatient(r.patient_id));
            }
            patients.insert(r.patient_id.clone(), r);
        }
        Ok(Repository {
            catalog,
            patients,
            tables,
        })
    }

    pub fn catalog(&self) -> &[CatalogEntry] {
        &self.catalog
    }

    pub fn catalog_kind(&self, key: &FeatureKey) -> Option<ValueKind> {
        self.catalog.iter().find(|e| &e.key == key).map(|e| e.kind)
    }

    pub fn patients(&self) -> impl ExactSizeIterator<Item = &PatientRecord> {
        self.patients.values()
    }

    pub fn patient_ids(&self) -> impl ExactSizeIterator<Item = &PatientId> {
        self.patients.keys()
    }

    pub fn patient(&self, id: &PatientId) -> Option<&PatientRecord> {
        self.patients.get(id)
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn tables(&self) -> &TableSet {
        &self.tables
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Extraction,
    Retrieval,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Extraction => "extraction",
            Task::Retrieval => "retrieval",
        })
    }
}

/// A natural-language query. Extraction queries name their target patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub task: Task,
    pub target_patient: Option<PatientId>,
}

impl Query {
    pub fn extraction(text: impl Into<String>, patient: PatientId) -> Self {
        Query {
            text: text.into(),
            task: Task::Extraction,
            target_patient: Some(patient),
        }
    }

    pub fn retrieval(text: impl Into<String>) -> Self {
        Query {
            text: text.into(),
            task: Task::Retrieval,
            target_patient: None,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self.task {
            Task::Extraction => self.target_patient.is_some(),
            Task::Retrieval => self.target_patient.is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyRepository,
    EmptyCatalogKey {
        key: FeatureKey,
    },
    DuplicateCatalogKey {
        key: FeatureKey,
    },
    PatientIdMismatch {
        patient: PatientId,
        record_id: PatientId,
    },
    DuplicateFeature {
        patient: PatientId,
        key: FeatureKey,
    },
    UncatalogedFeature {
        patient: PatientId,
        key: FeatureKey,
    },
    EmptySeries {
        patient: PatientId,
        key: FeatureKey,
    },
    NonFiniteNumber {
        patient: PatientId,
        key: FeatureKey,
    },
    UnorderedTimestamps {
        patient: PatientId,
        key: FeatureKey,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyRepository => write!(f, "empty repository"),
            Violation::EmptyCatalogKey { key } => write!(f, "empty catalog key {key}"),
            Violation::DuplicateCatalogKey { key } => write!(f, "duplicate catalog key {key}"),
            Violation::PatientIdMismatch { patient, record_id } => {
                write!(f, "patient {patient}: record carries id {record_id}")
            }
            Violation::DuplicateFeature { patient, key } => {
                write!(f, "patient {patient}: duplicate feature {key}")
            }
            Violation::UncatalogedFeature { patient, key } => {
                write!(f, "patient {patient}: uncataloged feature {key}")
            }
            Violation::EmptySeries { patient, key } => {
                write!(f, "patient {patient}: empty series {key}")
            }
            Violation::NonFiniteNumber { patient, key } => {
                write!(f, "patient {patient}: non-finite number in {key}")
            }
            Violation::UnorderedTimestamps { patient, key } => {
                write!(f, "patient {patient}: timestamps out of order in {key}")
            }
        }
    }
}

/// Checks every repository invariant; an empty report means the repository
/// is valid.
pub fn validate_repository(repo: &Repository) -> Vec<Violation> {
    let mut out = Vec::new();
    if repo.is_empty() {
        out.push(Violation::EmptyRepository);
    }

    let mut seen = HashSet::new();
    for entry in &repo.catalog {
        if entry.key.table.is_empty() || entry.key.column.is_empty() {
            out.push(Violation::EmptyCatalogKey {
                key: entry.key.clone(),
            });
        }
        if !seen.insert(entry.key.folded()) {
            out.push(Violation::DuplicateCatalogKey {
                key: entry.key.clone(),
            });
        }
    }
    let catalog: HashSet<&FeatureKey> = repo.catalog.iter().map(|e| &e.key).collect();

    for (id, record) in &repo.patients {
        if &record.patient_id != id {
            out.push(Violation::PatientIdMismatch {
                patient: id.clone(),
                record_id: record.patient_id.clone(),
            });
        }
        let mut keys = HashSet::new();
        for series in &record.series {
            let named = |key: &FeatureKey| (id.clone(), key.clone());
            if !keys.insert(&series.key) {
                let (patient, key) = named(&series.key);
                out.push(Violation::DuplicateFeature { patient, key });
            }
            if !catalog.contains(&series.key) {
                let (patient, key) = named(&series.key);
                out.push(Violation::UncatalogedFeature { patient, key });
            }
            if series.values.is_empty() {
                let (patient, key) = named(&series.key);
                out.push(Violation::EmptySeries { patient, key });
            }
            if series
                .values
                .iter()
                .any(|v| matches!(v.value, Value::Number(x) if !x.is_finite()))
            {
                let (patient, key) = named(&series.key);
                out.push(Violation::NonFiniteNumber { patient, key });
            }
            let stamps: Vec<&str> = series
                .values
                .iter()
                .filter_map(|v| v.timestamp.as_deref())
                .collect();
            if stamps.windows(2).any(|w| w[0] > w[1]) {
                let (patient, key) = named(&series.key);
                out.push(Violation::UnorderedTimestamps { patient, key });
            }
        }
    }
    out
}

/// Corpus statistics in the shape of a dataset summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepositoryStats {
    pub n_patients: usize,
    pub n_catalog_features: usize,
    pub mean_features_per_patient: f64,
}

impl RepositoryStats {
    pub fn mean_display(&self) -> String {
        format!("{:.2}", self.mean_features_per_patient)
    }
}

pub fn repository_stats(repo: &Repository) -> Result<RepositoryStats, ModelError> {
    if repo.is_empty() {
        return Err(ModelError::EmptyRepository);
    }
    let total: usize = repo.patients().map(PatientRecord::feature_count).sum();
    Ok(RepositoryStats {
        n_patients: repo.len(),
        n_catalog_features: repo.catalog.len(),
        mean_features_per_patient: total as f64 / repo.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(s: &str) -> FeatureValue {
        FeatureValue::new(Value::Text(s.into()))
    }

    fn entry(t: &str, c: &str) -> CatalogEntry {
        CatalogEntry {
            key: FeatureKey::new(t, c),
            kind: ValueKind::Text,
        }
    }

    fn series(t: &str, c: &str, v: &str) -> FeatureSeries {
        FeatureSeries::new(FeatureKey::new(t, c), vec![text(v)])
    }

    #[test]
    fn valid_repository_has_empty_report() {
        let rec = PatientRecord::new(
            "1",
            vec![
                series("DEMOGRAPHIC", "gender", "M"),
                series("LAB", "glucose", "high"),
            ],
        );
        let repo = Repository::from_records(
            vec![entry("DEMOGRAPHIC", "gender"), entry("LAB", "glucose")],
            [rec],
        )
        .unwrap();
        assert!(validate_repository(&repo).is_empty());
    }

    #[test]
    fn duplicate_feature_is_reported_once() {
        let rec = PatientRecord::new(
            "1",
            vec![series("lab", "glucose", "a"), series("lab", "glucose", "b")],
        );
        let repo = Repository::from_records(vec![entry("lab", "glucose")], [rec]).unwrap();
        let report = validate_repository(&repo);
        assert_eq!(
            report,
            vec![Violation::DuplicateFeature {
                patient: "1".into(),
                key: FeatureKey::new("lab", "glucose")
            }]
        );
    }

    #[test]
    fn uncataloged_feature_is_reported() {
        let rec = PatientRecord::new("9", vec![series("LAB", "label", "x")]);
        let repo = Repository::from_records(vec![], [rec]).unwrap();
        let report = validate_repository(&repo);
        assert_eq!(report.len(), 1);
        assert!(report[0].to_string().contains("uncataloged feature"));
        assert!(report[0].to_string().contains("patient 9"));
    }

    #[test]
    fn catalog_keys_are_case_insensitively_unique() {
        let repo = Repository::from_records(
            vec![entry("LAB", "Label"), entry("lab", "label")],
            [PatientRecord::new("1", vec![series("LAB", "Label", "x")])],
        )
        .unwrap();
        assert!(matches!(
            validate_repository(&repo).as_slice(),
            [Violation::DuplicateCatalogKey { .. }]
        ));
    }

    #[test]
    fn timestamps_and_finiteness() {
        let key = FeatureKey::new("LAB", "value");
        let rec = PatientRecord::new(
            "1",
            vec![FeatureSeries::new(
                key.clone(),
                vec![
                    FeatureValue::at(Value::Number(1.0), "2100-01-02"),
                    FeatureValue::at(Value::Number(f64::NAN), "2100-01-01"),
                ],
            )],
        );
        let repo = Repository::from_records(
            vec![CatalogEntry {
                key,
                kind: ValueKind::Number,
            }],
            [rec],
        )
        .unwrap();
        let report = validate_repository(&repo);
        assert_eq!(report.len(), 2);
        // idempotent
        assert_eq!(report, validate_repository(&repo));
    }

    #[test]
    fn stats_hand_count() {
        let catalog: Vec<_> = (0..6).map(|i| entry("T", &format!("c{i}"))).collect();
        let a = PatientRecord::new(
            "a",
            (0..3).map(|i| series("T", &format!("c{i}"), "v")).collect(),
        );
        let b = PatientRecord::new(
            "b",
            (0..5).map(|i| series("T", &format!("c{i}"), "v")).collect(),
        );
        let repo = Repository::from_records(catalog, [a, b]).unwrap();
        let stats = repository_stats(&repo).unwrap();
        assert_eq!(stats.n_patients, 2);
        assert_eq!(stats.n_catalog_features, 6);
        assert_eq!(stats.mean_display(), "4.00");
    }

    #[test]
    fn stats_singleton_and_empty() {
        let repo = Repository::from_records(
            vec![entry("T", "c")],
            [PatientRecord::new("a", vec![series("T", "c", "v")])],
        )
        .unwrap();
        let stats = repository_stats(&repo).unwrap();
        assert_eq!((stats.n_patients, stats.n_catalog_features), (1, 1));
        assert_eq!(stats.mean_display(), "1.00");

        let empty = Repository::from_records(vec![], []).unwrap();
        assert_eq!(
            repository_stats(&empty).unwrap_err().to_string(),
            "empty repository"
        );
    }

    #[test]
    fn duplicate_patient_rejected() {
        let r = PatientRecord::new("a", vec![]);
        assert!(Repository::from_records(vec![], [r.clone(), r]).is_err());
    }

    #[test]
    fn query_shape() {
        assert!(Query::extraction("q", "1".into()).is_well_formed());
        assert!(Query::retrieval("q").is_well_formed());
        let bad = Query {
            text: "q".into(),
            task: Task::Retrieval,
            target_patient: Some("1".into()),
        };
        assert!(!bad.is_well_formed());
    }
}
