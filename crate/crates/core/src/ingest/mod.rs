//! Loading the five MIMICSQL-style tables and generating synthetic corpora.

mod csvio;
mod schema;
mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{
    CatalogEntry, FeatureKey, FeatureSeries, FeatureValue, ModelError, PatientId, PatientRecord,
    Repository, Value,
};

pub use csvio::{read_tables, write_tables};
pub use schema::{Column, ColumnKind, Row, Table, TableName, TableSchema, TableSet};
pub use synth::{generate_synthetic, RowRange, SynthCorpus, SynthSpec};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing table file {}", path.display())]
    MissingTable { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv { file: String, source: csv::Error },
    #[error("{file}: header mismatch, expected `{expected}`, found `{found}`")]
    HeaderMismatch {
        file: String,
        expected: String,
        found: String,
    },
    #[error("{file}:{line}: column {column}: non-numeric value `{value}`")]
    NonNumeric {
        file: String,
        line: u64,
        column: String,
        value: String,
    },
    #[error("{file}:{line}: empty subject_id")]
    MissingId { file: String, line: u64 },
    #[error("vocabulary pool empty for {column}")]
    EmptyVocabulary { column: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Loads a directory of CSV tables into a repository.
pub fn load_tables(dir: &Path) -> Result<Repository, IngestError> {
    let tables = read_tables(dir)?;
    build_repository(tables)
}

/// Derives one record per distinct `subject_id`. Every non-id cell becomes a
/// value in the series keyed by (table, column); row order is kept except
/// for LAB, whose rows are ordered by `charttime`.
pub fn build_repository(tables: TableSet) -> Result<Repository, IngestError> {
    let mut per_patient: BTreeMap<PatientId, BTreeMap<FeatureKey, Vec<FeatureValue>>> =
        BTreeMap::new();
    let mut present: Vec<(TableName, usize)> = Vec::new();

    for table in TableName::ALL {
        let schema = table.schema();
        let rows = tables.rows(table);
        let mut ordered: Vec<&Row> = rows.iter().collect();
        let charttime = if table == TableName::Lab {
            schema.index_of("charttime")
        } else {
            None
        };
        if let Some(ct) = charttime {
            // stable: ties and missing timestamps keep file order, missing last
            ordered.sort_by(|a, b| {
                let ta = a[ct].as_ref().and_then(Value::as_str);
                let tb = b[ct].as_ref().and_then(Value::as_str);
                match (ta, tb) {
                    (Some(x), Some(y)) => x.cmp(y),
                    (Some(_), None) => std::cmp::Ordering::Less,
                    (None, Some(_)) => std::cmp::Ordering::Greater,
                    (None, None) => std::cmp::Ordering::Equal,
                }
            });
        }

        for row in ordered {
            let Some(Some(subject)) = row.get(schema.subject_index()) else {
                continue;
            };
            let pid = PatientId::new(subject.render());
            let features = per_patient.entry(pid).or_default();
            let ts = charttime
                .and_then(|ct| row[ct].as_ref())
                .and_then(Value::as_str)
                .map(str::to_string);
            for (i, column) in schema.columns.iter().enumerate() {
                if column.kind == ColumnKind::Id {
                    continue;
                }
                let Some(value) = &row[i] else { continue };
                if !present.contains(&(table, i)) {
                    present.push((table, i));
                }
                features
                    .entry(FeatureKey::new(table.as_str(), column.name))
                    .or_default()
                    .push(FeatureValue {
                        value: value.clone(),
                        timestamp: ts.clone(),
                    });
            }
        }
    }

    present.sort();
    let catalog: Vec<CatalogEntry> = present
        .iter()
        .map(|&(table, i)| {
            let column = &table.schema().columns[i];
            CatalogEntry {
                key: FeatureKey::new(table.as_str(), column.name),
                kind: column.kind.value_kind(),
            }
        })
        .collect();

    let records = per_patient.into_iter().map(|(pid, mut features)| {
        let series = catalog
            .iter()
            .filter_map(|e| {
                features
                    .remove(&e.key)
                    .map(|values| FeatureSeries::new(e.key.clone(), values))
            })
            .collect();
        PatientRecord::new(pid, series)
    });
    Ok(Repository::with_tables(catalog.clone(), records, tables)?)
}
