//! Directory snapshot of a repository.
//!
//! Layout:
//!
//! ```text
//! <dir>/catalog.json             [{table, column, kind}]
//! <dir>/patients/NNNNNN.json     {patient_id, series: [{table, column, values: [{v, ts?}]}]}
//! <dir>/tables/<NAME>.csv        source tables, when the repository has them
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    CatalogEntry, FeatureKey, FeatureSeries, FeatureValue, ModelError, PatientRecord, Repository,
    Value, ValueKind,
};
use crate::ingest::{self, IngestError, TableSet};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: value {value} does not match kind {kind:?}")]
    Kind {
        path: PathBuf,
        value: String,
        kind: ValueKind,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tables(#[from] IngestError),
}

#[derive(Serialize, Deserialize)]
struct PatientDoc {
    patient_id: String,
    series: Vec<SeriesDoc>,
}

#[derive(Serialize, Deserialize)]
struct SeriesDoc {
    table: String,
    column: String,
    values: Vec<ValueDoc>,
}

#[derive(Serialize, Deserialize)]
struct ValueDoc {
    v: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    ts: Option<String>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> SnapshotError + '_ {
    move |source| SnapshotError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<(), SnapshotError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|source| SnapshotError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, SnapshotError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|source| SnapshotError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_snapshot(repo: &Repository, dir: &Path) -> Result<(), SnapshotError> {
    let patients_dir = dir.join("patients");
    fs::create_dir_all(&patients_dir).map_err(io(&patients_dir))?;
    write_json(&dir.join("catalog.json"), &repo.catalog)?;

    for (i, record) in repo.patients().enumerate() {
        let doc = PatientDoc {
            patient_id: record.patient_id.0.clone(),
            series: record
                .series
                .iter()
                .map(|s| SeriesDoc {
                    table: s.key.table.clone(),
                    column: s.key.column.clone(),
                    values: s
                        .values
                        .iter()
                        .map(|fv| ValueDoc {
                            v: match &fv.value {
                                Value::Number(x) => serde_json::Value::from(*x),
                                Value::Text(t) | Value::DateTime(t) => {
                                    serde_json::Value::from(t.as_str())
                                }
                            },
                            ts: fv.timestamp.clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        write_json(&patients_dir.join(format!("{i:06}.json")), &doc)?;
    }

    if !repo.tables().is_empty() {
        ingest::write_tables(repo.tables(), &dir.join("tables"))?;
    }
    Ok(())
}

pub fn load_snapshot(dir: &Path) -> Result<Repository, SnapshotError> {
    let catalog: Vec<CatalogEntry> = read_json(&dir.join("catalog.json"))?;
    let patients_dir = dir.join("patients");
    let mut files: Vec<PathBuf> = fs::read_dir(&patients_dir)
        .map_err(io(&patients_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();

    let mut records = Vec::with_capacity(files.len());
    for path in &files {
        let doc: PatientDoc = read_json(path)?;
        let mut series = Vec::with_capacity(doc.series.len());
        for s in doc.series {
            let key = FeatureKey::new(s.table, s.column);
            let kind = catalog.iter().find(|e| e.key == key).map(|e| e.kind);
            let mut values = Vec::with_capacity(s.values.len());
            for vd in s.values {
                let value = decode_value(&vd.v, kind).ok_or_else(|| SnapshotError::Kind {
                    path: path.clone(),
                    value: vd.v.to_string(),
                    kind: kind.unwrap_or(ValueKind::Text),
                })?;
                values.push(FeatureValue {
                    value,
                    timestamp: vd.ts,
                });
            }
            series.push(FeatureSeries::new(key, values));
        }
        records.push(PatientRecord::new(doc.patient_id, series));
    }

    let tables_dir = dir.join("tables");
    let tables = if tables_dir.is_dir() {
        ingest::read_tables(&tables_dir)?
    } else {
        TableSet::default()
    };
    Ok(Repository::with_tables(catalog, records, tables)?)
}

fn decode_value(v: &serde_json::Value, kind: Option<ValueKind>) -> Option<Value> {
    match (v, kind) {
        (serde_json::Value::Number(n), None | Some(ValueKind::Number)) => {
            n.as_f64().map(Value::Number)
        }
        (serde_json::Value::String(s), Some(ValueKind::DateTime)) => {
            Some(Value::DateTime(s.clone()))
        }
        (serde_json::Value::String(s), None | Some(ValueKind::Text)) => {
            Some(Value::Text(s.clone()))
        }
        _ => None,
    }
}
