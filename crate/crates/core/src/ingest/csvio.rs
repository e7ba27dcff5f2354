use std::fs;
use std::path::Path;

use super::schema::{ColumnKind, Row, TableName, TableSet};
use super::IngestError;
use crate::model::Value;

fn file_for(dir: &Path, table: TableName) -> std::path::PathBuf {
    dir.join(format!("{}.csv", table.as_str()))
}

/// Reads `<NAME>.csv` for each of the five tables.
pub fn read_tables(dir: &Path) -> Result<TableSet, IngestError> {
    let mut set = TableSet::empty_schema();
    for table in TableName::ALL {
        let path = file_for(dir, table);
        if !path.is_file() {
            return Err(IngestError::MissingTable { path });
        }
        let file = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(&path)
            .map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?;
        let schema = table.schema();

        let header = reader.headers().map_err(|source| IngestError::Csv {
            file: file.clone(),
            source,
        })?;
        let found: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
        let expected: Vec<&str> = schema.columns.iter().map(|c| c.name).collect();
        if found.len() != expected.len()
            || found
                .iter()
                .zip(&expected)
                .any(|(f, e)| !f.eq_ignore_ascii_case(e))
        {
            return Err(IngestError::HeaderMismatch {
                file,
                expected: expected.join(","),
                found: found.join(","),
            });
        }

        let rows = set.rows_mut(table);
        for record in reader.records() {
            let record = record.map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let mut row: Row = Vec::with_capacity(schema.columns.len());
            for (column, cell) in schema.columns.iter().zip(record.iter()) {
                if cell.is_empty() {
                    if column.kind == ColumnKind::Id && column.name == "subject_id" {
                        return Err(IngestError::MissingId {
                            file: file.clone(),
                            line,
                        });
                    }
                    row.push(None);
                    continue;
                }
                let value = match column.kind {
                    ColumnKind::Id | ColumnKind::Text => Value::Text(cell.to_string()),
                    ColumnKind::DateTime => Value::DateTime(cell.to_string()),
                    ColumnKind::Number => match cell.trim().parse::<f64>() {
                        Ok(x) if x.is_finite() => Value::Number(x),
                        _ => {
                            return Err(IngestError::NonNumeric {
                                file: file.clone(),
                                line,
                                column: column.name.to_string(),
                                value: cell.to_string(),
                            })
                        }
                    },
                };
                row.push(Some(value));
            }
            rows.push(row);
        }
    }
    Ok(set)
}

/// Writes one RFC-4180 CSV per table with a header row.
pub fn write_tables(set: &TableSet, dir: &Path) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for table in TableName::ALL {
        let path = file_for(dir, table);
        let file = path.display().to_string();
        let mut writer = csv::Writer::from_path(&path).map_err(|source| IngestError::Csv {
            file: file.clone(),
            source,
        })?;
        let schema = table.schema();
        writer
            .write_record(schema.columns.iter().map(|c| c.name))
            .map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?;
        for row in set.rows(table) {
            let cells = row.iter().map(|cell| match cell {
                None => String::new(),
                Some(Value::Number(x)) => x.to_string(),
                Some(Value::Text(s) | Value::DateTime(s)) => s.clone(),
            });
            writer
                .write_record(cells)
                .map_err(|source| IngestError::Csv {
                    file: file.clone(),
                    source,
                })?;
        }
        writer.flush().map_err(|source| IngestError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}
