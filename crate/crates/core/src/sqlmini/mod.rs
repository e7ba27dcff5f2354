//! Restricted SQL over the five EHR tables: parsing, evaluation and the
//! `column: value` gold-answer format.
//!
//! Grammar: `SELECT [DISTINCT] proj, ... FROM t [[INNER] JOIN t ON a = b]{0,2}
//! [WHERE col op literal [AND ...]]`, with `proj` a column or one of
//! `COUNT`, `COUNT(DISTINCT ..)`, `MAX`, `MIN`, `AVG`.

mod ast;
mod eval;
mod lexer;
mod parser;

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::{Aggregate, CmpOp, ColumnRef, JoinKey, Literal, Predicate, Projection, QueryAst};
pub use eval::{eval_sql, eval_tables, ResultTable};
pub use parser::parse_sql;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SqlError {
    #[error("syntax error at {position}: expected {expected}, found {found}")]
    Syntax {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("{0} not supported")]
    Unsupported(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {column} at {position}")]
    UnknownColumn { column: String, position: usize },
    #[error("invalid join: {0}")]
    InvalidJoin(String),
    #[error("type mismatch: {column} {op} {literal}")]
    TypeMismatch {
        column: String,
        op: &'static str,
        literal: String,
    },
}

impl SqlError {
    pub(crate) fn syntax(position: usize, expected: &str, found: &str) -> Self {
        SqlError::Syntax {
            position,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

/// Literal answer for an empty result.
pub const NO_RESULTS: &str = "no results";

/// Renders each row as `col: value; col: value`, drops repeated rows
/// (first occurrence wins) and joins rows with ` | `. Absent cells are left
/// out of their row.
pub fn clean_answer(result: &ResultTable) -> String {
    let mut seen = HashSet::new();
    let mut rendered = Vec::new();
    for row in &result.rows {
        let cells: Vec<String> = result
            .columns
            .iter()
            .zip(row)
            .filter_map(|(c, v)| v.as_ref().map(|v| format!("{c}: {}", v.render())))
            .collect();
        if cells.is_empty() {
            continue;
        }
        let line = cells.join("; ");
        if seen.insert(line.clone()) {
            rendered.push(line);
        }
    }
    if rendered.is_empty() {
        NO_RESULTS.to_string()
    } else {
        rendered.join(" | ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Single,
    Multiple,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub sql: String,
    pub kind: PairKind,
}

#[derive(Debug, Error)]
pub enum PairFileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

pub fn write_pairs(path: &Path, pairs: &[QaPair]) -> Result<(), PairFileError> {
    let io = |source| PairFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for p in pairs {
        let line =
            serde_json::to_string(p).map_err(|source| PairFileError::Json { line: 0, source })?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_pairs(path: &Path) -> Result<Vec<QaPair>, PairFileError> {
    let io = |source| PairFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| PairFileError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}
