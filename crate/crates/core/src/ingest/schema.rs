use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Value, ValueKind};

/// The five MIMICSQL tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TableName {
    Demographic,
    Diagnoses,
    Procedures,
    Prescriptions,
    Lab,
}

impl TableName {
    pub const ALL: [TableName; 5] = [
        TableName::Demographic,
        TableName::Diagnoses,
        TableName::Procedures,
        TableName::Prescriptions,
        TableName::Lab,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TableName::Demographic => "DEMOGRAPHIC",
            TableName::Diagnoses => "DIAGNOSES",
            TableName::Procedures => "PROCEDURES",
            TableName::Prescriptions => "PRESCRIPTIONS",
            TableName::Lab => "LAB",
        }
    }

    pub fn parse(s: &str) -> Option<TableName> {
        TableName::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
    }

    pub fn schema(self) -> &'static TableSchema {
        match self {
            TableName::Demographic => &DEMOGRAPHIC,
            TableName::Diagnoses => &DIAGNOSES,
            TableName::Procedures => &PROCEDURES,
            TableName::Prescriptions => &PRESCRIPTIONS,
            TableName::Lab => &LAB,
        }
    }
}

impl fmt::Display for TableName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Id,
    Text,
    Number,
    DateTime,
}

impl ColumnKind {
    pub fn value_kind(self) -> ValueKind {
        match self {
            ColumnKind::Id | ColumnKind::Text => ValueKind::Text,
            ColumnKind::Number => ValueKind::Number,
            ColumnKind::DateTime => ValueKind::DateTime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Column {
    pub name: &'static str,
    pub kind: ColumnKind,
}

const fn col(name: &'static str, kind: ColumnKind) -> Column {
    Column { name, kind }
}

#[derive(Debug)]
pub struct TableSchema {
    pub name: TableName,
    pub columns: &'static [Column],
}

impl TableSchema {
    pub fn index_of(&self, column: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(column))
    }

    pub fn column(&self, column: &str) -> Option<&'static Column> {
        self.index_of(column).map(|i| &self.columns[i])
    }

    pub fn subject_index(&self) -> usize {
        0
    }
}

use ColumnKind::{DateTime, Id, Number, Text};

static DEMOGRAPHIC: TableSchema = TableSchema {
    name: TableName::Demographic,
    columns: &[
        col("subject_id", Id),
        col("name", Text),
        col("gender", Text),
        col("dob", DateTime),
        col("age", Number),
        col("admission_time", DateTime),
        col("discharge_time", DateTime),
        col("days_stay", Number),
        col("primary_disease", Text),
        col("insurance", Text),
    ],
};

static DIAGNOSES: TableSchema = TableSchema {
    name: TableName::Diagnoses,
    columns: &[
        col("subject_id", Id),
        col("hadm_id", Id),
        col("icd9_code", Text),
        col("short_title", Text),
        col("long_title", Text),
    ],
};

static PROCEDURES: TableSchema = TableSchema {
    name: TableName::Procedures,
    columns: &[
        col("subject_id", Id),
        col("hadm_id", Id),
        col("icd9_code", Text),
        col("short_title", Text),
        col("long_title", Text),
    ],
};

static PRESCRIPTIONS: TableSchema = TableSchema {
    name: TableName::Prescriptions,
    columns: &[
        col("subject_id", Id),
        col("hadm_id", Id),
        col("drug", Text),
        col("dosage", Text),
        col("route", Text),
    ],
};

static LAB: TableSchema = TableSchema {
    name: TableName::Lab,
    columns: &[
        col("subject_id", Id),
        col("hadm_id", Id),
        col("itemid", Text),
        col("label", Text),
        col("value", Number),
        col("valueuom", Text),
        col("flag", Text),
        col("charttime", DateTime),
    ],
};

/// One table row in schema column order. `None` is an empty cell.
pub type Row = Vec<Option<Value>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: TableName,
    pub rows: Vec<Row>,
}

/// Raw relational rows of the five tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableSet {
    tables: Vec<Table>,
}

impl TableSet {
    /// All five tables, no rows.
    pub fn empty_schema() -> Self {
        TableSet {
            tables: TableName::ALL
                .iter()
                .map(|&name| Table {
                    name,
                    rows: Vec::new(),
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn rows(&self, name: TableName) -> &[Row] {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.rows.as_slice())
            .unwrap_or(&[])
    }

    pub fn rows_mut(&mut self, name: TableName) -> &mut Vec<Row> {
        if let Some(i) = self.tables.iter().position(|t| t.name == name) {
            return &mut self.tables[i].rows;
        }
        self.tables.push(Table {
            name,
            rows: Vec::new(),
        });
        self.tables.sort_by_key(|t| t.name);
        let i = self.tables.iter().position(|t| t.name == name).unwrap();
        &mut self.tables[i].rows
    }
}
