use std::fmt;

use crate::ingest::{ColumnKind, TableName};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    None,
    Count,
    CountDistinct,
    Max,
    Min,
    Avg,
}

/// A column resolved against the static schema.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub table: TableName,
    pub column: &'static str,
}

impl ColumnRef {
    pub fn kind(&self) -> ColumnKind {
        self.table
            .schema()
            .column(self.column)
            .map(|c| c.kind)
            .unwrap_or(ColumnKind::Text)
    }

    pub fn index(&self) -> usize {
        self.table.schema().index_of(self.column).unwrap_or(0)
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Projection {
    pub aggregate: Aggregate,
    pub column: ColumnRef,
}

impl Projection {
    /// Result column header, e.g. `gender` or `count(distinct subject_id)`.
    pub fn label(&self) -> String {
        let c = self.column.column;
        match self.aggregate {
            Aggregate::None => c.to_string(),
            Aggregate::Count => format!("count({c})"),
            Aggregate::CountDistinct => format!("count(distinct {c})"),
            Aggregate::Max => format!("max({c})"),
            Aggregate::Min => format!("min({c})"),
            Aggregate::Avg => format!("avg({c})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub(crate) fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Text(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(n) => write!(f, "{n}"),
            Literal::Text(s) => write!(f, "\"{}\"", s.replace('"', "\"\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub column: ColumnRef,
    pub op: CmpOp,
    pub literal: Literal,
}

/// `left = right`, where `right` belongs to the table being joined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinKey {
    pub left: ColumnRef,
    pub right: ColumnRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    pub distinct: bool,
    pub projections: Vec<Projection>,
    pub from: Vec<TableName>,
    /// `joins[i]` links `from[i + 1]` to an earlier table.
    pub joins: Vec<JoinKey>,
    pub predicates: Vec<Predicate>,
}

impl QueryAst {
    pub fn is_aggregate(&self) -> bool {
        self.projections
            .iter()
            .any(|p| p.aggregate != Aggregate::None)
    }

    /// Same joins and filters, projected to the distinct subject ids of the
    /// first FROM table.
    pub fn subject_projection(&self) -> QueryAst {
        QueryAst {
            distinct: true,
            projections: vec![Projection {
                aggregate: Aggregate::None,
                column: ColumnRef {
                    table: self.from[0],
                    column: "subject_id",
                },
            }],
            ..self.clone()
        }
    }

    /// Literals of `subject_id = ...` predicates, rendered as ids.
    pub fn subject_literals(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .predicates
            .iter()
            .filter(|p| p.column.column == "subject_id" && p.op == CmpOp::Eq)
            .map(|p| match &p.literal {
                Literal::Number(n) => crate::text::format_number(*n),
                Literal::Text(s) => s.clone(),
            })
            .collect();
        out.dedup();
        out
    }

    /// Canonical SQL text; parses back to an equal AST.
    pub fn render(&self) -> String {
        let mut s = String::from("SELECT ");
        if self.distinct {
            s.push_str("DISTINCT ");
        }
        let cols: Vec<String> = self
            .projections
            .iter()
            .map(|p| match p.aggregate {
                Aggregate::None => p.column.to_string(),
                Aggregate::Count => format!("COUNT({})", p.column),
                Aggregate::CountDistinct => format!("COUNT(DISTINCT {})", p.column),
                Aggregate::Max => format!("MAX({})", p.column),
                Aggregate::Min => format!("MIN({})", p.column),
                Aggregate::Avg => format!("AVG({})", p.column),
            })
            .collect();
        s.push_str(&cols.join(", "));
        s.push_str(" FROM ");
        s.push_str(self.from[0].as_str());
        for (t, j) in self.from[1..].iter().zip(&self.joins) {
            s.push_str(&format!(" INNER JOIN {t} ON {} = {}", j.left, j.right));
        }
        if !self.predicates.is_empty() {
            let preds: Vec<String> = self
                .predicates
                .iter()
                .map(|p| format!("{} {} {}", p.column, p.op.as_str(), p.literal))
                .collect();
            s.push_str(" WHERE ");
            s.push_str(&preds.join(" AND "));
        }
        s
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
