use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use super::ast::{Aggregate, CmpOp, ColumnRef, Literal, QueryAst};
use super::SqlError;
use crate::ingest::{ColumnKind, Row, TableSet};
use crate::model::{Repository, Value};
use crate::text::format_number;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<Value>>>,
}

impl ResultTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Predicate with its literal coerced to the column's comparison domain.
enum Test {
    Num(CmpOp, f64),
    Str(CmpOp, String),
}

fn compile(column: &ColumnRef, op: CmpOp, lit: &Literal) -> Result<Test, SqlError> {
    let mismatch = || SqlError::TypeMismatch {
        column: column.to_string(),
        op: op.as_str(),
        literal: lit.to_string(),
    };
    let equality = matches!(op, CmpOp::Eq | CmpOp::Ne);
    Ok(match (column.kind(), lit) {
        (ColumnKind::Number | ColumnKind::Id, Literal::Number(n)) => Test::Num(op, *n),
        (ColumnKind::Number, Literal::Text(s)) => {
            Test::Num(op, s.trim().parse().map_err(|_| mismatch())?)
        }
        (ColumnKind::Text, Literal::Number(n)) if equality => Test::Str(op, format_number(*n)),
        (ColumnKind::Text | ColumnKind::DateTime, Literal::Number(_)) => return Err(mismatch()),
        (_, Literal::Text(s)) => Test::Str(op, s.clone()),
    })
}

impl Test {
    /// Absent cells never satisfy a predicate.
    fn accepts(&self, cell: Option<&Value>) -> bool {
        let Some(v) = cell else { return false };
        match self {
            Test::Num(op, x) => {
                let n = match v {
                    Value::Number(n) => *n,
                    other => match other.render().trim().parse::<f64>() {
                        Ok(n) => n,
                        Err(_) => return false,
                    },
                };
                n.partial_cmp(x).is_some_and(|o| op.holds(o))
            }
            Test::Str(op, s) => op.holds(v.render().as_str().cmp(s.as_str())),
        }
    }
}

/// Text key used for joins, DISTINCT and row ordering.
fn key(cell: Option<&Value>) -> String {
    cell.map(Value::render).unwrap_or_default()
}

fn row_key(row: &[Option<Value>]) -> String {
    row.iter()
        .map(|c| key(c.as_ref()))
        .collect::<Vec<_>>()
        .join("\u{1f}")
}

/// Evaluates against the repository's raw tables.
pub fn eval_sql(ast: &QueryAst, repo: &Repository) -> Result<ResultTable, SqlError> {
    eval_tables(ast, repo.tables())
}

pub fn eval_tables(ast: &QueryAst, tables: &TableSet) -> Result<ResultTable, SqlError> {
    let tests = ast
        .predicates
        .iter()
        .map(|p| Ok((p.column.clone(), compile(&p.column, p.op, &p.literal)?)))
        .collect::<Result<Vec<_>, SqlError>>()?;
    for p in &ast.projections {
        if p.aggregate == Aggregate::Avg && p.column.kind() != ColumnKind::Number {
            return Err(SqlError::TypeMismatch {
                column: p.column.to_string(),
                op: "AVG",
                literal: "non-numeric column".into(),
            });
        }
    }

    // conjunctive filters apply per table before joining
    let filtered: Vec<Vec<&Row>> = ast
        .from
        .iter()
        .map(|t| {
            let mine: Vec<_> = tests.iter().filter(|(c, _)| c.table == *t).collect();
            tables
                .rows(*t)
                .iter()
                .filter(|r| {
                    mine.iter()
                        .all(|(c, test)| test.accepts(r[c.index()].as_ref()))
                })
                .collect()
        })
        .collect();

    let slot = |t| ast.from.iter().position(|x| *x == t).unwrap_or(0);
    let mut joined: Vec<Vec<&Row>> = filtered[0].iter().map(|r| vec![*r]).collect();
    for (j, key_pair) in ast.joins.iter().enumerate() {
        let right_idx = key_pair.right.index();
        let mut buckets: HashMap<String, Vec<&Row>> = HashMap::new();
        for r in &filtered[j + 1] {
            if let Some(v) = &r[right_idx] {
                buckets.entry(v.render()).or_default().push(r);
            }
        }
        let left_slot = slot(key_pair.left.table);
        let left_idx = key_pair.left.index();
        let mut next = Vec::new();
        for combo in &joined {
            let Some(v) = &combo[left_slot][left_idx] else {
                continue;
            };
            if let Some(matches) = buckets.get(&v.render()) {
                for m in matches {
                    let mut c = combo.clone();
                    c.push(m);
                    next.push(c);
                }
            }
        }
        joined = next;
    }

    let columns: Vec<String> = ast.projections.iter().map(|p| p.label()).collect();
    let cell = |combo: &Vec<&Row>, c: &ColumnRef| combo[slot(c.table)][c.index()].clone();

    let mut rows: Vec<Vec<Option<Value>>> = if ast.is_aggregate() {
        let row = ast
            .projections
            .iter()
            .map(|p| {
                let values: Vec<Value> = joined
                    .iter()
                    .filter_map(|combo| cell(combo, &p.column))
                    .collect();
                aggregate(p.aggregate, p.column.kind(), values)
            })
            .collect();
        vec![row]
    } else {
        joined
            .iter()
            .map(|combo| {
                ast.projections
                    .iter()
                    .map(|p| cell(combo, &p.column))
                    .collect()
            })
            .collect()
    };

    if ast.distinct {
        let mut seen = HashSet::new();
        rows.retain(|r| seen.insert(row_key(r)));
    }
    rows.sort_by_cached_key(|r| row_key(r));
    Ok(ResultTable { columns, rows })
}

fn aggregate(agg: Aggregate, kind: ColumnKind, values: Vec<Value>) -> Option<Value> {
    match agg {
        Aggregate::None => unreachable!("plain projection in aggregate query"),
        Aggregate::Count => Some(Value::Number(values.len() as f64)),
        Aggregate::CountDistinct => {
            let distinct: HashSet<String> = values.iter().map(Value::render).collect();
            Some(Value::Number(distinct.len() as f64))
        }
        Aggregate::Avg => {
            let mut nums: Vec<f64> = values.iter().filter_map(Value::as_number).collect();
            if nums.is_empty() {
                return None;
            }
            nums.sort_by(f64::total_cmp);
            Some(Value::Number(nums.iter().sum::<f64>() / nums.len() as f64))
        }
        Aggregate::Max | Aggregate::Min => {
            let cmp = |a: &Value, b: &Value| -> Ordering {
                match (kind, a.as_number(), b.as_number()) {
                    (ColumnKind::Number, Some(x), Some(y)) => x.total_cmp(&y),
                    _ => a.render().cmp(&b.render()),
                }
            };
            let mut it = values.into_iter();
            let first = it.next()?;
            Some(it.fold(first, |best, v| {
                let o = cmp(&v, &best);
                let better = if agg == Aggregate::Max {
                    o == Ordering::Greater
                } else {
                    o == Ordering::Less
                };
                if better {
                    v
                } else {
                    best
                }
            }))
        }
    }
}
