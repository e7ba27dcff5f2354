//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use ehrbench::ingest::{ColumnKind, Row, TableName, TableSet};
use ehrbench::model::Value;
use ehrbench::sqlmini::{Aggregate, CmpOp, ColumnRef, Literal, QueryAst, ResultTable};
use rand::seq::SliceRandom;
use rand::Rng;

fn words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Rouge-1 by counting each type's occurrences on both sides.
pub fn rouge1(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (words(candidate), words(reference));
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let types: BTreeSet<&String> = c.iter().collect();
    let overlap: usize = types
        .into_iter()
        .map(|t| {
            c.iter()
                .filter(|x| *x == t)
                .count()
                .min(r.iter().filter(|x| *x == t).count())
        })
        .sum();
    harmonic(
        overlap as f64 / c.len() as f64,
        overlap as f64 / r.len() as f64,
    )
}

/// F1 over the sets of token types.
pub fn set_f1(candidate: &str, reference: &str) -> f64 {
    let c: HashSet<String> = words(candidate).into_iter().collect();
    let r: HashSet<String> = words(reference).into_iter().collect();
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let both = c.intersection(&r).count() as f64;
    harmonic(both / c.len() as f64, both / r.len() as f64)
}

/// Share of candidate tokens whose type occurs in the reference, and the
/// converse, combined as F1.
pub fn membership_f1(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (words(candidate), words(reference));
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let p = c.iter().filter(|t| r.contains(t)).count() as f64 / c.len() as f64;
    let q = r.iter().filter(|t| c.contains(t)).count() as f64 / r.len() as f64;
    harmonic(p, q)
}

/// Precision at every cut-off that ends on a relevant document.
pub fn ap(ranking: &[String], relevant: &HashSet<String>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for cut in 1..=ranking.len() {
        if relevant.contains(&ranking[cut - 1]) {
            let prefix = &ranking[..cut];
            total += prefix.iter().filter(|d| relevant.contains(*d)).count() as f64 / cut as f64;
        }
    }
    total / relevant.len() as f64
}

pub fn mean_ap(
    run: &HashMap<String, Vec<String>>,
    qrels: &HashMap<String, HashSet<String>>,
) -> f64 {
    mean_judged(qrels, |q, rel| {
        ap(run.get(q).map(Vec::as_slice).unwrap_or(&[]), rel)
    })
}

pub fn recall(
    run: &HashMap<String, Vec<String>>,
    qrels: &HashMap<String, HashSet<String>>,
    k: usize,
) -> f64 {
    mean_judged(qrels, |q, rel| {
        let ranking = run.get(q).map(Vec::as_slice).unwrap_or(&[]);
        rel.iter()
            .filter(|d| ranking.iter().take(k).any(|x| x == *d))
            .count() as f64
            / rel.len() as f64
    })
}

fn mean_judged(
    qrels: &HashMap<String, HashSet<String>>,
    f: impl Fn(&str, &HashSet<String>) -> f64,
) -> f64 {
    let mut keys: Vec<&String> = qrels.keys().filter(|q| !qrels[*q].is_empty()).collect();
    keys.sort();
    if keys.is_empty() {
        return 0.0;
    }
    keys.iter().map(|q| f(q, &qrels[*q])).sum::<f64>() / keys.len() as f64
}

/// Exhaustive cosine ranking: score descending, then id ascending.
pub fn cosine_scan(vectors: &[(String, Vec<f64>)], probe: &[f64], k: usize) -> Vec<String> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let pn = norm(probe);
    let mut scored: Vec<(f64, &String)> = vectors
        .iter()
        .map(|(id, v)| {
            let d: f64 = v.iter().zip(probe).map(|(a, b)| a * b).sum();
            let n = norm(v) * pn;
            (if n == 0.0 { 0.0 } else { d / n }, id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1)));
    scored
        .into_iter()
        .take(k)
        .map(|(_, id)| id.clone())
        .collect()
}

/// Okapi BM25 of one document, straight from the formula.
pub fn bm25_score(docs: &[&str], doc: usize, query: &str, k1: f64, b: f64) -> f64 {
    let toks: Vec<Vec<String>> = docs.iter().map(|d| words(d)).collect();
    let n = docs.len() as f64;
    let avgdl = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut q: Vec<String> = words(query);
    q.sort();
    q.dedup();
    q.iter()
        .map(|t| {
            let df = toks.iter().filter(|d| d.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let tf = toks[doc].iter().filter(|x| *x == t).count() as f64;
            let dl = toks[doc].len() as f64;
            idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
        })
        .sum()
}

fn number_render(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        return format!("{}", x as i64);
    }
    let s = format!("{:.2}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Number(x) => number_render(*x),
        Value::Text(s) | Value::DateTime(s) => s.clone(),
    }
}

fn kind_of(c: &ColumnRef) -> ColumnKind {
    c.table
        .schema()
        .columns
        .iter()
        .find(|x| x.name == c.column)
        .unwrap()
        .kind
}

fn position(c: &ColumnRef) -> usize {
    c.table
        .schema()
        .columns
        .iter()
        .position(|x| x.name == c.column)
        .unwrap()
}

fn holds(op: CmpOp, o: std::cmp::Ordering) -> bool {
    use std::cmp::Ordering::*;
    match op {
        CmpOp::Eq => o == Equal,
        CmpOp::Ne => o != Equal,
        CmpOp::Lt => o == Less,
        CmpOp::Le => o != Greater,
        CmpOp::Gt => o == Greater,
        CmpOp::Ge => o != Less,
    }
}

/// `None` when the predicate is ill-typed.
fn satisfies(c: &ColumnRef, op: CmpOp, lit: &Literal, cell: &Option<Value>) -> Option<bool> {
    let kind = kind_of(c);
    let numeric = match (kind, lit) {
        (ColumnKind::Number | ColumnKind::Id, Literal::Number(n)) => Some(*n),
        (ColumnKind::Number, Literal::Text(s)) => Some(s.trim().parse::<f64>().ok()?),
        _ => None,
    };
    if let (ColumnKind::Text | ColumnKind::DateTime, Literal::Number(_)) = (kind, lit) {
        if kind == ColumnKind::DateTime || !matches!(op, CmpOp::Eq | CmpOp::Ne) {
            return None;
        }
    }
    let Some(v) = cell else { return Some(false) };
    Some(match numeric {
        Some(x) => {
            let n = match v {
                Value::Number(n) => *n,
                other => match render(other).trim().parse::<f64>() {
                    Ok(n) => n,
                    Err(_) => return Some(false),
                },
            };
            n.partial_cmp(&x).is_some_and(|o| holds(op, o))
        }
        None => {
            let want = match lit {
                Literal::Number(n) => number_render(*n),
                Literal::Text(s) => s.clone(),
            };
            holds(op, render(v).cmp(&want))
        }
    })
}

/// Nested-loop evaluation: every combination of rows from the FROM tables
/// is checked against all join keys and predicates. `None` means the query
/// is rejected as ill-typed.
pub fn brute_eval(ast: &QueryAst, tables: &TableSet) -> Option<ResultTable> {
    for p in &ast.predicates {
        satisfies(&p.column, p.op, &p.literal, &None)?;
    }
    if ast
        .projections
        .iter()
        .any(|p| p.aggregate == Aggregate::Avg && kind_of(&p.column) != ColumnKind::Number)
    {
        return None;
    }
    let slot = |t: TableName| ast.from.iter().position(|x| *x == t).unwrap();
    let cell = |combo: &[&Row], c: &ColumnRef| combo[slot(c.table)][position(c)].clone();

    let mut combos: Vec<Vec<&Row>> = vec![vec![]];
    for (depth, t) in ast.from.iter().enumerate() {
        let mut next = Vec::new();
        for combo in &combos {
            for row in tables.rows(*t) {
                let mut c = combo.clone();
                c.push(row);
                let bound = |x: &ColumnRef| slot(x.table) <= depth;
                let joins_ok = ast
                    .joins
                    .iter()
                    .filter(|j| bound(&j.left) && bound(&j.right))
                    .all(|j| match (cell(&c, &j.left), cell(&c, &j.right)) {
                        (Some(a), Some(b)) => render(&a) == render(&b),
                        _ => false,
                    });
                let preds_ok =
                    ast.predicates.iter().filter(|p| bound(&p.column)).all(|p| {
                        satisfies(&p.column, p.op, &p.literal, &cell(&c, &p.column)).unwrap()
                    });
                if joins_ok && preds_ok {
                    next.push(c);
                }
            }
        }
        combos = next;
    }

    let columns = ast.projections.iter().map(|p| p.label()).collect();
    let mut rows: Vec<Vec<Option<Value>>> = if ast.is_aggregate() {
        vec![ast
            .projections
            .iter()
            .map(|p| {
                let vals: Vec<Value> = combos.iter().filter_map(|c| cell(c, &p.column)).collect();
                fold(p.aggregate, kind_of(&p.column), vals)
            })
            .collect()]
    } else {
        combos
            .iter()
            .map(|c| ast.projections.iter().map(|p| cell(c, &p.column)).collect())
            .collect()
    };
    let key = |r: &Vec<Option<Value>>| {
        r.iter()
            .map(|c| c.as_ref().map(render).unwrap_or_default())
            .collect::<Vec<_>>()
            .join("\u{1f}")
    };
    if ast.distinct {
        let mut out: Vec<Vec<Option<Value>>> = Vec::new();
        for r in rows {
            if !out.iter().any(|o| key(o) == key(&r)) {
                out.push(r);
            }
        }
        rows = out;
    }
    rows.sort_by_key(|r| key(r));
    Some(ResultTable { columns, rows })
}

fn fold(agg: Aggregate, kind: ColumnKind, vals: Vec<Value>) -> Option<Value> {
    match agg {
        Aggregate::Count => Some(Value::Number(vals.len() as f64)),
        Aggregate::CountDistinct => {
            let mut r: Vec<String> = vals.iter().map(render).collect();
            r.sort();
            r.dedup();
            Some(Value::Number(r.len() as f64))
        }
        Aggregate::Avg => {
            let mut xs: Vec<f64> = vals
                .iter()
                .filter_map(|v| {
                    if let Value::Number(x) = v {
                        Some(*x)
                    } else {
                        None
                    }
                })
                .collect();
            if xs.is_empty() {
                return None;
            }
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut s = 0.0;
            for x in &xs {
                s += x;
            }
            Some(Value::Number(s / xs.len() as f64))
        }
        Aggregate::Max | Aggregate::Min => {
            let mut best: Option<Value> = None;
            for v in vals {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let o = match (kind, &v, b) {
                            (ColumnKind::Number, Value::Number(x), Value::Number(y)) => {
                                x.partial_cmp(y).unwrap()
                            }
                            _ => render(&v).cmp(&render(b)),
                        };
                        if agg == Aggregate::Max {
                            o == std::cmp::Ordering::Greater
                        } else {
                            o == std::cmp::Ordering::Less
                        }
                    }
                };
                if better {
                    best = Some(v);
                }
            }
            best
        }
        Aggregate::None => unreachable!(),
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// A random query in the supported grammar: up to three tables joined on
/// subject_id, up to three predicates with literals drawn from the data.
pub fn random_query(tables: &TableSet, rng: &mut impl Rng) -> String {
    let all = TableName::ALL;
    let n_tables = *[1, 1, 2, 2, 3].choose(rng).unwrap();
    let mut from: Vec<TableName> = all.to_vec();
    from.shuffle(rng);
    from.truncate(n_tables);
    let col = |rng: &mut dyn rand::RngCore, t: TableName| {
        let cols = t.schema().columns;
        cols[rng.gen_range(0..cols.len())]
    };
    let mut sql = String::from("SELECT ");
    let aggregate = rng.gen_bool(0.35);
    if aggregate {
        let t = from[rng.gen_range(0..from.len())];
        let c = col(rng, t);
        let f = ["COUNT", "COUNT(DISTINCT", "MAX", "MIN", "AVG"][rng.gen_range(0..5)];
        if f == "COUNT(DISTINCT" {
            sql += &format!("COUNT(DISTINCT {}.{})", t, c.name);
        } else {
            sql += &format!("{f}({}.{})", t, c.name);
        }
    } else {
        if rng.gen_bool(0.5) {
            sql += "DISTINCT ";
        }
        let n = rng.gen_range(1..=2);
        let picks: Vec<String> = (0..n)
            .map(|_| {
                let t = from[rng.gen_range(0..from.len())];
                format!("{}.{}", t, col(rng, t).name)
            })
            .collect();
        sql += &picks.join(", ");
    }
    sql += &format!(" FROM {}", from[0]);
    for t in &from[1..] {
        let left = from[0];
        sql += &format!(" INNER JOIN {t} ON {left}.subject_id = {t}.subject_id");
    }
    let n_preds = rng.gen_range(0..=3);
    let mut preds = Vec::new();
    for _ in 0..n_preds {
        let t = from[rng.gen_range(0..from.len())];
        let c = col(rng, t);
        let rows = tables.rows(t);
        let idx = t
            .schema()
            .columns
            .iter()
            .position(|x| x.name == c.name)
            .unwrap();
        let sample = rows.choose(rng).and_then(|r| r[idx].clone());
        let op = ["=", "<>", "<", "<=", ">", ">="][rng.gen_range(0..6)];
        let lit = match (c.kind, sample) {
            (_, None) => format!("{}", rng.gen_range(0..100)),
            (ColumnKind::Number, Some(v)) if rng.gen_bool(0.2) => quote(&render(&v)),
            (ColumnKind::Number | ColumnKind::Id, Some(v)) => render(&v),
            (_, Some(_)) if rng.gen_bool(0.1) => format!("{}", rng.gen_range(0..10)),
            (_, Some(v)) => quote(&render(&v)),
        };
        preds.push(format!("{}.{} {op} {lit}", t, c.name));
    }
    if !preds.is_empty() {
        sql += " WHERE ";
        sql += &preds.join(" AND ");
    }
    sql
}
