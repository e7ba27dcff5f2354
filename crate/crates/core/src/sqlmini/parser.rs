use super::ast::{Aggregate, CmpOp, ColumnRef, JoinKey, Literal, Predicate, Projection, QueryAst};
use super::lexer::{lex, Spanned, Tok};
use super::SqlError;
use crate::ingest::{ColumnKind, TableName};

/// Keywords outside the grammar, reported by name.
const UNSUPPORTED: &[&str] = &[
    "OR",
    "GROUP",
    "ORDER",
    "LIMIT",
    "LIKE",
    "IN",
    "NOT",
    "BETWEEN",
    "IS",
    "HAVING",
    "UNION",
    "EXISTS",
    "LEFT",
    "RIGHT",
    "OUTER",
    "FULL",
    "CROSS",
    "SUM",
    "CASE",
    "AS",
    "OFFSET",
    "INTERSECT",
    "EXCEPT",
];

/// Column reference as written, before resolution against FROM.
struct RawRef {
    table: Option<String>,
    column: String,
    pos: usize,
}

struct Parser {
    toks: Vec<Spanned>,
    at: usize,
}

/// Parses the restricted SELECT grammar. Keywords are case-insensitive.
pub fn parse_sql(text: &str) -> Result<QueryAst, SqlError> {
    let toks = lex(text)?;
    // constructs outside the grammar are reported by name before any
    // structural or schema error
    let mut selects = 0;
    for (t, _) in &toks {
        if let Tok::Ident(s) = t {
            if let Some(kw) = UNSUPPORTED.iter().find(|k| k.eq_ignore_ascii_case(s)) {
                return Err(SqlError::Unsupported(kw.to_string()));
            }
            if s.eq_ignore_ascii_case("select") {
                selects += 1;
            }
        }
    }
    if selects > 1 {
        return Err(SqlError::Unsupported("subqueries".into()));
    }
    Parser { toks, at: 0 }.statement()
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> SqlError {
        if let Tok::Ident(s) = self.peek() {
            if let Some(kw) = UNSUPPORTED.iter().find(|k| k.eq_ignore_ascii_case(s)) {
                return SqlError::Unsupported(kw.to_string());
            }
            if s.eq_ignore_ascii_case("select") {
                return SqlError::Unsupported("subqueries".into());
            }
        }
        SqlError::syntax(self.pos(), expected, &self.peek().describe())
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(kw))
        }
    }

    fn expect(&mut self, t: Tok) -> Result<(), SqlError> {
        if *self.peek() == t {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&t.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), SqlError> {
        let pos = self.pos();
        match self.peek() {
            Tok::Ident(s) if !is_reserved(s) => {
                let s = s.clone();
                self.bump();
                Ok((s, pos))
            }
            _ => Err(self.error(what)),
        }
    }

    fn column(&mut self) -> Result<RawRef, SqlError> {
        let (first, pos) = self.ident("column name")?;
        if *self.peek() == Tok::Dot {
            self.bump();
            let (column, _) = self.ident("column name")?;
            Ok(RawRef {
                table: Some(first),
                column,
                pos,
            })
        } else {
            Ok(RawRef {
                table: None,
                column: first,
                pos,
            })
        }
    }

    fn statement(&mut self) -> Result<QueryAst, SqlError> {
        self.expect_kw("SELECT")?;
        let distinct = self.eat_kw("DISTINCT");
        let mut raw_proj = vec![self.projection()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            raw_proj.push(self.projection()?);
        }

        self.expect_kw("FROM")?;
        let mut from = vec![self.table()?];
        let mut raw_joins = Vec::new();
        loop {
            if self.eat_kw("INNER") {
                self.expect_kw("JOIN")?;
            } else if !self.eat_kw("JOIN") {
                if *self.peek() == Tok::Comma {
                    return Err(SqlError::Unsupported("comma joins".into()));
                }
                break;
            }
            let t = self.table()?;
            if from.contains(&t) {
                return Err(SqlError::Unsupported(format!("self-join on {t}")));
            }
            from.push(t);
            if from.len() > 3 {
                return Err(SqlError::Unsupported("more than 3 tables".into()));
            }
            self.expect_kw("ON")?;
            let l = self.column()?;
            if *self.peek() != Tok::Op("=") {
                return Err(self.error("`=`"));
            }
            self.bump();
            let r = self.column()?;
            raw_joins.push((l, r));
        }

        let mut raw_preds = Vec::new();
        if self.eat_kw("WHERE") {
            raw_preds.push(self.predicate()?);
            while self.eat_kw("AND") {
                raw_preds.push(self.predicate()?);
            }
        }
        if *self.peek() == Tok::Semi {
            self.bump();
        }
        if *self.peek() != Tok::Eof {
            return Err(self.error("end of input"));
        }

        let projections = raw_proj
            .into_iter()
            .map(|(aggregate, r)| {
                Ok(Projection {
                    aggregate,
                    column: resolve(&r, &from)?,
                })
            })
            .collect::<Result<Vec<_>, SqlError>>()?;
        let has_agg = projections.iter().any(|p| p.aggregate != Aggregate::None);
        if has_agg && projections.iter().any(|p| p.aggregate == Aggregate::None) {
            return Err(SqlError::Unsupported(
                "mixed aggregate and plain columns without GROUP BY".into(),
            ));
        }

        let mut joins = Vec::new();
        for (i, (l, r)) in raw_joins.iter().enumerate() {
            let joined = from[i + 1];
            let mut a = resolve(l, &from)?;
            let mut b = resolve(r, &from)?;
            if a.table == joined {
                std::mem::swap(&mut a, &mut b);
            }
            let earlier = &from[..=i];
            if b.table != joined || !earlier.contains(&a.table) {
                return Err(SqlError::InvalidJoin(format!(
                    "{a} = {b} does not link {joined} to an earlier table"
                )));
            }
            if a.kind() != ColumnKind::Id || b.kind() != ColumnKind::Id {
                return Err(SqlError::InvalidJoin(format!(
                    "{a} = {b} is not an id equality"
                )));
            }
            joins.push(JoinKey { left: a, right: b });
        }

        let predicates = raw_preds
            .into_iter()
            .map(|(r, op, literal)| {
                Ok(Predicate {
                    column: resolve(&r, &from)?,
                    op,
                    literal,
                })
            })
            .collect::<Result<Vec<_>, SqlError>>()?;

        Ok(QueryAst {
            distinct,
            projections,
            from,
            joins,
            predicates,
        })
    }

    fn projection(&mut self) -> Result<(Aggregate, RawRef), SqlError> {
        if *self.peek() == Tok::Star {
            return Err(SqlError::Unsupported("`*` projection".into()));
        }
        let func = match self.peek() {
            Tok::Ident(s) if self.toks[self.at + 1].0 == Tok::LParen => {
                Some(s.to_ascii_uppercase())
            }
            _ => None,
        };
        let Some(func) = func else {
            return Ok((Aggregate::None, self.column()?));
        };
        let mut agg = match func.as_str() {
            "COUNT" => Aggregate::Count,
            "MAX" => Aggregate::Max,
            "MIN" => Aggregate::Min,
            "AVG" => Aggregate::Avg,
            other => return Err(SqlError::Unsupported(other.to_string())),
        };
        self.bump();
        self.bump();
        if self.eat_kw("DISTINCT") {
            if agg != Aggregate::Count {
                return Err(SqlError::Unsupported(format!("DISTINCT inside {func}")));
            }
            agg = Aggregate::CountDistinct;
        }
        if *self.peek() == Tok::Star {
            return Err(SqlError::Unsupported(format!("{func}(*)")));
        }
        let col = self.column()?;
        self.expect(Tok::RParen)?;
        Ok((agg, col))
    }

    fn table(&mut self) -> Result<TableName, SqlError> {
        if *self.peek() == Tok::LParen {
            return Err(SqlError::Unsupported("subqueries".into()));
        }
        let (name, _) = self.ident("table name")?;
        TableName::parse(&name).ok_or(SqlError::UnknownTable(name))
    }

    fn predicate(&mut self) -> Result<(RawRef, CmpOp, Literal), SqlError> {
        if *self.peek() == Tok::LParen {
            return Err(SqlError::Unsupported("parenthesized conditions".into()));
        }
        let col = self.column()?;
        let op = match self.peek() {
            Tok::Op("=") => CmpOp::Eq,
            Tok::Op("<>") => CmpOp::Ne,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            _ => return Err(self.error("comparison operator")),
        };
        self.bump();
        let lit = match self.peek().clone() {
            Tok::Number(n) => Literal::Number(n),
            Tok::Str(s) => Literal::Text(s),
            Tok::LParen => return Err(SqlError::Unsupported("subqueries".into())),
            Tok::Ident(_) => {
                return Err(SqlError::Unsupported("column-to-column comparison".into()))
            }
            _ => return Err(self.error("literal")),
        };
        self.bump();
        Ok((col, op, lit))
    }
}

fn is_reserved(s: &str) -> bool {
    const RESERVED: &[&str] = &[
        "SELECT", "FROM", "WHERE", "AND", "JOIN", "INNER", "ON", "DISTINCT",
    ];
    RESERVED
        .iter()
        .chain(UNSUPPORTED)
        .any(|k| k.eq_ignore_ascii_case(s))
}

/// Qualified refs must name a FROM table; bare refs bind to the first FROM
/// table that has the column.
fn resolve(r: &RawRef, from: &[TableName]) -> Result<ColumnRef, SqlError> {
    let shown = match &r.table {
        Some(t) => format!("{t}.{}", r.column),
        None => r.column.clone(),
    };
    let candidates: Vec<TableName> = match &r.table {
        Some(t) => {
            let t = TableName::parse(t).ok_or_else(|| SqlError::UnknownTable(t.clone()))?;
            if !from.contains(&t) {
                return Err(SqlError::UnknownColumn {
                    column: shown,
                    position: r.pos,
                });
            }
            vec![t]
        }
        None => from.to_vec(),
    };
    for t in candidates {
        if let Some(c) = t.schema().column(&r.column) {
            return Ok(ColumnRef {
                table: t,
                column: c.name,
            });
        }
    }
    Err(SqlError::UnknownColumn {
        column: shown,
        position: r.pos,
    })
}
