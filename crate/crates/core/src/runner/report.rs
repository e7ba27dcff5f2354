use std::fmt::Write as _;

use serde::Deserialize;

use super::{RunError, RunResult};
use crate::metrics::{render_cell, ScoreRow};

/// Mean over the shared metrics of the per-metric relative change, in
/// percent.
pub fn delta_improvement(setting: &ScoreRow, baseline: &ScoreRow) -> Result<f64, RunError> {
    let (s, b) = (setting.values(), baseline.values());
    let mut sum = 0.0;
    let mut n = 0;
    for (i, (sv, bv)) in s.iter().zip(&b).enumerate() {
        match (sv, bv) {
            (Some(sv), Some(bv)) => {
                if *bv == 0.0 {
                    return Err(RunError::ZeroBaseline(ScoreRow::HEADERS[i]));
                }
                sum += (sv - bv) / bv;
                n += 1;
            }
            (None, None) => {}
            _ => return Err(RunError::MetricMismatch(ScoreRow::HEADERS[i])),
        }
    }
    if n == 0 {
        return Err(RunError::MetricMismatch("all"));
    }
    Ok(100.0 * sum / n as f64)
}

/// `(a − b) / b · 100`.
pub fn relative_improvement(a: f64, b: f64) -> Result<f64, RunError> {
    if b == 0.0 {
        return Err(RunError::ZeroBaseline("value"));
    }
    Ok((a - b) / b * 100.0)
}

/// Signed, two decimals: `+26.79`.
pub fn format_delta(d: f64) -> String {
    let r = (d * 100.0).round() / 100.0;
    if r == 0.0 {
        "0.00".into()
    } else {
        format!("{r:+.2}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    None,
    Best,
    Second,
}

impl Flag {
    fn mark(self) -> &'static str {
        match self {
            Flag::None => "",
            Flag::Best => "*",
            Flag::Second => "'",
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Flag::None => "",
            Flag::Best => "best",
            Flag::Second => "second",
        }
    }
}

/// Best and second-best per metric column, compared at two decimals. Ties
/// share a flag.
pub fn rank_flags(rows: &[ScoreRow]) -> Vec<[Flag; 4]> {
    let mut flags = vec![[Flag::None; 4]; rows.len()];
    for m in 0..4 {
        let mut distinct: Vec<i64> = rows
            .iter()
            .filter_map(|r| r.values()[m])
            .map(cents)
            .collect();
        distinct.sort_unstable_by(|a, b| b.cmp(a));
        distinct.dedup();
        for (row, f) in rows.iter().zip(flags.iter_mut()) {
            if let Some(v) = row.values()[m] {
                let c = cents(v);
                if distinct.first() == Some(&c) {
                    f[m] = Flag::Best;
                } else if distinct.get(1) == Some(&c) {
                    f[m] = Flag::Second;
                }
            }
        }
    }
    flags
}

fn cents(v: f64) -> i64 {
    (v * 100.0).round() as i64
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FeatureRow {
    pub model: String,
    pub selection: String,
    pub method: String,
    #[serde(rename = "B_score")]
    pub b_score: f64,
    #[serde(rename = "R-1")]
    pub r1: f64,
    #[serde(rename = "MAP")]
    pub map: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    /// Printed Δ%, present on setting rows only.
    pub delta: Option<f64>,
}

impl FeatureRow {
    pub fn scores(&self) -> ScoreRow {
        ScoreRow {
            b_score: Some(self.b_score),
            r1: Some(self.r1),
            map: Some(self.map),
            recall: Some(self.recall),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct IclRow {
    pub model: String,
    pub selection: String,
    pub method: String,
    pub instruction: String,
    pub sigma: String,
    pub k: usize,
    #[serde(rename = "B_score")]
    pub b_score: f64,
    #[serde(rename = "R-1")]
    pub r1: f64,
    #[serde(rename = "MAP", deserialize_with = "na")]
    pub map: Option<f64>,
    #[serde(rename = "R", deserialize_with = "na")]
    pub recall: Option<f64>,
}

fn na<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    let s = String::deserialize(d)?;
    if s == "N/A" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(serde::de::Error::custom)
}

/// Reference score tables used as report fixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTables {
    /// Feature selection × serialization, both models.
    pub features: Vec<FeatureRow>,
    /// Demonstration strategy × k for the four chosen settings.
    pub icl: Vec<IclRow>,
}

fn read_csv<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, RunError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| RunError::Fixture(e.to_string()))
}

impl ReferenceTables {
    pub fn from_csv(features: &str, icl: &str) -> Result<Self, RunError> {
        Ok(ReferenceTables {
            features: read_csv(features)?,
            icl: read_csv(icl)?,
        })
    }

    pub fn builtin() -> Self {
        Self::from_csv(
            include_str!("../../data/table2.csv"),
            include_str!("../../data/table4.csv"),
        )
        .expect("bundled fixtures parse")
    }

    /// Setting rows with their baseline: all against rnd, all_avg against
    /// rnd_avg, same model and serialization.
    pub fn feature_pairs(&self) -> Vec<(&FeatureRow, &FeatureRow)> {
        self.features
            .iter()
            .filter_map(|s| {
                let base = match s.selection.as_str() {
                    "all" => "rnd",
                    "all_avg" => "rnd_avg",
                    _ => return None,
                };
                self.features
                    .iter()
                    .find(|b| b.model == s.model && b.method == s.method && b.selection == base)
                    .map(|b| (s, b))
            })
            .collect()
    }

    pub fn icl_row(
        &self,
        model: &str,
        selection: &str,
        method: &str,
        sigma: &str,
        k: usize,
    ) -> Option<&IclRow> {
        self.icl.iter().find(|r| {
            r.model == model
                && r.selection == selection
                && r.method == method
                && r.sigma == sigma
                && r.k == k
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub csv: String,
}

fn cell(v: Option<f64>, f: Flag) -> String {
    format!("{}{}", render_cell(v), f.mark())
}

/// Result tables with best (`*`) and second-best (`'`) marks, plus the
/// fixture comparison when `fixtures` is given.
pub fn report(results: &[RunResult], fixtures: Option<&ReferenceTables>) -> Report {
    let mut text = String::new();
    let mut csv = String::from(
        "setting,config,B_score,R-1,MAP,R,B_score_flag,R-1_flag,MAP_flag,R_flag,failures\n",
    );
    let rows: Vec<ScoreRow> = results.iter().map(|r| r.scores).collect();
    let flags = rank_flags(&rows);
    let _ = writeln!(
        text,
        "{:<44} {:>9} {:>9} {:>9} {:>9}",
        "setting", "B_score", "R-1", "MAP", "R"
    );
    for ((r, row), f) in results.iter().zip(&rows).zip(&flags) {
        let v = row.values();
        let _ = writeln!(
            text,
            "{:<44} {:>9} {:>9} {:>9} {:>9}",
            r.config.label(),
            cell(v[0], f[0]),
            cell(v[1], f[1]),
            cell(v[2], f[2]),
            cell(v[3], f[3])
        );
        let vals: Vec<String> = v.iter().map(|x| render_cell(*x)).collect();
        let fl: Vec<&str> = f.iter().map(|x| x.as_str()).collect();
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.config.label(),
            r.config.hash(),
            vals.join(","),
            fl.join(","),
            r.failures
        );
    }
    if let Some(first) = results.iter().find_map(|r| r.first_stage.map(|f| (r, f))) {
        let _ = writeln!(
            text,
            "\nfirst stage ({}): {}",
            first.0.config.label(),
            first.1
        );
    }
    if let Some(t) = fixtures {
        text.push_str(&fixture_section(t));
    }
    Report { text, csv }
}

fn fixture_section(t: &ReferenceTables) -> String {
    let mut out = String::from("\nfixture Δ% (recomputed vs printed)\n");
    for (s, b) in t.feature_pairs() {
        let computed = delta_improvement(&s.scores(), &b.scores())
            .map(format_delta)
            .unwrap_or_else(|e| e.to_string());
        let printed = s.delta.map(format_delta).unwrap_or_else(|| "-".into());
        let note = if Some(computed.as_str()) == s.delta.map(format_delta).as_deref() {
            ""
        } else {
            "  (differs)"
        };
        let _ = writeln!(
            out,
            "{:<9} {:>7}/{:<4} vs {:<7} {:>8} {:>8}{note}",
            s.model, s.selection, s.method, b.selection, computed, printed
        );
    }
    out
}
