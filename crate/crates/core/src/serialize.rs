//! Feature selection and table-to-text serialization (txt, xsep, sgen), plus
//! truncation to a token budget.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::llmio::{ChatClient, LlmError, Message, TABLE_END, TABLE_START};
use crate::model::{FeatureSeries, FeatureValue, PatientRecord, Value};
use crate::text::{fnv1a64, split_sentences};

/// Context window of the evaluated models, in tokens.
pub const CONTEXT_WINDOW: usize = 4096;
/// Tokens kept free for the model's answer.
pub const ANSWER_RESERVE: usize = 256;
pub const DEFAULT_KEEP_RATIO: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    All,
    AllAvg,
    Rnd,
    RndAvg,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 4] = [
        SelectionStrategy::All,
        SelectionStrategy::AllAvg,
        SelectionStrategy::Rnd,
        SelectionStrategy::RndAvg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::All => "all",
            SelectionStrategy::AllAvg => "all_avg",
            SelectionStrategy::Rnd => "rnd",
            SelectionStrategy::RndAvg => "rnd_avg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }

    fn samples(self) -> bool {
        matches!(self, SelectionStrategy::Rnd | SelectionStrategy::RndAvg)
    }

    fn averages(self) -> bool {
        matches!(self, SelectionStrategy::AllAvg | SelectionStrategy::RndAvg)
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub strategy: SelectionStrategy,
    pub keep_ratio: f64,
    pub seed: u64,
}

impl FeatureSelection {
    pub fn new(strategy: SelectionStrategy, keep_ratio: f64, seed: u64) -> Result<Self, String> {
        if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
            return Err(format!("keep_ratio {keep_ratio} outside (0, 1]"));
        }
        Ok(FeatureSelection {
            strategy,
            keep_ratio,
            seed,
        })
    }

    pub fn with_strategy(strategy: SelectionStrategy, seed: u64) -> Self {
        FeatureSelection {
            strategy,
            keep_ratio: DEFAULT_KEEP_RATIO,
            seed,
        }
    }

    pub fn all() -> Self {
        Self::with_strategy(SelectionStrategy::All, 0)
    }

    /// Number of features kept out of `k`, rounding half away from zero.
    pub fn kept(&self, k: usize) -> usize {
        if self.strategy.samples() {
            ((self.keep_ratio * k as f64).round() as usize).min(k)
        } else {
            k
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SerializationMethod {
    Txt,
    Xsep,
    Sgen,
}

impl SerializationMethod {
    pub const ALL: [SerializationMethod; 3] = [
        SerializationMethod::Txt,
        SerializationMethod::Xsep,
        SerializationMethod::Sgen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SerializationMethod::Txt => "txt",
            SerializationMethod::Xsep => "xsep",
            SerializationMethod::Sgen => "sgen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

impl fmt::Display for SerializationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedContext {
    pub text: String,
    pub method: SerializationMethod,
    pub selection: FeatureSelection,
    pub truncated: bool,
    /// Set when sgen produced nothing and the txt form was used instead.
    pub fallback: bool,
}

impl SerializedContext {
    fn new(text: String, method: SerializationMethod) -> Self {
        SerializedContext {
            text,
            method,
            selection: FeatureSelection::all(),
            truncated: false,
            fallback: false,
        }
    }
}

/// Collapses a series to one value: the mean for numeric series, otherwise
/// the most frequent rendering, ties going to the latest timestamp and then
/// to the lexicographically smallest value.
pub fn aggregate_series(series: &FeatureSeries) -> FeatureSeries {
    let values = &series.values;
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.value.as_number()).collect();
    let value = match numeric {
        Some(nums) if !nums.is_empty() => {
            FeatureValue::new(Value::Number(nums.iter().sum::<f64>() / nums.len() as f64))
        }
        _ => {
            let mut tally: HashMap<String, (usize, Option<&str>, &FeatureValue)> = HashMap::new();
            for v in values {
                let e = tally.entry(v.value.render()).or_insert((0, None, v));
                e.0 += 1;
                let ts = v.timestamp.as_deref();
                if ts >= e.1 {
                    e.1 = ts;
                    e.2 = v;
                }
            }
            let best = tally.iter().max_by(|a, b| {
                a.1 .0
                    .cmp(&b.1 .0)
                    .then(a.1 .1.cmp(&b.1 .1))
                    .then(b.0.cmp(a.0))
            });
            match best {
                Some((_, (_, _, v))) => (*v).clone(),
                None => return series.clone(),
            }
        }
    };
    FeatureSeries::new(series.key.clone(), vec![value])
}

/// Applies the selection strategy. Sampling is seeded by `sel.seed` mixed
/// with the patient id, and kept features retain their order.
pub fn select_features(record: &PatientRecord, sel: &FeatureSelection) -> PatientRecord {
    let mut series: Vec<FeatureSeries> = if sel.strategy.samples() {
        let k = record.series.len();
        let mut rng =
            ChaCha8Rng::seed_from_u64(sel.seed ^ fnv1a64(record.patient_id.as_str().as_bytes()));
        let mut keep = rand::seq::index::sample(&mut rng, k, sel.kept(k)).into_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| record.series[i].clone()).collect()
    } else {
        record.series.clone()
    };
    if sel.strategy.averages() {
        series = series.iter().map(aggregate_series).collect();
    }
    PatientRecord::new(record.patient_id.clone(), series)
}

/// Column names, prefixed by their table where two tables share a column
/// name within the record.
fn labels(record: &PatientRecord) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut clash = HashSet::new();
    for s in &record.series {
        if !seen.insert(s.key.column.to_lowercase()) {
            clash.insert(s.key.column.to_lowercase());
        }
    }
    record
        .series
        .iter()
        .map(|s| {
            if clash.contains(&s.key.column.to_lowercase()) {
                format!("{} {}", s.key.table.to_lowercase(), s.key.column)
            } else {
                s.key.column.clone()
            }
        })
        .collect()
}

/// `Patient {id}. The {label} is {v1, v2, ...}.`, one sentence per feature.
pub fn serialize_txt(record: &PatientRecord) -> SerializedContext {
    let mut parts = vec![format!("Patient {}.", record.patient_id)];
    for (label, s) in labels(record).iter().zip(&record.series) {
        let values: Vec<String> = s.values.iter().map(|v| v.value.render()).collect();
        parts.push(format!("The {label} is {}.", values.join(", ")));
    }
    SerializedContext::new(parts.join(" "), SerializationMethod::Txt)
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

/// HTML rows, one `<tr>` per feature with the label cell first.
pub fn serialize_xsep(record: &PatientRecord) -> SerializedContext {
    let mut lines = vec!["<table>".to_string()];
    for (label, s) in labels(record).iter().zip(&record.series) {
        let mut row = format!("<tr><td>{}</td>", escape_html(label));
        for v in &s.values {
            row.push_str(&format!("<td>{}</td>", escape_html(&v.value.render())));
        }
        row.push_str("</tr>");
        lines.push(row);
    }
    lines.push("</table>".to_string());
    SerializedContext::new(lines.join("\n"), SerializationMethod::Xsep)
}

pub const SGEN_PROMPT_VERSION: &str = "sgen-v1";
pub const SGEN_SYSTEM: &str =
    "You turn patient record tables into short, faithful plain-text descriptions. Do not invent values.";

/// User message of the self-generation request.
pub fn sgen_prompt(table_text: &str, question: &str) -> String {
    format!(
        "Describe the patient below in plain sentences, keeping the features that matter for the question.\n\
         {TABLE_START}\n{table_text}\n{TABLE_END}\nQuestion: {question}"
    )
}

/// Asks the model to describe the txt rendering with respect to `question`.
/// An empty reply falls back to the txt form, with `fallback` set.
pub fn serialize_sgen(
    record: &PatientRecord,
    question: &str,
    llm: &dyn ChatClient,
) -> Result<SerializedContext, LlmError> {
    let txt = serialize_txt(record);
    let req = crate::llmio::ChatRequest::new(
        llm.model(),
        vec![
            Message::system(SGEN_SYSTEM),
            Message::user(sgen_prompt(&txt.text, question)),
        ],
    );
    let reply = llm.complete(&req)?;
    let reply = reply.trim();
    if reply.is_empty() {
        log::warn!(
            "sgen returned nothing for patient {}; using txt",
            record.patient_id
        );
        return Ok(SerializedContext {
            fallback: true,
            ..txt
        });
    }
    Ok(SerializedContext::new(
        reply.to_string(),
        SerializationMethod::Sgen,
    ))
}

/// Selection followed by serialization. `llm` is required for sgen.
pub fn serialize(
    record: &PatientRecord,
    sel: &FeatureSelection,
    method: SerializationMethod,
    question: &str,
    llm: Option<&dyn ChatClient>,
) -> Result<SerializedContext, LlmError> {
    let selected = select_features(record, sel);
    let mut ctx = match method {
        SerializationMethod::Txt => serialize_txt(&selected),
        SerializationMethod::Xsep => serialize_xsep(&selected),
        SerializationMethod::Sgen => {
            let llm = llm.ok_or_else(|| LlmError::Config("sgen needs a chat client".into()))?;
            serialize_sgen(&selected, question, llm)?
        }
    };
    ctx.selection = *sel;
    Ok(ctx)
}

pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace-separated word count.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Drops trailing sentences (or `<tr>` rows of an xsep table) until the
/// text fits. When not even the first unit fits, the text is cut at the
/// longest prefix within budget.
pub fn truncate_to_budget(text: &str, budget: usize, counter: &dyn TokenCounter) -> (String, bool) {
    if counter.count(text) <= budget {
        return (text.to_string(), false);
    }
    let xsep = text.starts_with("<table>\n") && text.ends_with("\n</table>");
    let kept = if xsep {
        let rows: Vec<&str> = text["<table>\n".len()..text.len() - "\n</table>".len()]
            .split('\n')
            .collect();
        let build = |n: usize| {
            let mut lines = vec!["<table>"];
            lines.extend(&rows[..n]);
            lines.push("</table>");
            lines.join("\n")
        };
        longest_fitting(rows.len(), budget, counter, build)
    } else {
        let sentences = split_sentences(text);
        longest_fitting(sentences.len(), budget, counter, |n| {
            sentences[..n].join(" ")
        })
    };
    match kept {
        Some(t) => (t, true),
        None => (hard_cut(text, budget, counter), true),
    }
}

/// Largest unit prefix (at least one unit) whose rendering fits.
fn longest_fitting(
    units: usize,
    budget: usize,
    counter: &dyn TokenCounter,
    build: impl Fn(usize) -> String,
) -> Option<String> {
    (1..units)
        .rev()
        .map(&build)
        .find(|t| counter.count(t) <= budget)
}

fn hard_cut(text: &str, budget: usize, counter: &dyn TokenCounter) -> String {
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain([text.len()])
        .collect();
    let (mut lo, mut hi) = (0, bounds.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if counter.count(&text[..bounds[mid]]) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    text[..bounds[lo]].trim_end().to_string()
}

/// Water-filling: each context receives `min(len, level)` with the level as
/// high as `available` allows, so short contexts are never cut to favor long ones.
pub fn allocate_budget(lengths: &[usize], available: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| lengths[i]);
    let mut caps = vec![0; lengths.len()];
    let mut remaining = available;
    for (pos, &i) in order.iter().enumerate() {
        let share = remaining / (lengths.len() - pos);
        let give = lengths[i].min(share);
        caps[i] = give;
        remaining -= give;
    }
    caps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llmio::{LlmClient, MockBackend, MockRule};
    use crate::model::FeatureKey;

    fn num_series(column: &str, xs: &[f64]) -> FeatureSeries {
        FeatureSeries::new(
            FeatureKey::new("LAB", column),
            xs.iter()
                .map(|x| FeatureValue::new(Value::Number(*x)))
                .collect(),
        )
    }

    fn gender(id: &str) -> PatientRecord {
        PatientRecord::new(
            id,
            vec![FeatureSeries::new(
                FeatureKey::new("DEMOGRAPHIC", "gender"),
                vec![FeatureValue::new(Value::Text("M".into()))],
            )],
        )
    }

    fn text_series(values: &[(&str, &str)]) -> FeatureSeries {
        FeatureSeries::new(
            FeatureKey::new("LAB", "flag"),
            values
                .iter()
                .map(|(v, t)| FeatureValue::at(Value::Text(v.to_string()), *t))
                .collect(),
        )
    }

    fn wide(k: usize) -> PatientRecord {
        PatientRecord::new(
            "9",
            (0..k)
                .map(|i| num_series(&format!("c{i}"), &[i as f64]))
                .collect(),
        )
    }

    #[test]
    fn mean_of_numbers() {
        let out = aggregate_series(&num_series("value", &[120.0, 130.0, 140.0]));
        assert_eq!(out.values, vec![FeatureValue::new(Value::Number(130.0))]);
    }

    #[test]
    fn mode_and_ties() {
        let out = aggregate_series(&text_series(&[
            ("A", "2100-01-01"),
            ("A", "2100-01-02"),
            ("B", "2100-01-03"),
        ]));
        assert_eq!(out.values[0].value, Value::Text("A".into()));
        let out = aggregate_series(&text_series(&[("A", "2100-01-01"), ("B", "2100-01-02")]));
        assert_eq!(out.values[0].value, Value::Text("B".into()));
        let untimed = FeatureSeries::new(
            FeatureKey::new("LAB", "flag"),
            vec![
                FeatureValue::new(Value::Text("B".into())),
                FeatureValue::new(Value::Text("A".into())),
            ],
        );
        assert_eq!(
            aggregate_series(&untimed).values[0].value,
            Value::Text("A".into())
        );
    }

    #[test]
    fn rnd_keeps_rounded_share() {
        let sel = FeatureSelection::with_strategy(SelectionStrategy::Rnd, 3);
        assert_eq!(select_features(&wide(5), &sel).series.len(), 3);
        assert_eq!(
            select_features(&wide(5), &sel),
            select_features(&wide(5), &sel)
        );
        let all = FeatureSelection::all();
        assert_eq!(select_features(&wide(5), &all), wide(5));
    }

    #[test]
    fn keep_ratio_bounds() {
        assert!(FeatureSelection::new(SelectionStrategy::Rnd, 0.0, 1).is_err());
        assert!(FeatureSelection::new(SelectionStrategy::Rnd, 1.5, 1).is_err());
        assert!(FeatureSelection::new(SelectionStrategy::Rnd, 1.0, 1).is_ok());
    }

    #[test]
    fn txt_template() {
        assert_eq!(
            serialize_txt(&gender("42")).text,
            "Patient 42. The gender is M."
        );
        let r = PatientRecord::new("42", vec![num_series("value", &[120.0, 130.0])]);
        assert_eq!(serialize_txt(&r).text, "Patient 42. The value is 120, 130.");
        let r = PatientRecord::new("42", vec![num_series("value", &[120.0, 130.0, 140.0])]);
        let avg = select_features(
            &r,
            &FeatureSelection::with_strategy(SelectionStrategy::AllAvg, 0),
        );
        assert_eq!(serialize_txt(&avg).text, "Patient 42. The value is 130.");
    }

    #[test]
    fn colliding_columns_get_table_prefix() {
        let r = PatientRecord::new(
            "1",
            vec![
                FeatureSeries::new(
                    FeatureKey::new("DIAGNOSES", "icd9_code"),
                    vec![FeatureValue::new(Value::Text("0389".into()))],
                ),
                FeatureSeries::new(
                    FeatureKey::new("PROCEDURES", "icd9_code"),
                    vec![FeatureValue::new(Value::Text("3893".into()))],
                ),
            ],
        );
        assert_eq!(
            serialize_txt(&r).text,
            "Patient 1. The diagnoses icd9_code is 0389. The procedures icd9_code is 3893."
        );
    }

    #[test]
    fn xsep_template() {
        assert_eq!(
            serialize_xsep(&gender("42")).text,
            "<table>\n<tr><td>gender</td><td>M</td></tr>\n</table>"
        );
        let two = PatientRecord::new(
            "1",
            vec![num_series("a", &[1.0]), num_series("b", &[2.0, 3.0])],
        );
        let text = serialize_xsep(&two).text;
        assert_eq!(text.matches("<tr>").count(), 2);
        assert!(text.contains("</tr>\n<tr>"));
        let empty = serialize_xsep(&PatientRecord::new("1", vec![]));
        assert_eq!(empty.text, "<table>\n</table>");
        assert!(!empty.truncated);
    }

    #[test]
    fn sgen_modes() {
        let r = PatientRecord::new("7", vec![num_series("a", &[1.0]), num_series("b", &[2.0])]);
        let echo = LlmClient::new(MockBackend::new(MockRule::echo()), "m");
        let ctx = serialize_sgen(&r, "q", &echo).unwrap();
        assert_eq!(ctx.text, serialize_txt(&r).text);
        assert_eq!(ctx.method, SerializationMethod::Sgen);

        let first = LlmClient::new(MockBackend::new(MockRule::FirstNSentences(2)), "m");
        assert_eq!(
            serialize_sgen(&r, "q", &first).unwrap().text,
            "Patient 7. The a is 1."
        );

        let empty = LlmClient::new(MockBackend::new(MockRule::FixedReply(String::new())), "m");
        let ctx = serialize_sgen(&r, "q", &empty).unwrap();
        assert!(ctx.fallback);
        assert!(!ctx.truncated);
        assert_eq!(ctx.method, SerializationMethod::Txt);
    }

    #[test]
    fn truncation() {
        let c = WhitespaceCounter;
        let short = "one two three four five six seven eight nine ten";
        assert_eq!(
            truncate_to_budget(short, 4096, &c),
            (short.to_string(), false)
        );
        let three = "a b c d e. f g h i j. k l m n o.";
        assert_eq!(
            truncate_to_budget(three, 10, &c),
            ("a b c d e. f g h i j.".to_string(), true)
        );
        assert_eq!(
            truncate_to_budget(three, 15, &c),
            (three.to_string(), false)
        );
        let (cut, t) = truncate_to_budget("a b c d e f g.", 3, &c);
        assert_eq!((cut.as_str(), t), ("a b c", true));
    }

    #[test]
    fn xsep_truncation_keeps_wrapper() {
        let r = PatientRecord::new(
            "1",
            (0..5)
                .map(|i| num_series(&format!("c{i}"), &[1.0]))
                .collect(),
        );
        let text = serialize_xsep(&r).text;
        let (cut, t) = truncate_to_budget(&text, 4, &WhitespaceCounter);
        assert!(t);
        assert!(cut.starts_with("<table>\n") && cut.ends_with("\n</table>"));
        assert_eq!(cut.matches("<tr>").count(), 2);
    }

    #[test]
    fn water_filling() {
        assert_eq!(allocate_budget(&[10, 100, 30], 90), vec![10, 50, 30]);
        assert_eq!(allocate_budget(&[5, 5], 100), vec![5, 5]);
        assert_eq!(allocate_budget(&[50, 50], 60), vec![30, 30]);
        assert!(allocate_budget(&[], 10).is_empty());
    }
}
