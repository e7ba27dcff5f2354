use std::collections::HashMap;

use super::{Backend, ChatRequest, LlmError};
use crate::text::{split_sentences, tokenize};

/// Marker pair that [`MockRule::EchoBetweenMarkers`] and the self-generated
/// serialization prompt agree on.
pub const TABLE_START: &str = "<<<TABLE";
pub const TABLE_END: &str = "TABLE>>>";

#[derive(Debug, Clone, PartialEq)]
pub enum NeedleSource {
    Fixed(Vec<String>),
    /// Needles per query text (the text after the last `Question:`).
    PerQuery(HashMap<String, Vec<String>>),
}

/// Deterministic stand-in for a chat model. Replies depend only on the request.
#[derive(Debug, Clone, PartialEq)]
pub enum MockRule {
    /// Returns the text between the two markers in the last user message.
    EchoBetweenMarkers {
        start: String,
        end: String,
    },
    /// "yes" iff every needle occurs as a contiguous token run in the
    /// candidate patient text, else "no".
    ContainsNeedle(NeedleSource),
    /// First `n` sentences of the marked table text (or the whole last
    /// user message when unmarked).
    FirstNSentences(usize),
    FixedReply(String),
    /// Reply looked up by query text; unknown queries get an empty reply.
    KeyedReply(HashMap<String, String>),
}

impl MockRule {
    pub fn echo() -> Self {
        MockRule::EchoBetweenMarkers {
            start: TABLE_START.into(),
            end: TABLE_END.into(),
        }
    }

    pub fn needle(needle: &str) -> Self {
        MockRule::ContainsNeedle(NeedleSource::Fixed(vec![needle.to_string()]))
    }

    pub fn reply(&self, req: &ChatRequest) -> String {
        let user = req.last_user().unwrap_or("");
        match self {
            MockRule::FixedReply(s) => s.clone(),
            MockRule::EchoBetweenMarkers { start, end } => {
                between(user, start, end).unwrap_or(user).trim().to_string()
            }
            MockRule::FirstNSentences(n) => {
                let src = between(user, TABLE_START, TABLE_END).unwrap_or(user).trim();
                split_sentences(src)
                    .into_iter()
                    .take(*n)
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            MockRule::ContainsNeedle(source) => {
                let needles: &[String] = match source {
                    NeedleSource::Fixed(n) => n,
                    NeedleSource::PerQuery(map) => match map.get(question_of(user)) {
                        Some(n) => n,
                        None => return "no".into(),
                    },
                };
                let scope = tokenize(candidate_scope(user));
                let hit = !needles.is_empty()
                    && needles.iter().all(|n| contains_run(&scope, &tokenize(n)));
                if hit { "yes" } else { "no" }.to_string()
            }
            MockRule::KeyedReply(map) => map.get(question_of(user)).cloned().unwrap_or_default(),
        }
    }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let e = text[s..].find(end)? + s;
    Some(&text[s..e])
}

/// Text after the last `Question:` marker, trimmed.
pub fn question_of(user: &str) -> &str {
    match user.rfind("Question:") {
        Some(i) => user[i + "Question:".len()..].trim(),
        None => user.trim(),
    }
}

/// Text after the last `Patient:` and before the following `Question:`.
pub fn candidate_scope(user: &str) -> &str {
    let start = user
        .rfind("Patient:")
        .map(|i| i + "Patient:".len())
        .unwrap_or(0);
    let rest = &user[start..];
    match rest.find("Question:") {
        Some(e) => &rest[..e],
        None => rest,
    }
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Mock as a transport backend.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub rule: MockRule,
}

impl MockBackend {
    pub fn new(rule: MockRule) -> Self {
        MockBackend { rule }
    }
}

impl Backend for MockBackend {
    fn send(&self, req: &ChatRequest) -> Result<String, LlmError> {
        Ok(self.rule.reply(req))
    }
}
