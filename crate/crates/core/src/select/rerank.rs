use crate::llmio::{ChatClient, ChatRequest, Message};
use crate::par::{self, Parallelism};
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub id: String,
    pub score: f64,
    /// The reply was unparseable or the call failed.
    pub flagged: bool,
}

/// Reads a leading yes/no, case-insensitively.
pub fn parse_relevance(reply: &str) -> Option<bool> {
    match tokenize(reply).first().map(String::as_str) {
        Some("yes") => Some(true),
        Some("no") => Some(false),
        _ => None,
    }
}

/// One model call per candidate, scored 1 for yes and 0 otherwise. Output
/// is sorted by score with ties kept in first-stage order, so it is always
/// a permutation of `candidates`.
pub fn rerank_pointwise<F>(
    candidates: &[String],
    prompt_for: F,
    llm: &dyn ChatClient,
    parallelism: Parallelism,
) -> Vec<Reranked>
where
    F: Fn(&str) -> Result<Vec<Message>, String> + Sync + Send,
{
    let mut scored = par::map(parallelism, candidates, |id| {
        let reply = prompt_for(id).and_then(|messages| {
            llm.complete(&ChatRequest::new(llm.model(), messages))
                .map_err(|e| e.to_string())
        });
        match reply {
            Ok(text) => match parse_relevance(&text) {
                Some(rel) => Reranked {
                    id: id.clone(),
                    score: f64::from(u8::from(rel)),
                    flagged: false,
                },
                None => {
                    log::warn!("unparseable relevance reply for {id}: {text:?}");
                    Reranked {
                        id: id.clone(),
                        score: 0.0,
                        flagged: true,
                    }
                }
            },
            Err(e) => {
                log::warn!("re-ranking {id} failed: {e}");
                Reranked {
                    id: id.clone(),
                    score: 0.0,
                    flagged: true,
                }
            }
        }
    });
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored
}
