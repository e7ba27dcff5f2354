//! Experiment execution over the configuration grid, Δ% aggregation and
//! result tables.

mod config;
mod report;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{Example, ExtractionItem, RetrievalItem};
use crate::llmio::{ChatClient, ChatRequest, ClientStats, Embedder, LlmError};
use crate::metrics::{self, embed_match_f1, percent, rouge1_f1, Qrels, Run, ScoreRow};
use crate::model::{PatientId, PatientRecord, Repository, Task};
use crate::par::{self, Parallelism};
use crate::prompt::{
    fit_prompt, get_instruction, Budget, DemoAnswer, Demonstration, PromptError, PromptSpec,
    RenderedPrompt,
};
use crate::select::{
    rerank_pointwise, select_demonstrations, Bm25Index, Bm25Params, DemoIndex, DemoInput, RunFile,
    SelectError, VectorIndex,
};
use crate::serialize::{serialize, serialize_txt, WhitespaceCounter};
use crate::sqlmini::{parse_sql, Literal};

pub use config::{grid, ExperimentConfig, FirstStageKind};
pub use report::{
    delta_improvement, format_delta, rank_flags, relative_improvement, report, FeatureRow, Flag,
    IclRow, ReferenceTables, Report,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("baseline {0} is zero")]
    ZeroBaseline(&'static str),
    #[error("rows disagree on which metrics are present ({0})")]
    MetricMismatch(&'static str),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("patient {0} not in repository")]
    MissingPatient(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("results: {0}")]
    Store(String),
}

impl RunError {
    pub fn is_exhaustion(&self) -> bool {
        matches!(self, RunError::Llm(LlmError::Exhausted { .. }))
    }
}

/// The chat model under test and the embedder used for demonstration
/// selection and B_score.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub llm: &'a dyn ChatClient,
    pub embedder: &'a dyn Embedder,
}

pub struct ExtractionSetup<'a> {
    pub repo: &'a Repository,
    pub test: &'a [ExtractionItem],
    pub demos: &'a DemoIndex,
}

pub struct RetrievalSetup<'a> {
    pub repo: &'a Repository,
    pub test: &'a [RetrievalItem],
    pub demos: &'a DemoIndex,
    pub first_stage: &'a FirstStage,
}

/// Candidate generator over the txt serialization of every patient with
/// all features.
pub struct FirstStage {
    engine: Engine,
    ids: Vec<String>,
}

enum Engine {
    Bm25(Bm25Index),
    Dense(VectorIndex),
}

fn patient_texts(repo: &Repository, parallelism: Parallelism) -> Vec<(String, String)> {
    let records: Vec<&PatientRecord> = repo.patients().collect();
    par::map(parallelism, &records, |r| {
        (r.patient_id.as_str().to_string(), serialize_txt(r).text)
    })
}

impl FirstStage {
    pub fn build(repo: &Repository, parallelism: Parallelism) -> Self {
        let texts = patient_texts(repo, parallelism);
        let index = Bm25Index::build(
            texts.iter().map(|(i, t)| (i.as_str(), t.as_str())),
            Bm25Params::default(),
        );
        FirstStage {
            engine: Engine::Bm25(index),
            ids: texts.into_iter().map(|(i, _)| i).collect(),
        }
    }

    /// Exact nearest neighbours over patient embeddings.
    pub fn dense(
        repo: &Repository,
        embedder: &dyn Embedder,
        parallelism: Parallelism,
    ) -> Result<Self, RunError> {
        let texts = patient_texts(repo, parallelism);
        let vectors = par::map(parallelism, &texts, |(_, t)| embedder.embed(t));
        let mut index: Option<VectorIndex> = None;
        for ((id, _), v) in texts.iter().zip(vectors) {
            let v = v?;
            index
                .get_or_insert_with(|| VectorIndex::new(v.len()))
                .add(id.clone(), &v)?;
        }
        let index = index
            .ok_or_else(|| RunError::Config("dense first stage over an empty repository".into()))?;
        Ok(FirstStage {
            engine: Engine::Dense(index),
            ids: texts.into_iter().map(|(i, _)| i).collect(),
        })
    }

    pub fn build_for(
        kind: FirstStageKind,
        repo: &Repository,
        embedder: &dyn Embedder,
        parallelism: Parallelism,
    ) -> Result<Self, RunError> {
        match kind {
            FirstStageKind::Bm25 => Ok(Self::build(repo, parallelism)),
            FirstStageKind::Dense => Self::dense(repo, embedder, parallelism),
        }
    }

    pub fn kind(&self) -> FirstStageKind {
        match self.engine {
            Engine::Bm25(_) => FirstStageKind::Bm25,
            Engine::Dense(_) => FirstStageKind::Dense,
        }
    }

    /// Top `depth` candidates. When BM25 matches fewer patients, the list
    /// is padded with unmatched patients in id order at score 0.
    pub fn candidates(
        &self,
        query: &str,
        depth: usize,
        embedder: &dyn Embedder,
    ) -> Result<Vec<(String, f64)>, RunError> {
        let mut hits = match &self.engine {
            Engine::Bm25(index) => index.search(query, depth),
            Engine::Dense(index) => index.search(&embedder.embed(query)?, depth)?,
        };
        if hits.len() < depth {
            let seen: HashSet<String> = hits.iter().map(|h| h.0.clone()).collect();
            let pad = self
                .ids
                .iter()
                .filter(|id| !seen.contains(*id))
                .take(depth - hits.len());
            hits.extend(pad.map(|id| (id.clone(), 0.0)));
        }
        Ok(hits)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutput {
    pub id: String,
    /// Generated answer (extraction).
    pub answer: Option<String>,
    /// Re-ranked `(patient_id, score)` list (retrieval).
    pub ranking: Vec<(String, f64)>,
    pub error: Option<String>,
    /// Candidates whose relevance reply could not be used.
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub outputs: Vec<ItemOutput>,
    pub scores: ScoreRow,
    /// BM25-only scores for retrieval runs.
    pub first_stage: Option<ScoreRow>,
    pub wall_ms: u64,
    pub stats: ClientStats,
    pub cache_hit_rate: f64,
    pub failures: usize,
    pub exhausted: usize,
    pub rerank_calls: usize,
}

impl RunResult {
    pub fn run_file(&self) -> RunFile {
        self.outputs
            .iter()
            .map(|o| (o.id.clone(), o.ranking.clone()))
            .collect()
    }
}

fn stats_delta(before: ClientStats, after: ClientStats) -> ClientStats {
    ClientStats {
        requests: after.requests - before.requests,
        cache_hits: after.cache_hits - before.cache_hits,
        wire_calls: after.wire_calls - before.wire_calls,
        failures: after.failures - before.failures,
    }
}

fn budget(cfg: &ExperimentConfig) -> Budget<'static> {
    Budget {
        window: cfg.window,
        reserve: cfg.reserve,
        counter: &WhitespaceCounter,
    }
}

fn patient<'a>(repo: &'a Repository, id: &PatientId) -> Result<&'a PatientRecord, RunError> {
    repo.patient(id)
        .ok_or_else(|| RunError::MissingPatient(id.to_string()))
}

fn context_for(
    cfg: &ExperimentConfig,
    record: &PatientRecord,
    question: &str,
    models: Models,
) -> Result<crate::serialize::SerializedContext, RunError> {
    Ok(serialize(
        record,
        &cfg.feature_selection(),
        cfg.serialization,
        question,
        Some(models.llm),
    )?)
}

fn extraction_demos(
    cfg: &ExperimentConfig,
    item: &ExtractionItem,
    record: &PatientRecord,
    setup: &ExtractionSetup,
    models: Models,
) -> Result<Vec<Demonstration>, RunError> {
    let input = DemoInput {
        id: &item.id,
        query: &item.query.text,
        patient: Some(record),
    };
    let picks = select_demonstrations(&cfg.demo_selector(), &input, setup.demos, models.embedder)?;
    picks
        .into_iter()
        .map(|e| {
            let pid = e
                .patient
                .as_ref()
                .ok_or_else(|| RunError::MissingPatient(format!("example {}", e.id)))?;
            let ctx = context_for(cfg, patient(setup.repo, pid)?, &e.query, models)?;
            Ok(Demonstration {
                context: ctx.text,
                question: e.query.clone(),
                answer: DemoAnswer::Text(e.answer.clone()),
            })
        })
        .collect()
}

/// Full prompt for one extraction item.
pub fn extraction_prompt(
    cfg: &ExperimentConfig,
    item: &ExtractionItem,
    setup: &ExtractionSetup,
    models: Models,
) -> Result<RenderedPrompt, RunError> {
    let record = patient(setup.repo, item.patient())?;
    let demonstrations = extraction_demos(cfg, item, record, setup, models)?;
    let spec = PromptSpec {
        instruction: get_instruction(Task::Extraction, cfg.guided),
        demonstrations,
        context: context_for(cfg, record, &item.query.text, models)?,
        query: item.query.text.clone(),
    };
    Ok(fit_prompt(spec, &budget(cfg))?)
}

fn answer_one(
    cfg: &ExperimentConfig,
    item: &ExtractionItem,
    setup: &ExtractionSetup,
    models: Models,
) -> Result<(String, f64, f64), RunError> {
    let prompt = extraction_prompt(cfg, item, setup, models)?;
    let answer = models
        .llm
        .complete(&ChatRequest::new(models.llm.model(), prompt.messages))?;
    let r1 = rouge1_f1(&answer, &item.gold);
    let b = embed_match_f1(&answer, &item.gold, models.embedder)?;
    Ok((answer, b, r1))
}

fn limited<T>(items: &[T], limit: Option<usize>) -> &[T] {
    &items[..limit.unwrap_or(items.len()).min(items.len())]
}

/// Answers every test item and scores it with B_score and R-1. Failed
/// items score 0 and are tallied.
pub fn run_extraction(
    cfg: &ExperimentConfig,
    setup: &ExtractionSetup,
    models: Models,
) -> Result<RunResult, RunError> {
    cfg.validate()?;
    if cfg.task != Task::Extraction {
        return Err(RunError::Config(
            "run_extraction needs an extraction config".into(),
        ));
    }
    let start = Instant::now();
    let before = models.llm.stats();
    let items = limited(setup.test, cfg.test_limit);
    let par = Parallelism::from_width(cfg.concurrency);
    let results = par::map(par, items, |item| {
        (item.id.clone(), answer_one(cfg, item, setup, models))
    });

    let mut outputs = Vec::with_capacity(results.len());
    let (mut b_sum, mut r_sum, mut failures, mut exhausted) = (0.0, 0.0, 0, 0);
    for (id, res) in results {
        match res {
            Ok((answer, b, r1)) => {
                b_sum += b;
                r_sum += r1;
                outputs.push(ItemOutput {
                    id,
                    answer: Some(answer),
                    ranking: vec![],
                    error: None,
                    flagged: 0,
                });
            }
            Err(e) => {
                log::warn!("item {id} failed: {e}");
                failures += 1;
                exhausted += usize::from(e.is_exhaustion());
                outputs.push(ItemOutput {
                    id,
                    answer: None,
                    ranking: vec![],
                    error: Some(e.to_string()),
                    flagged: 0,
                });
            }
        }
    }
    outputs.sort_by(|a, b| a.id.cmp(&b.id));
    let n = items.len().max(1) as f64;
    let stats = stats_delta(before, models.llm.stats());
    Ok(RunResult {
        config: cfg.clone(),
        outputs,
        scores: ScoreRow::extraction(percent(b_sum / n), percent(r_sum / n)),
        first_stage: None,
        wall_ms: start.elapsed().as_millis() as u64,
        cache_hit_rate: stats.cache_hit_rate(),
        stats,
        failures,
        exhausted,
        rerank_calls: 0,
    })
}

/// Alternating positive and negative examples: the lowest-id relevant
/// patient, then the first patient outside the relevant set.
fn retrieval_demos(
    cfg: &ExperimentConfig,
    item: &RetrievalItem,
    setup: &RetrievalSetup,
    models: Models,
) -> Result<Vec<Demonstration>, RunError> {
    let input = DemoInput {
        id: &item.id,
        query: &item.query.text,
        patient: None,
    };
    let picks: Vec<&Example> =
        select_demonstrations(&cfg.demo_selector(), &input, setup.demos, models.embedder)?;
    picks
        .into_iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let positive = i % 2 == 0 && !e.relevant.is_empty();
            let pid = if positive {
                e.relevant.iter().min().cloned()
            } else {
                setup
                    .repo
                    .patient_ids()
                    .find(|p| !e.relevant.contains(p))
                    .cloned()
            }?;
            Some((e, pid, positive))
        })
        .map(|(e, pid, positive)| {
            let ctx = context_for(cfg, patient(setup.repo, &pid)?, &e.query, models)?;
            Ok(Demonstration {
                context: ctx.text,
                question: e.query.clone(),
                answer: DemoAnswer::Relevance(positive),
            })
        })
        .collect()
}

/// Relevance prompt for one `(query, candidate)` pair, with precomputed
/// demonstrations.
pub fn retrieval_prompt(
    cfg: &ExperimentConfig,
    item: &RetrievalItem,
    candidate: &PatientRecord,
    demonstrations: Vec<Demonstration>,
    models: Models,
) -> Result<RenderedPrompt, RunError> {
    let spec = PromptSpec {
        instruction: get_instruction(Task::Retrieval, cfg.guided),
        demonstrations,
        context: context_for(cfg, candidate, &item.query.text, models)?,
        query: item.query.text.clone(),
    };
    Ok(fit_prompt(spec, &budget(cfg))?)
}

/// Demonstrations and the prompt for the top first-stage candidate.
pub fn first_retrieval_prompt(
    cfg: &ExperimentConfig,
    item: &RetrievalItem,
    setup: &RetrievalSetup,
    models: Models,
) -> Result<RenderedPrompt, RunError> {
    let demos = retrieval_demos(cfg, item, setup, models)?;
    let top = setup
        .first_stage
        .candidates(&item.query.text, 1, models.embedder)?;
    let pid = PatientId::new(top.first().map(|c| c.0.clone()).unwrap_or_default());
    retrieval_prompt(cfg, item, patient(setup.repo, &pid)?, demos, models)
}

struct Ranked {
    first: Vec<String>,
    reranked: Vec<(String, f64)>,
    flagged: usize,
}

fn rank_one(
    cfg: &ExperimentConfig,
    item: &RetrievalItem,
    setup: &RetrievalSetup,
    models: Models,
    par: Parallelism,
) -> Result<Ranked, RunError> {
    let first: Vec<String> = setup
        .first_stage
        .candidates(&item.query.text, cfg.depth, models.embedder)?
        .into_iter()
        .map(|c| c.0)
        .collect();
    let demos = retrieval_demos(cfg, item, setup, models)?;
    let reranked = rerank_pointwise(
        &first,
        |pid| {
            let record = patient(setup.repo, &PatientId::new(pid)).map_err(|e| e.to_string())?;
            retrieval_prompt(cfg, item, record, demos.clone(), models)
                .map(|p| p.messages)
                .map_err(|e| e.to_string())
        },
        models.llm,
        par,
    );
    let flagged = reranked.iter().filter(|r| r.flagged).count();
    Ok(Ranked {
        first,
        reranked: reranked.into_iter().map(|r| (r.id, r.score)).collect(),
        flagged,
    })
}

fn qrels_of(items: &[RetrievalItem]) -> Qrels {
    items
        .iter()
        .map(|it| {
            (
                it.id.clone(),
                it.relevant.iter().map(|p| p.as_str().to_string()).collect(),
            )
        })
        .collect()
}

fn score_run(run: &Run, qrels: &Qrels, depth: usize) -> ScoreRow {
    let m = metrics::map(run, qrels).unwrap_or(0.0);
    let r = metrics::recall_at_k(run, qrels, depth).unwrap_or(0.0);
    ScoreRow::retrieval(percent(m), percent(r))
}

/// First stage, pointwise re-ranking, then MAP and Recall@depth for both
/// the first stage and the re-ranked lists.
pub fn run_retrieval(
    cfg: &ExperimentConfig,
    setup: &RetrievalSetup,
    models: Models,
) -> Result<RunResult, RunError> {
    cfg.validate()?;
    if cfg.task != Task::Retrieval {
        return Err(RunError::Config(
            "run_retrieval needs a retrieval config".into(),
        ));
    }
    if setup.first_stage.kind() != cfg.first_stage {
        return Err(RunError::Config(format!(
            "config asks for a {:?} first stage but the setup has {:?}",
            cfg.first_stage,
            setup.first_stage.kind()
        )));
    }
    let start = Instant::now();
    let before = models.llm.stats();
    let items = limited(setup.test, cfg.test_limit);
    let par = Parallelism::from_width(cfg.concurrency);
    let results = par::map(par, items, |item| {
        (item.id.clone(), rank_one(cfg, item, setup, models, par))
    });

    let mut outputs = Vec::with_capacity(results.len());
    let (mut first_run, mut run) = (Run::new(), Run::new());
    let (mut failures, mut exhausted, mut rerank_calls) = (0, 0, 0);
    for (id, res) in results {
        match res {
            Ok(r) => {
                rerank_calls += r.first.len();
                run.insert(id.clone(), r.reranked.iter().map(|x| x.0.clone()).collect());
                first_run.insert(id.clone(), r.first);
                outputs.push(ItemOutput {
                    id,
                    answer: None,
                    ranking: r.reranked,
                    error: None,
                    flagged: r.flagged,
                });
            }
            Err(e) => {
                log::warn!("query {id} failed: {e}");
                failures += 1;
                exhausted += usize::from(e.is_exhaustion());
                outputs.push(ItemOutput {
                    id,
                    answer: None,
                    ranking: vec![],
                    error: Some(e.to_string()),
                    flagged: 0,
                });
            }
        }
    }
    outputs.sort_by(|a, b| a.id.cmp(&b.id));
    let qrels = qrels_of(items);
    let unjudged = metrics::unjudged_queries(&qrels);
    if unjudged > 0 {
        log::info!(
            "{unjudged} queries have no relevant patients and are left out of MAP and recall"
        );
    }
    let stats = stats_delta(before, models.llm.stats());
    Ok(RunResult {
        config: cfg.clone(),
        outputs,
        scores: score_run(&run, &qrels, cfg.depth),
        first_stage: Some(score_run(&first_run, &qrels, cfg.depth)),
        wall_ms: start.elapsed().as_millis() as u64,
        cache_hit_rate: stats.cache_hit_rate(),
        stats,
        failures,
        exhausted,
        rerank_calls,
    })
}

/// Query text to gold answer, for a mock that answers perfectly.
pub fn gold_answers(items: &[ExtractionItem]) -> HashMap<String, String> {
    items
        .iter()
        .map(|i| (i.query.text.clone(), i.gold.clone()))
        .collect()
}

/// Query text to the string literals of its gold SQL, for a needle mock
/// that recognizes relevant candidates.
pub fn gold_needles(items: &[RetrievalItem]) -> HashMap<String, Vec<String>> {
    items
        .iter()
        .map(|i| {
            let needles = parse_sql(&i.sql)
                .map(|ast| {
                    ast.predicates
                        .iter()
                        .filter_map(|p| match &p.literal {
                            Literal::Text(t) if p.column.column != "subject_id" => Some(t.clone()),
                            _ => None,
                        })
                        .collect()
                })
                .unwrap_or_default();
            (i.query.text.clone(), needles)
        })
        .collect()
}

pub fn result_path(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    dir.join(format!("{}.json", cfg.hash()))
}

/// Writes `{config hash}.json` under `dir`.
pub fn save_result(dir: &Path, result: &RunResult) -> Result<PathBuf, RunError> {
    let store = |e: std::io::Error| RunError::Store(e.to_string());
    std::fs::create_dir_all(dir).map_err(store)?;
    let path = result_path(dir, &result.config);
    let json = serde_json::to_string_pretty(result).map_err(|e| RunError::Store(e.to_string()))?;
    std::fs::write(&path, json).map_err(store)?;
    Ok(path)
}

pub fn load_result(dir: &Path, cfg: &ExperimentConfig) -> Result<Option<RunResult>, RunError> {
    let path = result_path(dir, cfg);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| RunError::Store(e.to_string()))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| RunError::Store(format!("{}: {e}", path.display())))
}

/// Every stored result under `dir`, in file-name order.
pub fn load_results(dir: &Path) -> Result<Vec<RunResult>, RunError> {
    let store = |e: std::io::Error| RunError::Store(e.to_string());
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(store)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(store)?;
            serde_json::from_str(&text)
                .map_err(|e| RunError::Store(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Runs settings one after another, reusing results already stored in
/// `dir`.
pub fn run_grid(
    configs: &[ExperimentConfig],
    dir: &Path,
    mut run: impl FnMut(&ExperimentConfig) -> Result<RunResult, RunError>,
) -> Result<Vec<RunResult>, RunError> {
    let mut out = Vec::with_capacity(configs.len());
    for cfg in configs {
        if let Some(done) = load_result(dir, cfg)? {
            log::info!("reusing {}", cfg.label());
            out.push(done);
            continue;
        }
        let result = run(cfg)?;
        save_result(dir, &result)?;
        out.push(result);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
