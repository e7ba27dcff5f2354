use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunError;
use crate::model::Task;
use crate::select::{DemoSelector, DemoStrategy, DEFAULT_DEPTH, MAX_DEMOS};
use crate::serialize::{
    FeatureSelection, SelectionStrategy, SerializationMethod, ANSWER_RESERVE, CONTEXT_WINDOW,
    DEFAULT_KEEP_RATIO,
};

fn default_keep() -> f64 {
    DEFAULT_KEEP_RATIO
}
fn default_window() -> usize {
    CONTEXT_WINDOW
}
fn default_reserve() -> usize {
    ANSWER_RESERVE
}
fn default_depth() -> usize {
    DEFAULT_DEPTH
}
fn default_model() -> String {
    "mock".into()
}
fn default_concurrency() -> usize {
    4
}
fn default_demo() -> DemoStrategy {
    DemoStrategy::Query
}

/// Retriever that proposes candidates for re-ranking.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstStageKind {
    #[default]
    Bm25,
    /// Cosine similarity between query and patient embeddings.
    Dense,
}

impl FirstStageKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bm25" => Some(FirstStageKind::Bm25),
            "dense" => Some(FirstStageKind::Dense),
            _ => None,
        }
    }
}

/// One grid cell: task × F^p × φ × instruction × σ × k, plus run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub selection: SelectionStrategy,
    #[serde(default = "default_keep")]
    pub keep_ratio: f64,
    pub serialization: SerializationMethod,
    #[serde(default)]
    pub guided: bool,
    #[serde(default = "default_demo")]
    pub demo: DemoStrategy,
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_reserve")]
    pub reserve: usize,
    /// First-stage candidates per retrieval query.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default)]
    pub first_stage: FirstStageKind,
    #[serde(default = "default_model")]
    pub model: String,
    /// Items answered concurrently.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Evaluate only the first `n` test items.
    #[serde(default)]
    pub test_limit: Option<usize>,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(
        task: Task,
        selection: SelectionStrategy,
        serialization: SerializationMethod,
    ) -> Self {
        ExperimentConfig {
            task,
            selection,
            keep_ratio: DEFAULT_KEEP_RATIO,
            serialization,
            guided: false,
            demo: DemoStrategy::Query,
            k: 0,
            seed: 0,
            window: CONTEXT_WINDOW,
            reserve: ANSWER_RESERVE,
            depth: DEFAULT_DEPTH,
            first_stage: FirstStageKind::Bm25,
            model: default_model(),
            concurrency: default_concurrency(),
            test_limit: None,
            corpus: None,
            dataset: None,
        }
    }

    pub fn with_demos(mut self, demo: DemoStrategy, k: usize) -> Self {
        self.demo = demo;
        self.k = k;
        self
    }

    pub fn guided(mut self, guided: bool) -> Self {
        self.guided = guided;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.k > MAX_DEMOS {
            return Err(RunError::Config(format!(
                "k must be in 0..={MAX_DEMOS}, got {}",
                self.k
            )));
        }
        if self.k > 0 && !self.demo.valid_for(self.task) {
            return Err(RunError::Config(format!(
                "{} demonstrations are not available for {}",
                self.demo, self.task
            )));
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(RunError::Config(format!(
                "keep_ratio must be in (0, 1], got {}",
                self.keep_ratio
            )));
        }
        if self.reserve >= self.window {
            return Err(RunError::Config(
                "answer reserve must be smaller than the window".into(),
            ));
        }
        if self.task == Task::Retrieval && self.depth == 0 {
            return Err(RunError::Config("depth must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_selection(&self) -> FeatureSelection {
        FeatureSelection {
            strategy: self.selection,
            keep_ratio: self.keep_ratio,
            seed: self.seed,
        }
    }

    pub fn demo_selector(&self) -> DemoSelector {
        DemoSelector {
            strategy: self.demo,
            k: self.k,
            seed: self.seed,
        }
    }

    /// Short human-readable setting name.
    pub fn label(&self) -> String {
        let instr = if self.guided { "guided" } else { "plain" };
        let demos = if self.k == 0 {
            "k=0".to_string()
        } else {
            format!("{} k={}", self.demo, self.k)
        };
        let label = format!(
            "{} {}/{} {instr} {demos}",
            self.task,
            self.selection.as_str(),
            self.serialization.as_str()
        );
        match self.first_stage {
            FirstStageKind::Dense if self.task == Task::Retrieval => label + " dense",
            _ => label,
        }
    }

    /// Stable identifier over every field that can change results.
    pub fn hash(&self) -> String {
        let mut echo = self.clone();
        if echo.k == 0 {
            echo.demo = DemoStrategy::Query;
        }
        echo.concurrency = 0;
        let json = serde_json::to_string(&echo).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// Every valid configuration for `task`: 4 selections × 3 serializations ×
/// 2 instructions × (zero-shot plus each strategy with k = 1..=3).
pub fn grid(task: Task) -> Vec<ExperimentConfig> {
    let mut demos = vec![(DemoStrategy::Query, 0)];
    for s in DemoStrategy::ALL.into_iter().filter(|s| s.valid_for(task)) {
        demos.extend((1..=MAX_DEMOS).map(|k| (s, k)));
    }
    let mut out = Vec::new();
    for sel in SelectionStrategy::ALL {
        for method in SerializationMethod::ALL {
            for guided in [false, true] {
                for &(s, k) in &demos {
                    out.push(
                        ExperimentConfig::new(task, sel, method)
                            .guided(guided)
                            .with_demos(s, k),
                    );
                }
            }
        }
    }
    out
}
