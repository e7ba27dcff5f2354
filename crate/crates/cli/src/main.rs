use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use ehrbench::datasets::{
    build_extraction, build_retrieval, read_split, split_dataset, write_split, DatasetStats,
    ExampleDB, ExtractionItem, Ratios, RetrievalItem, SplitDataset, SMALL_TEST,
};
use ehrbench::ingest::{generate_synthetic, load_tables, write_tables, SynthSpec};
use ehrbench::llmio::{
    ChatClient, Embedder, EnvConfig, HashingEmbedder, LlmClient, MockBackend, MockRule,
    NeedleSource, ResponseCache,
};
use ehrbench::model::{Repository, Task};
use ehrbench::par::Parallelism;
use ehrbench::prompt::write_prompt_dump;
use ehrbench::runner::{
    extraction_prompt, first_retrieval_prompt, gold_answers, gold_needles, load_results, report,
    run_extraction, run_retrieval, save_result, ExperimentConfig, ExtractionSetup, FirstStage,
    FirstStageKind, Models, ReferenceTables, RetrievalSetup, RunError, RunResult,
};
use ehrbench::select::{validate_run, write_run, DemoIndex, DemoStrategy};
use ehrbench::serialize::{SelectionStrategy, SerializationMethod};
use ehrbench::sqlmini::{read_pairs, write_pairs};

#[derive(Parser)]
#[command(
    name = "ehrbench",
    version,
    about = "Prompting benchmarks over tabular patient records"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus: tables as CSV plus question/SQL pairs.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// TOML generator spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Use the retrieval-sized defaults.
        #[arg(long)]
        retrieval: bool,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build extraction and retrieval datasets and their splits.
    BuildDatasets {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    RunExtract(RunArgs),
    RunRetrieve(RunArgs),
    /// Render stored results as text and CSV.
    Report {
        #[arg(long, default_value = "results")]
        results: PathBuf,
        /// Append the reference-table comparison.
        #[arg(long)]
        fixtures: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write the exact prompts a run would send, as JSON lines.
    DumpPrompts {
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_selection)]
    selection: Option<SelectionStrategy>,
    #[arg(long, value_parser = parse_method)]
    serialization: Option<SerializationMethod>,
    #[arg(long)]
    guided: bool,
    #[arg(long, value_parser = parse_demo)]
    demo: Option<DemoStrategy>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    keep_ratio: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    /// bm25 or dense.
    #[arg(long, value_parser = parse_first_stage)]
    first_stage: Option<FirstStageKind>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    /// echo-gold, needle, echo, fixed:TEXT or first:N.
    #[arg(long)]
    mock: Option<String>,
    /// Response cache directory (defaults to CACHE_DIR).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    results: PathBuf,
    /// TREC run file for retrieval.
    #[arg(long)]
    run_file: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "extraction" => Ok(Task::Extraction),
        "retrieval" => Ok(Task::Retrieval),
        _ => Err(format!("unknown task {s}")),
    }
}

fn parse_selection(s: &str) -> Result<SelectionStrategy, String> {
    SelectionStrategy::parse(s).ok_or_else(|| format!("unknown selection {s}"))
}

fn parse_method(s: &str) -> Result<SerializationMethod, String> {
    SerializationMethod::parse(s).ok_or_else(|| format!("unknown serialization {s}"))
}

fn parse_first_stage(s: &str) -> Result<FirstStageKind, String> {
    FirstStageKind::parse(s).ok_or_else(|| format!("unknown first stage {s}"))
}

fn parse_demo(s: &str) -> Result<DemoStrategy, String> {
    DemoStrategy::parse(s).ok_or_else(|| format!("unknown demonstration strategy {s}"))
}

/// Errors that map to exit code 1.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Marker for exit code 2.
#[derive(Debug)]
struct Exhausted(usize);

impl std::fmt::Display for Exhausted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} items failed after exhausting retries", self.0)
    }
}

impl std::error::Error for Exhausted {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

impl RunArgs {
    fn config(&self, task: Task) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                let cfg =
                    ExperimentConfig::from_toml(&text).map_err(|e| config_err(e.to_string()))?;
                if cfg.task != task {
                    return Err(config_err(format!(
                        "config is for {}, command runs {task}",
                        cfg.task
                    )));
                }
                cfg
            }
            None => ExperimentConfig::new(
                task,
                self.selection.unwrap_or(SelectionStrategy::All),
                self.serialization.unwrap_or(SerializationMethod::Txt),
            ),
        };
        if let Some(v) = self.selection {
            cfg.selection = v;
        }
        if let Some(v) = self.serialization {
            cfg.serialization = v;
        }
        cfg.guided |= self.guided;
        if let Some(v) = self.demo {
            cfg.demo = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.keep_ratio {
            cfg.keep_ratio = v;
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = self.first_stage {
            cfg.first_stage = v;
        }
        if let Some(v) = &self.model {
            cfg.model = v.clone();
        }
        if let Some(v) = self.concurrency {
            cfg.concurrency = v;
        }
        if self.limit.is_some() {
            cfg.test_limit = self.limit;
        }
        if self.corpus.is_some() {
            cfg.corpus = self.corpus.clone();
        }
        if self.dataset.is_some() {
            cfg.dataset = self.dataset.clone();
        }
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| config_err(format!("--{what} is required")))
}

/// Whatever is needed to run one task: corpus, splits, demonstration
/// index and models.
struct Workspace {
    repo: Repository,
    cfg: ExperimentConfig,
    llm: Box<dyn ChatClient>,
    embedder: Box<dyn Embedder>,
}

fn chat_client(
    args: &RunArgs,
    cfg: &ExperimentConfig,
    rule: Option<MockRule>,
) -> Result<Box<dyn ChatClient>> {
    let env = EnvConfig::from_env();
    let cache_dir = args
        .cache
        .clone()
        .or_else(|| env.cache_dir.clone().map(PathBuf::from));
    let cache = match cache_dir {
        Some(d) => Some(Arc::new(
            ResponseCache::dir(d).map_err(|e| config_err(e.to_string()))?,
        )),
        None => None,
    };
    let width = cfg.concurrency.max(1);
    Ok(match rule {
        Some(rule) => {
            let c = LlmClient::new(MockBackend::new(rule), cfg.model.clone()).with_limit(width);
            Box::new(match cache {
                Some(cache) => c.with_cache(cache),
                None => c,
            })
        }
        None => {
            let backend = env.chat_backend().map_err(|e| config_err(e.to_string()))?;
            let model = env.llm_model.clone().unwrap_or_else(|| cfg.model.clone());
            let c = LlmClient::new(backend, model).with_limit(width);
            Box::new(match cache {
                Some(cache) => c.with_cache(cache),
                None => c,
            })
        }
    })
}

fn mock_rule(spec: &str, ext: &[ExtractionItem], ret: &[RetrievalItem]) -> Result<MockRule> {
    Ok(match spec {
        "echo-gold" => MockRule::KeyedReply(gold_answers(ext)),
        "needle" => MockRule::ContainsNeedle(NeedleSource::PerQuery(gold_needles(ret))),
        "echo" => MockRule::echo(),
        s if s.starts_with("fixed:") => MockRule::FixedReply(s["fixed:".len()..].to_string()),
        s if s.starts_with("first:") => MockRule::FirstNSentences(
            s["first:".len()..]
                .parse()
                .map_err(|_| config_err(format!("bad mock {s}")))?,
        ),
        s => return Err(config_err(format!("unknown mock {s}"))),
    })
}

fn embedder() -> Result<Box<dyn Embedder>> {
    Ok(
        match EnvConfig::from_env()
            .embedder()
            .map_err(|e| config_err(e.to_string()))?
        {
            Some(e) => Box::new(e),
            None => Box::new(HashingEmbedder::default()),
        },
    )
}

fn load_split<T: ehrbench::datasets::JsonLine>(
    dir: &Path,
    sub: &str,
    seed: u64,
) -> Result<SplitDataset<T>> {
    read_split(&dir.join(sub), seed).map_err(|e| config_err(e.to_string()))
}

fn workspace(
    args: &RunArgs,
    task: Task,
) -> Result<(
    Workspace,
    SplitDataset<ExtractionItem>,
    SplitDataset<RetrievalItem>,
)> {
    let cfg = args.config(task)?;
    let repo =
        load_tables(require(&cfg.corpus, "corpus")?).map_err(|e| config_err(e.to_string()))?;
    let dataset = require(&cfg.dataset, "dataset")?.to_path_buf();
    let (ext, ret) = match task {
        Task::Extraction => (load_split(&dataset, "extraction", cfg.seed)?, empty_split()),
        Task::Retrieval => (empty_split(), load_split(&dataset, "retrieval", cfg.seed)?),
    };
    let rule = match &args.mock {
        Some(m) => Some(mock_rule(m, &ext.test, &ret.test)?),
        None => None,
    };
    let llm = chat_client(args, &cfg, rule)?;
    Ok((
        Workspace {
            repo,
            cfg,
            llm,
            embedder: embedder()?,
        },
        ext,
        ret,
    ))
}

fn empty_split<T>() -> SplitDataset<T> {
    SplitDataset {
        train: vec![],
        dev: vec![],
        test: vec![],
        seed: 0,
    }
}

fn finish(result: RunResult, results: &Path) -> Result<()> {
    let path = save_result(results, &result)?;
    println!("{}", result.config.label());
    println!("{}", ScoreHeader);
    println!("{}", result.scores);
    if let Some(f) = result.first_stage {
        println!("first stage: {f}");
    }
    println!(
        "items {} | failures {} | cache hit rate {:.2} | {} ms | {}",
        result.outputs.len(),
        result.failures,
        result.cache_hit_rate,
        result.wall_ms,
        path.display()
    );
    if result.exhausted > 0 {
        return Err(Exhausted(result.exhausted).into());
    }
    Ok(())
}

struct ScoreHeader;

impl std::fmt::Display for ScoreHeader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&ehrbench::metrics::ScoreRow::HEADERS.join(" "))
    }
}

fn run_extract(args: &RunArgs) -> Result<()> {
    let (ws, ext, _) = workspace(args, Task::Extraction)?;
    let demos = DemoIndex::build(
        &ExampleDB::from_extraction(&ext.train),
        Some(&ws.repo),
        ws.embedder.as_ref(),
    )?;
    let setup = ExtractionSetup {
        repo: &ws.repo,
        test: &ext.test,
        demos: &demos,
    };
    let models = Models {
        llm: ws.llm.as_ref(),
        embedder: ws.embedder.as_ref(),
    };
    finish(
        run_extraction(&ws.cfg, &setup, models).map_err(run_err)?,
        &args.results,
    )
}

fn run_retrieve(args: &RunArgs) -> Result<()> {
    let (ws, _, ret) = workspace(args, Task::Retrieval)?;
    let demos = DemoIndex::build(
        &ExampleDB::from_retrieval(&ret.train),
        Some(&ws.repo),
        ws.embedder.as_ref(),
    )?;
    let first = FirstStage::build_for(
        ws.cfg.first_stage,
        &ws.repo,
        ws.embedder.as_ref(),
        Parallelism::available(),
    )
    .map_err(run_err)?;
    let setup = RetrievalSetup {
        repo: &ws.repo,
        test: &ret.test,
        demos: &demos,
        first_stage: &first,
    };
    let models = Models {
        llm: ws.llm.as_ref(),
        embedder: ws.embedder.as_ref(),
    };
    let result = run_retrieval(&ws.cfg, &setup, models).map_err(run_err)?;
    let run_file = args
        .run_file
        .clone()
        .unwrap_or_else(|| args.results.join(format!("{}.run", result.config.hash())));
    if let Some(parent) = run_file.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_run(&run_file, &result.run_file())?;
    let lines = validate_run(&std::fs::read_to_string(&run_file)?)
        .map_err(|e| anyhow!("invalid run file: {e}"))?;
    println!("run file {} ({lines} lines)", run_file.display());
    finish(result, &args.results)
}

fn run_err(e: RunError) -> anyhow::Error {
    match e {
        RunError::Config(m) => config_err(m),
        e if e.is_exhaustion() => Exhausted(1).into(),
        e => e.into(),
    }
}

fn dump_prompts(task: Task, out: &Path, args: &RunArgs) -> Result<()> {
    let (ws, ext, ret) = workspace(args, task)?;
    let models = Models {
        llm: ws.llm.as_ref(),
        embedder: ws.embedder.as_ref(),
    };
    let limit = ws.cfg.test_limit.unwrap_or(usize::MAX);
    let mut prompts = Vec::new();
    match task {
        Task::Extraction => {
            let demos = DemoIndex::build(
                &ExampleDB::from_extraction(&ext.train),
                Some(&ws.repo),
                ws.embedder.as_ref(),
            )?;
            let setup = ExtractionSetup {
                repo: &ws.repo,
                test: &ext.test,
                demos: &demos,
            };
            for item in ext.test.iter().take(limit) {
                prompts.push((
                    item.id.clone(),
                    extraction_prompt(&ws.cfg, item, &setup, models).map_err(run_err)?,
                ));
            }
        }
        Task::Retrieval => {
            let demos = DemoIndex::build(
                &ExampleDB::from_retrieval(&ret.train),
                Some(&ws.repo),
                ws.embedder.as_ref(),
            )?;
            let first = FirstStage::build_for(
                ws.cfg.first_stage,
                &ws.repo,
                ws.embedder.as_ref(),
                Parallelism::available(),
            )
            .map_err(run_err)?;
            let setup = RetrievalSetup {
                repo: &ws.repo,
                test: &ret.test,
                demos: &demos,
                first_stage: &first,
            };
            for item in ret.test.iter().take(limit) {
                prompts.push((
                    item.id.clone(),
                    first_retrieval_prompt(&ws.cfg, item, &setup, models).map_err(run_err)?,
                ));
            }
        }
    }
    write_prompt_dump(out, prompts.iter().map(|(id, p)| (id.as_str(), p)))?;
    println!("{} prompts written to {}", prompts.len(), out.display());
    Ok(())
}

fn gen_data(
    out: &Path,
    spec: Option<&Path>,
    retrieval: bool,
    patients: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut s = match spec {
        Some(p) => SynthSpec::from_toml(&std::fs::read_to_string(p)?)
            .map_err(|e| config_err(e.to_string()))?,
        None if retrieval => SynthSpec::retrieval_default(),
        None => SynthSpec::default(),
    };
    if let Some(n) = patients {
        s.n_patients = n;
    }
    if let Some(v) = seed {
        s.seed = v;
    }
    let corpus = generate_synthetic(&s).map_err(|e| config_err(e.to_string()))?;
    write_tables(&corpus.tables, out)?;
    write_pairs(&out.join("pairs.jsonl"), &corpus.pairs)?;
    println!(
        "{} patients, {} pairs written to {}",
        corpus.repository.len(),
        corpus.pairs.len(),
        out.display()
    );
    Ok(())
}

fn build_datasets(corpus: &Path, out: &Path, seed: u64) -> Result<()> {
    let repo = load_tables(corpus).map_err(|e| config_err(e.to_string()))?;
    let pairs = read_pairs(&corpus.join("pairs.jsonl")).map_err(|e| config_err(e.to_string()))?;
    let ext = build_extraction(&repo, &pairs);
    let ret = build_retrieval(&repo, &pairs);
    println!("{}", DatasetStats::HEADER);
    if !ext.items.is_empty() {
        let split = split_dataset(&ext.items, Ratios::extraction_default(), seed)?;
        write_split(&out.join("extraction"), &split)?;
        println!("{}", DatasetStats::new("extraction", &repo, &split, None));
    }
    if !ret.items.is_empty() {
        let split = split_dataset(&ret.items, Ratios::retrieval_default(), seed)?;
        write_split(&out.join("retrieval"), &split)?;
        println!(
            "{}",
            DatasetStats::new(
                "retrieval",
                &repo,
                &split,
                Some(SMALL_TEST.min(split.test.len()))
            )
        );
    }
    let dropped = ext.dropped.len() + ret.dropped.len();
    if dropped > 0 {
        println!("{dropped} pairs dropped");
    }
    Ok(())
}

fn show_report(results: &Path, fixtures: bool, csv: Option<&Path>) -> Result<()> {
    let runs = load_results(results)?;
    let tables = fixtures.then(ReferenceTables::builtin);
    let rep = report(&runs, tables.as_ref());
    print!("{}", rep.text);
    if let Some(path) = csv {
        std::fs::write(path, rep.csv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.cmd {
        Cmd::GenData {
            out,
            spec,
            retrieval,
            patients,
            seed,
        } => gen_data(out, spec.as_deref(), *retrieval, *patients, *seed),
        Cmd::BuildDatasets { corpus, out, seed } => build_datasets(corpus, out, *seed),
        Cmd::RunExtract(a) => run_extract(a),
        Cmd::RunRetrieve(a) => run_retrieve(a),
        Cmd::Report {
            results,
            fixtures,
            csv,
        } => show_report(results, *fixtures, csv.as_deref()),
        Cmd::DumpPrompts { task, out, run } => dump_prompts(*task, out, run),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Exhausted>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
