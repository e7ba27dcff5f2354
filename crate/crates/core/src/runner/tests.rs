use std::collections::HashMap;
use std::sync::Arc;

use super::*;
use crate::datasets::{build_extraction, build_retrieval, split_dataset, ExampleDB, Ratios};
use crate::ingest::{generate_synthetic, SynthSpec};
use crate::llmio::{HashingEmbedder, LlmClient, MockBackend, MockRule, ResponseCache};
use crate::select::{format_run, validate_run, DemoStrategy};
use crate::serialize::{SelectionStrategy, SerializationMethod};

fn row(v: [f64; 4]) -> ScoreRow {
    ScoreRow::from_values(v.map(Some))
}

#[test]
fn delta_matches_reference_cells() {
    let d = delta_improvement(
        &row([56.18, 22.84, 9.30, 32.19]),
        &row([51.60, 12.69, 8.72, 28.83]),
    )
    .unwrap();
    assert_eq!(format_delta(d), "+26.79");
    let d = delta_improvement(
        &row([56.21, 23.26, 8.31, 29.01]),
        &row([53.61, 14.09, 8.27, 25.07]),
    )
    .unwrap();
    assert_eq!(format_delta(d), "+21.53");
    let r = row([1.0, 2.0, 3.0, 4.0]);
    assert_eq!(format_delta(delta_improvement(&r, &r).unwrap()), "0.00");
    assert!(matches!(
        delta_improvement(&r, &row([0.0, 1.0, 1.0, 1.0])),
        Err(RunError::ZeroBaseline("B_score"))
    ));
    assert!(delta_improvement(&r, &ScoreRow::extraction(1.0, 1.0)).is_err());
}

#[test]
fn single_metric_improvement() {
    assert_eq!(
        format_delta(relative_improvement(62.44, 58.93).unwrap()),
        "+5.96"
    );
    assert!((relative_improvement(62.44, 58.93).unwrap() - 5.956).abs() < 0.01);
    assert!((relative_improvement(60.69, 54.77).unwrap() - 10.81).abs() < 0.01);
    assert_eq!(relative_improvement(3.0, 3.0).unwrap(), 0.0);
}

#[test]
fn fixture_flags_follow_reference_marks() {
    let t = ReferenceTables::builtin();
    assert_eq!(t.features.len(), 24);
    assert_eq!(t.icl.len(), 40);
    assert_eq!(t.feature_pairs().len(), 12);
    for model in ["llama", "meditron"] {
        let rows: Vec<&FeatureRow> = t.features.iter().filter(|r| r.model == model).collect();
        let flags = rank_flags(&rows.iter().map(|r| r.scores()).collect::<Vec<_>>());
        let pick = |f: Flag, m: usize| -> Vec<String> {
            rows.iter()
                .zip(&flags)
                .filter(|(_, fl)| fl[m] == f)
                .map(|(r, _)| format!("{}/{}", r.selection, r.method))
                .collect()
        };
        if model == "llama" {
            assert_eq!(pick(Flag::Best, 0), ["all_avg/sgen"]);
            assert_eq!(pick(Flag::Second, 0), ["all/sgen"]);
            assert_eq!(pick(Flag::Second, 1), ["all_avg/txt"]);
            assert_eq!(pick(Flag::Second, 2), ["all/xsep"]);
        } else {
            assert_eq!(pick(Flag::Best, 2), ["all_avg/txt"]);
            assert_eq!(pick(Flag::Second, 3), ["rnd_avg/txt"]);
        }
    }
    assert_eq!(
        t.icl_row("llama", "all_avg", "sgen", "query", 3)
            .unwrap()
            .b_score,
        62.44
    );
    assert_eq!(
        t.icl_row("llama", "all", "sgen", "patient", 1).unwrap().map,
        None
    );
}

#[test]
fn config_validation() {
    let cfg = ExperimentConfig::from_toml("task = \"extraction\"\nselection = \"all_avg\"\nserialization = \"xsep\"\nk = 2\ndemo = \"patient\"").unwrap();
    assert_eq!(cfg.k, 2);
    assert_eq!(cfg.keep_ratio, 0.6);
    let bad = "task = \"retrieval\"\nselection = \"all\"\nserialization = \"txt\"\nk = 1\ndemo = \"patient\"";
    assert!(matches!(
        ExperimentConfig::from_toml(bad),
        Err(RunError::Config(_))
    ));
    assert!(ExperimentConfig::from_toml(
        "task = \"extraction\"\nselection = \"all\"\nserialization = \"txt\"\nk = 4"
    )
    .is_err());
    assert!(ExperimentConfig::from_toml(
        "task = \"extraction\"\nselection = \"all\"\nserialization = \"txt\"\nbogus = 1"
    )
    .is_err());
    let a = ExperimentConfig::new(
        Task::Extraction,
        SelectionStrategy::All,
        SerializationMethod::Txt,
    );
    let mut b = a.clone();
    b.demo = DemoStrategy::Random;
    b.concurrency = 16;
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), a.clone().guided(true).hash());
}

#[test]
fn grid_is_valid_and_complete() {
    let e = grid(Task::Extraction);
    let r = grid(Task::Retrieval);
    assert_eq!(e.len(), 4 * 3 * 2 * 10);
    assert_eq!(r.len(), 4 * 3 * 2 * 7);
    assert!(e.iter().chain(&r).all(|c| c.validate().is_ok()));
    let hashes: HashSet<String> = e.iter().chain(&r).map(|c| c.hash()).collect();
    assert_eq!(hashes.len(), e.len() + r.len());
}

struct Fixture {
    repo: Repository,
    ext_test: Vec<ExtractionItem>,
    ext_demos: DemoIndex,
    ret_test: Vec<RetrievalItem>,
    ret_demos: DemoIndex,
    first: FirstStage,
}

fn fixture() -> Fixture {
    let spec = SynthSpec {
        n_patients: 40,
        single_questions: 200,
        multiple_questions: 60,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic(&spec).unwrap();
    let repo = corpus.repository;
    let ext = build_extraction(&repo, &corpus.pairs).items;
    let ret = build_retrieval(&repo, &corpus.pairs).items;
    let es = split_dataset(&ext, Ratios::extraction_default(), 1).unwrap();
    let rs = split_dataset(&ret, Ratios::retrieval_default(), 1).unwrap();
    let emb = HashingEmbedder::default();
    let ext_demos =
        DemoIndex::build(&ExampleDB::from_extraction(&es.train), Some(&repo), &emb).unwrap();
    let ret_demos =
        DemoIndex::build(&ExampleDB::from_retrieval(&rs.train), Some(&repo), &emb).unwrap();
    let first = FirstStage::build(&repo, Parallelism::Sequential);
    Fixture {
        ext_test: es.test,
        ret_test: rs.test,
        repo,
        ext_demos,
        ret_demos,
        first,
    }
}

#[test]
fn extraction_ceiling_floor_and_demo_plumbing() {
    let f = fixture();
    let setup = ExtractionSetup {
        repo: &f.repo,
        test: &f.ext_test,
        demos: &f.ext_demos,
    };
    let emb = HashingEmbedder::default();
    let gold: HashMap<String, String> = f
        .ext_test
        .iter()
        .map(|i| (i.query.text.clone(), i.gold.clone()))
        .collect();
    let echo = LlmClient::new(MockBackend::new(MockRule::KeyedReply(gold)), "m")
        .with_cache(Arc::new(ResponseCache::memory()));
    let models = Models {
        llm: &echo,
        embedder: &emb,
    };
    let cfg = ExperimentConfig::new(
        Task::Extraction,
        SelectionStrategy::All,
        SerializationMethod::Txt,
    );
    let res = run_extraction(&cfg, &setup, models).unwrap();
    assert_eq!(res.outputs.len(), f.ext_test.len());
    assert_eq!(res.scores.r1, Some(100.0));
    assert_eq!(res.scores.b_score, Some(100.0));
    let again = run_extraction(&cfg, &setup, models).unwrap();
    assert_eq!(again.stats.wire_calls, 0);
    assert_eq!(again.cache_hit_rate, 1.0);
    assert_eq!(again.scores, res.scores);

    let fixed = LlmClient::new(MockBackend::new(MockRule::FixedReply("zzqx".into())), "m");
    let models = Models {
        llm: &fixed,
        embedder: &emb,
    };
    assert_eq!(
        run_extraction(&cfg, &setup, models).unwrap().scores.r1,
        Some(0.0)
    );
    let k0 = run_extraction(&cfg, &setup, models).unwrap();
    let k2 = run_extraction(
        &cfg.clone().with_demos(DemoStrategy::Patient, 2),
        &setup,
        models,
    )
    .unwrap();
    assert_eq!(k0.scores, k2.scores);
}

#[test]
fn retrieval_always_no_is_first_stage() {
    let f = fixture();
    let setup = RetrievalSetup {
        repo: &f.repo,
        test: &f.ret_test,
        demos: &f.ret_demos,
        first_stage: &f.first,
    };
    let emb = HashingEmbedder::default();
    let no = LlmClient::new(MockBackend::new(MockRule::FixedReply("no".into())), "m");
    let mut cfg = ExperimentConfig::new(
        Task::Retrieval,
        SelectionStrategy::All,
        SerializationMethod::Txt,
    )
    .with_demos(DemoStrategy::Query, 2);
    cfg.depth = 25;
    let res = run_retrieval(
        &cfg,
        &setup,
        Models {
            llm: &no,
            embedder: &emb,
        },
    )
    .unwrap();
    assert_eq!(Some(res.scores), res.first_stage);
    assert_eq!(res.rerank_calls, f.ret_test.len() * 25);
    assert_eq!(res.stats.wire_calls as usize, res.rerank_calls);
    assert!(validate_run(&format_run(&res.run_file())).is_ok());
}

#[test]
fn dense_first_stage_ranks_every_patient() {
    let f = fixture();
    let emb = HashingEmbedder::default();
    let dense = FirstStage::dense(&f.repo, &emb, Parallelism::Sequential).unwrap();
    assert_eq!(dense.kind(), FirstStageKind::Dense);
    let hits = dense
        .candidates(&f.ret_test[0].query.text, f.repo.len(), &emb)
        .unwrap();
    let ids: std::collections::BTreeSet<_> = hits.iter().map(|h| h.0.clone()).collect();
    assert_eq!(ids.len(), f.repo.len());
    assert!(hits.windows(2).all(|w| w[0].1 >= w[1].1));

    let no = LlmClient::new(MockBackend::new(MockRule::FixedReply("no".into())), "m");
    let models = Models {
        llm: &no,
        embedder: &emb,
    };
    let mut cfg = ExperimentConfig::new(
        Task::Retrieval,
        SelectionStrategy::All,
        SerializationMethod::Txt,
    );
    cfg.depth = 10;
    cfg.first_stage = FirstStageKind::Dense;
    let setup = RetrievalSetup {
        repo: &f.repo,
        test: &f.ret_test,
        demos: &f.ret_demos,
        first_stage: &dense,
    };
    let res = run_retrieval(&cfg, &setup, models).unwrap();
    assert_eq!(Some(res.scores), res.first_stage);
    let bm25 = RetrievalSetup {
        first_stage: &f.first,
        ..setup
    };
    assert!(matches!(
        run_retrieval(&cfg, &bm25, models),
        Err(RunError::Config(_))
    ));
    assert_ne!(
        cfg.hash(),
        ExperimentConfig {
            first_stage: FirstStageKind::Bm25,
            ..cfg.clone()
        }
        .hash()
    );
}

#[test]
fn grid_reuses_stored_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = &grid(Task::Extraction)[..2];
    let mut calls = 0;
    let fake = |c: &ExperimentConfig| RunResult {
        config: c.clone(),
        outputs: vec![],
        scores: ScoreRow::extraction(1.0, 2.0),
        first_stage: None,
        wall_ms: 0,
        stats: ClientStats::default(),
        cache_hit_rate: 0.0,
        failures: 0,
        exhausted: 0,
        rerank_calls: 0,
    };
    let a = run_grid(cfgs, dir.path(), |c| {
        calls += 1;
        Ok(fake(c))
    })
    .unwrap();
    let b = run_grid(cfgs, dir.path(), |_| panic!("should be cached")).unwrap();
    assert_eq!(calls, 2);
    assert_eq!(a, b);
    let rep = report(&a, Some(&ReferenceTables::builtin()));
    assert!(rep.text.contains("+26.79"));
    assert_eq!(rep.csv.lines().count(), 3);
}
