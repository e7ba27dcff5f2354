use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ehrbench::ingest::{generate_synthetic, SynthSpec};
use ehrbench::llmio::{LlmClient, Message, MockBackend, MockRule};
use ehrbench::metrics::rouge1_f1;
use ehrbench::par::{self, Parallelism};
use ehrbench::select::{rerank_pointwise, Bm25Index, Bm25Params, VectorIndex};
use ehrbench::serialize::serialize_txt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn modes() -> [(&'static str, Parallelism); 2] {
    [
        ("sequential", Parallelism::Sequential),
        ("parallel", Parallelism::available()),
    ]
}

fn vector_search(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 64;
    let mut index = VectorIndex::new(dim);
    for i in 0..4000 {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        index.add(format!("p{i}"), &v).unwrap();
    }
    let probes: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut g = c.benchmark_group("vector_search");
    for (name, p) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| index.search_batch(&probes, 10, p).unwrap())
        });
    }
    g.finish();
}

fn bm25_search(c: &mut Criterion) {
    let spec = SynthSpec {
        n_patients: 1000,
        single_questions: 10,
        multiple_questions: 80,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic(&spec).unwrap();
    let docs: Vec<(String, String)> = corpus
        .repository
        .patients()
        .map(|r| (r.patient_id.to_string(), serialize_txt(r).text))
        .collect();
    let index = Bm25Index::build(
        docs.iter().map(|(i, t)| (i.as_str(), t.as_str())),
        Bm25Params::default(),
    );
    let queries: Vec<String> = corpus.pairs.iter().map(|p| p.question.clone()).collect();
    let mut g = c.benchmark_group("bm25_search");
    for (name, p) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| index.search_batch(&queries, 100, p))
        });
    }
    g.finish();
}

fn rouge(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let text = |rng: &mut ChaCha8Rng| {
        (0..200)
            .map(|_| format!("w{}", rng.gen_range(0..300)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let pairs: Vec<(String, String)> = (0..2000)
        .map(|_| (text(&mut rng), text(&mut rng)))
        .collect();
    let mut g = c.benchmark_group("rouge1");
    for (name, p) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::map(p, &pairs, |(a, r)| rouge1_f1(a, r)))
        });
    }
    g.finish();
}

fn mock_rerank(c: &mut Criterion) {
    let spec = SynthSpec {
        n_patients: 200,
        single_questions: 10,
        multiple_questions: 10,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic(&spec).unwrap();
    let texts: std::collections::HashMap<String, String> = corpus
        .repository
        .patients()
        .map(|r| (r.patient_id.to_string(), serialize_txt(r).text))
        .collect();
    let candidates: Vec<String> = texts.keys().cloned().collect();
    let llm = LlmClient::new(MockBackend::new(MockRule::needle("Female")), "mock").with_limit(64);
    let prompt = |id: &str| {
        Ok(vec![Message::user(format!(
            "Patient: {}\nQuestion: which?",
            texts[id]
        ))])
    };
    let mut g = c.benchmark_group("mock_rerank");
    for (name, p) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rerank_pointwise(&candidates, prompt, &llm, p))
        });
    }
    g.finish();
}

criterion_group!(benches, vector_search, bm25_search, rouge, mock_rerank);
criterion_main!(benches);
