//! Throughput benchmarks for the pieces that dominate training and
//! evaluation time: tape matmul forward/backward, a full teacher-forced
//! model step, parsing, execution, and anchor extraction.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semanchor::corpus::{Split, Vocab};
use semanchor::datagen::{generate_corpus, GenConfig};
use semanchor::logical_form::{parse_sql, serialize_sql};
use semanchor::model::{ForwardOpts, Model, ModelConfig, TaskSet};
use semanchor::tensor::Graph;
use semanchor::training::{task_loss, total_loss, PreparedExample};

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..16 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c.bench_function("matmul_16x64_64x64_forward_backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let an = g.leaf(a.clone(), vec![16, 64], true);
            let bn = g.leaf(b.clone(), vec![64, 64], true);
            let prod = g.matmul(an, bn).unwrap();
            let loss = g.sum(prod);
            g.backward(loss).unwrap();
            g.grad(an).unwrap()[0]
        })
    });
}

fn bench_model_step(c: &mut Criterion) {
    let corpus = generate_corpus(&GenConfig {
        seed: 3,
        train: 64,
        dev: 0,
        test: 0,
        schemas_per_kind: 2,
        ..GenConfig::default()
    })
    .unwrap();
    let vocab = Vocab::new(corpus.token_vocabulary());
    let cfg = ModelConfig {
        d_model: 48,
        heads: 4,
        encoder_layers: 2,
        decoder_layers: 3,
        ff_dim: 96,
        dropout: 0.1,
        ..ModelConfig::default()
    };
    let model =
        Model::init(cfg, vocab, TaskSet { sae: true, saa: true, hierarchy: true }, 7).unwrap();
    let ex = corpus.split(Split::Train).next().unwrap();
    let prep = PreparedExample::build(ex, &model.vocab).unwrap();
    c.bench_function("model_forward_backward_one_example", |bench| {
        bench.iter_batched(
            || ChaCha8Rng::seed_from_u64(11),
            |mut rng| {
                let mut g = Graph::with_capacity(512);
                let mut opts = ForwardOpts::train(&mut rng);
                let trace = model.forward(&mut g, &prep.x, &prep.y_in, &mut opts).unwrap();
                let main = task_loss(&mut g, &trace, &prep, None).unwrap();
                let sae = task_loss(
                    &mut g,
                    &trace,
                    &prep,
                    Some(semanchor::model::TaskKind::Sae),
                )
                .unwrap();
                let saa = task_loss(
                    &mut g,
                    &trace,
                    &prep,
                    Some(semanchor::model::TaskKind::Saa),
                )
                .unwrap();
                let loss =
                    total_loss(&mut g, main, Some((sae, 1.0)), Some((saa, 1.0))).unwrap();
                g.backward(loss).unwrap();
                g.scalar_value(loss)
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_parse_and_execute(c: &mut Criterion) {
    let corpus = generate_corpus(&GenConfig {
        seed: 5,
        train: 128,
        dev: 0,
        test: 0,
        schemas_per_kind: 2,
        ..GenConfig::default()
    })
    .unwrap();
    let sql_texts: Vec<String> = corpus
        .examples
        .iter()
        .filter(|e| !corpus.schemas[&e.schema_ref].is_kb())
        .map(|e| e.main.text())
        .collect();
    c.bench_function("parse_serialize_sql", |bench| {
        bench.iter(|| {
            let mut n = 0;
            for t in &sql_texts {
                let q = parse_sql(t).unwrap();
                n += serialize_sql(&q).tokens.len();
            }
            n
        })
    });

    c.bench_function("execute_gold_queries", |bench| {
        bench.iter(|| {
            let mut rows = 0;
            for ex in &corpus.examples {
                let rec = &corpus.schemas[&ex.schema_ref];
                match rec {
                    semanchor::corpus::SchemaRecord::Db { schema, rows: db, .. } => {
                        let q = parse_sql(&ex.main.text()).unwrap();
                        rows += semanchor::executor::execute_sql(&q, schema, db)
                            .unwrap()
                            .rows
                            .len();
                    }
                    semanchor::corpus::SchemaRecord::Kb { schema, .. } => {
                        let q =
                            semanchor::logical_form::parse_sparql(&ex.main.text()).unwrap();
                        rows += semanchor::executor::execute_sparql(&q, schema)
                            .unwrap()
                            .rows
                            .len();
                    }
                }
            }
            rows
        })
    });

    c.bench_function("extract_anchors_corpus", |bench| {
        bench.iter(|| {
            let mut n = 0;
            for ex in &corpus.examples {
                let vocab = corpus.schemas[&ex.schema_ref].vocabulary();
                n += semanchor::anchors::extract_anchors(&ex.main, &vocab).len();
            }
            n
        })
    });
}

criterion_group!(benches, bench_matmul, bench_model_step, bench_parse_and_execute);
criterion_main!(benches);
