use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mtrnn::data::{build_vocab, make_synthetic_family, SyntheticConfig};
use mtrnn::gradcheck::check_gradients;
use mtrnn::train::{evaluate_with, TaskData};
use mtrnn::{Architecture, Exec, Model, ModelConfig, TaskSpec};

fn fixture(arch: Architecture, hidden: usize, emb: usize) -> (Model, Vec<TaskData>) {
    let family = make_synthetic_family(&SyntheticConfig {
        train_size: 50,
        dev_size: 50,
        test_size: 200,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let corpora: Vec<_> = family.corpora.iter().collect();
    let vocab = build_vocab(&corpora, 1).unwrap();
    let tasks: Vec<TaskData> = family.corpora.iter().map(|c| TaskData::from_corpus(c, &vocab)).collect();
    let specs = family
        .corpora
        .iter()
        .map(|c| TaskSpec::new(c.name.clone(), c.class_count))
        .collect();
    let config = ModelConfig::new(arch, specs, vocab.len()).with_sizes(hidden, emb, emb);
    (Model::new(config).unwrap(), tasks)
}

fn evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate");
    for arch in [Architecture::Uniform, Architecture::Shared] {
        let (model, tasks) = fixture(arch, 50, 64);
        for exec in [Exec::Sequential, Exec::Parallel] {
            group.bench_with_input(BenchmarkId::new(arch.name(), format!("{exec:?}")), &exec, |b, &exec| {
                b.iter(|| evaluate_with(&model, 0, &tasks[0].test, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn finite_differences(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradcheck");
    group.sample_size(10);
    let (model, tasks) = fixture(Architecture::Coupled, 8, 6);
    let example = tasks[0].train[0].clone();
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::new("coupled", format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| {
                check_gradients(
                    &model.store,
                    |tape, store| model.loss_in(tape, store, 0, &example.ids, example.label),
                    1e-5,
                    1e-6,
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, evaluation, finite_differences);
criterion_main!(benches);
