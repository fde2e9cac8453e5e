//! End-to-end gradient-step throughput. Per-sample gradients build on
//! independent tapes, so the batch dimension is the parallel axis; the
//! fixed reduction order keeps results identical either way.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glua_core::attention::AttentionVariant;
use glua_core::data::{synth_images, Sample};
use glua_core::model::{Model, ModelConfig, TaskKind};
use glua_core::train::batch_gradients;

fn fixture(batch: usize) -> (Model<f32>, Vec<Sample<f32>>) {
    let config = ModelConfig {
        task: TaskKind::Classifier {
            image_dim: 8,
            channels: 3,
            patch: 4,
            n_classes: 4,
        },
        d_model: 48,
        n_heads: 4,
        n_layers: 2,
        ffn_hidden: 128,
        variant: AttentionVariant::Glu,
        final_layer_norm: false,
        max_seq_len: 4,
    };
    let model = Model::init(&config, 99).unwrap();
    let data = synth_images(batch, 8, 4, 4, 3).unwrap();
    (model, data)
}

fn bench_batch_gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(20);
    for &batch in &[4usize, 16] {
        let (model, data) = fixture(batch);
        let refs: Vec<&Sample<f32>> = data.iter().collect();
        group.bench_with_input(BenchmarkId::new("pool", batch), &(), |bench, _| {
            bench.iter(|| batch_gradients(&model, std::hint::black_box(&refs)).unwrap());
        });
        group.bench_with_input(BenchmarkId::new("one_thread", batch), &(), |bench, _| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap();
            bench.iter(|| {
                pool.install(|| batch_gradients(&model, std::hint::black_box(&refs)).unwrap())
            });
        });
    }
    group.finish();
}

criterion_group!(benches, bench_batch_gradients);
criterion_main!(benches);
