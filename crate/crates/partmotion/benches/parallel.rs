//! Sequential-vs-parallel throughput on the batch-level hot paths.
//!
//! The `parallel` feature only swaps the batch driver, so compare builds:
//! `cargo bench --bench parallel` (rayon) against
//! `cargo bench --bench parallel --no-default-features` (sequential).
//! Results are bit-identical either way; only wall time moves.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use partmotion::annotation::validate_annotation;
use partmotion::conditioning::MaskingConfig;
use partmotion::diffusion::{fit_normalizer, prepare_training_items, training_loss, NoiseSchedule};
use partmotion::motion::encode_features;
use partmotion::motion::{FeatureLayout, Skeleton};
use partmotion::nn::denoiser::{Denoiser, DenoiserConfig};
use partmotion::seeds;
use partmotion::synth::{default_library, default_templates, synthesize_sample, Sample};
use partmotion::text::{fit_label_pca, TextEncoder, ToyHashEncoder};

fn corpus(n: usize) -> (Vec<Sample>, Skeleton) {
    let skel = Skeleton::toy();
    let library = default_library();
    let templates = default_templates();
    let samples: Vec<Sample> = (0..n)
        .map(|i| {
            let mut rng = seeds::rng_at(17, "bench-sample", i as u64);
            let (motion, annotation) = synthesize_sample(
                &library,
                &templates,
                &skel,
                &format!("b{i:04}"),
                100,
                140,
                20.0,
                &mut rng,
            );
            Sample {
                id: format!("b{i:04}"),
                motion,
                annotation,
            }
        })
        .collect();
    (samples, skel)
}

fn bench_batch_paths(c: &mut Criterion) {
    let (samples, skel) = corpus(64);
    let backend = partmotion::exec::backend();

    let mut group = c.benchmark_group("feature-encode");
    group.throughput(Throughput::Elements(samples.len() as u64));
    group.bench_with_input(BenchmarkId::new(backend, samples.len()), &samples, |b, samples| {
        b.iter(|| {
            partmotion::exec::par_map(samples, |s| encode_features(&s.motion, &skel).unwrap())
        })
    });
    group.finish();

    let mut group = c.benchmark_group("validate");
    let anns: Vec<_> = samples.iter().map(|s| s.annotation.clone()).collect();
    group.throughput(Throughput::Elements(anns.len() as u64));
    group.bench_with_input(BenchmarkId::new(backend, anns.len()), &anns, |b, anns| {
        b.iter(|| partmotion::exec::par_map(anns, |ann| validate_annotation(ann).len()))
    });
    group.finish();

    // One optimizer step of the denoiser at toy scale: the training hot loop.
    let encoder = ToyHashEncoder::new(16);
    let labels: Vec<String> = samples
        .iter()
        .flat_map(|s| s.annotation.actions.iter())
        .filter_map(|seg| seg.label.as_text().map(str::to_string))
        .collect();
    let (projector, _) = fit_label_pca(&labels, &encoder, 6).unwrap();
    let normalizer = fit_normalizer(&samples, &skel).unwrap();
    let items = prepare_training_items(&samples, &skel, &normalizer, &encoder, &projector).unwrap();
    let feature_dim = FeatureLayout {
        num_joints: skel.num_joints(),
    }
    .width();
    let mut cfg = DenoiserConfig::new(feature_dim, projector.dim_out(), encoder.dim());
    cfg.model_dim = 32;
    cfg.num_heads = 2;
    cfg.num_layers = 1;
    cfg.fusion_hidden = 32;
    cfg.max_frames = 160;
    let model = Denoiser::new(cfg);
    let params = model.init_params(&mut seeds::rng(23, "bench-init"));
    let schedule = NoiseSchedule::cosine(100);
    let masking = MaskingConfig::new(0.5);
    let mut grads = vec![0.0; params.len()];

    let mut group = c.benchmark_group("train-step");
    group.sample_size(10);
    let batch: Vec<&partmotion::diffusion::TrainItem> = items.iter().take(8).collect();
    group.throughput(Throughput::Elements(batch.len() as u64));
    group.bench_with_input(BenchmarkId::new(backend, batch.len()), &batch, |b, batch| {
        b.iter(|| {
            let mut rng = seeds::rng(29, "bench-step");
            grads.iter_mut().for_each(|g| *g = 0.0);
            training_loss(&model, &params, &schedule, batch, &masking, &mut rng, &mut grads)
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_batch_paths);
criterion_main!(benches);
