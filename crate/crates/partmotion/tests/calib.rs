//! Throwaway calibration harness. Not part of the suite; deleted before
//! the acceptance tests are frozen.

use std::time::Instant;

use nalgebra::Vector3;
use partmotion::annotation::{
    fill_unknown_gaps, HierarchicalAnnotation, PartId, TimedLabel,
};
use partmotion::diffusion::{
    fit_normalizer, generate_motion, prepare_training_items, train, NoiseSchedule, TrainConfig,
    DEFAULT_DIFFUSION_STEPS,
};
use partmotion::motion::{forward_kinematics, MotionSequence, Skeleton};
use partmotion::nn::denoiser::{Denoiser, DenoiserConfig};
use partmotion::seeds;
use partmotion::synth::{
    build_dataset_splits, default_library, default_templates, sparsify_labels, synthesize_sample,
    Sample,
};
use partmotion::text::{encoder_from_name, fit_label_pca};
use std::collections::BTreeSet;

fn make_samples(n: usize, sparsity: f64, seed: u64) -> (Skeleton, Vec<Sample>) {
    let lib = default_library();
    let templates = default_templates();
    let skel = Skeleton::toy();
    let idx: Vec<u64> = (0..n as u64).collect();
    let samples = partmotion::exec::par_map(&idx, |&i| {
        let id = format!("s{i:05}");
        let mut rng = seeds::rng_at(seed, "synth-sample", i);
        let (motion, ann) =
            synthesize_sample(&lib, &templates, &skel, &id, 100, 140, 20.0, &mut rng);
        let ann = sparsify_labels(ann, sparsity, &mut seeds::rng_at(seed, "sparsify", i));
        Sample {
            id,
            motion,
            annotation: ann,
        }
    });
    (skel, samples)
}

fn elbow_z_delta(motion: &MotionSequence, skel: &Skeleton) -> f64 {
    let elbow = Skeleton::toy_joint("left_elbow").unwrap();
    let t = motion.num_frames();
    let q = t / 4;
    let mean_z = |range: std::ops::Range<usize>| -> f64 {
        let len = range.len() as f64;
        range
            .map(|f| {
                forward_kinematics(
                    skel,
                    Vector3::from(motion.root_pos[f]),
                    &motion.root_rot[f],
                    &motion.joint_rot[f],
                )[elbow]
                    .z
            })
            .sum::<f64>()
            / len
    };
    mean_z(t - q..t) - mean_z(0..q)
}

fn raise_left_annotation(t: usize) -> HierarchicalAnnotation {
    let mut ann = HierarchicalAnnotation::all_unknown("probe", 20.0, t);
    ann.sequence = vec![TimedLabel::text("a person raises the left arm", 0, t)];
    ann.actions = vec![TimedLabel::text("raises the left arm", 0, t)];
    *ann.parts.get_mut(PartId::LeftArm) =
        vec![TimedLabel::text("raises the left arm", t / 4, t - t / 20)];
    fill_unknown_gaps(ann).unwrap()
}

#[test]
fn a_ground_truth_elbow_delta() {
    let lib = default_library();
    let templates = default_templates();
    let raise_only: Vec<_> = templates
        .iter()
        .filter(|t| t.action_name == "raises the left arm")
        .cloned()
        .collect();
    let skel = Skeleton::toy();
    let mut deltas = Vec::new();
    let mut i = 0u64;
    while deltas.len() < 20 {
        let mut rng = seeds::rng_at(7, "gt-probe", i);
        let (motion, ann) =
            synthesize_sample(&lib, &raise_only, &skel, "p", 100, 140, 20.0, &mut rng);
        i += 1;
        if ann.actions.len() != 1 {
            continue;
        }
        let d = elbow_z_delta(&motion, &skel);
        let seg = &ann.parts.get(PartId::LeftArm)[..];
        println!(
            "  T={} arm segs {:?} delta {:+.3}",
            motion.num_frames(),
            seg.iter()
                .map(|s| (s.label.as_text().is_some(), s.start, s.end))
                .collect::<Vec<_>>(),
            d
        );
        deltas.push(d);
    }
    let min = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    println!("GT raise-left elbow delta: mean {mean:.3} min {min:.3}");
}

#[test]
fn b_train_step_timing() {
    let (skel, samples) = make_samples(400, 0.2, 3);
    let encoder = encoder_from_name("toy-hash:32").unwrap();
    let mut corpus = BTreeSet::new();
    for s in &samples {
        for seg in s.annotation.actions.iter() {
            if let Some(t) = seg.label.as_text() {
                corpus.insert(t.to_string());
            }
        }
        for (_, segs) in s.annotation.parts.iter() {
            for seg in segs {
                if let Some(t) = seg.label.as_text() {
                    corpus.insert(t.to_string());
                }
            }
        }
    }
    let corpus: Vec<String> = corpus.into_iter().collect();
    println!("label corpus: {}", corpus.len());
    let (projector, _) = fit_label_pca(&corpus, encoder.as_ref(), 8).unwrap();
    let normalizer = fit_normalizer(&samples, &skel).unwrap();
    let items =
        prepare_training_items(&samples, &skel, &normalizer, encoder.as_ref(), &projector)
            .unwrap();
    let mut cfg = DenoiserConfig::new(items[0].features.ncols(), 8, encoder.dim());
    cfg.model_dim = 64;
    cfg.num_heads = 4;
    cfg.num_layers = 2;
    cfg.ff_mult = 2;
    cfg.fusion_hidden = 64;
    cfg.max_frames = 144;
    let model = Denoiser::new(cfg);
    let mut params = model.init_params(&mut seeds::rng(3, "init"));
    println!("params: {}", params.len());
    let schedule = NoiseSchedule::cosine(DEFAULT_DIFFUSION_STEPS);
    let tcfg = TrainConfig {
        steps: 20,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let summary = train(&model, &mut params, &schedule, &items, &tcfg, None).unwrap();
    let dt = start.elapsed().as_secs_f64();
    println!(
        "20 steps in {dt:.1}s ({:.2} s/step), loss {:.3} -> {:.3}",
        dt / 20.0,
        summary.losses[0],
        summary.losses[19]
    );
    // Generation timing at this scale.
    let ann = raise_left_annotation(120);
    let start = Instant::now();
    let g = generate_motion(
        &model,
        &params,
        &schedule,
        &ann,
        &skel,
        &normalizer,
        encoder.as_ref(),
        &projector,
        &mut seeds::rng(3, "gen-probe"),
    )
    .unwrap();
    println!(
        "one generation ({} frames) in {:.2}s",
        g.motion.num_frames(),
        start.elapsed().as_secs_f64()
    );
}

#[test]
#[ignore = "long calibration run"]
fn c_full_candidate_training() {
    let seed = 11u64;
    let (skel, samples) = make_samples(2000, 0.2, seed);
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let splits = build_dataset_splits(&ids, seed);
    let train_ids: BTreeSet<&str> = splits.train.iter().map(|s| s.as_str()).collect();
    let train_samples: Vec<Sample> = samples
        .iter()
        .filter(|s| train_ids.contains(s.id.as_str()))
        .cloned()
        .collect();
    println!("train split: {}", train_samples.len());

    let encoder = encoder_from_name("toy-hash:32").unwrap();
    let mut corpus = BTreeSet::new();
    for s in &train_samples {
        for seg in s.annotation.actions.iter() {
            if let Some(t) = seg.label.as_text() {
                corpus.insert(t.to_string());
            }
        }
        for (_, segs) in s.annotation.parts.iter() {
            for seg in segs {
                if let Some(t) = seg.label.as_text() {
                    corpus.insert(t.to_string());
                }
            }
        }
    }
    let corpus: Vec<String> = corpus.into_iter().collect();
    let (projector, _) = fit_label_pca(&corpus, encoder.as_ref(), 8).unwrap();
    let normalizer = fit_normalizer(&train_samples, &skel).unwrap();
    let items = prepare_training_items(
        &train_samples,
        &skel,
        &normalizer,
        encoder.as_ref(),
        &projector,
    )
    .unwrap();

    let mut cfg = DenoiserConfig::new(items[0].features.ncols(), 8, encoder.dim());
    cfg.model_dim = 64;
    cfg.num_heads = 4;
    cfg.num_layers = 2;
    cfg.ff_mult = 2;
    cfg.fusion_hidden = 64;
    cfg.max_frames = 144;
    let model = Denoiser::new(cfg);
    let mut params = model.init_params(&mut seeds::rng(seed, "gen-init"));
    let schedule = NoiseSchedule::cosine(DEFAULT_DIFFUSION_STEPS);
    let steps = 2000;
    let tcfg = TrainConfig {
        steps,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let summary = train(&model, &mut params, &schedule, &items, &tcfg, None).unwrap();
    println!("trained {steps} steps in {:.0}s", start.elapsed().as_secs_f64());
    let smooth = |c: usize| -> f64 {
        let lo = c.saturating_sub(50);
        summary.losses[lo..c].iter().sum::<f64>() / (c - lo) as f64
    };
    for c in [100, 250, 500, 1000, 1500, steps] {
        println!("smoothed loss @{c}: {:.4}", smooth(c));
    }
    println!(
        "halving check: {:.4} vs 0.5 x {:.4} = {:.4}",
        smooth(steps),
        smooth(100),
        0.5 * smooth(100)
    );

    // FK check over 10 seeds.
    let ann = raise_left_annotation(120);
    let start = Instant::now();
    let mut passes = 0;
    for i in 0..10u64 {
        let g = generate_motion(
            &model,
            &params,
            &schedule,
            &ann,
            &skel,
            &normalizer,
            encoder.as_ref(),
            &projector,
            &mut seeds::rng_at(seed, "c5-gen", i),
        )
        .unwrap();
        let d = elbow_z_delta(&g.motion, &skel);
        println!("seed {i}: elbow delta {d:+.3}");
        if d > 0.1 {
            passes += 1;
        }
    }
    println!(
        "FK passes: {passes}/10 ({:.0}s generation)",
        start.elapsed().as_secs_f64()
    );
}
