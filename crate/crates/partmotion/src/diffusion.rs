//! Cosine-schedule DDPM training and ancestral sampling for the denoiser.
//!
//! The model predicts the clean feature matrix directly (sample prediction,
//! not noise prediction). A training step draws a uniform diffusion step per
//! sample, noises the normalized features with the closed-form forward
//! process, masks the condition grid, and minimizes per-sample mean squared
//! error averaged over the batch. Sampling walks sigma from S down to 1,
//! forming the posterior mean of the previous step from the prediction and
//! adding posterior-variance noise everywhere except the final step, where
//! the posterior collapses onto the prediction.
//!
//! Batch items run through [`exec::par_map`] with per-item RNGs split off
//! before the parallel region, and gradients are reduced in index order, so
//! a training step is bit-identical with and without the `parallel` feature.
//!
//! Trained state persists as a versioned JSON checkpoint (config, schedule,
//! parameters, normalizer, projector fingerprint, metadata); training
//! progress is logged as newline-delimited JSON records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotation::HierarchicalAnnotation;
use crate::conditioning::{
    apply_stochastic_masking, build_condition_grid, frame_inputs, ConditionError, ConditionGrid,
    MaskingConfig,
};
use crate::exec;
use crate::motion::{
    decode_features, encode_features, FeatureError, FeatureLayout, FeatureNormalizer,
    MotionSequence, PoseFeatureMatrix, Skeleton,
};
use crate::nn::denoiser::{Denoiser, DenoiserConfig, DenoiserInput};
use crate::nn::AdamW;
use crate::seeds;
use crate::synth::Sample;
use crate::text::{PcaProjector, TextEncoder};

/// Step count used by full-scale runs; toy runs may shrink it.
pub const DEFAULT_DIFFUSION_STEPS: usize = 100;

/// Cumulative signal fraction of the cosine schedule,
/// `cos²(((σ/S + s)/(1 + s))·π/2)` normalized to 1 at σ=0, with s = 0.008.
pub fn cosine_alpha_bar(sigma: usize, steps: usize) -> f64 {
    assert!(sigma <= steps, "step {sigma} outside schedule 0..={steps}");
    let s = 0.008;
    let f = |x: f64| {
        let a = ((x + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
        a.cos().powi(2)
    };
    f(sigma as f64 / steps as f64) / f(0.0)
}

/// The forward-process schedule: ᾱ_σ for σ ∈ {0..S} and everything derived
/// from it. ᾱ_0 = 1 exactly, strictly decreasing, ᾱ_S > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn cosine(steps: usize) -> NoiseSchedule {
        assert!(steps >= 1, "schedule needs at least one step");
        let mut alpha_bar: Vec<f64> = (0..=steps).map(|s| cosine_alpha_bar(s, steps)).collect();
        alpha_bar[0] = 1.0;
        NoiseSchedule { alpha_bar }
    }

    /// Builds a schedule from explicit ᾱ values (index 0 is σ=0). Panics
    /// unless ᾱ_0 = 1 and the sequence is strictly decreasing and positive.
    pub fn from_alpha_bars(alpha_bar: Vec<f64>) -> NoiseSchedule {
        assert!(alpha_bar.len() >= 2, "schedule needs at least one step");
        assert_eq!(alpha_bar[0], 1.0, "alpha_bar must start at exactly 1");
        for w in alpha_bar.windows(2) {
            assert!(
                w[1] > 0.0 && w[1] < w[0],
                "alpha_bar must be strictly decreasing and positive"
            );
        }
        NoiseSchedule { alpha_bar }
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, sigma: usize) -> f64 {
        self.alpha_bar[sigma]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Per-step noise fraction β_σ = 1 − ᾱ_σ/ᾱ_{σ−1}, σ ∈ {1..S}.
    pub fn beta(&self, sigma: usize) -> f64 {
        assert!(sigma >= 1);
        1.0 - self.alpha_bar[sigma] / self.alpha_bar[sigma - 1]
    }

    /// Var[x_{σ−1} | x_σ, x_0] = (1 − ᾱ_{σ−1})/(1 − ᾱ_σ)·β_σ. Zero at σ=1.
    pub fn posterior_variance(&self, sigma: usize) -> f64 {
        (1.0 - self.alpha_bar[sigma - 1]) / (1.0 - self.alpha_bar[sigma]) * self.beta(sigma)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("SHAPE_MISMATCH: x0 is {x0_rows}x{x0_cols} but noise is {eps_rows}x{eps_cols}")]
    ShapeMismatch {
        x0_rows: usize,
        x0_cols: usize,
        eps_rows: usize,
        eps_cols: usize,
    },
    #[error("NONFINITE_LOSS: sample {sample_id} produced a non-finite loss")]
    NonFiniteLoss { sample_id: String },
    #[error("NONFINITE_SAMPLE: non-finite value at diffusion step {sigma}")]
    NonFiniteSample { sigma: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error("train log write failed: {0}")]
    Log(#[from] std::io::Error),
}

/// x_σ = √ᾱ_σ·x0 + √(1−ᾱ_σ)·ε. At σ=0 this is x0 exactly.
pub fn q_sample(
    schedule: &NoiseSchedule,
    sigma: usize,
    x0: &Array2<f64>,
    eps: &Array2<f64>,
) -> Result<Array2<f64>, DiffusionError> {
    if x0.dim() != eps.dim() {
        return Err(DiffusionError::ShapeMismatch {
            x0_rows: x0.nrows(),
            x0_cols: x0.ncols(),
            eps_rows: eps.nrows(),
            eps_cols: eps.ncols(),
        });
    }
    let ab = schedule.alpha_bar(sigma);
    Ok(x0 * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// Draws a T x d matrix of independent standard normals, row-major order.
fn standard_normal_matrix(t: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut m = Array2::zeros((t, d));
    for i in 0..t {
        for j in 0..d {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// One training sequence, fully prepared: normalized features plus the
/// unmasked condition grid and the raw sequence text embedding.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    /// T x d, in normalized feature space.
    pub features: Array2<f64>,
    pub grid: ConditionGrid,
    /// Raw encoder output for the sequence label; None when unknown.
    pub sequence_embedding: Option<Vec<f64>>,
}

/// Fits a feature normalizer over the pose features of every sample.
pub fn fit_normalizer(
    samples: &[Sample],
    skel: &Skeleton,
) -> Result<FeatureNormalizer, DiffusionError> {
    let mats = samples
        .iter()
        .map(|s| encode_features(&s.motion, skel))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureNormalizer::fit(&mats))
}

/// Encodes, normalizes, and grid-builds every sample. Panics if an
/// annotation is invalid or the projector does not match the encoder, both
/// caller bugs; see [`build_condition_grid`].
pub fn prepare_training_items(
    samples: &[Sample],
    skel: &Skeleton,
    normalizer: &FeatureNormalizer,
    encoder: &dyn TextEncoder,
    projector: &PcaProjector,
) -> Result<Vec<TrainItem>, DiffusionError> {
    exec::par_map(samples, |s| {
        let feat = encode_features(&s.motion, skel)?;
        let grid = build_condition_grid(&s.annotation, encoder, projector);
        let sequence_embedding = s.annotation.sequence[0]
            .label
            .as_text()
            .map(|text| encoder.encode(text));
        Ok(TrainItem {
            id: s.id.clone(),
            features: normalizer.apply(&feat.data),
            grid,
            sequence_embedding,
        })
    })
    .into_iter()
    .collect()
}

/// Loss and parameter gradients for one item. Draw order from `rng` is
/// fixed (σ, ε, masking, dropout); it is the determinism contract.
fn item_loss_and_grads(
    model: &Denoiser,
    params: &[f64],
    schedule: &NoiseSchedule,
    item: &TrainItem,
    masking: &MaskingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>), DiffusionError> {
    let t = item.features.nrows();
    let d = item.features.ncols();
    let sigma = rng.random_range(1..=schedule.steps());
    let eps = standard_normal_matrix(t, d, rng);
    let x_sigma = q_sample(schedule, sigma, &item.features, &eps)?;
    let (masked, _p) = apply_stochastic_masking(&item.grid, masking, rng);
    let sequence_embedding = if masked.sequence_known {
        item.sequence_embedding.as_deref()
    } else {
        None
    };
    let inputs = frame_inputs(&masked, &x_sigma)?;
    let input = DenoiserInput {
        frame_inputs: &inputs,
        sequence_embedding,
        sigma: sigma as f64,
    };
    let drop_masks = model.sample_dropout_masks(t, rng);
    let (out, cache) = model.forward_cached_masked(params, &input, drop_masks.as_ref());

    let diff = &out - &item.features;
    let n = (t * d) as f64;
    let loss = diff.iter().map(|x| x * x).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(DiffusionError::NonFiniteLoss {
            sample_id: item.id.clone(),
        });
    }
    let grad_out = diff.mapv(|x| 2.0 * x / n);
    let mut grads = vec![0.0; params.len()];
    model.backward(params, &input, &cache, drop_masks.as_ref(), &grad_out, &mut grads);
    Ok((loss, grads))
}

/// Batch objective: per-sample MSE between the prediction and the clean
/// features, averaged over the batch, with gradients written into `grads`.
/// Per-item seeds are split off `rng` up front and items run in parallel;
/// the reduction is in batch order, so the result is backend-independent.
pub fn training_loss(
    model: &Denoiser,
    params: &[f64],
    schedule: &NoiseSchedule,
    batch: &[&TrainItem],
    masking: &MaskingConfig,
    rng: &mut impl Rng,
    grads: &mut [f64],
) -> Result<f64, DiffusionError> {
    assert!(!batch.is_empty(), "empty batch");
    assert_eq!(grads.len(), params.len());
    let jobs: Vec<(&TrainItem, u64)> = batch.iter().map(|it| (*it, rng.random())).collect();
    let results = exec::par_map(&jobs, |(item, seed)| {
        let mut item_rng = ChaCha8Rng::seed_from_u64(*seed);
        item_loss_and_grads(model, params, schedule, item, masking, &mut item_rng)
    });

    grads.fill(0.0);
    let b = batch.len() as f64;
    let mut total = 0.0;
    for res in results {
        let (loss, g) = res?;
        total += loss;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            *acc += gi / b;
        }
    }
    Ok(total / b)
}

/// Ancestral sampling driven by an arbitrary clean-sample predictor.
/// `predict(x_σ, σ)` must return a T x d matrix. Noise draw order: the
/// initial x_S, then one matrix per step except the last.
pub fn ddpm_sample_with<F>(
    mut predict: F,
    schedule: &NoiseSchedule,
    t: usize,
    d: usize,
    rng: &mut impl Rng,
) -> Result<Array2<f64>, DiffusionError>
where
    F: FnMut(&Array2<f64>, usize) -> Array2<f64>,
{
    let mut x = standard_normal_matrix(t, d, rng);
    for sigma in (1..=schedule.steps()).rev() {
        let x0_hat = predict(&x, sigma);
        debug_assert_eq!(x0_hat.dim(), (t, d));
        let ab = schedule.alpha_bar(sigma);
        let ab_prev = schedule.alpha_bar(sigma - 1);
        let beta = schedule.beta(sigma);
        // Posterior mean of x_{σ−1} given (x_σ, x̂0). At σ=1 the x
        // coefficient vanishes and the mean is x̂0 itself.
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let cx = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let mut next = &x0_hat * c0 + &x * cx;
        if sigma > 1 {
            let noise = standard_normal_matrix(t, d, rng);
            next.scaled_add(schedule.posterior_variance(sigma).sqrt(), &noise);
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(DiffusionError::NonFiniteSample { sigma });
        }
        x = next;
    }
    Ok(x)
}

/// Samples a normalized T x d feature matrix conditioned on a grid. The
/// grid's frame count sets T; it must not exceed the model's `max_frames`.
pub fn ddpm_sample(
    model: &Denoiser,
    params: &[f64],
    schedule: &NoiseSchedule,
    grid: &ConditionGrid,
    sequence_embedding: Option<&[f64]>,
    rng: &mut impl Rng,
) -> Result<Array2<f64>, DiffusionError> {
    let t = grid.num_frames();
    assert!(
        t >= 1 && t <= model.cfg.max_frames,
        "sequence length {t} outside 1..={}",
        model.cfg.max_frames
    );
    ddpm_sample_with(
        |x, sigma| {
            let inputs = frame_inputs(grid, x).expect("x_sigma keeps the grid's frame count");
            model.forward(
                params,
                &DenoiserInput {
                    frame_inputs: &inputs,
                    sequence_embedding,
                    sigma: sigma as f64,
                },
            )
        },
        schedule,
        t,
        model.cfg.feature_dim,
        rng,
    )
}

/// A generated motion paired with the annotation that conditioned it.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub motion: MotionSequence,
    pub annotation: HierarchicalAnnotation,
}

/// Full generation pipeline: grid the annotation, sample normalized
/// features, denormalize, and decode to a motion at the origin with zero
/// initial yaw. The annotation must be valid and match the projector's
/// encoder; see [`build_condition_grid`].
pub fn generate_motion(
    model: &Denoiser,
    params: &[f64],
    schedule: &NoiseSchedule,
    annotation: &HierarchicalAnnotation,
    skel: &Skeleton,
    normalizer: &FeatureNormalizer,
    encoder: &dyn TextEncoder,
    projector: &PcaProjector,
    rng: &mut impl Rng,
) -> Result<GeneratedSample, DiffusionError> {
    let grid = build_condition_grid(annotation, encoder, projector);
    let sequence_embedding = annotation.sequence[0]
        .label
        .as_text()
        .map(|text| encoder.encode(text));
    let x = ddpm_sample(
        model,
        params,
        schedule,
        &grid,
        sequence_embedding.as_deref(),
        rng,
    )?;
    let feat = PoseFeatureMatrix {
        fps: annotation.fps,
        layout: FeatureLayout {
            num_joints: skel.num_joints(),
        },
        data: normalizer.invert(&x),
    };
    let motion = decode_features(&feat, skel, [0.0, 0.0], 0.0)?;
    Ok(GeneratedSample {
        motion,
        annotation: annotation.clone(),
    })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance carried inside a checkpoint. Everything here is independent
/// of RNG state and wall time, so checkpoints are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Encoder name as accepted by `text::encoder_from_name`.
    pub encoder: String,
    pub train_steps: u64,
    pub final_loss: f64,
    pub num_train_sequences: usize,
}

/// Versioned container for trained state: model config, schedule, flat
/// parameter vector, feature normalizer, and the fingerprint of the label
/// projector the model was trained against (the projector itself is stored
/// separately and verified on load).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: DenoiserConfig,
    pub alpha_bar: Vec<f64>,
    pub params: Vec<f64>,
    pub normalizer: FeatureNormalizer,
    pub projector_fingerprint: String,
    pub metadata: CheckpointMeta,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}, expected {CHECKPOINT_VERSION}")]
    UnsupportedVersion(u32),
}

impl Checkpoint {
    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule::from_alpha_bars(self.alpha_bar.clone())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(ckpt.version));
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Target condition-masking rate r for Beta(5r, 5(1−r)) dropout.
    pub mask_target_rate: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 32,
            lr: 2e-4,
            weight_decay: 0.01,
            mask_target_rate: 0.5,
            seed: 0,
            log_every: 50,
        }
    }
}

/// One line of the newline-delimited JSON training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug)]
pub struct TrainSummary {
    /// Loss at every step.
    pub losses: Vec<f64>,
    /// The entries that were logged (every `log_every` steps plus the last).
    pub entries: Vec<TrainLogEntry>,
}

/// Runs AdamW over uniformly resampled batches. Each step's randomness
/// comes from an independent stream keyed by (seed, step), so a run is
/// reproducible and restartable. `log` receives NDJSON entries; `wall_ms`
/// is the only field that varies between reruns.
pub fn train(
    model: &Denoiser,
    params: &mut [f64],
    schedule: &NoiseSchedule,
    items: &[TrainItem],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainSummary, DiffusionError> {
    assert!(!items.is_empty(), "no training items");
    assert!(cfg.log_every >= 1);
    let masking = MaskingConfig::new(cfg.mask_target_rate);
    let mut opt = AdamW::new(model.layout(), cfg.lr, cfg.weight_decay);
    let mut grads = vec![0.0; params.len()];
    let start = Instant::now();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut entries = Vec::new();
    for step in 0..cfg.steps {
        let mut rng = seeds::rng_at(cfg.seed, "train-step", step as u64);
        let batch: Vec<&TrainItem> = (0..cfg.batch_size)
            .map(|_| &items[rng.random_range(0..items.len())])
            .collect();
        let loss = training_loss(model, params, schedule, &batch, &masking, &mut rng, &mut grads)?;
        opt.step(params, &grads);
        losses.push(loss);
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            let entry = TrainLogEntry {
                step,
                loss,
                lr: cfg.lr,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&entry).expect("log entry serializes");
                writeln!(w, "{line}")?;
            }
            entries.push(entry);
        }
    }
    Ok(TrainSummary { losses, entries })
}
