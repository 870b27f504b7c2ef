//! Contrastive retrieval models used by the evaluation suite.
//!
//! One model per annotation level: seven part models, one action model, one
//! sequence model. Each pairs a motion branch (per-frame MLP, mean/std
//! pooling over time, projection head) with a text branch (MLP over the raw
//! label embedding); both emit unit-normalized embeddings in a shared space
//! and train jointly with a symmetric InfoNCE objective. Part models consume
//! full-body feature crops of the part's labeled segments, not per-part
//! feature subsets.
//!
//! Training normalizes crops with statistics fit on the training pairs; the
//! normalizer travels with the model so any motion can be embedded later.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{PartId, TimedLabel};
use crate::exec;
use crate::motion::{encode_features, FeatureError, FeatureNormalizer, Skeleton};
use crate::nn::layers::{gelu_backward, gelu_forward, Linear};
use crate::nn::{AdamW, LayoutBuilder, ParamLayout};
use crate::seeds;
use crate::synth::Sample;
use crate::text::TextEncoder;

/// Softmax temperature of the contrastive objective.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Minimum (motion crop, label) pairs required to train one model.
pub const MIN_TRAIN_PAIRS: usize = 200;

/// Variance floor inside the std pooling sqrt; keeps constant inputs
/// differentiable.
const POOL_EPS: f64 = 1e-8;

/// Norm floor for unit normalization.
const NORM_EPS: f64 = 1e-12;

/// Which annotation level a retrieval model embeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalLevel {
    Part(PartId),
    Action,
    Sequence,
}

impl RetrievalLevel {
    /// All nine levels, part-ordinal order first.
    pub const ALL: [RetrievalLevel; 9] = [
        RetrievalLevel::Part(PartId::Head),
        RetrievalLevel::Part(PartId::LeftArm),
        RetrievalLevel::Part(PartId::RightArm),
        RetrievalLevel::Part(PartId::Spine),
        RetrievalLevel::Part(PartId::LeftLeg),
        RetrievalLevel::Part(PartId::RightLeg),
        RetrievalLevel::Part(PartId::Trajectory),
        RetrievalLevel::Action,
        RetrievalLevel::Sequence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RetrievalLevel::Part(p) => p.name(),
            RetrievalLevel::Action => "action",
            RetrievalLevel::Sequence => "sequence",
        }
    }
}

impl std::fmt::Display for RetrievalLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("INSUFFICIENT_DATA: {level} has {found} labeled pairs, need at least {need}")]
    InsufficientData {
        level: String,
        found: usize,
        need: usize,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// One contrastive training pair: a raw (unnormalized) full-body feature
/// crop and the label of the segment it was cut from.
#[derive(Debug, Clone)]
pub struct RetrievalPair {
    pub sample_id: String,
    pub label: String,
    /// T' x d rows of the source sequence's feature matrix.
    pub features: Array2<f64>,
}

/// Cuts one (crop, label) pair per labeled segment at the given level.
/// UNKNOWN segments are skipped. Order follows samples, then segments.
pub fn extract_pairs(
    samples: &[Sample],
    skel: &Skeleton,
    level: RetrievalLevel,
) -> Result<Vec<RetrievalPair>, RetrievalError> {
    let encoded = exec::par_map(samples, |smp| encode_features(&smp.motion, skel));
    let mut pairs = Vec::new();
    for (smp, feat) in samples.iter().zip(encoded) {
        let feat = feat?.data;
        let segments: &[TimedLabel] = match level {
            RetrievalLevel::Part(p) => smp.annotation.parts.get(p),
            RetrievalLevel::Action => &smp.annotation.actions,
            RetrievalLevel::Sequence => &smp.annotation.sequence,
        };
        for seg in segments {
            let Some(text) = seg.label.as_text() else { continue };
            pairs.push(RetrievalPair {
                sample_id: smp.id.clone(),
                label: text.to_string(),
                features: feat.slice(s![seg.start..seg.end, ..]).to_owned(),
            });
        }
    }
    Ok(pairs)
}

/// Architecture of one retrieval model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub feature_dim: usize,
    pub text_dim: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub temperature: f64,
}

/// The two branches over a flat parameter buffer. Construction is pure
/// arithmetic over `cfg`, so nets are rebuilt on demand from stored configs.
struct RetrievalNet {
    cfg: RetrievalConfig,
    layout: ParamLayout,
    mf1: Linear,
    mf2: Linear,
    mh1: Linear,
    mh2: Linear,
    tf1: Linear,
    tf2: Linear,
}

struct MotionCache {
    x: Array2<f64>,
    pre1: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    mu: Vec<f64>,
    std: Vec<f64>,
    pooled: Array2<f64>,
    pre_head: Array2<f64>,
    g1: Array2<f64>,
    norm: f64,
    emb: Vec<f64>,
}

struct TextCache {
    t_in: Array2<f64>,
    pre1: Array2<f64>,
    h1: Array2<f64>,
    norm: f64,
    emb: Vec<f64>,
}

/// y = x / max(‖x‖, ε).
fn unit_normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
    (x.iter().map(|v| v / norm).collect(), norm)
}

/// dx = (g − y·(y·g)) / ‖x‖ for y = x/‖x‖.
fn unit_normalize_backward(emb: &[f64], norm: f64, grad: &[f64]) -> Vec<f64> {
    let dot: f64 = emb.iter().zip(grad).map(|(y, g)| y * g).sum();
    emb.iter()
        .zip(grad)
        .map(|(y, g)| (g - y * dot) / norm)
        .collect()
}

impl RetrievalNet {
    fn new(cfg: RetrievalConfig) -> RetrievalNet {
        let mut lb = LayoutBuilder::new();
        let mf1 = Linear::new(&mut lb, "motion.frame1", cfg.feature_dim, cfg.hidden);
        let mf2 = Linear::new(&mut lb, "motion.frame2", cfg.hidden, cfg.hidden);
        let mh1 = Linear::new(&mut lb, "motion.head1", 2 * cfg.hidden, cfg.hidden);
        let mh2 = Linear::new(&mut lb, "motion.head2", cfg.hidden, cfg.embed_dim);
        let tf1 = Linear::new(&mut lb, "text.proj1", cfg.text_dim, cfg.hidden);
        let tf2 = Linear::new(&mut lb, "text.proj2", cfg.hidden, cfg.embed_dim);
        RetrievalNet {
            cfg,
            layout: lb.finish(),
            mf1,
            mf2,
            mh1,
            mh2,
            tf1,
            tf2,
        }
    }

    /// Motion branch over a normalized T' x d crop: per-frame MLP, mean/std
    /// pooling over frames, projection head, unit normalization.
    fn embed_motion_cached(&self, p: &[f64], x: Array2<f64>) -> MotionCache {
        let h = self.cfg.hidden;
        let t = x.nrows();
        assert!(t >= 1, "empty crop");
        let pre1 = self.mf1.forward(p, &x);
        let h1 = gelu_forward(&pre1);
        let h2 = self.mf2.forward(p, &h1);

        let tf = t as f64;
        let mut mu = vec![0.0; h];
        for row in h2.rows() {
            for (m, v) in mu.iter_mut().zip(row) {
                *m += v / tf;
            }
        }
        let mut std = vec![0.0; h];
        for row in h2.rows() {
            for ((sv, v), m) in std.iter_mut().zip(row).zip(&mu) {
                *sv += (v - m) * (v - m) / tf;
            }
        }
        for sv in std.iter_mut() {
            *sv = (*sv + POOL_EPS).sqrt();
        }
        let mut pooled = Array2::zeros((1, 2 * h));
        for j in 0..h {
            pooled[(0, j)] = mu[j];
            pooled[(0, h + j)] = std[j];
        }

        let pre_head = self.mh1.forward(p, &pooled);
        let g1 = gelu_forward(&pre_head);
        let raw = self.mh2.forward(p, &g1);
        let (emb, norm) = unit_normalize(raw.row(0).as_slice().expect("contiguous row"));
        MotionCache {
            x,
            pre1,
            h1,
            h2,
            mu,
            std,
            pooled,
            pre_head,
            g1,
            norm,
            emb,
        }
    }

    fn motion_backward(&self, p: &[f64], c: &MotionCache, d_emb: &[f64], grad_p: &mut [f64]) {
        let h = self.cfg.hidden;
        let t = c.h2.nrows();
        let tf = t as f64;
        let d_raw = unit_normalize_backward(&c.emb, c.norm, d_emb);
        let d_raw = Array2::from_shape_vec((1, d_raw.len()), d_raw).expect("row vector");
        let d_g1 = self.mh2.backward(p, &c.g1, &d_raw, grad_p);
        let d_pre_head = gelu_backward(&c.pre_head, &d_g1);
        let d_pooled = self.mh1.backward(p, &c.pooled, &d_pre_head, grad_p);

        // Unpool: mean spreads uniformly; std routes through the centered
        // value (the mean's own dependence is already folded in).
        let mut d_h2 = Array2::zeros((t, h));
        for j in 0..h {
            let d_mu = d_pooled[(0, j)];
            let d_std = d_pooled[(0, h + j)];
            for i in 0..t {
                d_h2[(i, j)] = d_mu / tf + d_std * (c.h2[(i, j)] - c.mu[j]) / (tf * c.std[j]);
            }
        }
        let d_h1 = self.mf2.backward(p, &c.h1, &d_h2, grad_p);
        let d_pre1 = gelu_backward(&c.pre1, &d_h1);
        self.mf1.backward(p, &c.x, &d_pre1, grad_p);
    }

    /// Text branch over one raw label embedding.
    fn embed_text_cached(&self, p: &[f64], text_embedding: &[f64]) -> TextCache {
        assert_eq!(text_embedding.len(), self.cfg.text_dim);
        let t_in = Array2::from_shape_vec((1, text_embedding.len()), text_embedding.to_vec())
            .expect("row vector");
        let pre1 = self.tf1.forward(p, &t_in);
        let h1 = gelu_forward(&pre1);
        let raw = self.tf2.forward(p, &h1);
        let (emb, norm) = unit_normalize(raw.row(0).as_slice().expect("contiguous row"));
        TextCache {
            t_in,
            pre1,
            h1,
            norm,
            emb,
        }
    }

    fn text_backward(&self, p: &[f64], c: &TextCache, d_emb: &[f64], grad_p: &mut [f64]) {
        let d_raw = unit_normalize_backward(&c.emb, c.norm, d_emb);
        let d_raw = Array2::from_shape_vec((1, d_raw.len()), d_raw).expect("row vector");
        let d_h1 = self.tf2.backward(p, &c.h1, &d_raw, grad_p);
        let d_pre1 = gelu_backward(&c.pre1, &d_h1);
        self.tf1.backward(p, &c.t_in, &d_pre1, grad_p);
    }
}

/// Symmetric InfoNCE over B unit-embedding pairs (rows of `motion` and
/// `text`). Returns the loss and its gradients with respect to both
/// embedding matrices. Diagonal entries are the matched pairs.
pub fn info_nce(
    motion: &Array2<f64>,
    text: &Array2<f64>,
    temperature: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let b = motion.nrows();
    assert_eq!(text.nrows(), b);
    assert!(b >= 1 && temperature > 0.0);
    let logits = motion.dot(&text.t()) / temperature;

    // Row softmax (motion -> text) and column softmax (text -> motion),
    // both max-shifted.
    let mut row_sm = Array2::zeros((b, b));
    for i in 0..b {
        let m = logits.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..b {
            let e = (logits[(i, j)] - m).exp();
            row_sm[(i, j)] = e;
            z += e;
        }
        for j in 0..b {
            row_sm[(i, j)] /= z;
        }
    }
    let mut col_sm = Array2::zeros((b, b));
    for j in 0..b {
        let m = logits.column(j).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for i in 0..b {
            let e = (logits[(i, j)] - m).exp();
            col_sm[(i, j)] = e;
            z += e;
        }
        for i in 0..b {
            col_sm[(i, j)] /= z;
        }
    }

    let mut loss = 0.0;
    for i in 0..b {
        loss -= row_sm[(i, i)].ln() + col_sm[(i, i)].ln();
    }
    loss /= 2.0 * b as f64;

    let mut d_logits = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            let delta = if i == j { 1.0 } else { 0.0 };
            d_logits[(i, j)] =
                (row_sm[(i, j)] - delta + col_sm[(i, j)] - delta) / (2.0 * b as f64);
        }
    }
    let d_motion = d_logits.dot(text) / temperature;
    let d_text = d_logits.t().dot(motion) / temperature;
    (loss, d_motion, d_text)
}

/// A trained retrieval model: architecture, flat parameters, the feature
/// normalizer fit on its training crops, and the fingerprint of the text
/// encoder it expects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalModel {
    pub level: RetrievalLevel,
    pub cfg: RetrievalConfig,
    pub params: Vec<f64>,
    pub normalizer: FeatureNormalizer,
    pub encoder_fingerprint: String,
}

impl RetrievalModel {
    fn net(&self) -> RetrievalNet {
        RetrievalNet::new(self.cfg.clone())
    }

    /// Embeds a raw full-body feature crop to a unit vector.
    pub fn embed_motion(&self, crop: &Array2<f64>) -> Vec<f64> {
        let x = self.normalizer.apply(crop);
        self.net().embed_motion_cached(&self.params, x).emb
    }

    /// Embeds a raw text-encoder output to a unit vector.
    pub fn embed_text_embedding(&self, text_embedding: &[f64]) -> Vec<f64> {
        self.net()
            .embed_text_cached(&self.params, text_embedding)
            .emb
    }

    /// Encodes and embeds a label. Panics if the encoder is not the one the
    /// model was trained with; that is a caller bug.
    pub fn embed_label(&self, label: &str, encoder: &dyn TextEncoder) -> Vec<f64> {
        assert_eq!(
            encoder.fingerprint(),
            self.encoder_fingerprint,
            "retrieval model was trained with a different text encoder"
        );
        self.embed_text_embedding(&encoder.encode(label))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for RetrievalTrainConfig {
    fn default() -> Self {
        RetrievalTrainConfig {
            steps: 400,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.01,
            hidden: 64,
            embed_dim: 64,
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
        }
    }
}

/// Trains one level's model with symmetric InfoNCE over uniformly resampled
/// batches. Returns the model and the per-step loss curve. Reproducible
/// from `cfg.seed`; batch items run in parallel with an in-order gradient
/// reduction, so results are backend-independent.
pub fn train_retrieval_model(
    pairs: &[RetrievalPair],
    level: RetrievalLevel,
    encoder: &dyn TextEncoder,
    cfg: &RetrievalTrainConfig,
) -> Result<(RetrievalModel, Vec<f64>), RetrievalError> {
    if pairs.len() < MIN_TRAIN_PAIRS {
        return Err(RetrievalError::InsufficientData {
            level: level.name().to_string(),
            found: pairs.len(),
            need: MIN_TRAIN_PAIRS,
        });
    }
    let crops: Vec<&Array2<f64>> = pairs.iter().map(|p| &p.features).collect();
    let normalizer = FeatureNormalizer::fit_rows(&crops);
    let net = RetrievalNet::new(RetrievalConfig {
        feature_dim: pairs[0].features.ncols(),
        text_dim: encoder.dim(),
        hidden: cfg.hidden,
        embed_dim: cfg.embed_dim,
        temperature: cfg.temperature,
    });
    let mut params = net.layout.init(&mut seeds::rng(cfg.seed, "retrieval-init"));
    let mut opt = AdamW::new(&net.layout, cfg.lr, cfg.weight_decay);

    let mut label_embeddings: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        label_embeddings
            .entry(p.label.as_str())
            .or_insert_with(|| encoder.encode(&p.label));
    }

    let e = cfg.embed_dim;
    let mut grads = vec![0.0; params.len()];
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = seeds::rng_at(cfg.seed, "retrieval-step", step as u64);
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..pairs.len()))
            .collect();

        let caches: Vec<(MotionCache, TextCache)> = exec::par_map(&idx, |&i| {
            let x = normalizer.apply(&pairs[i].features);
            let m = net.embed_motion_cached(&params, x);
            let t = net.embed_text_cached(&params, &label_embeddings[pairs[i].label.as_str()]);
            (m, t)
        });

        let b = idx.len();
        let mut motion = Array2::zeros((b, e));
        let mut text = Array2::zeros((b, e));
        for (row, (mc, tc)) in caches.iter().enumerate() {
            for j in 0..e {
                motion[(row, j)] = mc.emb[j];
                text[(row, j)] = tc.emb[j];
            }
        }
        let (loss, d_motion, d_text) = info_nce(&motion, &text, cfg.temperature);
        losses.push(loss);

        let item_grads = exec::par_map_range(b, |row| {
            let mut g = vec![0.0; params.len()];
            let (mc, tc) = &caches[row];
            net.motion_backward(&params, mc, d_motion.row(row).as_slice().unwrap(), &mut g);
            net.text_backward(&params, tc, d_text.row(row).as_slice().unwrap(), &mut g);
            g
        });
        grads.fill(0.0);
        for g in item_grads {
            for (acc, gi) in grads.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        opt.step(&mut params, &grads);
    }

    Ok((
        RetrievalModel {
            level,
            cfg: net.cfg,
            params,
            normalizer,
            encoder_fingerprint: encoder.fingerprint(),
        },
        losses,
    ))
}

pub const MODEL_SET_VERSION: u32 = 1;

/// The nine trained models as one versioned artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalModelSet {
    pub version: u32,
    pub models: Vec<RetrievalModel>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelSetError {
    #[error("model set io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model set parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported model set version {0}, expected {MODEL_SET_VERSION}")]
    UnsupportedVersion(u32),
}

impl RetrievalModelSet {
    pub fn new(models: Vec<RetrievalModel>) -> RetrievalModelSet {
        RetrievalModelSet {
            version: MODEL_SET_VERSION,
            models,
        }
    }

    pub fn get(&self, level: RetrievalLevel) -> Option<&RetrievalModel> {
        self.models.iter().find(|m| m.level == level)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelSetError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RetrievalModelSet, ModelSetError> {
        let set: RetrievalModelSet = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if set.version != MODEL_SET_VERSION {
            return Err(ModelSetError::UnsupportedVersion(set.version));
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use crate::synth::{default_library, default_templates, synthesize_sample};
    use crate::text::ToyHashEncoder;
    use rand_distr::StandardNormal;

    const CLASS_LABELS: [&str; 8] = [
        "raises the left arm",
        "waves",
        "steps",
        "nods",
        "turns around",
        "bends forward",
        "moves forward",
        "rests",
    ];

    fn identity_normalizer(d: usize) -> FeatureNormalizer {
        FeatureNormalizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    fn small_model(seed: u64) -> RetrievalModel {
        let cfg = RetrievalConfig {
            feature_dim: 5,
            text_dim: 16,
            hidden: 6,
            embed_dim: 4,
            temperature: 0.25,
        };
        let net = RetrievalNet::new(cfg.clone());
        let params = net.layout.init(&mut seeds::rng(seed, "init"));
        RetrievalModel {
            level: RetrievalLevel::Action,
            cfg,
            params,
            normalizer: identity_normalizer(5),
            encoder_fingerprint: ToyHashEncoder::new(16).fingerprint(),
        }
    }

    fn random_crop(t: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeds::rng(seed, "crop");
        Array2::from_shape_fn((t, d), |_| rng.sample::<f64, _>(StandardNormal))
    }

    /// `per_class` crops per class with class-specific frequency and
    /// amplitude, plus light noise.
    fn toy_class_pairs(per_class: usize, t: usize, d: usize, seed: u64) -> Vec<RetrievalPair> {
        let mut rng = seeds::rng(seed, "toy-pairs");
        let mut pairs = Vec::new();
        for (c, label) in CLASS_LABELS.iter().enumerate() {
            for k in 0..per_class {
                let mut m = Array2::zeros((t, d));
                for i in 0..t {
                    for j in 0..d {
                        let phase = i as f64 * (0.2 + 0.13 * c as f64) + j as f64;
                        m[(i, j)] = phase.sin() * (1.0 + 0.35 * c as f64)
                            + rng.sample::<f64, _>(StandardNormal) * 0.05;
                    }
                }
                pairs.push(RetrievalPair {
                    sample_id: format!("{c}-{k}"),
                    label: label.to_string(),
                    features: m,
                });
            }
        }
        pairs
    }

    /// Fraction of holdout crops whose nearest class text is their own.
    fn class_accuracy(
        model: &RetrievalModel,
        encoder: &ToyHashEncoder,
        holdout: &[RetrievalPair],
    ) -> f64 {
        let class_embs: Vec<Vec<f64>> = CLASS_LABELS
            .iter()
            .map(|l| model.embed_label(l, encoder))
            .collect();
        let mut correct = 0;
        for pair in holdout {
            let m = model.embed_motion(&pair.features);
            let best = class_embs
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| {
                    let da: f64 = a.iter().zip(&m).map(|(x, y)| x * y).sum();
                    let db: f64 = b.iter().zip(&m).map(|(x, y)| x * y).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(i, _)| CLASS_LABELS[i])
                .unwrap();
            if best == pair.label {
                correct += 1;
            }
        }
        correct as f64 / holdout.len() as f64
    }

    #[test]
    fn motion_and_text_embeddings_are_unit_norm() {
        let model = small_model(1);
        let enc = ToyHashEncoder::new(16);
        for seed in 0..5 {
            let m = model.embed_motion(&random_crop(7, 5, seed));
            let norm: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let t = model.embed_label("waves the left arm", &enc);
        let norm: f64 = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pooling_distinguishes_same_mean_from_different_variance() {
        let model = small_model(2);
        let flat = Array2::from_elem((8, 5), 0.5);
        let mut wiggly = Array2::zeros((8, 5));
        for i in 0..8 {
            for j in 0..5 {
                wiggly[(i, j)] = if i % 2 == 0 { 0.0 } else { 1.0 };
            }
        }
        let a = model.embed_motion(&flat);
        let b = model.embed_motion(&wiggly);
        let dist: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 1e-6, "std pooling collapsed: {dist}");
    }

    #[test]
    fn info_nce_matches_identity_oracle_and_is_symmetric() {
        // Two orthonormal pairs at temperature 1: each softmax row is
        // [e, 1]/(e+1), so the loss is ln(1 + e^-1).
        let eye: Array2<f64> = Array2::eye(2);
        let (loss, _, _) = info_nce(&eye, &eye, 1.0);
        assert!((loss - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);

        let mut rng = seeds::rng(3, "sym");
        let m = Array2::from_shape_fn((4, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let t = Array2::from_shape_fn((4, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let (ab, _, _) = info_nce(&m, &t, 0.5);
        let (ba, _, _) = info_nce(&t, &m, 0.5);
        assert!((ab - ba).abs() < 1e-12);

        // Swapping rows of the text side breaks the matched diagonal.
        let mut swapped = eye.clone();
        swapped.swap((0, 0), (1, 0));
        swapped.swap((0, 1), (1, 1));
        let (mismatched, _, _) = info_nce(&eye, &swapped, 1.0);
        assert!(mismatched > loss);
    }

    #[test]
    fn contrastive_gradients_pass_finite_difference_check() {
        let cfg = RetrievalConfig {
            feature_dim: 5,
            text_dim: 7,
            hidden: 6,
            embed_dim: 4,
            temperature: 0.25,
        };
        let net = RetrievalNet::new(cfg.clone());
        let mut params = net.layout.init(&mut seeds::rng(4, "init"));
        let mut rng = seeds::rng(4, "data");
        let crops: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((5, 5), |_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let texts: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..7).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();

        let forward = |p: &[f64]| -> (f64, Vec<MotionCache>, Vec<TextCache>, Array2<f64>, Array2<f64>) {
            let mcs: Vec<MotionCache> = crops
                .iter()
                .map(|c| net.embed_motion_cached(p, c.clone()))
                .collect();
            let tcs: Vec<TextCache> = texts.iter().map(|t| net.embed_text_cached(p, t)).collect();
            let mut m = Array2::zeros((3, 4));
            let mut t = Array2::zeros((3, 4));
            for i in 0..3 {
                for j in 0..4 {
                    m[(i, j)] = mcs[i].emb[j];
                    t[(i, j)] = tcs[i].emb[j];
                }
            }
            let (loss, dm, dt) = info_nce(&m, &t, cfg.temperature);
            (loss, mcs, tcs, dm, dt)
        };

        let (_, mcs, tcs, dm, dt) = forward(&params);
        let mut analytic = vec![0.0; params.len()];
        for i in 0..3 {
            net.motion_backward(&params, &mcs[i], dm.row(i).as_slice().unwrap(), &mut analytic);
            net.text_backward(&params, &tcs[i], dt.row(i).as_slice().unwrap(), &mut analytic);
        }

        let indices: Vec<usize> =
            rand::seq::index::sample(&mut seeds::rng(4, "probe"), params.len(), 40).into_vec();
        let mut loss_only = |p: &[f64]| forward(p).0;
        let report = check_gradients(&mut loss_only, &mut params, &analytic, &indices, 1e-4);
        assert!(
            report.max_rel_err < 1e-3,
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_index
        );
    }

    #[test]
    fn separable_classes_reach_high_holdout_accuracy() {
        let enc = ToyHashEncoder::new(16);
        let all = toy_class_pairs(32, 12, 5, 5);
        let (train, holdout): (Vec<_>, Vec<_>) = {
            let mut tr = Vec::new();
            let mut ho = Vec::new();
            for (i, p) in all.into_iter().enumerate() {
                if i % 32 < 25 {
                    tr.push(p);
                } else {
                    ho.push(p);
                }
            }
            (tr, ho)
        };
        assert_eq!(train.len(), 200);
        let cfg = RetrievalTrainConfig {
            steps: 150,
            batch_size: 16,
            lr: 2e-3,
            hidden: 16,
            embed_dim: 16,
            seed: 6,
            ..RetrievalTrainConfig::default()
        };
        let (model, losses) =
            train_retrieval_model(&train, RetrievalLevel::Action, &enc, &cfg).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let acc = class_accuracy(&model, &enc, &holdout);
        assert!(acc >= 0.8, "holdout accuracy {acc}");
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let enc = ToyHashEncoder::new(16);
        let mut pairs = toy_class_pairs(32, 12, 5, 7);
        // Randomly reassign labels so motion class and label are independent.
        let mut rng = seeds::rng(7, "shuffle");
        for i in (1..pairs.len()).rev() {
            let j = rng.random_range(0..=i);
            let (a, b) = {
                let la = pairs[i].label.clone();
                let lb = pairs[j].label.clone();
                (la, lb)
            };
            pairs[i].label = b;
            pairs[j].label = a;
        }
        let (train, holdout): (Vec<_>, Vec<_>) = {
            let mut tr = Vec::new();
            let mut ho = Vec::new();
            for (i, p) in pairs.into_iter().enumerate() {
                if i % 32 < 25 {
                    tr.push(p);
                } else {
                    ho.push(p);
                }
            }
            (tr, ho)
        };
        let cfg = RetrievalTrainConfig {
            steps: 150,
            batch_size: 16,
            lr: 2e-3,
            hidden: 16,
            embed_dim: 16,
            seed: 8,
            ..RetrievalTrainConfig::default()
        };
        let (model, _) =
            train_retrieval_model(&train, RetrievalLevel::Action, &enc, &cfg).unwrap();
        let acc = class_accuracy(&model, &enc, &holdout);
        assert!(acc < 0.3, "label-shuffled accuracy {acc} should be near 1/8");
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let enc = ToyHashEncoder::new(16);
        let pairs = toy_class_pairs(25, 8, 5, 9);
        let cfg = RetrievalTrainConfig {
            steps: 30,
            batch_size: 8,
            hidden: 8,
            embed_dim: 8,
            seed: 10,
            ..RetrievalTrainConfig::default()
        };
        let (m1, l1) = train_retrieval_model(&pairs, RetrievalLevel::Sequence, &enc, &cfg).unwrap();
        let (m2, l2) = train_retrieval_model(&pairs, RetrievalLevel::Sequence, &enc, &cfg).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(l1, l2);
    }

    #[test]
    fn too_few_pairs_is_an_error() {
        let enc = ToyHashEncoder::new(16);
        let pairs = toy_class_pairs(10, 8, 5, 11);
        assert!(pairs.len() < MIN_TRAIN_PAIRS);
        let err = train_retrieval_model(
            &pairs,
            RetrievalLevel::Part(PartId::LeftArm),
            &enc,
            &RetrievalTrainConfig::default(),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("INSUFFICIENT_DATA") && msg.contains("left_arm"), "{msg}");
    }

    #[test]
    fn extract_pairs_crops_labeled_segments_per_level() {
        let skel = Skeleton::toy();
        let library = default_library();
        let templates = default_templates();
        let mut rng = seeds::rng(12, "synth");
        let samples: Vec<Sample> = (0..3)
            .map(|i| {
                let id = format!("s{i}");
                let (motion, annotation) =
                    synthesize_sample(&library, &templates, &skel, &id, 100, 120, 20.0, &mut rng);
                Sample {
                    id,
                    motion,
                    annotation,
                }
            })
            .collect();

        let seq_pairs = extract_pairs(&samples, &skel, RetrievalLevel::Sequence).unwrap();
        assert_eq!(seq_pairs.len(), 3);
        for (pair, smp) in seq_pairs.iter().zip(&samples) {
            assert_eq!(pair.features.nrows(), smp.motion.root_pos.len());
            assert!(!pair.label.is_empty());
        }

        for level in [
            RetrievalLevel::Action,
            RetrievalLevel::Part(PartId::LeftArm),
        ] {
            let pairs = extract_pairs(&samples, &skel, level).unwrap();
            let expected: usize = samples
                .iter()
                .map(|smp| {
                    let segs = match level {
                        RetrievalLevel::Part(p) => smp.annotation.parts.get(p),
                        RetrievalLevel::Action => &smp.annotation.actions,
                        RetrievalLevel::Sequence => &smp.annotation.sequence,
                    };
                    segs.iter().filter(|s| s.label.as_text().is_some()).count()
                })
                .sum();
            assert_eq!(pairs.len(), expected);
            for p in &pairs {
                assert!(p.features.nrows() >= 1);
                assert_eq!(p.features.ncols(), 4 + 9 * skel.num_joints());
            }
        }
    }

    #[test]
    fn model_set_round_trips_and_rejects_unknown_versions() {
        let set = RetrievalModelSet::new(vec![small_model(13)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval-models.json");
        set.save(&path).unwrap();
        let loaded = RetrievalModelSet::load(&path).unwrap();
        assert_eq!(loaded.models.len(), 1);
        assert_eq!(loaded.models[0].params, set.models[0].params);
        assert!(loaded.get(RetrievalLevel::Action).is_some());
        assert!(loaded.get(RetrievalLevel::Sequence).is_none());

        let mut forged = set;
        forged.version = 9;
        let path2 = dir.path().join("forged.json");
        forged.save(&path2).unwrap();
        assert!(matches!(
            RetrievalModelSet::load(&path2).unwrap_err(),
            ModelSetError::UnsupportedVersion(9)
        ));
    }
}
