//! The conditional denoiser: fused per-frame tokens, a sequence-text token,
//! and a timestep token run through a pre-norm transformer; a linear head
//! over the frame tokens predicts the clean feature rows.
//!
//! Token layout is fixed: rows `0..T` are frames, row `T` the sequence
//! token, row `T+1` the timestep token — `T + 2` tokens total. Learned
//! positional embeddings use stable slots (frame `i` at slot `i`, the two
//! extra tokens at the top slots) so the same parameters serve any `T` up to
//! `max_frames`.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::layers::{gelu_backward, gelu_forward, AttentionCache, LayerNorm, LayerNormCache, Linear, MultiHeadAttention};
use super::{Init, LayoutBuilder, ParamLayout};
use crate::annotation::NUM_PARTS;
use crate::conditioning::sinusoidal_embedding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Motion feature width d.
    pub feature_dim: usize,
    /// Projected label width D.
    pub label_dim: usize,
    /// Raw text embedding width E (sequence token input).
    pub text_dim: usize,
    /// Token width of the transformer.
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    /// Feed-forward width = ff_mult * model_dim.
    pub ff_mult: usize,
    /// Hidden width of the fusion map from raw frame inputs to tokens.
    pub fusion_hidden: usize,
    pub max_frames: usize,
    pub sigma_embed_dim: usize,
    /// Residual-branch dropout rate during training (0 disables).
    pub dropout: f64,
}

impl DenoiserConfig {
    pub fn new(feature_dim: usize, label_dim: usize, text_dim: usize) -> Self {
        DenoiserConfig {
            feature_dim,
            label_dim,
            text_dim,
            model_dim: 256,
            num_heads: 4,
            num_layers: 4,
            ff_mult: 2,
            fusion_hidden: 256,
            max_frames: 256,
            sigma_embed_dim: 32,
            dropout: 0.0,
        }
    }

    /// Raw per-frame input width: K part blocks, one action block, features.
    pub fn input_width(&self) -> usize {
        (NUM_PARTS + 1) * self.label_dim + self.feature_dim
    }
}

/// Everything the denoiser consumes for one sequence.
pub struct DenoiserInput<'a> {
    /// T x input_width concatenation from `conditioning::frame_inputs`.
    pub frame_inputs: &'a Array2<f64>,
    /// E-dim sequence text embedding; `None` when unknown or dropped.
    pub sequence_embedding: Option<&'a [f64]>,
    /// Diffusion step, embedded sinusoidally.
    pub sigma: f64,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

struct BlockCache {
    ln1: LayerNormCache,
    normed1: Array2<f64>,
    attn: AttentionCache,
    ln2: LayerNormCache,
    normed2: Array2<f64>,
    pre_act: Array2<f64>,
    hidden: Array2<f64>,
}

impl Block {
    fn new(lb: &mut LayoutBuilder, name: &str, dim: usize, heads: usize, ff: usize) -> Self {
        Block {
            ln1: LayerNorm::new(lb, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(lb, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(lb, &format!("{name}.ln2"), dim),
            fc1: Linear::new(lb, &format!("{name}.fc1"), dim, ff),
            fc2: Linear::new(lb, &format!("{name}.fc2"), ff, dim),
        }
    }

    fn forward(
        &self,
        p: &[f64],
        x: Array2<f64>,
        masks: Option<&(Array2<f64>, Array2<f64>)>,
    ) -> (Array2<f64>, BlockCache) {
        let (normed1, ln1) = self.ln1.forward(p, &x);
        let (mut attn_out, attn) = self.attn.forward(p, &normed1);
        if let Some((m, _)) = masks {
            attn_out *= m;
        }
        let x_mid = &x + &attn_out;
        let (normed2, ln2) = self.ln2.forward(p, &x_mid);
        let pre_act = self.fc1.forward(p, &normed2);
        let hidden = gelu_forward(&pre_act);
        let mut mlp_out = self.fc2.forward(p, &hidden);
        if let Some((_, m)) = masks {
            mlp_out *= m;
        }
        let out = &x_mid + &mlp_out;
        (
            out,
            BlockCache {
                ln1,
                normed1,
                attn,
                ln2,
                normed2,
                pre_act,
                hidden,
            },
        )
    }

    fn backward(
        &self,
        p: &[f64],
        cache: &BlockCache,
        masks: Option<&(Array2<f64>, Array2<f64>)>,
        grad_out: &Array2<f64>,
        grad_p: &mut [f64],
    ) -> Array2<f64> {
        let d_mlp_out = match masks {
            Some((_, m)) => grad_out * m,
            None => grad_out.clone(),
        };
        let d_hidden = self.fc2.backward(p, &cache.hidden, &d_mlp_out, grad_p);
        let d_pre = gelu_backward(&cache.pre_act, &d_hidden);
        let d_normed2 = self.fc1.backward(p, &cache.normed2, &d_pre, grad_p);
        let mut d_mid = self.ln2.backward(p, &cache.ln2, &d_normed2, grad_p);
        d_mid += grad_out;
        let d_attn_out = match masks {
            Some((m, _)) => &d_mid * m,
            None => d_mid.clone(),
        };
        let d_normed1 = self
            .attn
            .backward(p, &cache.normed1, &cache.attn, &d_attn_out, grad_p);
        let mut d_x = self.ln1.backward(p, &cache.ln1, &d_normed1, grad_p);
        d_x += &d_mid;
        d_x
    }
}

/// The full model. Owns its parameter layout; parameters themselves live in
/// a caller-held flat buffer so training, checkpointing, and gradient
/// checking all see one `Vec<f64>`.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    layout: ParamLayout,
    fusion1: Linear,
    fusion2: Linear,
    seq_proj: Linear,
    time_proj: Linear,
    pos: std::ops::Range<usize>,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    head: Linear,
}

/// Pre-sampled dropout keep-masks (scaled by 1/keep-rate), one pair per
/// block: attention branch, then feed-forward branch.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    blocks: Vec<(Array2<f64>, Array2<f64>)>,
}

pub struct DenoiserCache {
    fusion_pre: Array2<f64>,
    fusion_hidden: Array2<f64>,
    seq_row: Array2<f64>,
    time_row: Array2<f64>,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
    final_out: Array2<f64>,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig) -> Self {
        assert!(cfg.model_dim % cfg.num_heads == 0);
        let mut lb = LayoutBuilder::new();
        let fusion1 = Linear::new(&mut lb, "fusion1", cfg.input_width(), cfg.fusion_hidden);
        let fusion2 = Linear::new(&mut lb, "fusion2", cfg.fusion_hidden, cfg.model_dim);
        let seq_proj = Linear::new(&mut lb, "seq_proj", cfg.text_dim, cfg.model_dim);
        let time_proj = Linear::new(&mut lb, "time_proj", cfg.sigma_embed_dim, cfg.model_dim);
        let pos = lb.alloc(
            "pos",
            (cfg.max_frames + 2) * cfg.model_dim,
            Init::Normal(0.02),
            false,
        );
        let blocks = (0..cfg.num_layers)
            .map(|i| Block::new(&mut lb, &format!("block{i}"), cfg.model_dim, cfg.num_heads, cfg.ff_mult * cfg.model_dim))
            .collect();
        let final_ln = LayerNorm::new(&mut lb, "final_ln", cfg.model_dim);
        let head = Linear::new_zero(&mut lb, "head", cfg.model_dim, cfg.feature_dim);
        Denoiser {
            cfg,
            layout: lb.finish(),
            fusion1,
            fusion2,
            seq_proj,
            time_proj,
            pos,
            blocks,
            final_ln,
            head,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    pub fn init_params(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        self.layout.init(rng)
    }

    fn pos_row<'a>(&self, p: &'a [f64], slot: usize) -> &'a [f64] {
        let d = self.cfg.model_dim;
        &p[self.pos.start + slot * d..self.pos.start + (slot + 1) * d]
    }

    /// The (T+2) x model_dim token matrix before any transformer block.
    pub fn embed_tokens(&self, p: &[f64], input: &DenoiserInput) -> Array2<f64> {
        self.embed_tokens_cached(p, input).0
    }

    fn embed_tokens_cached(
        &self,
        p: &[f64],
        input: &DenoiserInput,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let t = input.frame_inputs.nrows();
        assert!(t <= self.cfg.max_frames, "sequence longer than max_frames");
        assert_eq!(
            input.frame_inputs.ncols(),
            self.cfg.input_width(),
            "frame input width mismatch"
        );
        let fusion_pre = self.fusion1.forward(p, input.frame_inputs);
        let fusion_hidden = gelu_forward(&fusion_pre);
        let frames = self.fusion2.forward(p, &fusion_hidden);

        let mut seq_row = Array2::zeros((1, self.cfg.text_dim));
        if let Some(e) = input.sequence_embedding {
            assert_eq!(e.len(), self.cfg.text_dim, "sequence embedding width");
            for (j, v) in e.iter().enumerate() {
                seq_row[(0, j)] = *v;
            }
        }
        let seq_tok = self.seq_proj.forward(p, &seq_row);
        let time_row = Array2::from_shape_vec(
            (1, self.cfg.sigma_embed_dim),
            sinusoidal_embedding(input.sigma, self.cfg.sigma_embed_dim),
        )
        .unwrap();
        let time_tok = self.time_proj.forward(p, &time_row);

        let d = self.cfg.model_dim;
        let mut tokens = Array2::zeros((t + 2, d));
        for i in 0..t {
            let pos = self.pos_row(p, i);
            for j in 0..d {
                tokens[(i, j)] = frames[(i, j)] + pos[j];
            }
        }
        let pos_seq = self.pos_row(p, self.cfg.max_frames);
        let pos_time = self.pos_row(p, self.cfg.max_frames + 1);
        for j in 0..d {
            tokens[(t, j)] = seq_tok[(0, j)] + pos_seq[j];
            tokens[(t + 1, j)] = time_tok[(0, j)] + pos_time[j];
        }
        (tokens, fusion_pre, fusion_hidden, seq_row, time_row)
    }

    /// One scaled Bernoulli keep-mask per residual branch per block, or
    /// `None` when the configured rate is zero. Pre-sampling the masks keeps
    /// the masked forward pass a pure function, so gradients check out
    /// against finite differences even with dropout active.
    pub fn sample_dropout_masks(
        &self,
        t: usize,
        rng: &mut impl rand::Rng,
    ) -> Option<DropoutMasks> {
        if self.cfg.dropout <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.cfg.dropout;
        let mut mask = || {
            Array2::from_shape_fn((t + 2, self.cfg.model_dim), |_| {
                if rng.random_range(0.0..1.0) < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
        };
        Some(DropoutMasks {
            blocks: (0..self.cfg.num_layers).map(|_| (mask(), mask())).collect(),
        })
    }

    /// Predicted clean features, T x feature_dim.
    pub fn forward(&self, p: &[f64], input: &DenoiserInput) -> Array2<f64> {
        self.forward_cached(p, input).0
    }

    pub fn forward_cached(&self, p: &[f64], input: &DenoiserInput) -> (Array2<f64>, DenoiserCache) {
        self.forward_cached_masked(p, input, None)
    }

    pub fn forward_cached_masked(
        &self,
        p: &[f64],
        input: &DenoiserInput,
        masks: Option<&DropoutMasks>,
    ) -> (Array2<f64>, DenoiserCache) {
        let (tokens, fusion_pre, fusion_hidden, seq_row, time_row) =
            self.embed_tokens_cached(p, input);
        let mut x = tokens;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let (next, cache) = block.forward(p, x, masks.map(|m| &m.blocks[i]));
            x = next;
            blocks.push(cache);
        }
        let (final_out, final_ln) = self.final_ln.forward(p, &x);
        let t = input.frame_inputs.nrows();
        let frame_rows = final_out.slice(s![0..t, ..]).to_owned();
        let xhat = self.head.forward(p, &frame_rows);
        (
            xhat,
            DenoiserCache {
                fusion_pre,
                fusion_hidden,
                seq_row,
                time_row,
                blocks,
                final_ln,
                final_out,
            },
        )
    }

    /// Accumulates parameter gradients for d(loss)/d(xhat) = `grad_xhat`.
    /// `masks` must be the same value the forward pass used.
    pub fn backward(
        &self,
        p: &[f64],
        input: &DenoiserInput,
        cache: &DenoiserCache,
        masks: Option<&DropoutMasks>,
        grad_xhat: &Array2<f64>,
        grad_p: &mut [f64],
    ) {
        let t = input.frame_inputs.nrows();
        let d = self.cfg.model_dim;
        let frame_rows = cache.final_out.slice(s![0..t, ..]).to_owned();
        let d_frame_rows = self.head.backward(p, &frame_rows, grad_xhat, grad_p);
        let mut d_final = Array2::zeros((t + 2, d));
        d_final.slice_mut(s![0..t, ..]).assign(&d_frame_rows);
        let mut dx = self.final_ln.backward(p, &cache.final_ln, &d_final, grad_p);
        for (i, (block, bcache)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            dx = block.backward(p, bcache, masks.map(|m| &m.blocks[i]), &dx, grad_p);
        }

        // Positional embeddings.
        for i in 0..t {
            let base = self.pos.start + i * d;
            for j in 0..d {
                grad_p[base + j] += dx[(i, j)];
            }
        }
        let base_seq = self.pos.start + self.cfg.max_frames * d;
        let base_time = self.pos.start + (self.cfg.max_frames + 1) * d;
        for j in 0..d {
            grad_p[base_seq + j] += dx[(t, j)];
            grad_p[base_time + j] += dx[(t + 1, j)];
        }

        // Fusion path (frame rows of dx).
        let d_frames = dx.slice(s![0..t, ..]).to_owned();
        let d_hidden = self.fusion2.backward(p, &cache.fusion_hidden, &d_frames, grad_p);
        let d_pre = gelu_backward(&cache.fusion_pre, &d_hidden);
        let _ = self.fusion1.backward(p, input.frame_inputs, &d_pre, grad_p);

        // Sequence and timestep projections.
        let d_seq = dx.slice(s![t..t + 1, ..]).to_owned();
        let _ = self.seq_proj.backward(p, &cache.seq_row, &d_seq, grad_p);
        let d_time = dx.slice(s![t + 1..t + 2, ..]).to_owned();
        let _ = self.time_proj.backward(p, &cache.time_row, &d_time, grad_p);
    }

    /// Token count the model produces for a T-frame sequence.
    pub fn num_tokens(&self, t: usize) -> usize {
        let _ = &self.cfg;
        t + 2
    }
}
