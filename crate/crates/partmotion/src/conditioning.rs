//! Per-frame conditioning tensors built from a hierarchical annotation.
//!
//! Each frame gets one D-dim block per part plus one for the containing
//! action window: the label's text embedding projected to D, or exact zeros
//! where the label is `unknown`. A boolean known-mask mirrors the zero
//! blocks bitwise. Training applies stochastic masking on top: one drop
//! probability p ~ Beta(5r, 5(1-r)) per step governs whole part segments,
//! while action windows and the sequence text fall with fixed probability.
//!
//! The learned fusion into model tokens lives with the denoiser; this module
//! provides the pure pieces: grid construction, masking, the raw per-frame
//! concatenation [parts | action | noisy features], and the sinusoidal
//! timestep embedding.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::annotation::{validate_annotation, HierarchicalAnnotation, PartId, NUM_PARTS};
use crate::text::{PcaProjector, TextEncoder};

/// Column count of the known-mask: one per part plus the action track.
pub const MASK_COLS: usize = NUM_PARTS + 1;

/// Index of the action column in the known-mask.
pub const ACTION_MASK_COL: usize = NUM_PARTS;

/// Per-frame projected label features for one annotated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionGrid {
    dim: usize,
    /// T x (K*D); part blocks in ordinal order.
    pub part: Array2<f64>,
    /// T x D; the containing action window's label, expanded to every frame.
    pub action: Array2<f64>,
    /// T x (K+1); true where the corresponding block holds a label.
    pub known: Vec<[bool; MASK_COLS]>,
    /// False when the sequence label is `unknown` or was dropped by masking.
    pub sequence_known: bool,
    part_segments: Vec<(PartId, usize, usize)>,
    action_segments: Vec<(usize, usize)>,
}

impl ConditionGrid {
    pub fn num_frames(&self) -> usize {
        self.part.nrows()
    }

    /// Width D of one label block.
    pub fn label_dim(&self) -> usize {
        self.dim
    }

    /// Labeled part segments, in part-ordinal then temporal order.
    pub fn labeled_part_segments(&self) -> &[(PartId, usize, usize)] {
        &self.part_segments
    }

    /// Labeled action windows, in temporal order.
    pub fn labeled_action_segments(&self) -> &[(usize, usize)] {
        &self.action_segments
    }
}

/// Builds the condition grid for a validated annotation. Pure: the same
/// annotation, encoder, and projector produce an identical grid.
///
/// Panics if the annotation has violations or the projector was fitted on a
/// different encoder; both are caller bugs.
pub fn build_condition_grid(
    ann: &HierarchicalAnnotation,
    encoder: &dyn TextEncoder,
    projector: &PcaProjector,
) -> ConditionGrid {
    assert!(
        validate_annotation(ann).is_empty(),
        "annotation {} has violations",
        ann.id
    );
    assert!(
        projector.matches_encoder(encoder),
        "projector was fitted on a different encoder"
    );
    let t = ann.num_frames;
    let d = projector.dim_out();
    let mut cache: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut embed = |label: &str| -> Vec<f64> {
        cache
            .entry(label.to_string())
            .or_insert_with(|| projector.project(&encoder.encode(label)))
            .clone()
    };

    let mut part = Array2::zeros((t, NUM_PARTS * d));
    let mut known = vec![[false; MASK_COLS]; t];
    let mut part_segments = Vec::new();
    for p in PartId::ALL {
        for seg in ann.parts.get(p) {
            let Some(text) = seg.label.as_text() else { continue };
            let v = embed(text);
            let col0 = p.ordinal() * d;
            for f in seg.start..seg.end {
                for (j, x) in v.iter().enumerate() {
                    part[(f, col0 + j)] = *x;
                }
                known[f][p.ordinal()] = true;
            }
            part_segments.push((p, seg.start, seg.end));
        }
    }

    let mut action = Array2::zeros((t, d));
    let mut action_segments = Vec::new();
    for seg in &ann.actions {
        let Some(text) = seg.label.as_text() else { continue };
        let v = embed(text);
        for f in seg.start..seg.end {
            for (j, x) in v.iter().enumerate() {
                action[(f, j)] = *x;
            }
            known[f][ACTION_MASK_COL] = true;
        }
        action_segments.push((seg.start, seg.end));
    }

    ConditionGrid {
        dim: d,
        part,
        action,
        known,
        sequence_known: !ann.sequence[0].label.is_unknown(),
        part_segments,
        action_segments,
    }
}

/// Stochastic label-dropout parameters. The part-segment drop probability is
/// redrawn each step from Beta(5r, 5(1-r)), whose mean is r; action windows
/// and the sequence text are dropped at fixed rates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub target_rate: f64,
    pub action_drop: f64,
    pub sequence_drop: f64,
}

impl MaskingConfig {
    /// Clamps the target rate into [0.02, 0.98] so both Beta parameters stay
    /// positive.
    pub fn new(target_rate: f64) -> Self {
        MaskingConfig {
            target_rate: target_rate.clamp(0.02, 0.98),
            action_drop: 0.1,
            sequence_drop: 0.1,
        }
    }

    pub fn alpha(&self) -> f64 {
        5.0 * self.target_rate
    }

    pub fn beta(&self) -> f64 {
        5.0 * (1.0 - self.target_rate)
    }
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig::new(0.5)
    }
}

/// One training step's label dropout: draws p ~ Beta(5r, 5(1-r)), zeroes each
/// labeled part segment (all its frames, bitwise) with probability p, then
/// applies the fixed action and sequence drops. Returns the masked grid and
/// the drawn p. Already-unknown blocks are untouched. Reproducible from the
/// rng state.
pub fn apply_stochastic_masking(
    grid: &ConditionGrid,
    cfg: &MaskingConfig,
    rng: &mut impl Rng,
) -> (ConditionGrid, f64) {
    let beta = Beta::new(cfg.alpha(), cfg.beta()).expect("clamped rate keeps parameters positive");
    let p = beta.sample(rng);
    let d = grid.dim;
    let mut out = grid.clone();

    let mut surviving_parts = Vec::new();
    for &(part, start, end) in &grid.part_segments {
        if rng.random_range(0.0..1.0) < p {
            let col0 = part.ordinal() * d;
            for f in start..end {
                for j in 0..d {
                    out.part[(f, col0 + j)] = 0.0;
                }
                out.known[f][part.ordinal()] = false;
            }
        } else {
            surviving_parts.push((part, start, end));
        }
    }
    out.part_segments = surviving_parts;

    let mut surviving_actions = Vec::new();
    for &(start, end) in &grid.action_segments {
        if rng.random_range(0.0..1.0) < cfg.action_drop {
            for f in start..end {
                for j in 0..d {
                    out.action[(f, j)] = 0.0;
                }
                out.known[f][ACTION_MASK_COL] = false;
            }
        } else {
            surviving_actions.push((start, end));
        }
    }
    out.action_segments = surviving_actions;

    if out.sequence_known && rng.random_range(0.0..1.0) < cfg.sequence_drop {
        out.sequence_known = false;
    }
    (out, p)
}

#[derive(Debug, thiserror::Error)]
pub enum ConditionError {
    #[error("SHAPE_MISMATCH: grid has {grid_frames} frames but features have {feature_frames}")]
    ShapeMismatch {
        grid_frames: usize,
        feature_frames: usize,
    },
}

/// Concatenates [part blocks | action block | noisy motion features] per
/// frame: T x ((K+1)*D + d). This is the raw input the learned fusion map
/// consumes.
pub fn frame_inputs(
    grid: &ConditionGrid,
    noisy_features: &Array2<f64>,
) -> Result<Array2<f64>, ConditionError> {
    let t = grid.num_frames();
    if noisy_features.nrows() != t {
        return Err(ConditionError::ShapeMismatch {
            grid_frames: t,
            feature_frames: noisy_features.nrows(),
        });
    }
    let kd = grid.part.ncols();
    let d_label = grid.action.ncols();
    let d_feat = noisy_features.ncols();
    let mut out = Array2::zeros((t, kd + d_label + d_feat));
    for f in 0..t {
        for j in 0..kd {
            out[(f, j)] = grid.part[(f, j)];
        }
        for j in 0..d_label {
            out[(f, kd + j)] = grid.action[(f, j)];
        }
        for j in 0..d_feat {
            out[(f, kd + d_label + j)] = noisy_features[(f, j)];
        }
    }
    Ok(out)
}

/// Sinusoidal embedding of a diffusion timestep: pairs
/// (sin(s * w_i), cos(s * w_i)) with geometrically spaced frequencies.
/// Injective over the integer step range used here.
pub fn sinusoidal_embedding(step: f64, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "embedding dim must be even");
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = (10_000f64).powf(-2.0 * i as f64 / dim as f64);
        out.push((step * freq).sin());
        out.push((step * freq).cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{HierarchicalAnnotation, TimedLabel};
    use crate::seeds;
    use crate::text::{fit_label_pca, ToyHashEncoder};

    fn encoder() -> ToyHashEncoder {
        ToyHashEncoder::new(32)
    }

    fn projector(enc: &ToyHashEncoder, d: usize) -> PcaProjector {
        let labels: Vec<String> = [
            "walks", "runs", "jumps", "waves", "nods", "turns", "bends", "kicks", "sits",
            "stands", "claps", "points",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        fit_label_pca(&labels, enc, d).unwrap().0
    }

    fn sample_annotation() -> HierarchicalAnnotation {
        let mut ann = HierarchicalAnnotation::all_unknown("g0", 20.0, 6);
        ann.sequence = vec![TimedLabel::text("a person walks then waves", 0, 6)];
        ann.actions = vec![TimedLabel::text("walks", 0, 4), TimedLabel::text("waves", 4, 6)];
        ann.parts.left_arm = vec![
            TimedLabel::unknown(0, 2),
            TimedLabel::text("waves", 2, 5),
            TimedLabel::unknown(5, 6),
        ];
        ann.parts.left_leg = vec![
            TimedLabel::text("steps", 0, 3),
            TimedLabel::unknown(3, 6),
        ];
        ann
    }

    #[test]
    fn all_unknown_annotation_gives_zero_grid() {
        let enc = encoder();
        let proj = projector(&enc, 4);
        let ann = HierarchicalAnnotation::all_unknown("z", 20.0, 5);
        let grid = build_condition_grid(&ann, &enc, &proj);
        assert!(grid.part.iter().all(|x| *x == 0.0));
        assert!(grid.action.iter().all(|x| *x == 0.0));
        assert!(grid.known.iter().flatten().all(|k| !k));
        assert!(!grid.sequence_known);
        assert!(grid.labeled_part_segments().is_empty());
    }

    #[test]
    fn action_window_expands_to_identical_rows() {
        let enc = encoder();
        let proj = projector(&enc, 4);
        let mut ann = HierarchicalAnnotation::all_unknown("a", 20.0, 4);
        ann.actions = vec![TimedLabel::text("walks", 0, 4)];
        let grid = build_condition_grid(&ann, &enc, &proj);
        let expected = proj.project(&enc.encode("walks"));
        for f in 0..4 {
            for j in 0..4 {
                assert_eq!(grid.action[(f, j)], expected[j]);
            }
            assert!(grid.known[f][ACTION_MASK_COL]);
        }
    }

    #[test]
    fn part_blocks_match_direct_evaluation_and_zero_elsewhere() {
        let enc = encoder();
        let proj = projector(&enc, 4);
        let grid = build_condition_grid(&sample_annotation(), &enc, &proj);
        let d = 4;
        let arm = PartId::LeftArm.ordinal() * d;
        let waves = proj.project(&enc.encode("waves"));
        for f in 0..6 {
            for j in 0..d {
                let got = grid.part[(f, arm + j)];
                if (2..5).contains(&f) {
                    assert_eq!(got, waves[j]);
                } else {
                    assert_eq!(got, 0.0);
                }
            }
        }
        // Bitwise zero consistency across every block and frame.
        for f in 0..6 {
            for p in PartId::ALL {
                if !grid.known[f][p.ordinal()] {
                    for j in 0..d {
                        assert_eq!(grid.part[(f, p.ordinal() * d + j)].to_bits(), 0u64);
                    }
                }
            }
        }
    }

    #[test]
    fn grid_construction_is_pure() {
        let enc = encoder();
        let proj = projector(&enc, 4);
        let a = build_condition_grid(&sample_annotation(), &enc, &proj);
        let b = build_condition_grid(&sample_annotation(), &enc, &proj);
        assert_eq!(a, b);
    }

    #[test]
    fn beta_mean_matches_target_rate() {
        let cfg = MaskingConfig::new(0.5);
        let enc = encoder();
        let proj = projector(&enc, 4);
        let grid = build_condition_grid(&sample_annotation(), &enc, &proj);
        let mut rng = seeds::rng(3, "beta-mean");
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let (_, p) = apply_stochastic_masking(&grid, &cfg, &mut rng);
            sum += p;
        }
        let mean = sum / 10_000.0;
        assert!((0.48..=0.52).contains(&mean), "mean drawn p = {mean}");
    }

    #[test]
    fn masked_segments_are_bitwise_zero_and_survival_matches_rate() {
        let enc = encoder();
        let proj = projector(&enc, 4);
        let grid = build_condition_grid(&sample_annotation(), &enc, &proj);
        let total_segments = grid.labeled_part_segments().len();
        assert_eq!(total_segments, 2);
        let cfg = MaskingConfig::new(0.3);
        let mut rng = seeds::rng(4, "mask");
        let mut survived = 0usize;
        for _ in 0..10_000 {
            let (masked, _) = apply_stochastic_masking(&grid, &cfg, &mut rng);
            survived += masked.labeled_part_segments().len();
            for &(part, start, end) in grid.labeled_part_segments() {
                let still = masked
                    .labeled_part_segments()
                    .contains(&(part, start, end));
                let col0 = part.ordinal() * 4;
                for f in start..end {
                    assert_eq!(masked.known[f][part.ordinal()], still);
                    if !still {
                        for j in 0..4 {
                            assert_eq!(masked.part[(f, col0 + j)], 0.0);
                        }
                    }
                }
            }
        }
        let rate = survived as f64 / (total_segments * 10_000) as f64;
        assert!((rate - 0.7).abs() < 0.02, "survival rate {rate}");
    }

    #[test]
    fn masking_is_reproducible_from_seed() {
        let enc = encoder();
        let proj = projector(&enc, 4);
        let grid = build_condition_grid(&sample_annotation(), &enc, &proj);
        let cfg = MaskingConfig::default();
        let (a, pa) = apply_stochastic_masking(&grid, &cfg, &mut seeds::rng(9, "m"));
        let (b, pb) = apply_stochastic_masking(&grid, &cfg, &mut seeds::rng(9, "m"));
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn sequence_drop_rate_is_fixed() {
        let enc = encoder();
        let proj = projector(&enc, 4);
        let grid = build_condition_grid(&sample_annotation(), &enc, &proj);
        assert!(grid.sequence_known);
        let cfg = MaskingConfig::default();
        let mut rng = seeds::rng(12, "seq-drop");
        let dropped = (0..10_000)
            .filter(|_| !apply_stochastic_masking(&grid, &cfg, &mut rng).0.sequence_known)
            .count();
        let rate = dropped as f64 / 10_000.0;
        assert!((rate - 0.1).abs() < 0.01, "sequence drop rate {rate}");
    }

    #[test]
    fn rate_clamping_keeps_beta_defined() {
        assert_eq!(MaskingConfig::new(0.0).target_rate, 0.02);
        assert_eq!(MaskingConfig::new(1.0).target_rate, 0.98);
        assert!(MaskingConfig::new(0.0).alpha() > 0.0);
        assert!(MaskingConfig::new(1.0).beta() > 0.0);
    }

    #[test]
    fn frame_inputs_concatenate_in_declared_order() {
        let enc = encoder();
        let proj = projector(&enc, 4);
        let grid = build_condition_grid(&sample_annotation(), &enc, &proj);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i * 10 + j) as f64);
        let inputs = frame_inputs(&grid, &x).unwrap();
        assert_eq!(inputs.ncols(), (NUM_PARTS + 1) * 4 + 3);
        for f in 0..6 {
            assert_eq!(inputs[(f, 0)], grid.part[(f, 0)]);
            assert_eq!(inputs[(f, NUM_PARTS * 4)], grid.action[(f, 0)]);
            assert_eq!(inputs[(f, (NUM_PARTS + 1) * 4 + 2)], x[(f, 2)]);
        }
        let bad = Array2::zeros((5, 3));
        assert!(matches!(
            frame_inputs(&grid, &bad),
            Err(ConditionError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn sinusoidal_embedding_distinguishes_timesteps() {
        let a = sinusoidal_embedding(0.0, 16);
        let b = sinusoidal_embedding(99.0, 16);
        assert_eq!(a.len(), 16);
        assert_ne!(a, b);
        for s in 0..=100 {
            for t in s + 1..=100 {
                let (es, et) = (
                    sinusoidal_embedding(s as f64, 8),
                    sinusoidal_embedding(t as f64, 8),
                );
                assert!(
                    es.iter().zip(&et).any(|(x, y)| (x - y).abs() > 1e-9),
                    "steps {s} and {t} collide"
                );
            }
        }
    }
}
