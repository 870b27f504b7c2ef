//! Minimal feed-forward/transformer toolkit with hand-written backprop.
//!
//! All learnable state lives in one flat `Vec<f64>` described by a
//! [`ParamLayout`]: each layer owns a named range into the buffer. Gradients
//! use a parallel buffer of the same length. This keeps the optimizer, the
//! checkpoint format, and finite-difference checking trivial, at the cost of
//! layers threading `&[f64]` through their calls.
//!
//! Backward passes accumulate into the gradient buffer, so one zeroed buffer
//! serves a whole batch when samples are processed in index order.

pub mod denoiser;
pub mod gradcheck;
pub mod layers;

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// How a segment is filled by [`ParamLayout::init`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// N(0, sqrt(2 / (fan_in + fan_out))) — weight matrices.
    Xavier { fan_in: usize, fan_out: usize },
    Zero,
    One,
    /// N(0, std) — positional embeddings and the like.
    Normal(f64),
}

/// One named slice of the parameter buffer.
#[derive(Debug, Clone)]
pub struct Segment {
    pub name: String,
    pub range: Range<usize>,
    pub init: Init,
    /// Whether AdamW weight decay applies (matrices yes, biases/gains no).
    pub decay: bool,
}

/// The complete parameter map of a model.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> &Segment {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("no parameter segment named {name:?}"))
    }

    /// Fresh parameter buffer. Draw order is fixed (segment declaration
    /// order, elementwise), so a given rng state reproduces the buffer.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        for seg in &self.segments {
            match seg.init {
                Init::Xavier { fan_in, fan_out } => {
                    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                    for x in &mut p[seg.range.clone()] {
                        *x = std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                    }
                }
                Init::Zero => {}
                Init::One => p[seg.range.clone()].fill(1.0),
                Init::Normal(std) => {
                    for x in &mut p[seg.range.clone()] {
                        *x = std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                    }
                }
            }
        }
        p
    }
}

/// Allocates segments sequentially while a model is being constructed.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    segments: Vec<Segment>,
    next: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        LayoutBuilder::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, len: usize, init: Init, decay: bool) -> Range<usize> {
        let name = name.into();
        assert!(
            self.segments.iter().all(|s| s.name != name),
            "duplicate parameter segment {name:?}"
        );
        let range = self.next..self.next + len;
        self.next += len;
        self.segments.push(Segment {
            name,
            range: range.clone(),
            init,
            decay,
        });
        range
    }

    pub fn finish(self) -> ParamLayout {
        ParamLayout {
            segments: self.segments,
            total: self.next,
        }
    }
}

/// AdamW: Adam moments plus decoupled weight decay on decaying segments.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    decay_mask: Vec<bool>,
}

impl AdamW {
    pub fn new(layout: &ParamLayout, lr: f64, weight_decay: f64) -> Self {
        let mut decay_mask = vec![false; layout.total()];
        for seg in layout.segments() {
            if seg.decay {
                decay_mask[seg.range.clone()].fill(true);
            }
        }
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; layout.total()],
            v: vec![0.0; layout.total()],
            t: 0,
            decay_mask,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            if self.decay_mask[i] {
                params[i] -= self.lr * self.weight_decay * params[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    #[test]
    fn layout_segments_are_disjoint_and_cover_total() {
        let mut lb = LayoutBuilder::new();
        let a = lb.alloc("a", 6, Init::Xavier { fan_in: 2, fan_out: 3 }, true);
        let b = lb.alloc("b", 3, Init::Zero, false);
        let c = lb.alloc("c", 4, Init::One, false);
        let layout = lb.finish();
        assert_eq!(layout.total(), 13);
        assert_eq!((a, b, c), (0..6, 6..9, 9..13));
        assert_eq!(layout.segment("b").range, 6..9);
    }

    #[test]
    fn init_is_deterministic_and_respects_rules() {
        let mut lb = LayoutBuilder::new();
        lb.alloc("w", 10, Init::Xavier { fan_in: 5, fan_out: 5 }, true);
        lb.alloc("b", 4, Init::Zero, false);
        lb.alloc("g", 4, Init::One, false);
        let layout = lb.finish();
        let p1 = layout.init(&mut seeds::rng(1, "init"));
        let p2 = layout.init(&mut seeds::rng(1, "init"));
        assert_eq!(p1, p2);
        assert!(p1[..10].iter().any(|x| *x != 0.0));
        assert!(p1[10..14].iter().all(|x| *x == 0.0));
        assert!(p1[14..18].iter().all(|x| *x == 1.0));
    }

    #[test]
    fn adamw_minimizes_a_quadratic() {
        let mut lb = LayoutBuilder::new();
        lb.alloc("x", 4, Init::Normal(1.0), false);
        let layout = lb.finish();
        let mut params = layout.init(&mut seeds::rng(2, "q"));
        let target = [1.0, -2.0, 0.5, 3.0];
        let mut opt = AdamW::new(&layout, 0.05, 0.0);
        for _ in 0..2000 {
            let grads: Vec<f64> = params
                .iter()
                .zip(&target)
                .map(|(x, t)| 2.0 * (x - t))
                .collect();
            opt.step(&mut params, &grads);
        }
        for (x, t) in params.iter().zip(&target) {
            assert!((x - t).abs() < 1e-3, "{x} vs {t}");
        }
    }

    #[test]
    fn weight_decay_only_touches_decaying_segments() {
        let mut lb = LayoutBuilder::new();
        lb.alloc("w", 2, Init::One, true);
        lb.alloc("b", 2, Init::One, false);
        let layout = lb.finish();
        let mut params = layout.init(&mut seeds::rng(3, "wd"));
        let mut opt = AdamW::new(&layout, 0.01, 0.1);
        let grads = vec![0.0; 4];
        for _ in 0..100 {
            opt.step(&mut params, &grads);
        }
        assert!(params[0] < 1.0 && params[1] < 1.0);
        assert_eq!(&params[2..], &[1.0, 1.0]);
    }
}
