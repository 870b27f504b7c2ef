//! Metric suite over retrieval embedding spaces: R-precision with
//! false-negative filtering, M2T, FID, Diversity, and the repeated
//! evaluation driver that reports 95% confidence intervals.
//!
//! FID compares Gaussian fits of two embedding sets:
//! ‖μ_A−μ_B‖² + Tr(Σ_A + Σ_B − 2(Σ_A Σ_B)^{1/2}). The matrix square root
//! runs through the eigendecomposition of the symmetrized product
//! S_A Σ_B S_A, which is PSD up to roundoff; negative eigenvalues are
//! clipped at zero and reported as NONPSD_COVARIANCE below -1e-6.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{generate_motion, Checkpoint, DiffusionError};
use crate::exec;
use crate::motion::Skeleton;
use crate::nn::denoiser::Denoiser;
use crate::retrieval::{
    extract_pairs, RetrievalError, RetrievalLevel, RetrievalModel, RetrievalModelSet,
};
use crate::seeds;
use crate::synth::Sample;
use crate::text::{PcaProjector, TextEncoder};

/// Eigenvalues of a nominally PSD matrix below this are an error; above it
/// (but negative) they are clipped to zero as roundoff.
const PSD_EIGENVALUE_FLOOR: f64 = -1e-6;

/// Shrinkage weight toward the scaled identity when a covariance is fit
/// from fewer rows than dimensions + 1.
const SHRINKAGE: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("NONPSD_COVARIANCE: square-root eigenvalue {eigenvalue:.3e} below {PSD_EIGENVALUE_FLOOR:.0e}")]
    NonPsdCovariance { eigenvalue: f64 },
    #[error("EMPTY_LEVEL: {level} has {found} labeled crops, need at least 3 for top-3 ranking")]
    EmptyLevel { level: String, found: usize },
    #[error("MISSING_MODEL: no retrieval model for level {level}")]
    MissingModel { level: String },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Mean and covariance of one embedding set.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Array2<f64>,
}

impl GaussianStats {
    /// Sample statistics of an n×e embedding matrix, (n−1)-normalized.
    /// With n ≤ e the covariance cannot be full rank, so it is shrunk
    /// toward (Tr Σ / e)·I; both sides of a self-comparison shrink
    /// identically, keeping FID(A,A) = 0.
    pub fn from_embeddings(x: &Array2<f64>) -> GaussianStats {
        let (n, e) = (x.nrows(), x.ncols());
        assert!(n >= 2, "need at least 2 embeddings, got {n}");
        let mut mean = vec![0.0; e];
        for row in x.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut cov = Array2::zeros((e, e));
        for row in x.rows() {
            for i in 0..e {
                let di = row[i] - mean[i];
                for j in i..e {
                    cov[(i, j)] += di * (row[j] - mean[j]) / (n - 1) as f64;
                }
            }
        }
        for i in 0..e {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        if n <= e {
            let scale = cov.diag().sum() / e as f64;
            cov *= 1.0 - SHRINKAGE;
            for i in 0..e {
                cov[(i, i)] += SHRINKAGE * scale;
            }
        }
        GaussianStats { mean, cov }
    }
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Symmetric square root V·diag(√λ)·Vᵀ. Input is symmetrized first; an
/// eigenvalue below the PSD floor is an error, above it clipped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < PSD_EIGENVALUE_FLOOR {
            return Err(MetricsError::NonPsdCovariance { eigenvalue: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    Ok(scaled * eig.eigenvectors.transpose())
}

/// Fréchet distance between two Gaussians given their statistics:
/// ‖μ_A−μ_B‖² + Tr(Σ_A + Σ_B − 2(Σ_A Σ_B)^{1/2}).
pub fn fid_from_stats(a: &GaussianStats, b: &GaussianStats) -> Result<f64, MetricsError> {
    assert_eq!(a.mean.len(), b.mean.len());
    let mean_sq: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let ca = to_dmatrix(&a.cov);
    let cb = to_dmatrix(&b.cov);
    let sa = psd_sqrt(&ca)?;
    let cross = psd_sqrt(&(&sa * &cb * &sa))?;
    let val = mean_sq + ca.trace() + cb.trace() - 2.0 * cross.trace();
    debug_assert!(val > -1e-6, "FID {val} below numerical tolerance");
    Ok(val.max(0.0))
}

/// FID between two embedding sets (rows are samples).
pub fn fid(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64, MetricsError> {
    assert_eq!(a.ncols(), b.ncols());
    fid_from_stats(
        &GaussianStats::from_embeddings(a),
        &GaussianStats::from_embeddings(b),
    )
}

/// Mean Euclidean distance over `pairs` random index pairs (i ≠ j).
pub fn diversity(embeddings: &Array2<f64>, pairs: usize, rng: &mut impl Rng) -> f64 {
    let n = embeddings.nrows();
    assert!(n >= 2 && pairs >= 1);
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n);
        while j == i {
            j = rng.random_range(0..n);
        }
        let d: f64 = embeddings
            .row(i)
            .iter()
            .zip(embeddings.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        total += d.sqrt();
    }
    total / pairs as f64
}

/// Declares two labels paraphrases when their sentence embeddings reach
/// cosine `threshold`. Used to drop false negatives from retrieval
/// rankings: retrieving a paraphrase of the paired label still counts.
pub struct FilterOracle<'a> {
    encoder: &'a dyn TextEncoder,
    threshold: f64,
}

impl<'a> FilterOracle<'a> {
    pub fn new(encoder: &'a dyn TextEncoder, threshold: f64) -> FilterOracle<'a> {
        assert!(threshold > 0.0 && threshold < 1.0);
        FilterOracle { encoder, threshold }
    }

    pub fn is_paraphrase(&self, a: &str, b: &str) -> bool {
        if a == b {
            return true;
        }
        let ea = self.encoder.encode(a);
        let eb = self.encoder.encode(b);
        let dot: f64 = ea.iter().zip(&eb).map(|(x, y)| x * y).sum();
        let na: f64 = ea.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = eb.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (na * nb).max(1e-12) >= self.threshold
    }
}

/// R@k (percent, aligned with the `ks` argument) and mean paired cosine
/// over B motion/text embedding rows. `accept(i, j)` says whether
/// retrieving text j counts as correct for motion i; ties rank by index.
pub fn recall_and_m2t(
    motion: &Array2<f64>,
    text: &Array2<f64>,
    ks: &[usize],
    accept: impl Fn(usize, usize) -> bool,
) -> (Vec<f64>, f64) {
    let b = motion.nrows();
    assert_eq!(text.nrows(), b);
    assert!(!ks.is_empty() && b >= 1);
    let max_k = ks.iter().copied().max().unwrap();
    assert!(b >= max_k, "cannot rank top-{max_k} of {b} candidates");

    let sims = motion.dot(&text.t());
    let mut hits = vec![0usize; ks.len()];
    let mut m2t = 0.0;
    for i in 0..b {
        m2t += sims[(i, i)] / b as f64;
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&x, &y| sims[(i, y)].total_cmp(&sims[(i, x)]).then(x.cmp(&y)));
        let mut best_rank = None;
        for (rank, &j) in order.iter().take(max_k).enumerate() {
            if accept(i, j) {
                best_rank = Some(rank);
                break;
            }
        }
        if let Some(rank) = best_rank {
            for (h, &k) in hits.iter_mut().zip(ks) {
                if rank < k {
                    *h += 1;
                }
            }
        }
    }
    let recall = hits
        .iter()
        .map(|&h| 100.0 * h as f64 / b as f64)
        .collect();
    (recall, m2t)
}

/// Embeds a batch of (motion crop, label) pairs with one retrieval model
/// and returns R@k plus M2T. A retrieval is correct when the top-ranked
/// text is the paired one or a paraphrase of it under `filter`.
pub fn retrieval_metrics(
    model: &RetrievalModel,
    encoder: &dyn TextEncoder,
    batch: &[crate::retrieval::RetrievalPair],
    ks: &[usize],
    filter: &FilterOracle,
) -> (Vec<f64>, f64) {
    let b = batch.len();
    let e = model.cfg.embed_dim;
    let m_rows = exec::par_map(batch, |p| model.embed_motion(&p.features));
    let t_rows: Vec<Vec<f64>> = batch
        .iter()
        .map(|p| model.embed_label(&p.label, encoder))
        .collect();
    let mut motion = Array2::zeros((b, e));
    let mut text = Array2::zeros((b, e));
    for i in 0..b {
        for j in 0..e {
            motion[(i, j)] = m_rows[i][j];
            text[(i, j)] = t_rows[i][j];
        }
    }
    recall_and_m2t(&motion, &text, ks, |i, j| {
        i == j || filter.is_paraphrase(&batch[i].label, &batch[j].label)
    })
}

/// One metric with its 95% confidence half-width over the repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub mean: f64,
    pub half_width: f64,
}

impl MetricValue {
    fn from_repeats(values: &[f64]) -> MetricValue {
        let n = values.len();
        assert!(n >= 1);
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        };
        MetricValue { mean, half_width }
    }

    fn exact(value: f64) -> MetricValue {
        MetricValue {
            mean: value,
            half_width: 0.0,
        }
    }
}

/// Metrics for one embedding space. FID is computed once over the full
/// crop sets, so its half-width is zero; the batch metrics and Diversity
/// resample per repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub level: String,
    pub crop_count: usize,
    pub r_at_1: MetricValue,
    pub r_at_3: MetricValue,
    pub m2t: MetricValue,
    pub fid: MetricValue,
    pub diversity: MetricValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub generator: String,
    pub seed: u64,
    pub repeats: usize,
    pub batch_size: usize,
    /// Field-wise average of the seven part reports; half-widths combine
    /// in quadrature.
    pub avg_part: MetricReport,
    /// All nine levels, part-ordinal order, then action and sequence.
    pub levels: Vec<MetricReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub repeats: usize,
    pub batch_size: usize,
    pub diversity_pairs: usize,
    pub filter_threshold: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            repeats: 20,
            batch_size: 32,
            diversity_pairs: 300,
            filter_threshold: 0.9,
            seed: 0,
        }
    }
}

/// What produces the motions under evaluation.
pub enum Generator<'a> {
    /// Ground-truth motions stand in for generated ones (self-comparison).
    GroundTruth,
    /// Sample the diffusion checkpoint once per test annotation.
    Diffusion {
        checkpoint: &'a Checkpoint,
        projector: &'a PcaProjector,
    },
}

impl Generator<'_> {
    fn name(&self) -> &'static str {
        match self {
            Generator::GroundTruth => "ground-truth",
            Generator::Diffusion { .. } => "diffusion",
        }
    }
}

fn embed_crops(model: &RetrievalModel, pairs: &[crate::retrieval::RetrievalPair]) -> Array2<f64> {
    let rows = exec::par_map(pairs, |p| model.embed_motion(&p.features));
    let e = model.cfg.embed_dim;
    let mut out = Array2::zeros((rows.len(), e));
    for (i, row) in rows.iter().enumerate() {
        for j in 0..e {
            out[(i, j)] = row[j];
        }
    }
    out
}

/// Evaluates a generator against a test split in all nine retrieval
/// embedding spaces. Per level: generated motions are cropped with the
/// ground-truth annotations, batch metrics (R@1, R@3, M2T) and Diversity
/// resample per repeat, and realism compares generated vs ground-truth
/// crops as FID in the level model's motion-embedding space. Part
/// metrics are additionally averaged into `avg_part`. Reproducible
/// bit-for-bit given (generator, split, seed).
pub fn evaluate_suite(
    generator: &Generator,
    test: &[Sample],
    models: &RetrievalModelSet,
    skel: &Skeleton,
    encoder: &dyn TextEncoder,
    cfg: &EvalConfig,
) -> Result<EvaluationReport, MetricsError> {
    assert!(!test.is_empty(), "empty test split");
    assert!(cfg.repeats >= 1 && cfg.batch_size >= 3);

    let generated: Vec<Sample> = match generator {
        Generator::GroundTruth => test.to_vec(),
        Generator::Diffusion {
            checkpoint,
            projector,
        } => {
            let model = Denoiser::new(checkpoint.config.clone());
            let schedule = checkpoint.schedule();
            let indexed: Vec<(usize, &Sample)> = test.iter().enumerate().collect();
            let results = exec::par_map(&indexed, |&(i, smp)| {
                let mut rng = seeds::rng_at(cfg.seed, "eval-gen", i as u64);
                generate_motion(
                    &model,
                    &checkpoint.params,
                    &schedule,
                    &smp.annotation,
                    skel,
                    &checkpoint.normalizer,
                    encoder,
                    projector,
                    &mut rng,
                )
                .map(|g| Sample {
                    id: smp.id.clone(),
                    motion: g.motion,
                    annotation: smp.annotation.clone(),
                })
            });
            results.into_iter().collect::<Result<Vec<_>, _>>()?
        }
    };

    let filter = FilterOracle::new(encoder, cfg.filter_threshold);
    let ks = [1usize, 3];
    let mut levels = Vec::with_capacity(RetrievalLevel::ALL.len());
    for level in RetrievalLevel::ALL {
        let model = models.get(level).ok_or_else(|| MetricsError::MissingModel {
            level: level.name().to_string(),
        })?;
        let gt_pairs = extract_pairs(test, skel, level)?;
        let gen_pairs = extract_pairs(&generated, skel, level)?;
        let n = gen_pairs.len();
        if n < 3 {
            return Err(MetricsError::EmptyLevel {
                level: level.name().to_string(),
                found: n,
            });
        }

        let gen_embs = embed_crops(model, &gen_pairs);
        let gt_embs = embed_crops(model, &gt_pairs);
        let fid_value = fid(&gen_embs, &gt_embs)?;

        let text_rows: Vec<Vec<f64>> = gen_pairs
            .iter()
            .map(|p| model.embed_label(&p.label, encoder))
            .collect();

        let e = model.cfg.embed_dim;
        let mut r1 = Vec::with_capacity(cfg.repeats);
        let mut r3 = Vec::with_capacity(cfg.repeats);
        let mut m2t = Vec::with_capacity(cfg.repeats);
        let mut div = Vec::with_capacity(cfg.repeats);
        for rep in 0..cfg.repeats {
            let mut rng = seeds::rng_at(
                cfg.seed,
                &format!("eval-repeat/{}", level.name()),
                rep as u64,
            );
            let take = cfg.batch_size.min(n);
            let idx = rand::seq::index::sample(&mut rng, n, take).into_vec();
            let mut motion = Array2::zeros((take, e));
            let mut text = Array2::zeros((take, e));
            for (row, &i) in idx.iter().enumerate() {
                for j in 0..e {
                    motion[(row, j)] = gen_embs[(i, j)];
                    text[(row, j)] = text_rows[i][j];
                }
            }
            let (recall, batch_m2t) = recall_and_m2t(&motion, &text, &ks, |a, b| {
                a == b || filter.is_paraphrase(&gen_pairs[idx[a]].label, &gen_pairs[idx[b]].label)
            });
            r1.push(recall[0]);
            r3.push(recall[1]);
            m2t.push(batch_m2t);
            div.push(diversity(&gen_embs, cfg.diversity_pairs, &mut rng));
        }

        levels.push(MetricReport {
            level: level.name().to_string(),
            crop_count: n,
            r_at_1: MetricValue::from_repeats(&r1),
            r_at_3: MetricValue::from_repeats(&r3),
            m2t: MetricValue::from_repeats(&m2t),
            fid: MetricValue::exact(fid_value),
            diversity: MetricValue::from_repeats(&div),
        });
    }

    let parts: Vec<&MetricReport> = levels
        .iter()
        .filter(|r| !matches!(r.level.as_str(), "action" | "sequence"))
        .collect();
    let avg = |pick: &dyn Fn(&MetricReport) -> MetricValue| -> MetricValue {
        let k = parts.len() as f64;
        MetricValue {
            mean: parts.iter().map(|r| pick(r).mean).sum::<f64>() / k,
            half_width: parts
                .iter()
                .map(|r| pick(r).half_width.powi(2))
                .sum::<f64>()
                .sqrt()
                / k,
        }
    };
    let avg_part = MetricReport {
        level: "avg_part".to_string(),
        crop_count: parts.iter().map(|r| r.crop_count).sum(),
        r_at_1: avg(&|r| r.r_at_1),
        r_at_3: avg(&|r| r.r_at_3),
        m2t: avg(&|r| r.m2t),
        fid: avg(&|r| r.fid),
        diversity: avg(&|r| r.diversity),
    };

    Ok(EvaluationReport {
        generator: generator.name().to_string(),
        seed: cfg.seed,
        repeats: cfg.repeats,
        batch_size: cfg.batch_size,
        avg_part,
        levels,
    })
}

/// Fixed-width text table over all levels plus the part average.
pub fn render_report_table(report: &EvaluationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "generator: {}   seed: {}   repeats: {}   batch: {}\n",
        report.generator, report.seed, report.repeats, report.batch_size
    ));
    out.push_str(&format!(
        "{:<12} {:>6} {:>14} {:>14} {:>14} {:>12} {:>14}\n",
        "level", "crops", "R@1%", "R@3%", "M2T", "FID", "Diversity"
    ));
    let fmt = |v: &MetricValue| format!("{:.2}±{:.2}", v.mean, v.half_width);
    let fmt4 = |v: &MetricValue| format!("{:.4}±{:.4}", v.mean, v.half_width);
    for r in report.levels.iter().chain([&report.avg_part]) {
        out.push_str(&format!(
            "{:<12} {:>6} {:>14} {:>14} {:>14} {:>12} {:>14}\n",
            r.level,
            r.crop_count,
            fmt(&r.r_at_1),
            fmt(&r.r_at_3),
            fmt4(&r.m2t),
            format!("{:.4}", r.fid.mean),
            fmt(&r.diversity),
        ));
    }
    out
}
