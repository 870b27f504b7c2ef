//! Text embedding and PCA reduction of label embeddings.
//!
//! Labels are embedded by a pluggable [`TextEncoder`] and reduced to a small
//! dimension with a PCA projector fitted on the training vocabulary. The
//! shipped encoder is a deterministic hash-based toy: each token is hashed to
//! a seed, the seed drives a Gaussian draw, token vectors are summed and
//! normalized. It has no semantics, but it is compositional (shared tokens
//! produce correlated embeddings), deterministic, and fast, which is all the
//! rest of the pipeline needs from it.
//!
//! Encoders are selected by name: `toy-hash:<E>` for the hash encoder with
//! embedding width `E`. Names of the form `pretrained:<id>` are reserved for
//! externally hosted encoders and are rejected by this build.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Deterministic map from text to a fixed-width unit-scale embedding.
pub trait TextEncoder: Send + Sync {
    /// Embedding width E.
    fn dim(&self) -> usize;

    /// Embeds `text`. Identical text yields an identical vector; defined for
    /// every string including the empty one.
    fn encode(&self, text: &str) -> Vec<f64>;

    /// Stable selection name, parseable by [`encoder_from_name`].
    fn name(&self) -> String;

    /// Behavioral fingerprint: hashes the name together with probe
    /// embeddings, so any change to the encoding function changes the id.
    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name().as_bytes());
        for probe in ["", "walk", "raises the left arm", "zq-7 probe"] {
            for x in self.encode(probe) {
                h.update(x.to_le_bytes());
            }
        }
        let digest = h.finalize();
        format!("sha256:{}", hex_prefix(&digest, 16))
    }
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n).map(|b| format!("{b:02x}")).collect()
}

/// Splits into lowercase alphanumeric tokens, mirroring the vocabulary
/// tokenization used for dataset statistics.
fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.to_lowercase()
                .chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Hash-seeded random-projection encoder: token → seeded Gaussian vector,
/// summed over tokens and normalized to unit length.
#[derive(Debug, Clone)]
pub struct ToyHashEncoder {
    dim: usize,
}

impl ToyHashEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding width must be positive");
        ToyHashEncoder { dim }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(b"toy-hash-token");
        h.update((self.dim as u64).to_le_bytes());
        h.update([0x1f]);
        h.update(token.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        (0..self.dim).map(|_| rng.sample(StandardNormal)).collect()
    }
}

impl TextEncoder for ToyHashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Vec<f64> {
        let mut toks = tokens(text);
        if toks.is_empty() {
            // Degenerate input still gets a well-defined unit vector.
            toks.push(String::new());
        }
        let mut sum = vec![0.0; self.dim];
        for tok in &toks {
            for (s, x) in sum.iter_mut().zip(self.token_vector(tok)) {
                *s += x;
            }
        }
        let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        for s in &mut sum {
            *s /= norm;
        }
        sum
    }

    fn name(&self) -> String {
        format!("toy-hash:{}", self.dim)
    }
}

/// Errors from encoder-name parsing.
#[derive(Debug, thiserror::Error)]
pub enum EncoderNameError {
    #[error("unknown encoder name {0:?} (expected \"toy-hash:<E>\")")]
    Unknown(String),
    #[error("encoder {0:?} requires external model weights, which this build does not bundle")]
    Unsupported(String),
    #[error("bad embedding width in {0:?}")]
    BadWidth(String),
}

/// Instantiates an encoder from its selection name.
pub fn encoder_from_name(name: &str) -> Result<Box<dyn TextEncoder>, EncoderNameError> {
    if let Some(width) = name.strip_prefix("toy-hash:") {
        let dim: usize = width
            .parse()
            .map_err(|_| EncoderNameError::BadWidth(name.to_string()))?;
        if dim == 0 {
            return Err(EncoderNameError::BadWidth(name.to_string()));
        }
        return Ok(Box::new(ToyHashEncoder::new(dim)));
    }
    if name.starts_with("pretrained:") {
        return Err(EncoderNameError::Unsupported(name.to_string()));
    }
    Err(EncoderNameError::Unknown(name.to_string()))
}

/// Errors from PCA fitting and projector IO.
#[derive(Debug, thiserror::Error)]
pub enum PcaError {
    #[error("INSUFFICIENT_LABELS: need at least {need} distinct labels, found {have}")]
    InsufficientLabels { have: usize, need: usize },
    #[error("target dimension {d} exceeds embedding width {e}")]
    DimExceedsEmbedding { d: usize, e: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("projector columns are not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("projector shape is inconsistent")]
    BadShape,
}

/// Orthonormal projection of encoder embeddings onto their top principal
/// directions, with a deterministic sign convention.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjector {
    mean: Vec<f64>,
    /// E x D, orthonormal columns, largest-magnitude entry of each column
    /// positive.
    components: Array2<f64>,
    encoder_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct ProjectorFile {
    mean: Vec<f64>,
    matrix: Vec<Vec<f64>>,
    d: usize,
    encoder_fingerprint: String,
}

impl PcaProjector {
    /// Input width E.
    pub fn dim_in(&self) -> usize {
        self.components.nrows()
    }

    /// Output width D.
    pub fn dim_out(&self) -> usize {
        self.components.ncols()
    }

    pub fn encoder_fingerprint(&self) -> &str {
        &self.encoder_fingerprint
    }

    pub fn matches_encoder(&self, enc: &dyn TextEncoder) -> bool {
        self.encoder_fingerprint == enc.fingerprint()
    }

    /// Projects one embedding: `Wᵀ (v − mean)`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim_in(), "embedding width mismatch");
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        (0..self.dim_out())
            .map(|j| {
                self.components
                    .column(j)
                    .iter()
                    .zip(&centered)
                    .map(|(w, c)| w * c)
                    .sum()
            })
            .collect()
    }

    /// Content fingerprint covering mean, matrix, D, and the encoder id.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim_in() as u64).to_le_bytes());
        h.update((self.dim_out() as u64).to_le_bytes());
        for x in &self.mean {
            h.update(x.to_le_bytes());
        }
        for x in self.components.iter() {
            h.update(x.to_le_bytes());
        }
        h.update(self.encoder_fingerprint.as_bytes());
        format!("sha256:{}", hex_prefix(&h.finalize(), 16))
    }

    pub fn save(&self, path: &Path) -> Result<(), PcaError> {
        let file = ProjectorFile {
            mean: self.mean.clone(),
            matrix: (0..self.dim_in())
                .map(|i| self.components.row(i).to_vec())
                .collect(),
            d: self.dim_out(),
            encoder_fingerprint: self.encoder_fingerprint.clone(),
        };
        let mut json = serde_json::to_string_pretty(&file)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PcaError> {
        let file: ProjectorFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let e = file.mean.len();
        if file.matrix.len() != e || file.matrix.iter().any(|r| r.len() != file.d) {
            return Err(PcaError::BadShape);
        }
        let mut components = Array2::zeros((e, file.d));
        for (i, row) in file.matrix.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                components[(i, j)] = *x;
            }
        }
        let projector = PcaProjector {
            mean: file.mean,
            components,
            encoder_fingerprint: file.encoder_fingerprint,
        };
        projector.check_orthonormal(1e-6)?;
        Ok(projector)
    }

    fn check_orthonormal(&self, tol: f64) -> Result<(), PcaError> {
        let mut worst = 0.0f64;
        for i in 0..self.dim_out() {
            for j in i..self.dim_out() {
                let dot: f64 = self
                    .components
                    .column(i)
                    .iter()
                    .zip(self.components.column(j).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        if worst > tol {
            return Err(PcaError::NotOrthonormal(worst));
        }
        Ok(())
    }
}

/// Fits a D-dimensional PCA projector on the embeddings of the given labels.
/// Labels are deduplicated and the `unknown` sentinel is excluded; at least D
/// distinct labels must remain. Returns the projector and the explained
/// variance of each retained component, largest first.
pub fn fit_label_pca(
    labels: &[String],
    encoder: &dyn TextEncoder,
    d: usize,
) -> Result<(PcaProjector, Vec<f64>), PcaError> {
    let e = encoder.dim();
    if d > e {
        return Err(PcaError::DimExceedsEmbedding { d, e });
    }
    let mut unique: Vec<&String> = labels
        .iter()
        .filter(|l| !l.eq_ignore_ascii_case(crate::annotation::UNKNOWN_STR))
        .collect();
    unique.sort();
    unique.dedup();
    if unique.len() < d {
        return Err(PcaError::InsufficientLabels {
            have: unique.len(),
            need: d,
        });
    }

    let n = unique.len();
    let rows: Vec<Vec<f64>> = unique.iter().map(|l| encoder.encode(l)).collect();
    let mut mean = vec![0.0; e];
    for row in &rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / n as f64;
        }
    }

    // Covariance of the centered embedding matrix, (n-1)-normalized.
    let mut xc = DMatrix::<f64>::zeros(n, e);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..e {
            xc[(i, j)] = row[j] - mean[j];
        }
    }
    let cov = xc.tr_mul(&xc) / (n - 1) as f64;

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..e).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Array2::zeros((e, d));
    let mut explained = Vec::with_capacity(d);
    for (j, &src) in order.iter().take(d).enumerate() {
        explained.push(eig.eigenvalues[src].max(0.0));
        let col = eig.eigenvectors.column(src);
        // Sign convention: the largest-magnitude entry of each component is
        // positive, making the fit deterministic.
        let mut pivot = 0;
        for i in 1..e {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..e {
            components[(i, j)] = sign * col[i];
        }
    }

    Ok((
        PcaProjector {
            mean,
            components,
            encoder_fingerprint: encoder.fingerprint(),
        },
        explained,
    ))
}
