//! Run configuration: one TOML file plus the seed inside it drive every
//! subcommand, so two runs from the same file produce identical artifacts.
//!
//! Only `seed` and `[paths]` are required; every other section falls back
//! to library defaults. Unknown keys are rejected rather than ignored so a
//! typo cannot silently run with defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentBackend, HttpBackend, MockBackend, OfflineBackend, RateLimiter};
use crate::diffusion::{TrainConfig, DEFAULT_DIFFUSION_STEPS};
use crate::metrics::EvalConfig;
use crate::nn::denoiser::DenoiserConfig;
use crate::retrieval::RetrievalTrainConfig;
use crate::synth::SynthConfig;
use crate::text::{encoder_from_name, EncoderNameError, TextEncoder};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Encoder(#[from] EncoderNameError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub num_samples: usize,
    pub fps: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub sparsity: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            num_samples: d.num_samples,
            fps: d.fps,
            min_frames: d.min_frames,
            max_frames: d.max_frames,
            sparsity: d.sparsity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    /// Encoder name as accepted by [`encoder_from_name`], e.g. "toy-hash:32".
    pub name: String,
    /// PCA projection width D for part/action labels.
    pub label_dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            name: "toy-hash:32".to_string(),
            label_dim: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ff_mult: usize,
    pub fusion_hidden: usize,
    pub max_frames: usize,
    pub diffusion_steps: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            model_dim: 64,
            num_heads: 4,
            num_layers: 2,
            ff_mult: 2,
            fusion_hidden: 64,
            max_frames: 200,
            diffusion_steps: DEFAULT_DIFFUSION_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub mask_target_rate: f64,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            steps: d.steps,
            batch_size: d.batch_size,
            lr: d.lr,
            weight_decay: d.weight_decay,
            mask_target_rate: d.mask_target_rate,
            log_every: d.log_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub temperature: f64,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let d = RetrievalTrainConfig::default();
        RetrievalSection {
            steps: d.steps,
            batch_size: d.batch_size,
            lr: d.lr,
            weight_decay: d.weight_decay,
            hidden: d.hidden,
            embed_dim: d.embed_dim,
            temperature: d.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub repeats: usize,
    pub batch_size: usize,
    pub diversity_pairs: usize,
    pub filter_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        EvalSection {
            repeats: d.repeats,
            batch_size: d.batch_size,
            diversity_pairs: d.diversity_pairs,
            filter_threshold: d.filter_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    /// "mock", "offline", or "http".
    pub backend: String,
    /// HTTP backend only: completions endpoint URL.
    pub endpoint: String,
    /// HTTP backend only: model identifier sent with each request.
    pub model: String,
    pub timeout_secs: u64,
    pub max_attempts: usize,
    pub requests_per_minute: u32,
    /// Prompt template file; empty string selects the built-in template.
    pub template: String,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            backend: "mock".to_string(),
            endpoint: String::new(),
            model: String::new(),
            timeout_secs: 30,
            max_attempts: 3,
            requests_per_minute: 30,
            template: String::new(),
        }
    }
}

/// Everything a run needs. `seed` and `[paths]` must be stated in the
/// file; there is no implicit seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub agent: AgentSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(source),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field invariants that type-level parsing cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        let s = &self.synth;
        if !(s.fps > 0.0) {
            return bad(format!("synth.fps must be positive, got {}", s.fps));
        }
        if s.num_samples < 10 {
            return bad(format!(
                "synth.num_samples must be at least 10 to form train/val/test splits, got {}",
                s.num_samples
            ));
        }
        if s.min_frames < 40 || s.max_frames < s.min_frames {
            return bad(format!(
                "synth frame range must satisfy 40 <= min <= max, got {}..{}",
                s.min_frames, s.max_frames
            ));
        }
        if !(0.0..=1.0).contains(&s.sparsity) {
            return bad(format!("synth.sparsity must be in [0, 1], got {}", s.sparsity));
        }
        let m = &self.model;
        if m.model_dim == 0 || m.num_heads == 0 || m.model_dim % m.num_heads != 0 {
            return bad(format!(
                "model.model_dim must be a positive multiple of num_heads, got {} / {}",
                m.model_dim, m.num_heads
            ));
        }
        if m.num_layers == 0 || m.ff_mult == 0 || m.fusion_hidden == 0 || m.diffusion_steps == 0 {
            return bad("model sizes must all be positive".to_string());
        }
        if self.encoder.label_dim == 0 {
            return bad("encoder.label_dim must be positive".to_string());
        }
        if !(self.train.mask_target_rate > 0.0 && self.train.mask_target_rate < 1.0) {
            return bad(format!(
                "train.mask_target_rate must be in (0, 1), got {}",
                self.train.mask_target_rate
            ));
        }
        if !(self.retrieval.temperature > 0.0) {
            return bad(format!(
                "retrieval.temperature must be positive, got {}",
                self.retrieval.temperature
            ));
        }
        if !(self.eval.filter_threshold > 0.0 && self.eval.filter_threshold < 1.0) {
            return bad(format!(
                "eval.filter_threshold must be in (0, 1), got {}",
                self.eval.filter_threshold
            ));
        }
        if self.eval.repeats == 0 || self.eval.batch_size < 3 {
            return bad("eval needs repeats >= 1 and batch_size >= 3".to_string());
        }
        if self.agent.max_attempts == 0 || self.agent.requests_per_minute == 0 {
            return bad("agent needs max_attempts >= 1 and requests_per_minute >= 1".to_string());
        }
        match self.agent.backend.as_str() {
            "mock" | "offline" => {}
            "http" => {
                if self.agent.endpoint.is_empty() {
                    return bad("agent.backend = \"http\" requires agent.endpoint".to_string());
                }
            }
            other => {
                return bad(format!(
                    "unknown agent.backend {other:?}; expected \"mock\", \"offline\", or \"http\""
                ))
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// A fully defaulted config rooted at `root` (dataset/checkpoints/report
    /// directories underneath it).
    pub fn example(root: &Path) -> RunConfig {
        RunConfig {
            seed: 0,
            paths: Paths {
                dataset: root.join("data"),
                checkpoints: root.join("checkpoints"),
                reports: root.join("reports"),
            },
            synth: SynthSection::default(),
            encoder: EncoderSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            retrieval: RetrievalSection::default(),
            eval: EvalSection::default(),
            agent: AgentSection::default(),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_samples: self.synth.num_samples,
            fps: self.synth.fps,
            min_frames: self.synth.min_frames,
            max_frames: self.synth.max_frames,
            sparsity: self.synth.sparsity,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            mask_target_rate: self.train.mask_target_rate,
            seed: self.seed,
            log_every: self.train.log_every,
        }
    }

    pub fn retrieval_config(&self) -> RetrievalTrainConfig {
        RetrievalTrainConfig {
            steps: self.retrieval.steps,
            batch_size: self.retrieval.batch_size,
            lr: self.retrieval.lr,
            weight_decay: self.retrieval.weight_decay,
            hidden: self.retrieval.hidden,
            embed_dim: self.retrieval.embed_dim,
            temperature: self.retrieval.temperature,
            seed: self.seed,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            repeats: self.eval.repeats,
            batch_size: self.eval.batch_size,
            diversity_pairs: self.eval.diversity_pairs,
            filter_threshold: self.eval.filter_threshold,
            seed: self.seed,
        }
    }

    pub fn denoiser_config(&self, feature_dim: usize, text_dim: usize) -> DenoiserConfig {
        let mut cfg = DenoiserConfig::new(feature_dim, self.encoder.label_dim, text_dim);
        cfg.model_dim = self.model.model_dim;
        cfg.num_heads = self.model.num_heads;
        cfg.num_layers = self.model.num_layers;
        cfg.ff_mult = self.model.ff_mult;
        cfg.fusion_hidden = self.model.fusion_hidden;
        cfg.max_frames = self.model.max_frames;
        cfg
    }

    pub fn encoder(&self) -> Result<Box<dyn TextEncoder>, ConfigError> {
        Ok(encoder_from_name(&self.encoder.name)?)
    }

    pub fn agent_backend(&self) -> Result<Box<dyn AgentBackend>, ConfigError> {
        match self.agent.backend.as_str() {
            "mock" => Ok(Box::new(MockBackend)),
            "offline" => Ok(Box::new(OfflineBackend)),
            "http" => HttpBackend::from_env(
                self.agent.endpoint.clone(),
                self.agent.model.clone(),
                Duration::from_secs(self.agent.timeout_secs),
            )
            .map(|b| Box::new(b) as Box<dyn AgentBackend>)
            .map_err(|e| ConfigError::Invalid(e.to_string())),
            other => Err(ConfigError::Invalid(format!("unknown agent.backend {other:?}"))),
        }
    }

    pub fn rate_limiter(&self) -> RateLimiter {
        RateLimiter::per_minute(self.agent.requests_per_minute)
    }

    /// The prompt template text: the built-in default unless the config
    /// names a file.
    pub fn prompt_template(&self) -> Result<String, ConfigError> {
        if self.agent.template.is_empty() {
            return Ok(crate::agent::DEFAULT_TEMPLATE.to_string());
        }
        let path = Path::new(&self.agent.template);
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[paths]
dataset = "data"
checkpoints = "ckpt"
reports = "reports"
"#;

    fn parse(text: &str) -> Result<RunConfig, toml::de::Error> {
        toml::from_str(text)
    }

    #[test]
    fn minimal_config_gets_library_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.lr, 2e-4);
        assert_eq!(cfg.model.diffusion_steps, 100);
        assert_eq!(cfg.retrieval.temperature, 0.07);
        // The one seed reaches every stage config.
        assert_eq!(cfg.synth_config().seed, 7);
        assert_eq!(cfg.train_config().seed, 7);
        assert_eq!(cfg.retrieval_config().seed, 7);
        assert_eq!(cfg.eval_config().seed, 7);
    }

    #[test]
    fn the_seed_must_be_stated() {
        let err = parse("[paths]\ndataset = \"d\"\ncheckpoints = \"c\"\nreports = \"r\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse(&format!("{MINIMAL}\n[train]\nlearning_rate = 0.1\n")).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn cross_field_violations_are_named() {
        let mut cfg = RunConfig::example(Path::new("/tmp/x"));
        cfg.synth.min_frames = 90;
        cfg.synth.max_frames = 80;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("frame range"), "{err}");

        let mut cfg = RunConfig::example(Path::new("/tmp/x"));
        cfg.model.model_dim = 30;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::example(Path::new("/tmp/x"));
        cfg.agent.backend = "carrier-pigeon".to_string();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("carrier-pigeon"), "{err}");
    }

    #[test]
    fn example_round_trips_through_toml() {
        let cfg = RunConfig::example(Path::new("run"));
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn denoiser_config_takes_model_section_sizes() {
        let mut cfg = RunConfig::example(Path::new("run"));
        cfg.model.model_dim = 32;
        cfg.model.num_heads = 2;
        cfg.encoder.label_dim = 6;
        let dc = cfg.denoiser_config(121, 32);
        assert_eq!(dc.feature_dim, 121);
        assert_eq!(dc.label_dim, 6);
        assert_eq!(dc.text_dim, 32);
        assert_eq!(dc.model_dim, 32);
        assert_eq!(dc.num_heads, 2);
    }

    #[test]
    fn builtin_template_is_used_when_no_file_is_named() {
        let cfg = RunConfig::example(Path::new("run"));
        assert_eq!(
            cfg.prompt_template().unwrap(),
            crate::agent::DEFAULT_TEMPLATE
        );
        assert!(cfg.agent_backend().unwrap().name().contains("mock"));
    }
}
