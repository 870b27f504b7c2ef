//! Command-line entry point: dataset synthesis, agent annotation, schema
//! validation, corpus statistics, training, sampling, evaluation, and
//! rendering, all driven by one TOML config file and the seed inside it.
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration or usage
//! error, 3 runtime failure. Errors are emitted as one JSON object on
//! stderr; human-readable results go to stdout.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use partmotion::agent::{annotate_batch, AgentRequest};
use partmotion::annotation::{
    dataset_stats, fill_unknown_gaps, read_annotations, validate_annotation, write_annotations,
    DatasetStats, HierarchicalAnnotation, Label, LevelCounts, PartId, PartTracks, TimedLabel,
};
use partmotion::config::RunConfig;
use partmotion::diffusion::{
    fit_normalizer, generate_motion, prepare_training_items, train, Checkpoint, CheckpointMeta,
    NoiseSchedule, CHECKPOINT_VERSION,
};
use partmotion::metrics::{evaluate_suite, render_report_table, Generator};
use partmotion::motion::{read_motions, FeatureLayout, MotionSequence, Skeleton};
use partmotion::nn::denoiser::Denoiser;
use partmotion::render::{render_frame_pair, render_motion, RenderOptions, View};
use partmotion::retrieval::{
    extract_pairs, train_retrieval_model, RetrievalLevel, RetrievalModelSet,
};
use partmotion::seeds;
use partmotion::synth::{load_dataset, synthesize_dataset, Dataset, Sample};
use partmotion::text::{fit_label_pca, PcaProjector};

#[derive(Parser)]
#[command(
    name = "partmotion",
    version,
    about = "Part-level motion annotation, conditional generation, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic annotated motion dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Decompose sequence/action annotations into part tracks via an agent backend.
    Annotate {
        #[command(flatten)]
        common: Common,
        /// Annotation file (newline-delimited JSON) to decompose.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the decomposed annotations (default: <reports>/annotated.ndjson).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Where to write the attempt transcript (default: <reports>/annotate_transcript.ndjson).
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Check an annotation file against the schema; nonzero exit on violations.
    Validate {
        /// Annotation file (newline-delimited JSON) to check.
        #[arg(long)]
        input: PathBuf,
    },
    /// Print corpus statistics for an annotation file or the configured dataset.
    Stats {
        /// Run configuration file; its dataset annotations are used when --input is absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Annotation file to summarize instead of the configured dataset.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train the conditional motion diffusion model on the dataset's train split.
    TrainGen {
        #[command(flatten)]
        common: Common,
    },
    /// Train the retrieval models used by evaluation (one per level).
    TrainEval {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a motion from an annotation file or from --seq/--action/--part flags.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Annotation file; the --index-th annotation conditions the sample.
        #[arg(long, conflicts_with_all = ["seq", "action", "part", "frames"])]
        annotation: Option<PathBuf>,
        /// Index into the annotation file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Sequence-level description covering the whole clip.
        #[arg(long)]
        seq: Option<String>,
        /// Action segment LABEL:START:END (frames). Repeatable.
        #[arg(long = "action")]
        action: Vec<String>,
        /// Part segment PART:LABEL:START:END, e.g. left_arm:"raise arm":0:40. Repeatable.
        #[arg(long = "part")]
        part: Vec<String>,
        /// Clip length in frames (flag mode only).
        #[arg(long)]
        frames: Option<usize>,
        /// Output motion file (default: <reports>/sample.json).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the evaluation suite over the test split and write a report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// "ground-truth" or "diffusion".
        #[arg(long, default_value = "ground-truth")]
        generator: String,
        /// Dataset split to evaluate against.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Render a motion file to stick-figure PNG frames.
    Render {
        /// Motion file: single-motion JSON or a motions.ndjson.
        #[arg(long)]
        motion: PathBuf,
        /// Motion id to pick from an ndjson file (default: the first).
        #[arg(long)]
        id: Option<String>,
        /// Second motion file rendered side by side.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Skeleton file (default: the built-in skeleton).
        #[arg(long)]
        skeleton: Option<PathBuf>,
        /// Directory for the PNG frames.
        #[arg(long)]
        out_dir: PathBuf,
        /// Render every n-th frame.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Orthographic view: front, side, or top.
        #[arg(long, default_value = "side")]
        view: String,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 320)]
        height: u32,
    },
}

enum CliError {
    Validation {
        message: String,
        violations: Vec<serde_json::Value>,
    },
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Validation {
                message,
                violations,
            } => json!({"error": {"code": "VALIDATION", "message": message, "violations": violations}}),
            CliError::Config(m) => json!({"error": {"code": "CONFIG", "message": m}}),
            CliError::Runtime(m) => json!({"error": {"code": "RUNTIME", "message": m}}),
        }
    }
}

fn rt(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Synth { common } => cmd_synth(&load_config(&common)?),
        Cmd::Annotate {
            common,
            input,
            output,
            transcript,
        } => cmd_annotate(&load_config(&common)?, &input, output, transcript),
        Cmd::Validate { input } => cmd_validate(&input),
        Cmd::Stats { config, input } => cmd_stats(config.as_deref(), input.as_deref()),
        Cmd::TrainGen { common } => cmd_train_gen(&load_config(&common)?),
        Cmd::TrainEval { common } => cmd_train_eval(&load_config(&common)?),
        Cmd::Sample {
            common,
            annotation,
            index,
            seq,
            action,
            part,
            frames,
            output,
        } => cmd_sample(
            &load_config(&common)?,
            annotation.as_deref(),
            index,
            seq.as_deref(),
            &action,
            &part,
            frames,
            output,
        ),
        Cmd::Evaluate {
            common,
            generator,
            split,
        } => cmd_evaluate(&load_config(&common)?, &generator, &split),
        Cmd::Render {
            motion,
            id,
            compare,
            skeleton,
            out_dir,
            stride,
            view,
            width,
            height,
        } => cmd_render(
            &motion,
            id.as_deref(),
            compare.as_deref(),
            skeleton.as_deref(),
            &out_dir,
            stride,
            &view,
            width,
            height,
        ),
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn diffusion_ckpt_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoints.join("diffusion.json")
}

fn projector_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoints.join("projector.json")
}

fn retrieval_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoints.join("retrieval.json")
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(rt)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(rt)?;
    text.push('\n');
    std::fs::write(path, text).map_err(rt)?;
    Ok(())
}

fn load_dataset_checked(cfg: &RunConfig) -> Result<Dataset, CliError> {
    load_dataset(&cfg.paths.dataset).map_err(|e| {
        cfg_err(format!(
            "cannot load dataset at {}: {e}; run `synth` first",
            cfg.paths.dataset.display()
        ))
    })
}

fn split_samples(ds: &Dataset, name: &str) -> Result<Vec<Sample>, CliError> {
    if !["train", "val", "test"].contains(&name) {
        return Err(cfg_err(format!(
            "unknown split {name:?}; expected train, val, or test"
        )));
    }
    Ok(ds.split(name).into_iter().cloned().collect())
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = synthesize_dataset(&cfg.synth_config(), &cfg.paths.dataset).map_err(rt)?;
    println!(
        "synthesized {} samples into {} (train/val/test = {}/{}/{})",
        manifest.num_samples,
        cfg.paths.dataset.display(),
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len(),
    );
    Ok(())
}

fn cmd_annotate(
    cfg: &RunConfig,
    input: &Path,
    output: Option<PathBuf>,
    transcript: Option<PathBuf>,
) -> Result<(), CliError> {
    let anns = read_input_annotations(input)?;
    let reqs: Vec<AgentRequest> = anns.iter().map(AgentRequest::from_annotation).collect();
    let backend = cfg.agent_backend().map_err(|e| cfg_err(e.to_string()))?;
    let template = cfg.prompt_template().map_err(|e| cfg_err(e.to_string()))?;
    let limiter = cfg.rate_limiter();
    let (results, entries) = annotate_batch(
        &reqs,
        backend.as_ref(),
        &template,
        cfg.agent.max_attempts,
        Some(&limiter),
    );

    let transcript_path = transcript.unwrap_or_else(|| cfg.paths.reports.join("annotate_transcript.ndjson"));
    if let Some(parent) = transcript_path.parent() {
        std::fs::create_dir_all(parent).map_err(rt)?;
    }
    let mut w = BufWriter::new(File::create(&transcript_path).map_err(rt)?);
    for entry in &entries {
        let line = serde_json::to_string(entry).map_err(rt)?;
        writeln!(w, "{line}").map_err(rt)?;
    }
    w.flush().map_err(rt)?;

    let mut annotated = Vec::new();
    let mut failures = Vec::new();
    for (req, result) in reqs.iter().zip(results) {
        match result {
            Ok(ann) => annotated.push(ann),
            Err(e) => failures.push(format!("{}: {e}", req.id)),
        }
    }
    let output = output.unwrap_or_else(|| cfg.paths.reports.join("annotated.ndjson"));
    if let Some(parent) = output.parent() {
        std::fs::create_dir_all(parent).map_err(rt)?;
    }
    write_annotations(&output, &annotated).map_err(rt)?;
    println!(
        "annotated {}/{} sequences -> {} (transcript: {})",
        annotated.len(),
        reqs.len(),
        output.display(),
        transcript_path.display(),
    );
    if !failures.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} of {} sequences failed: {}",
            failures.len(),
            reqs.len(),
            failures[0]
        )));
    }
    Ok(())
}

/// Reads an annotation NDJSON file; malformed content is a validation
/// failure, a missing file is a runtime one.
fn read_input_annotations(input: &Path) -> Result<Vec<HierarchicalAnnotation>, CliError> {
    use partmotion::annotation::AnnotationIoError;
    read_annotations(input).map_err(|e| match e {
        AnnotationIoError::Io(e) => rt(format!("cannot read {}: {e}", input.display())),
        parse => CliError::Validation {
            message: format!("{}: {parse}", input.display()),
            violations: vec![],
        },
    })
}

fn cmd_validate(input: &Path) -> Result<(), CliError> {
    let anns = read_input_annotations(input)?;
    let mut violations = Vec::new();
    for ann in &anns {
        for v in validate_annotation(ann) {
            println!("{}: {v}", ann.id);
            violations.push(json!({"id": ann.id, "violation": v.to_string()}));
        }
    }
    if violations.is_empty() {
        println!("{} annotations valid", anns.len());
        Ok(())
    } else {
        Err(CliError::Validation {
            message: format!(
                "{} violation(s) across {} annotations",
                violations.len(),
                anns.len()
            ),
            violations,
        })
    }
}

fn cmd_stats(config: Option<&Path>, input: Option<&Path>) -> Result<(), CliError> {
    let path = match (input, config) {
        (Some(input), _) => input.to_path_buf(),
        (None, Some(config)) => {
            let cfg = RunConfig::load(config).map_err(|e| cfg_err(e.to_string()))?;
            cfg.paths.dataset.join("annotations.ndjson")
        }
        (None, None) => return Err(cfg_err("stats needs --input or --config")),
    };
    let anns = read_input_annotations(&path)?;
    print!("{}", render_stats_table(&dataset_stats(&anns)));
    Ok(())
}

fn render_stats_table(stats: &DatasetStats) -> String {
    let mut out = String::new();
    out.push_str(&format!("sequences   {}\n", stats.sequences));
    out.push_str(&format!("hours       {:.3}\n", stats.hours));
    out.push_str(&format!(
        "{:<10} {:>8} {:>8} {:>11}\n",
        "level", "labeled", "unknown", "vocabulary"
    ));
    let rows: [(&str, &LevelCounts); 3] = [
        ("sequence", &stats.sequence_level),
        ("action", &stats.action_level),
        ("part", &stats.part_level),
    ];
    for (name, c) in rows {
        out.push_str(&format!(
            "{:<10} {:>8} {:>8} {:>11}\n",
            name, c.labeled, c.unknown, c.vocabulary
        ));
    }
    out.push_str(&format!("vocabulary (all levels) {}\n", stats.vocabulary));
    out
}

/// Distinct labeled texts that condition the denoiser: action and part
/// labels (sequence text is embedded raw, not projected).
fn condition_label_corpus(samples: &[Sample]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for s in samples {
        for seg in &s.annotation.actions {
            if let Some(t) = seg.label.as_text() {
                set.insert(t.to_string());
            }
        }
        for (_, track) in s.annotation.parts.iter() {
            for seg in track {
                if let Some(t) = seg.label.as_text() {
                    set.insert(t.to_string());
                }
            }
        }
    }
    set.into_iter().collect()
}

fn cmd_train_gen(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset_checked(cfg)?;
    let samples = split_samples(&ds, "train")?;
    if samples.is_empty() {
        return Err(cfg_err("the train split is empty"));
    }
    let encoder = cfg.encoder().map_err(|e| cfg_err(e.to_string()))?;
    let labels = condition_label_corpus(&samples);
    let (projector, _) =
        fit_label_pca(&labels, encoder.as_ref(), cfg.encoder.label_dim).map_err(rt)?;
    let normalizer = fit_normalizer(&samples, &ds.skeleton).map_err(rt)?;
    let feature_dim = FeatureLayout {
        num_joints: ds.skeleton.num_joints(),
    }
    .width();
    let dcfg = cfg.denoiser_config(feature_dim, encoder.dim());
    let max_frames = samples.iter().map(|s| s.motion.num_frames()).max().unwrap();
    if max_frames > dcfg.max_frames {
        return Err(cfg_err(format!(
            "model.max_frames = {} but the train split has a {}-frame clip",
            dcfg.max_frames, max_frames
        )));
    }
    let model = Denoiser::new(dcfg.clone());
    let mut params = model.init_params(&mut seeds::rng(cfg.seed, "gen-init"));
    let items =
        prepare_training_items(&samples, &ds.skeleton, &normalizer, encoder.as_ref(), &projector)
            .map_err(rt)?;
    let schedule = NoiseSchedule::cosine(cfg.model.diffusion_steps);

    std::fs::create_dir_all(&cfg.paths.reports).map_err(rt)?;
    let log_path = cfg.paths.reports.join("train_gen.ndjson");
    let mut log = BufWriter::new(File::create(&log_path).map_err(rt)?);
    let tcfg = cfg.train_config();
    println!(
        "training diffusion: {} sequences, {} steps, batch {}, {} parameters",
        items.len(),
        tcfg.steps,
        tcfg.batch_size,
        params.len(),
    );
    let summary = train(&model, &mut params, &schedule, &items, &tcfg, Some(&mut log)).map_err(rt)?;
    log.flush().map_err(rt)?;

    let window = 50.min(summary.losses.len());
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let first = mean(&summary.losses[..window]);
    let last = mean(&summary.losses[summary.losses.len() - window..]);
    let final_loss = *summary.losses.last().unwrap();

    std::fs::create_dir_all(&cfg.paths.checkpoints).map_err(rt)?;
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: dcfg,
        alpha_bar: schedule.alpha_bars().to_vec(),
        params,
        normalizer,
        projector_fingerprint: projector.fingerprint(),
        metadata: CheckpointMeta {
            encoder: cfg.encoder.name.clone(),
            train_steps: tcfg.steps as u64,
            final_loss,
            num_train_sequences: samples.len(),
        },
    };
    let ckpt_path = diffusion_ckpt_path(cfg);
    ckpt.save(&ckpt_path).map_err(rt)?;
    projector.save(&projector_path(cfg)).map_err(rt)?;
    println!(
        "loss (mean of {window}): first {first:.4} -> last {last:.4}; checkpoint {} (log: {})",
        ckpt_path.display(),
        log_path.display(),
    );
    Ok(())
}

fn cmd_train_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset_checked(cfg)?;
    let samples = split_samples(&ds, "train")?;
    let encoder = cfg.encoder().map_err(|e| cfg_err(e.to_string()))?;
    let mut models = Vec::new();
    for (i, level) in RetrievalLevel::ALL.into_iter().enumerate() {
        let pairs = extract_pairs(&samples, &ds.skeleton, level).map_err(rt)?;
        // Distinct init stream per level.
        let mut rcfg = cfg.retrieval_config();
        rcfg.seed = cfg.seed.wrapping_add(i as u64);
        let (model, losses) =
            train_retrieval_model(&pairs, level, encoder.as_ref(), &rcfg).map_err(rt)?;
        println!(
            "{:<10} {:>5} pairs, loss {:.4} -> {:.4}",
            level.name(),
            pairs.len(),
            losses.first().unwrap(),
            losses.last().unwrap(),
        );
        models.push(model);
    }
    let path = retrieval_path(cfg);
    std::fs::create_dir_all(&cfg.paths.checkpoints).map_err(rt)?;
    RetrievalModelSet::new(models).save(&path).map_err(rt)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Parses LABEL:START:END (frame numbers at the end, label may contain colons).
fn parse_action_flag(s: &str) -> Result<TimedLabel, CliError> {
    let err = || cfg_err(format!("--action {s:?} is not LABEL:START:END"));
    let (rest, end) = s.rsplit_once(':').ok_or_else(err)?;
    let (label, start) = rest.rsplit_once(':').ok_or_else(err)?;
    let (start, end) = (
        start.parse().map_err(|_| err())?,
        end.parse().map_err(|_| err())?,
    );
    if label.trim().is_empty() {
        return Err(err());
    }
    Ok(TimedLabel::text(label, start, end))
}

/// Parses PART:LABEL:START:END; the part name is case-insensitive.
fn parse_part_flag(s: &str) -> Result<(PartId, TimedLabel), CliError> {
    let (part_str, rest) = s
        .split_once(':')
        .ok_or_else(|| cfg_err(format!("--part {s:?} is not PART:LABEL:START:END")))?;
    let wanted = part_str.to_lowercase();
    let part = PartId::ALL
        .into_iter()
        .find(|p| p.name() == wanted)
        .ok_or_else(|| {
            cfg_err(format!(
                "unknown part {part_str:?}; expected one of {}",
                PartId::ALL.map(|p| p.name()).join(", ")
            ))
        })?;
    let seg = parse_action_flag(rest)
        .map_err(|_| cfg_err(format!("--part {s:?} is not PART:LABEL:START:END")))?;
    Ok((part, seg))
}

fn annotation_from_flags(
    cfg: &RunConfig,
    seq: Option<&str>,
    actions: &[String],
    parts: &[String],
    frames: Option<usize>,
) -> Result<HierarchicalAnnotation, CliError> {
    let num_frames =
        frames.ok_or_else(|| cfg_err("--frames is required when sampling from flags"))?;
    let sequence = vec![match seq {
        Some(text) => TimedLabel::new(Label::new(text), 0, num_frames),
        None => TimedLabel::unknown(0, num_frames),
    }];
    let mut tracks = PartTracks::default();
    for spec in parts {
        let (part, seg) = parse_part_flag(spec)?;
        tracks.get_mut(part).push(seg);
    }
    let actions = actions
        .iter()
        .map(|s| parse_action_flag(s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HierarchicalAnnotation {
        id: "sample".to_string(),
        fps: cfg.synth.fps,
        num_frames,
        sequence,
        actions,
        parts: tracks,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    cfg: &RunConfig,
    annotation: Option<&Path>,
    index: usize,
    seq: Option<&str>,
    actions: &[String],
    parts: &[String],
    frames: Option<usize>,
    output: Option<PathBuf>,
) -> Result<(), CliError> {
    let raw = match annotation {
        Some(path) => {
            let anns = read_input_annotations(path)?;
            anns.into_iter().nth(index).ok_or_else(|| {
                cfg_err(format!("--index {index} out of range for {}", path.display()))
            })?
        }
        None => annotation_from_flags(cfg, seq, actions, parts, frames)?,
    };
    let ann = fill_unknown_gaps(raw).map_err(|e| CliError::Validation {
        message: e.to_string(),
        violations: vec![json!({"violation": e.to_string()})],
    })?;
    let violations = validate_annotation(&ann);
    if !violations.is_empty() {
        return Err(CliError::Validation {
            message: format!("the conditioning annotation has {} violation(s)", violations.len()),
            violations: violations
                .iter()
                .map(|v| json!({"id": ann.id, "violation": v.to_string()}))
                .collect(),
        });
    }

    let ckpt = Checkpoint::load(&diffusion_ckpt_path(cfg)).map_err(|e| {
        cfg_err(format!("cannot load diffusion checkpoint: {e}; run `train-gen` first"))
    })?;
    let projector = PcaProjector::load(&projector_path(cfg)).map_err(|e| {
        cfg_err(format!("cannot load label projector: {e}; run `train-gen` first"))
    })?;
    if ckpt.projector_fingerprint != projector.fingerprint() {
        return Err(cfg_err(
            "the stored projector does not match the checkpoint; re-run `train-gen`",
        ));
    }
    if cfg.encoder.name != ckpt.metadata.encoder {
        return Err(cfg_err(format!(
            "config encoder {:?} differs from the checkpoint's {:?}",
            cfg.encoder.name, ckpt.metadata.encoder
        )));
    }
    if ann.num_frames > ckpt.config.max_frames {
        return Err(cfg_err(format!(
            "{} frames exceeds the model's max_frames = {}",
            ann.num_frames, ckpt.config.max_frames
        )));
    }
    let encoder = cfg.encoder().map_err(|e| cfg_err(e.to_string()))?;
    let skel = load_skeleton_for(cfg, ckpt.config.feature_dim)?;

    let model = Denoiser::new(ckpt.config.clone());
    let mut rng = seeds::rng_at(cfg.seed, "sample", 0);
    let out = generate_motion(
        &model,
        &ckpt.params,
        &ckpt.schedule(),
        &ann,
        &skel,
        &ckpt.normalizer,
        encoder.as_ref(),
        &projector,
        &mut rng,
    )
    .map_err(rt)?;

    let output = output.unwrap_or_else(|| cfg.paths.reports.join("sample.json"));
    if let Some(parent) = output.parent() {
        std::fs::create_dir_all(parent).map_err(rt)?;
    }
    out.motion.save(&output).map_err(rt)?;
    let ann_path = output.with_extension("annotation.json");
    write_json(&ann_path, &out.annotation)?;
    println!(
        "wrote {} ({} frames at {} fps; conditioning: {})",
        output.display(),
        out.motion.num_frames(),
        out.motion.fps,
        ann_path.display(),
    );
    Ok(())
}

/// The skeleton a checkpoint was trained for: the dataset's if it matches
/// the checkpoint's feature width, else the built-in one.
fn load_skeleton_for(cfg: &RunConfig, feature_dim: usize) -> Result<Skeleton, CliError> {
    let skel = match Skeleton::load(&cfg.paths.dataset.join("skeleton.json")) {
        Ok(skel) => skel,
        Err(_) => Skeleton::toy(),
    };
    let width = FeatureLayout {
        num_joints: skel.num_joints(),
    }
    .width();
    if width != feature_dim {
        return Err(cfg_err(format!(
            "skeleton feature width {width} does not match the checkpoint's {feature_dim}"
        )));
    }
    Ok(skel)
}

fn cmd_evaluate(cfg: &RunConfig, generator: &str, split: &str) -> Result<(), CliError> {
    if !matches!(generator, "ground-truth" | "diffusion") {
        return Err(cfg_err(format!(
            "unknown generator {generator:?}; expected \"ground-truth\" or \"diffusion\""
        )));
    }
    let ds = load_dataset_checked(cfg)?;
    let samples = split_samples(&ds, split)?;
    let models = RetrievalModelSet::load(&retrieval_path(cfg)).map_err(|e| {
        cfg_err(format!("cannot load retrieval models: {e}; run `train-eval` first"))
    })?;
    let encoder = cfg.encoder().map_err(|e| cfg_err(e.to_string()))?;

    let diffusion_state = match generator {
        "ground-truth" => None,
        "diffusion" => {
            let ckpt = Checkpoint::load(&diffusion_ckpt_path(cfg)).map_err(|e| {
                cfg_err(format!("cannot load diffusion checkpoint: {e}; run `train-gen` first"))
            })?;
            let projector = PcaProjector::load(&projector_path(cfg)).map_err(|e| {
                cfg_err(format!("cannot load label projector: {e}; run `train-gen` first"))
            })?;
            if ckpt.projector_fingerprint != projector.fingerprint() {
                return Err(cfg_err(
                    "the stored projector does not match the checkpoint; re-run `train-gen`",
                ));
            }
            if cfg.encoder.name != ckpt.metadata.encoder {
                return Err(cfg_err(format!(
                    "config encoder {:?} differs from the checkpoint's {:?}",
                    cfg.encoder.name, ckpt.metadata.encoder
                )));
            }
            Some((ckpt, projector))
        }
        _ => unreachable!("generator name checked above"),
    };
    let gen = match &diffusion_state {
        None => Generator::GroundTruth,
        Some((ckpt, projector)) => Generator::Diffusion {
            checkpoint: ckpt,
            projector,
        },
    };

    let report = evaluate_suite(
        &gen,
        &samples,
        &models,
        &ds.skeleton,
        encoder.as_ref(),
        &cfg.eval_config(),
    )
    .map_err(rt)?;
    print!("{}", render_report_table(&report));
    let path = cfg
        .paths
        .reports
        .join(format!("evaluate_{}.json", report.generator));
    write_json(&path, &report)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_view(s: &str) -> Result<View, CliError> {
    match s {
        "front" => Ok(View::Front),
        "side" => Ok(View::Side),
        "top" => Ok(View::Top),
        other => Err(cfg_err(format!(
            "unknown view {other:?}; expected front, side, or top"
        ))),
    }
}

/// Loads a single-motion JSON file, or picks one motion out of an ndjson.
fn load_motion_arg(path: &Path, id: Option<&str>) -> Result<(String, MotionSequence), CliError> {
    if path.extension().is_some_and(|e| e == "ndjson") {
        let motions = read_motions(path).map_err(rt)?;
        return match id {
            Some(id) => motions
                .into_iter()
                .find(|(mid, _)| mid == id)
                .ok_or_else(|| cfg_err(format!("no motion {id:?} in {}", path.display()))),
            None => motions
                .into_iter()
                .next()
                .ok_or_else(|| rt(format!("{} holds no motions", path.display()))),
        };
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "motion".to_string());
    Ok((stem, MotionSequence::load(path).map_err(rt)?))
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    motion: &Path,
    id: Option<&str>,
    compare: Option<&Path>,
    skeleton: Option<&Path>,
    out_dir: &Path,
    stride: usize,
    view: &str,
    width: u32,
    height: u32,
) -> Result<(), CliError> {
    if stride == 0 {
        return Err(cfg_err("--stride must be at least 1"));
    }
    let skel = match skeleton {
        Some(path) => Skeleton::load(path).map_err(|e| cfg_err(e.to_string()))?,
        None => Skeleton::toy(),
    };
    let opts = RenderOptions {
        width,
        height,
        view: parse_view(view)?,
        margin: RenderOptions::default().margin,
    };
    let (stem, main) = load_motion_arg(motion, id)?;
    main.validate(&skel).map_err(|e| CliError::Validation {
        message: e.to_string(),
        violations: vec![json!({"violation": e.to_string()})],
    })?;

    let written = match compare {
        None => render_motion(&main, &skel, &opts, stride, out_dir, &stem).map_err(rt)?,
        Some(other_path) => {
            let (_, other) = load_motion_arg(other_path, None)?;
            other.validate(&skel).map_err(rt)?;
            std::fs::create_dir_all(out_dir).map_err(rt)?;
            let frames = main.num_frames().max(other.num_frames());
            let mut paths = Vec::new();
            for frame in (0..frames).step_by(stride) {
                let img = render_frame_pair(&main, &other, &skel, frame, &opts);
                let path = out_dir.join(format!("{stem}_pair_f{frame:05}.png"));
                img.save(&path).map_err(rt)?;
                paths.push(path);
            }
            paths
        }
    };
    println!("wrote {} frames to {}", written.len(), out_dir.display());
    Ok(())
}
