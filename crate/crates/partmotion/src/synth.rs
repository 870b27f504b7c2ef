//! Procedural generation of paired (motion, annotation) samples.
//!
//! A sample is built from 1-4 action windows tiling the timeline. Each
//! window instantiates a composition template: a named action built from
//! atomic motions, each driving the joints of exactly one body part (or the
//! root trajectory) over a sub-interval of the window. Part labels are the
//! atomic names, action labels the template names, and the sequence label
//! joins the per-window sentences. Labels are therefore correct by
//! construction, and each atomic carries a detection statistic that
//! verifies, via forward kinematics, that its labeled segments really move.
//!
//! Atomic envelopes start and end at the rest pose except the arm raises,
//! which hold their final pose; every atomic's end boundary is blended back
//! into the following motion over a fixed 5-frame crossfade in 6D rotation
//! space.
//!
//! A dataset directory holds `motions.ndjson`, `annotations.ndjson`,
//! `skeleton.json`, and `manifest.json` (seed, split membership, library
//! version).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    fill_unknown_gaps, validate_annotation, HierarchicalAnnotation, Label, PartId, TimedLabel,
};
use crate::motion::{
    extract_yaw, forward_kinematics, read_motions, rot6d, write_motions, MotionSequence, Skeleton,
    TOY_REST_ROOT_Z,
};
use crate::seeds;

/// Library identifier recorded in dataset manifests.
pub const LIBRARY_VERSION: &str = "atomics-v1";

/// Frames over which a held end pose is blended back into the motion.
pub const CROSSFADE_FRAMES: usize = 5;

/// The motion primitive an atomic realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomicKind {
    /// Shoulder ramp that lifts the arm sideways and holds it.
    RaiseArm { left: bool },
    /// Lifted shoulder with an oscillating elbow.
    WaveArm { left: bool },
    /// Hip swing with knee flexion.
    StepLeg { left: bool },
    /// Spine pitch bump: bend forward and straighten.
    BendForward,
    /// Oscillating head pitch.
    Nod,
    /// Yaw rotation of the root trajectory.
    Turn,
    /// Root translation along the current heading.
    Advance,
}

/// One atomic motion: a label, the single part it animates, its primitive,
/// an amplitude range, and a calibrated detection threshold for the
/// alignment check.
#[derive(Debug, Clone)]
pub struct AtomicDef {
    pub name: &'static str,
    pub part: PartId,
    pub kind: AtomicKind,
    pub amplitude: (f64, f64),
    /// Minimum value of [`detection_stat`] on a segment this atomic drove.
    pub detection_threshold: f64,
}

/// A named action: which atomics run together in a window, and the sentence
/// fragment contributed to the sequence label.
#[derive(Debug, Clone)]
pub struct CompositionTemplate {
    pub action_name: &'static str,
    /// Indices into the atomic library.
    pub atomics: Vec<usize>,
    pub sentence: &'static str,
}

/// The built-in 10-atomic library spanning all seven parts.
pub fn default_library() -> Vec<AtomicDef> {
    use AtomicKind::*;
    use PartId::*;
    vec![
        AtomicDef { name: "raises the left arm", part: LeftArm, kind: RaiseArm { left: true }, amplitude: (1.7, 2.4), detection_threshold: 0.1 },
        AtomicDef { name: "raises the right arm", part: RightArm, kind: RaiseArm { left: false }, amplitude: (1.7, 2.4), detection_threshold: 0.1 },
        AtomicDef { name: "waves the left arm", part: LeftArm, kind: WaveArm { left: true }, amplitude: (0.45, 0.7), detection_threshold: 0.12 },
        AtomicDef { name: "waves the right arm", part: RightArm, kind: WaveArm { left: false }, amplitude: (0.45, 0.7), detection_threshold: 0.12 },
        AtomicDef { name: "steps with the left leg", part: LeftLeg, kind: StepLeg { left: true }, amplitude: (0.4, 0.55), detection_threshold: 0.1 },
        AtomicDef { name: "steps with the right leg", part: RightLeg, kind: StepLeg { left: false }, amplitude: (0.4, 0.55), detection_threshold: 0.1 },
        AtomicDef { name: "bends forward", part: Spine, kind: BendForward, amplitude: (0.9, 1.3), detection_threshold: 0.08 },
        AtomicDef { name: "nods the head", part: Head, kind: Nod, amplitude: (0.45, 0.7), detection_threshold: 0.25 },
        AtomicDef { name: "turns around", part: Trajectory, kind: Turn, amplitude: (PI, 1.6 * PI), detection_threshold: 1.0 },
        AtomicDef { name: "moves forward", part: Trajectory, kind: Advance, amplitude: (0.8, 1.4), detection_threshold: 0.25 },
    ]
}

/// The built-in composition templates. Indices refer to [`default_library`].
pub fn default_templates() -> Vec<CompositionTemplate> {
    let t = |action_name, atomics, sentence| CompositionTemplate { action_name, atomics, sentence };
    vec![
        t("walks", vec![4, 5, 9], "walks forward"),
        t("walks waving the left arm", vec![4, 5, 9, 2], "walks forward waving the left arm"),
        t("walks waving the right arm", vec![4, 5, 9, 3], "walks forward waving the right arm"),
        t("walks nodding the head", vec![4, 5, 9, 7], "walks forward nodding the head"),
        t("marches in place", vec![4, 5], "marches in place"),
        t("stands still", vec![], "stands still"),
        t("raises the left arm", vec![0], "raises the left arm"),
        t("raises the right arm", vec![1], "raises the right arm"),
        t("waves the left arm", vec![2], "waves the left arm"),
        t("waves the right arm", vec![3], "waves the right arm"),
        t("turns around", vec![8], "turns around"),
        t("bends forward", vec![6], "bends forward"),
        t("nods the head", vec![7], "nods the head"),
        t("bends forward raising the left arm", vec![6, 0], "bends forward while raising the left arm"),
    ]
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// sin²(pi u): zero at both ends, one in the middle.
fn gate(u: f64) -> f64 {
    let s = (PI * u).sin();
    s * s
}

/// Joint rotation produced by an atomic at normalized time `u` in [0, 1).
/// Returns rotations for the joints of the atomic's part, keyed by the
/// built-in skeleton's joint indices.
fn atomic_pose(kind: AtomicKind, amp: f64, cycles: f64, u: f64) -> Vec<(usize, Rotation3<f64>)> {
    let rot_x = |a: f64| Rotation3::from_axis_angle(&Vector3::x_axis(), a);
    let rot_y = |a: f64| Rotation3::from_axis_angle(&Vector3::y_axis(), a);
    match kind {
        AtomicKind::RaiseArm { left } => {
            let sign = if left { 1.0 } else { -1.0 };
            let angle = sign * amp * smoothstep(u / 0.3);
            let shoulder = if left { 3 } else { 6 };
            vec![(shoulder, rot_x(angle))]
        }
        AtomicKind::WaveArm { left } => {
            let sign = if left { 1.0 } else { -1.0 };
            let lift = sign * 1.1 * gate(u);
            let swing = sign * amp * (2.0 * PI * cycles * u).sin() * gate(u);
            let (shoulder, elbow) = if left { (3, 4) } else { (6, 7) };
            vec![(shoulder, rot_x(lift)), (elbow, rot_x(swing))]
        }
        AtomicKind::StepLeg { left } => {
            let hip_swing = amp * (2.0 * PI * cycles * u).sin() * gate(u);
            let knee_flex = 0.5 * (1.0 - (2.0 * PI * cycles * u).cos()) / 2.0 * gate(u);
            let (hip, knee) = if left { (9, 10) } else { (11, 12) };
            vec![(hip, rot_y(hip_swing)), (knee, rot_y(knee_flex))]
        }
        AtomicKind::BendForward => {
            vec![(1, rot_y(amp * gate(u)))]
        }
        AtomicKind::Nod => {
            vec![(2, rot_y(amp * (2.0 * PI * cycles * u).sin() * gate(u)))]
        }
        AtomicKind::Turn | AtomicKind::Advance => vec![],
    }
}

/// One atomic scheduled on a sub-interval of a window.
#[derive(Debug, Clone)]
struct ScheduledAtomic {
    atomic: usize,
    start: usize,
    end: usize,
    amp: f64,
    cycles: f64,
}

/// Configuration for dataset synthesis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_samples: usize,
    pub fps: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Probability that a labeled part segment is replaced by `unknown`.
    pub sparsity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_samples: 200,
            fps: 20.0,
            min_frames: 100,
            max_frames: 140,
            sparsity: 0.3,
            seed: 0,
        }
    }
}

/// Generates one aligned (motion, annotation) pair. All randomness comes
/// from `rng`, so a fixed rng state reproduces the sample bit for bit.
pub fn synthesize_sample(
    library: &[AtomicDef],
    templates: &[CompositionTemplate],
    skel: &Skeleton,
    id: &str,
    min_frames: usize,
    max_frames: usize,
    fps: f64,
    rng: &mut impl Rng,
) -> (MotionSequence, HierarchicalAnnotation) {
    assert!(!library.is_empty() && !templates.is_empty());
    assert!(min_frames >= 40 && max_frames >= min_frames);
    let t = rng.random_range(min_frames..=max_frames);

    // Tile [0, t) with 1-4 windows of at least 30 frames: give each window
    // the minimum, then split the slack at sorted uniform offsets.
    let max_windows = (t / 30).clamp(1, 4);
    let num_windows = rng.random_range(1..=max_windows);
    let slack = t - 30 * num_windows;
    let mut extras: Vec<usize> = (1..num_windows)
        .map(|_| rng.random_range(0..=slack))
        .collect();
    extras.sort_unstable();
    let mut bounds = vec![0];
    for (i, e) in extras.iter().enumerate() {
        bounds.push(30 * (i + 1) + e);
    }
    bounds.push(t);

    // Pick a template per window and schedule its atomics on sub-intervals.
    let mut actions = Vec::new();
    let mut sentences = Vec::new();
    let mut scheduled: Vec<ScheduledAtomic> = Vec::new();
    for w in 0..bounds.len() - 1 {
        let (ws, we) = (bounds[w], bounds[w + 1]);
        let template = &templates[rng.random_range(0..templates.len())];
        actions.push(TimedLabel::text(template.action_name, ws, we));
        sentences.push(template.sentence);
        for &atomic in &template.atomics {
            let len = we - ws;
            let start = ws + rng.random_range(0..=len / 4);
            let end = we - rng.random_range(0..=len / 4);
            let def = &library[atomic];
            scheduled.push(ScheduledAtomic {
                atomic,
                start,
                end,
                amp: rng.random_range(def.amplitude.0..def.amplitude.1),
                cycles: rng.random_range(2.0..4.0),
            });
        }
    }

    // Root trajectory: integrate per-frame speed and yaw rate.
    let mut speed = vec![0.0; t];
    let mut yaw_rate = vec![0.0; t];
    for s in &scheduled {
        let def = &library[s.atomic];
        let len = (s.end - s.start) as f64;
        match def.kind {
            AtomicKind::Turn => {
                let gate_sum: f64 = (s.start..s.end)
                    .map(|f| gate((f - s.start) as f64 / len))
                    .sum();
                let total = s.amp * if s.cycles < 3.0 { 1.0 } else { -1.0 };
                for f in s.start..s.end {
                    yaw_rate[f] += total * gate((f - s.start) as f64 / len) / gate_sum;
                }
            }
            AtomicKind::Advance => {
                for f in s.start..s.end {
                    speed[f] += s.amp * gate((f - s.start) as f64 / len);
                }
            }
            _ => {}
        }
    }

    let mut motion = MotionSequence::rest(skel, t, fps, TOY_REST_ROOT_Z);
    let mut x = rng.random_range(-2.0..2.0);
    let mut y = rng.random_range(-2.0..2.0);
    let mut yaw = rng.random_range(-PI..PI);
    for f in 0..t {
        motion.root_pos[f] = [x, y, TOY_REST_ROOT_Z];
        motion.root_rot[f] = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        x += speed[f] * yaw.cos() / fps;
        y += speed[f] * yaw.sin() / fps;
        yaw += yaw_rate[f];
    }

    // Joint curves: write each atomic's pose over its sub-interval, then
    // crossfade its held end pose (if any) back into whatever follows.
    for s in &scheduled {
        let len = (s.end - s.start) as f64;
        for f in s.start..s.end {
            let u = (f - s.start) as f64 / len;
            for (joint, rot) in atomic_pose(library[s.atomic].kind, s.amp, s.cycles, u) {
                motion.joint_rot[f][joint - 1] = rot;
            }
        }
    }
    for s in &scheduled {
        if s.end >= t {
            continue;
        }
        let u_last = (s.end - 1 - s.start) as f64 / (s.end - s.start) as f64;
        for (joint, held) in atomic_pose(library[s.atomic].kind, s.amp, s.cycles, u_last) {
            let held6 = rot6d::encode(&held);
            for k in 0..CROSSFADE_FRAMES {
                let f = s.end + k;
                if f >= t {
                    break;
                }
                let w = (k + 1) as f64 / (CROSSFADE_FRAMES + 1) as f64;
                let base6 = rot6d::encode(&motion.joint_rot[f][joint - 1]);
                let mut mix = [0.0; 6];
                for i in 0..6 {
                    mix[i] = (1.0 - w) * held6[i] + w * base6[i];
                }
                motion.joint_rot[f][joint - 1] =
                    rot6d::decode(&mix).expect("crossfade of valid rotations stays valid");
            }
        }
    }

    // Annotation: part segments at atomic granularity, unknown elsewhere.
    let mut ann = HierarchicalAnnotation::all_unknown(id, fps, t);
    ann.actions = actions;
    ann.sequence = vec![TimedLabel::text(
        &format!("a person {}", sentences.join(" then ")),
        0,
        t,
    )];
    let mut part_segs: BTreeMap<PartId, Vec<TimedLabel>> = BTreeMap::new();
    for s in &scheduled {
        let def = &library[s.atomic];
        part_segs
            .entry(def.part)
            .or_default()
            .push(TimedLabel::text(def.name, s.start, s.end));
    }
    for (part, segs) in part_segs {
        *ann.parts.get_mut(part) = segs;
    }
    let ann = fill_unknown_gaps(ann).expect("scheduled segments never overlap within a part");
    debug_assert!(validate_annotation(&ann).is_empty());
    (motion, ann)
}

/// Replaces each labeled part segment by `unknown` independently with
/// probability `q`. Action and sequence labels are untouched; the result
/// still validates.
pub fn sparsify_labels(
    mut ann: HierarchicalAnnotation,
    q: f64,
    rng: &mut impl Rng,
) -> HierarchicalAnnotation {
    assert!((0.0..1.0).contains(&q), "drop rate must be in [0, 1)");
    for part in PartId::ALL {
        for seg in ann.parts.get_mut(part) {
            if !seg.label.is_unknown() && rng.random_range(0.0..1.0) < q {
                seg.label = Label::Unknown;
            }
        }
    }
    ann
}

/// Split membership by sample id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles ids and cuts 80/10/10 (train gets the floor of 0.8 n, val the
/// floor of 0.1 n, test the remainder). Deterministic given the seed.
pub fn build_dataset_splits(ids: &[String], seed: u64) -> SplitManifest {
    assert!(ids.len() >= 10, "need at least 10 samples to split");
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = seeds::rng(seed, "splits");
    // Fisher-Yates with draws from the derived stream.
    for i in (1..shuffled.len()).rev() {
        let j = rng.random_range(0..=i);
        shuffled.swap(i, j);
    }
    let n = shuffled.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    SplitManifest {
        train: shuffled[..n_train].to_vec(),
        val: shuffled[n_train..n_train + n_val].to_vec(),
        test: shuffled[n_train + n_val..].to_vec(),
    }
}

/// Dataset manifest: everything needed to regenerate and to interpret the
/// directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub library_version: String,
    pub skeleton: String,
    pub seed: u64,
    pub fps: f64,
    pub num_samples: usize,
    pub sparsity: f64,
    pub splits: SplitManifest,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Motion(#[from] crate::motion::MotionError),
    #[error(transparent)]
    Annotation(#[from] crate::annotation::AnnotationIoError),
    #[error(transparent)]
    Skeleton(#[from] crate::motion::SkeletonError),
    #[error("dataset mismatch: {0}")]
    Mismatch(String),
}

/// One loaded dataset sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub motion: MotionSequence,
    pub annotation: HierarchicalAnnotation,
}

/// A dataset directory in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub skeleton: Skeleton,
    pub samples: Vec<Sample>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Vec<&Sample> {
        let ids = match name {
            "train" => &self.manifest.splits.train,
            "val" => &self.manifest.splits.val,
            "test" => &self.manifest.splits.test,
            _ => panic!("unknown split {name:?}"),
        };
        let index: BTreeMap<&str, &Sample> =
            self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter().map(|id| index[id.as_str()]).collect()
    }
}

/// Generates a complete dataset directory: motions, annotations, skeleton,
/// and manifest with 80/10/10 splits. Per-sample randomness is drawn from
/// seed-derived streams, so any sample can be regenerated independently.
pub fn synthesize_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest, SynthError> {
    let skel = Skeleton::toy();
    let library = default_library();
    let templates = default_templates();
    std::fs::create_dir_all(out_dir)?;

    let mut motions = Vec::with_capacity(cfg.num_samples);
    let mut annotations = Vec::with_capacity(cfg.num_samples);
    for i in 0..cfg.num_samples {
        let id = format!("s{i:05}");
        let mut rng = seeds::rng_at(cfg.seed, "synth-sample", i as u64);
        let (motion, ann) = synthesize_sample(
            &library,
            &templates,
            &skel,
            &id,
            cfg.min_frames,
            cfg.max_frames,
            cfg.fps,
            &mut rng,
        );
        let mut sparse_rng = seeds::rng_at(cfg.seed, "sparsify", i as u64);
        let ann = sparsify_labels(ann, cfg.sparsity, &mut sparse_rng);
        motions.push((id, motion));
        annotations.push(ann);
    }

    let ids: Vec<String> = motions.iter().map(|(id, _)| id.clone()).collect();
    let manifest = DatasetManifest {
        library_version: LIBRARY_VERSION.to_string(),
        skeleton: skel.name.clone(),
        seed: cfg.seed,
        fps: cfg.fps,
        num_samples: cfg.num_samples,
        sparsity: cfg.sparsity,
        splits: build_dataset_splits(&ids, cfg.seed),
    };

    write_motions(&out_dir.join("motions.ndjson"), &motions)?;
    crate::annotation::write_annotations(&out_dir.join("annotations.ndjson"), &annotations)?;
    skel.save(&out_dir.join("skeleton.json"))?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Loads a dataset directory, pairing motions and annotations by id.
pub fn load_dataset(dir: &Path) -> Result<Dataset, SynthError> {
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let skeleton = Skeleton::load(&dir.join("skeleton.json"))?;
    let motions = read_motions(&dir.join("motions.ndjson"))?;
    let annotations = crate::annotation::read_annotations(&dir.join("annotations.ndjson"))?;
    let mut by_id: BTreeMap<String, HierarchicalAnnotation> = annotations
        .into_iter()
        .map(|a| (a.id.clone(), a))
        .collect();
    let mut samples = Vec::with_capacity(motions.len());
    for (id, motion) in motions {
        let annotation = by_id
            .remove(&id)
            .ok_or_else(|| SynthError::Mismatch(format!("motion {id} has no annotation")))?;
        samples.push(Sample {
            id,
            motion,
            annotation,
        });
    }
    if !by_id.is_empty() {
        let orphan = by_id.keys().next().unwrap().clone();
        return Err(SynthError::Mismatch(format!(
            "annotation {orphan} has no motion"
        )));
    }
    Ok(Dataset {
        skeleton,
        samples,
        manifest,
    })
}

/// Canonical (yaw-removed, xy-origin) joint positions of one frame.
fn canonical_positions(
    motion: &MotionSequence,
    skel: &Skeleton,
    frame: usize,
) -> Vec<Vector3<f64>> {
    let yaw = extract_yaw(&motion.root_rot[frame]).unwrap_or(0.0);
    let residual =
        Rotation3::from_axis_angle(&Vector3::z_axis(), -yaw) * motion.root_rot[frame];
    forward_kinematics(
        skel,
        Vector3::new(0.0, 0.0, motion.root_pos[frame][2]),
        &residual,
        &motion.joint_rot[frame],
    )
}

/// The alignment statistic for one atomic over a frame range. Compares
/// against [`AtomicDef::detection_threshold`]: a segment truly driven by the
/// atomic scores above it, an idle segment scores (well) below.
pub fn detection_stat(
    kind: AtomicKind,
    motion: &MotionSequence,
    skel: &Skeleton,
    start: usize,
    end: usize,
) -> f64 {
    let joint = |name: &str| Skeleton::toy_joint(name).expect("built-in joint");
    let canon: Vec<Vec<Vector3<f64>>> = (start..end)
        .map(|f| canonical_positions(motion, skel, f))
        .collect();
    let len = canon.len();
    let quarter = (len / 4).max(1);
    let mean_z = |frames: std::ops::Range<usize>, j: usize| -> f64 {
        let n = frames.len() as f64;
        frames.map(|f| canon[f][j].z).sum::<f64>() / n
    };
    let range_of = |j: usize, axis: usize| -> f64 {
        let vals = canon.iter().map(|ps| ps[j][axis]);
        let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.fold(f64::INFINITY, f64::min);
        max - min
    };
    match kind {
        AtomicKind::RaiseArm { left } => {
            let j = joint(if left { "left_elbow" } else { "right_elbow" });
            mean_z(len - quarter..len, j) - mean_z(0..quarter, j)
        }
        AtomicKind::WaveArm { left } => {
            let j = joint(if left { "left_wrist" } else { "right_wrist" });
            range_of(j, 1)
        }
        AtomicKind::StepLeg { left } => {
            let j = joint(if left { "left_knee" } else { "right_knee" });
            range_of(j, 0)
        }
        AtomicKind::BendForward => {
            let j = joint("head");
            let first = canon[0][j].z;
            let min = canon.iter().map(|ps| ps[j].z).fold(f64::INFINITY, f64::min);
            first - min
        }
        AtomicKind::Nod => {
            // Head orientation deviation from its parent: the head is a leaf,
            // so its own rotation moves no joint position.
            let head_slot = joint("head") - 1;
            (start..end)
                .map(|f| motion.joint_rot[f][head_slot].angle())
                .fold(0.0, f64::max)
        }
        AtomicKind::Turn => {
            let mut total = 0.0;
            for f in start..end.saturating_sub(1) {
                let a = extract_yaw(&motion.root_rot[f]).unwrap_or(0.0);
                let b = extract_yaw(&motion.root_rot[f + 1]).unwrap_or(a);
                total += crate::motion::wrap_angle(b - a).abs();
            }
            total
        }
        AtomicKind::Advance => {
            let dx = motion.root_pos[end - 1][0] - motion.root_pos[start][0];
            let dy = motion.root_pos[end - 1][1] - motion.root_pos[start][1];
            dx.hypot(dy)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::dataset_stats;

    fn gen(seed: u64) -> (MotionSequence, HierarchicalAnnotation) {
        let skel = Skeleton::toy();
        let mut rng = seeds::rng(seed, "synth-test");
        synthesize_sample(
            &default_library(),
            &default_templates(),
            &skel,
            &format!("t{seed}"),
            100,
            140,
            20.0,
            &mut rng,
        )
    }

    #[test]
    fn samples_validate_and_match_motion_length() {
        let skel = Skeleton::toy();
        for seed in 0..30 {
            let (motion, ann) = gen(seed);
            assert!(validate_annotation(&ann).is_empty(), "seed {seed}");
            assert_eq!(motion.num_frames(), ann.num_frames);
            motion.validate(&skel).unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (m1, a1) = gen(42);
        let (m2, a2) = gen(42);
        assert_eq!(a1, a2);
        assert_eq!(
            serde_json::to_string(&m1.root_pos).unwrap(),
            serde_json::to_string(&m2.root_pos).unwrap()
        );
        for (r1, r2) in m1.joint_rot.iter().flatten().zip(m2.joint_rot.iter().flatten()) {
            assert_eq!(r1.matrix(), r2.matrix());
        }
    }

    #[test]
    fn labeled_segments_pass_their_detection_statistic() {
        let skel = Skeleton::toy();
        let library = default_library();
        for seed in 0..25 {
            let (motion, ann) = gen(seed);
            for (part, segs) in ann.parts.iter() {
                for seg in segs {
                    let Some(name) = seg.label.as_text() else { continue };
                    let def = library
                        .iter()
                        .find(|d| d.name == name)
                        .unwrap_or_else(|| panic!("unknown atomic label {name}"));
                    assert_eq!(def.part, part);
                    let stat = detection_stat(def.kind, &motion, &skel, seg.start, seg.end);
                    assert!(
                        stat > def.detection_threshold,
                        "seed {seed}: {name} on [{}, {}) scored {stat:.4} <= {}",
                        seg.start,
                        seg.end,
                        def.detection_threshold
                    );
                }
            }
        }
    }

    #[test]
    fn idle_motion_scores_below_every_threshold() {
        let skel = Skeleton::toy();
        let idle = MotionSequence::rest(&skel, 80, 20.0, TOY_REST_ROOT_Z);
        for def in default_library() {
            let stat = detection_stat(def.kind, &idle, &skel, 10, 70);
            assert!(
                stat < def.detection_threshold * 0.5,
                "{}: idle stat {stat} too close to threshold {}",
                def.name,
                def.detection_threshold
            );
        }
    }

    #[test]
    fn crossfade_bounds_frame_to_frame_rotation_jumps() {
        let skel = Skeleton::toy();
        for seed in 0..10 {
            let (motion, _) = gen(seed);
            for f in 0..motion.num_frames() - 1 {
                for j in 0..skel.num_joints() - 1 {
                    let delta = (motion.joint_rot[f][j].inverse() * motion.joint_rot[f + 1][j])
                        .angle();
                    assert!(
                        delta < 0.75,
                        "seed {seed} frame {f} joint {j}: jump {delta:.3} rad"
                    );
                }
            }
        }
    }

    #[test]
    fn sparsify_zero_is_identity_and_rate_is_calibrated() {
        let (_, ann) = gen(7);
        let mut rng = seeds::rng(1, "sp");
        assert_eq!(sparsify_labels(ann.clone(), 0.0, &mut rng), ann);

        // Monte-Carlo on a hand-built annotation corpus with 10 labeled
        // segments each.
        let mut labeled_total = 0usize;
        let mut dropped = 0usize;
        for i in 0..1000 {
            let mut ann = HierarchicalAnnotation::all_unknown(&format!("mc{i}"), 20.0, 100);
            *ann.parts.get_mut(PartId::Spine) = (0..10)
                .map(|k| TimedLabel::text("bends forward", k * 10, (k + 1) * 10))
                .collect();
            let mut rng = seeds::rng_at(99, "mc", i);
            let sparse = sparsify_labels(ann, 0.3, &mut rng);
            labeled_total += 10;
            dropped += sparse
                .parts
                .get(PartId::Spine)
                .iter()
                .filter(|s| s.label.is_unknown())
                .count();
            assert!(validate_annotation(&sparse).is_empty());
        }
        let rate = dropped as f64 / labeled_total as f64;
        assert!((0.28..=0.32).contains(&rate), "empirical drop rate {rate}");
    }

    #[test]
    fn sparsify_composes_multiplicatively() {
        let mut survived_twice = 0usize;
        let mut survived_once = 0usize;
        for i in 0..2000 {
            let mut ann = HierarchicalAnnotation::all_unknown(&format!("c{i}"), 20.0, 100);
            *ann.parts.get_mut(PartId::Head) = (0..5)
                .map(|k| TimedLabel::text("nods the head", k * 20, (k + 1) * 20))
                .collect();
            let twice = sparsify_labels(
                sparsify_labels(ann.clone(), 0.3, &mut seeds::rng_at(5, "a", i)),
                0.3,
                &mut seeds::rng_at(5, "b", i),
            );
            let once = sparsify_labels(ann, 0.51, &mut seeds::rng_at(5, "c", i));
            survived_twice += twice.parts.head.iter().filter(|s| !s.label.is_unknown()).count();
            survived_once += once.parts.head.iter().filter(|s| !s.label.is_unknown()).count();
        }
        let (p2, p1) = (survived_twice as f64 / 10_000.0, survived_once as f64 / 10_000.0);
        assert!((p2 - p1).abs() < 0.02, "0.3 twice {p2} vs 0.51 once {p1}");
    }

    #[test]
    fn splits_are_disjoint_exhaustive_and_sized() {
        let ids: Vec<String> = (0..100).map(|i| format!("s{i:05}")).collect();
        let splits = build_dataset_splits(&ids, 3);
        assert_eq!(splits.train.len(), 80);
        assert_eq!(splits.val.len(), 10);
        assert_eq!(splits.test.len(), 10);
        let mut all: Vec<&String> = splits
            .train
            .iter()
            .chain(&splits.val)
            .chain(&splits.test)
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
        assert_eq!(splits, build_dataset_splits(&ids, 3));
        assert_ne!(splits, build_dataset_splits(&ids, 4));
    }

    #[test]
    fn every_atomic_appears_within_200_samples() {
        let skel = Skeleton::toy();
        let library = default_library();
        let templates = default_templates();
        let mut seen = vec![false; library.len()];
        for i in 0..200 {
            let mut rng = seeds::rng_at(11, "cov", i);
            let (_, ann) = synthesize_sample(
                &library,
                &templates,
                &skel,
                "c",
                100,
                140,
                20.0,
                &mut rng,
            );
            for (_, segs) in ann.parts.iter() {
                for seg in segs {
                    if let Some(name) = seg.label.as_text() {
                        let idx = library.iter().position(|d| d.name == name).unwrap();
                        seen[idx] = true;
                    }
                }
            }
        }
        for (def, s) in library.iter().zip(&seen) {
            assert!(s, "atomic {} never generated in 200 samples", def.name);
        }
    }

    #[test]
    fn dataset_round_trip_and_stats() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            num_samples: 20,
            seed: 5,
            ..SynthConfig::default()
        };
        let manifest = synthesize_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.splits.train.len(), 16);
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.samples.len(), 20);
        assert_eq!(ds.manifest.library_version, LIBRARY_VERSION);
        assert_eq!(ds.split("train").len(), 16);
        assert_eq!(ds.split("val").len(), 2);
        assert_eq!(ds.split("test").len(), 2);
        let anns: Vec<_> = ds.samples.iter().map(|s| s.annotation.clone()).collect();
        let stats = dataset_stats(&anns);
        assert_eq!(stats.sequences, 20);
        assert!(stats.hours > 0.0);
        assert!(stats.vocabulary > 5);
    }
}
