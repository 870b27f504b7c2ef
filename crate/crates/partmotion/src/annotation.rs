//! Three-level timed annotation of a motion sequence.
//!
//! An annotation attaches text labels to half-open frame intervals
//! `[start, end)` at three levels: one sequence label spanning all frames, a
//! track of action windows tiling the timeline, and one track per body part
//! tiling the timeline with explicit `unknown` segments where no label is
//! available. Tracks are kept as run-length segments; [`to_frame_grid`]
//! rasterizes them to per-frame labels.
//!
//! Serialized form (one JSON object per sequence, newline-delimited in
//! dataset files):
//!
//! ```json
//! {"id": "...", "fps": 20.0, "num_frames": 120,
//!  "sequence": [{"label": "...", "start": 0, "end": 120}],
//!  "actions":  [{"label": "...", "start": 0, "end": 60}, ...],
//!  "parts": {"head": [...], "left_arm": [...], "right_arm": [...],
//!            "spine": [...], "left_leg": [...], "right_leg": [...],
//!            "trajectory": [...]}}
//! ```
//!
//! The string `"unknown"` (any case) is reserved: it deserializes to the
//! distinct [`Label::Unknown`] constant and is never a user-visible label.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Reserved serialized spelling of the unknown sentinel.
pub const UNKNOWN_STR: &str = "unknown";

/// A text label or the distinguished unknown sentinel.
///
/// The payload of [`Label::Text`] is private so that the sentinel mapping
/// cannot be bypassed: construct through [`Label::new`], which folds any
/// casing of `"unknown"` into [`Label::Unknown`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Unknown,
    Text(String),
}

impl Label {
    /// Maps the reserved sentinel (case-insensitive) to `Unknown`; any other
    /// string, verbatim, to `Text`.
    pub fn new(s: impl Into<String>) -> Self {
        let s = s.into();
        if s.eq_ignore_ascii_case(UNKNOWN_STR) {
            Label::Unknown
        } else {
            Label::Text(s)
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Label::Unknown)
    }

    /// The label text, or `None` for the sentinel.
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Label::Unknown => None,
            Label::Text(s) => Some(s),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_text().unwrap_or(UNKNOWN_STR))
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(self.as_text().unwrap_or(UNKNOWN_STR))
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        Ok(Label::new(String::deserialize(de)?))
    }
}

/// One annotation element: a label over the half-open frame span
/// `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedLabel {
    pub label: Label,
    pub start: usize,
    pub end: usize,
}

impl TimedLabel {
    pub fn new(label: Label, start: usize, end: usize) -> Self {
        TimedLabel { label, start, end }
    }

    pub fn text(label: &str, start: usize, end: usize) -> Self {
        TimedLabel::new(Label::new(label), start, end)
    }

    pub fn unknown(start: usize, end: usize) -> Self {
        TimedLabel::new(Label::Unknown, start, end)
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The fixed set of K = 7 annotated body parts. Ordinal order (the
/// declaration order here) is the feature-layout order everywhere downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartId {
    Head,
    LeftArm,
    RightArm,
    Spine,
    LeftLeg,
    RightLeg,
    Trajectory,
}

/// Number of body parts (K).
pub const NUM_PARTS: usize = 7;

impl PartId {
    pub const ALL: [PartId; NUM_PARTS] = [
        PartId::Head,
        PartId::LeftArm,
        PartId::RightArm,
        PartId::Spine,
        PartId::LeftLeg,
        PartId::RightLeg,
        PartId::Trajectory,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PartId::Head => "head",
            PartId::LeftArm => "left_arm",
            PartId::RightArm => "right_arm",
            PartId::Spine => "spine",
            PartId::LeftLeg => "left_leg",
            PartId::RightLeg => "right_leg",
            PartId::Trajectory => "trajectory",
        }
    }

    pub fn from_name(name: &str) -> Option<PartId> {
        PartId::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for PartId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The seven per-part tracks, one field per part so the serialized object
/// carries explicit part names.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartTracks {
    pub head: Vec<TimedLabel>,
    pub left_arm: Vec<TimedLabel>,
    pub right_arm: Vec<TimedLabel>,
    pub spine: Vec<TimedLabel>,
    pub left_leg: Vec<TimedLabel>,
    pub right_leg: Vec<TimedLabel>,
    pub trajectory: Vec<TimedLabel>,
}

impl PartTracks {
    pub fn get(&self, part: PartId) -> &Vec<TimedLabel> {
        match part {
            PartId::Head => &self.head,
            PartId::LeftArm => &self.left_arm,
            PartId::RightArm => &self.right_arm,
            PartId::Spine => &self.spine,
            PartId::LeftLeg => &self.left_leg,
            PartId::RightLeg => &self.right_leg,
            PartId::Trajectory => &self.trajectory,
        }
    }

    pub fn get_mut(&mut self, part: PartId) -> &mut Vec<TimedLabel> {
        match part {
            PartId::Head => &mut self.head,
            PartId::LeftArm => &mut self.left_arm,
            PartId::RightArm => &mut self.right_arm,
            PartId::Spine => &mut self.spine,
            PartId::LeftLeg => &mut self.left_leg,
            PartId::RightLeg => &mut self.right_leg,
            PartId::Trajectory => &mut self.trajectory,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (PartId, &Vec<TimedLabel>)> {
        PartId::ALL.into_iter().map(move |p| (p, self.get(p)))
    }
}

/// A complete three-level annotation of one motion sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchicalAnnotation {
    pub id: String,
    pub fps: f64,
    pub num_frames: usize,
    pub sequence: Vec<TimedLabel>,
    pub actions: Vec<TimedLabel>,
    pub parts: PartTracks,
}

impl HierarchicalAnnotation {
    /// An all-unknown annotation: one unknown label per track spanning the
    /// whole sequence.
    pub fn all_unknown(id: &str, fps: f64, num_frames: usize) -> Self {
        let full = || vec![TimedLabel::unknown(0, num_frames)];
        let mut parts = PartTracks::default();
        for p in PartId::ALL {
            *parts.get_mut(p) = full();
        }
        HierarchicalAnnotation {
            id: id.to_string(),
            fps,
            num_frames,
            sequence: full(),
            actions: full(),
            parts,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.num_frames as f64 / self.fps
    }
}

/// Which track a violation or grid column refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackId {
    Sequence,
    Action,
    Part(PartId),
}

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrackId::Sequence => f.write_str("sequence"),
            TrackId::Action => f.write_str("actions"),
            TrackId::Part(p) => write!(f, "parts.{}", p.name()),
        }
    }
}

/// Validation rule identifiers, one per structural constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationCode {
    /// A segment starts before the previous one ends.
    Overlap,
    /// Uncovered frames between or around segments of a tiling track.
    Gap,
    /// Segment endpoints outside `[0, num_frames]` or start >= end.
    OutOfRange,
    /// Empty, whitespace-only, or untrimmed label text.
    EmptyLabel,
    /// Sequence track is not exactly one segment spanning `[0, num_frames)`.
    BadSequenceSpan,
}

impl ViolationCode {
    pub fn name(self) -> &'static str {
        match self {
            ViolationCode::Overlap => "OVERLAP",
            ViolationCode::Gap => "GAP",
            ViolationCode::OutOfRange => "OUT_OF_RANGE",
            ViolationCode::EmptyLabel => "EMPTY_LABEL",
            ViolationCode::BadSequenceSpan => "BAD_SEQUENCE_SPAN",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One violated constraint: the rule, where it was observed, and a short
/// human-readable detail.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub code: ViolationCode,
    pub track: TrackId,
    pub segment: usize,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at {}[{}]: {}",
            self.code, self.track, self.segment, self.detail
        )
    }
}

/// Checks every structural invariant; an empty result means the annotation
/// is valid. Violations are data, not errors: all of them are reported, in
/// track order, segments first.
pub fn validate_annotation(ann: &HierarchicalAnnotation) -> Vec<Violation> {
    let t = ann.num_frames;
    let mut out = Vec::new();

    let check_segments = |track: TrackId, segs: &[TimedLabel], out: &mut Vec<Violation>| {
        for (i, seg) in segs.iter().enumerate() {
            if let Some(text) = seg.label.as_text() {
                let trimmed = text.trim();
                if trimmed.is_empty() || trimmed != text {
                    out.push(Violation {
                        code: ViolationCode::EmptyLabel,
                        track,
                        segment: i,
                        detail: format!("label {text:?} is not a non-empty trimmed string"),
                    });
                }
            }
            if seg.start >= seg.end || seg.end > t {
                out.push(Violation {
                    code: ViolationCode::OutOfRange,
                    track,
                    segment: i,
                    detail: format!(
                        "span [{}, {}) outside [0, {t}) or inverted",
                        seg.start, seg.end
                    ),
                });
            }
        }
    };

    check_segments(TrackId::Sequence, &ann.sequence, &mut out);
    check_segments(TrackId::Action, &ann.actions, &mut out);
    for (part, segs) in ann.parts.iter() {
        check_segments(TrackId::Part(part), segs, &mut out);
    }

    // Sequence level: exactly one segment covering every frame.
    match ann.sequence.as_slice() {
        [only] if only.start == 0 && only.end == t => {}
        [only] => out.push(Violation {
            code: ViolationCode::BadSequenceSpan,
            track: TrackId::Sequence,
            segment: 0,
            detail: format!("span [{}, {}) must be [0, {t})", only.start, only.end),
        }),
        segs => out.push(Violation {
            code: ViolationCode::BadSequenceSpan,
            track: TrackId::Sequence,
            segment: segs.len().min(1),
            detail: format!("expected exactly 1 segment, found {}", segs.len()),
        }),
    }

    // Action and part levels: a contiguous partition of [0, num_frames).
    check_tiling(TrackId::Action, &ann.actions, t, &mut out);
    for (part, segs) in ann.parts.iter() {
        check_tiling(TrackId::Part(part), segs, t, &mut out);
    }

    out
}

/// Checks that `segs` tile `[0, t)`: starts at 0, each segment begins where
/// the previous ended, ends at `t`.
fn check_tiling(track: TrackId, segs: &[TimedLabel], t: usize, out: &mut Vec<Violation>) {
    let Some(first) = segs.first() else {
        out.push(Violation {
            code: ViolationCode::Gap,
            track,
            segment: 0,
            detail: format!("empty track, frames [0, {t}) uncovered"),
        });
        return;
    };
    if first.start != 0 {
        out.push(Violation {
            code: ViolationCode::Gap,
            track,
            segment: 0,
            detail: format!("first segment starts at {}, expected 0", first.start),
        });
    }
    for (i, pair) in segs.windows(2).enumerate() {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.start < prev.end {
            out.push(Violation {
                code: ViolationCode::Overlap,
                track,
                segment: i + 1,
                detail: format!("starts at {} before previous end {}", next.start, prev.end),
            });
        } else if next.start > prev.end {
            out.push(Violation {
                code: ViolationCode::Gap,
                track,
                segment: i + 1,
                detail: format!("starts at {} after previous end {}", next.start, prev.end),
            });
        }
    }
    let last = segs.last().expect("non-empty");
    // end > t is already OUT_OF_RANGE; only a short tail is a coverage gap.
    if last.end < t {
        out.push(Violation {
            code: ViolationCode::Gap,
            track,
            segment: segs.len() - 1,
            detail: format!("last segment ends at {}, expected {t}", last.end),
        });
    }
}

/// Errors from [`fill_unknown_gaps`] on inputs that cannot be normalized.
#[derive(Debug, thiserror::Error)]
pub enum FillError {
    #[error("{track}: segments [{a_start}, {a_end}) and [{b_start}, {b_end}) overlap")]
    Overlap {
        track: String,
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("{track}: segment [{start}, {end}) outside [0, {num_frames})")]
    OutOfRange {
        track: String,
        start: usize,
        end: usize,
        num_frames: usize,
    },
}

/// Normalizes a possibly-sparse annotation into a fully tiled one by
/// inserting `unknown` segments into every gap of the action and part tracks
/// (and an all-spanning `unknown` sequence segment if the sequence track is
/// empty). Segments are sorted by start frame first; overlapping or
/// out-of-range input is rejected. Idempotent: a tiled annotation passes
/// through unchanged.
pub fn fill_unknown_gaps(
    mut ann: HierarchicalAnnotation,
) -> Result<HierarchicalAnnotation, FillError> {
    let t = ann.num_frames;
    if ann.sequence.is_empty() {
        ann.sequence.push(TimedLabel::unknown(0, t));
    }
    ann.actions = fill_track(std::mem::take(&mut ann.actions), t, TrackId::Action)?;
    for part in PartId::ALL {
        let segs = std::mem::take(ann.parts.get_mut(part));
        *ann.parts.get_mut(part) = fill_track(segs, t, TrackId::Part(part))?;
    }
    Ok(ann)
}

fn fill_track(
    mut segs: Vec<TimedLabel>,
    t: usize,
    track: TrackId,
) -> Result<Vec<TimedLabel>, FillError> {
    segs.sort_by_key(|s| (s.start, s.end));
    let mut out = Vec::with_capacity(segs.len() + 2);
    let mut cursor = 0usize;
    for seg in segs {
        if seg.start >= seg.end || seg.end > t {
            return Err(FillError::OutOfRange {
                track: track.to_string(),
                start: seg.start,
                end: seg.end,
                num_frames: t,
            });
        }
        if seg.start < cursor {
            let prev: &TimedLabel = out.last().expect("cursor > 0 implies a previous segment");
            return Err(FillError::Overlap {
                track: track.to_string(),
                a_start: prev.start,
                a_end: prev.end,
                b_start: seg.start,
                b_end: seg.end,
            });
        }
        if seg.start > cursor {
            out.push(TimedLabel::unknown(cursor, seg.start));
        }
        cursor = seg.end;
        out.push(seg);
    }
    if cursor < t {
        out.push(TimedLabel::unknown(cursor, t));
    }
    Ok(out)
}

/// Per-frame rasterization of a valid annotation: one label per
/// (frame, track) cell over the K part columns plus the action column,
/// along with the single sequence label.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    pub num_frames: usize,
    pub sequence: Label,
    /// Row-major `num_frames x (NUM_PARTS + 1)`: columns 0..K are parts in
    /// ordinal order, column K is the action track.
    cells: Vec<Label>,
}

/// Column index of the action track in a [`FrameGrid`] row.
pub const ACTION_COLUMN: usize = NUM_PARTS;

impl FrameGrid {
    pub fn part(&self, frame: usize, part: PartId) -> &Label {
        &self.cells[frame * (NUM_PARTS + 1) + part.ordinal()]
    }

    pub fn action(&self, frame: usize) -> &Label {
        &self.cells[frame * (NUM_PARTS + 1) + ACTION_COLUMN]
    }

    /// Run-length encodes the grid back into segment tracks. On the output
    /// of [`to_frame_grid`] this reproduces the source annotation up to
    /// merged equal-label neighbors.
    pub fn to_annotation(&self, id: &str, fps: f64) -> HierarchicalAnnotation {
        let mut parts = PartTracks::default();
        for p in PartId::ALL {
            *parts.get_mut(p) = run_length(self.num_frames, |i| self.part(i, p));
        }
        HierarchicalAnnotation {
            id: id.to_string(),
            fps,
            num_frames: self.num_frames,
            sequence: vec![TimedLabel::new(self.sequence.clone(), 0, self.num_frames)],
            actions: run_length(self.num_frames, |i| self.action(i)),
            parts,
        }
    }
}

fn run_length<'a>(t: usize, label_at: impl Fn(usize) -> &'a Label) -> Vec<TimedLabel> {
    let mut out: Vec<TimedLabel> = Vec::new();
    for i in 0..t {
        let label = label_at(i);
        match out.last_mut() {
            Some(last) if last.label == *label && last.end == i => last.end = i + 1,
            _ => out.push(TimedLabel::new(label.clone(), i, i + 1)),
        }
    }
    out
}

/// Rasterizes a valid annotation to per-frame labels. Frame `i` takes the
/// label of the segment with `start <= i < end`; the annotation must
/// validate, otherwise the violations are returned instead.
pub fn to_frame_grid(ann: &HierarchicalAnnotation) -> Result<FrameGrid, Vec<Violation>> {
    let violations = validate_annotation(ann);
    if !violations.is_empty() {
        return Err(violations);
    }
    let t = ann.num_frames;
    let mut cells = vec![Label::Unknown; t * (NUM_PARTS + 1)];
    let mut paint = |col: usize, segs: &[TimedLabel]| {
        for seg in segs {
            for i in seg.start..seg.end {
                cells[i * (NUM_PARTS + 1) + col] = seg.label.clone();
            }
        }
    };
    for (part, segs) in ann.parts.iter() {
        paint(part.ordinal(), segs);
    }
    paint(ACTION_COLUMN, &ann.actions);
    Ok(FrameGrid {
        num_frames: t,
        sequence: ann.sequence[0].label.clone(),
        cells,
    })
}

/// Labeled/unknown segment counts for one annotation level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub labeled: usize,
    pub unknown: usize,
    pub vocabulary: usize,
}

/// Corpus statistics over a collection of annotations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sequences: usize,
    pub hours: f64,
    pub sequence_level: LevelCounts,
    pub action_level: LevelCounts,
    pub part_level: LevelCounts,
    /// Distinct tokens across all levels (lowercased, whitespace-split,
    /// punctuation stripped; unknown segments excluded).
    pub vocabulary: usize,
}

/// Computes corpus statistics. Vocabulary is counted over whitespace tokens
/// of lowercased labels with non-alphanumeric characters removed; `unknown`
/// segments are tallied separately and contribute no tokens.
pub fn dataset_stats(anns: &[HierarchicalAnnotation]) -> DatasetStats {
    let mut stats = DatasetStats {
        sequences: anns.len(),
        ..DatasetStats::default()
    };
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    let mut level_vocab = [BTreeSet::new(), BTreeSet::new(), BTreeSet::new()];
    for ann in anns {
        stats.hours += ann.duration_secs() / 3600.0;
        let levels: [(&[TimedLabel], usize); 2] = [(&ann.sequence, 0), (&ann.actions, 1)];
        for (segs, li) in levels {
            tally(segs, level_counts_mut(&mut stats, li), &mut level_vocab[li]);
        }
        for (_, segs) in ann.parts.iter() {
            tally(segs, level_counts_mut(&mut stats, 2), &mut level_vocab[2]);
        }
    }
    for (li, lv) in level_vocab.iter().enumerate() {
        level_counts_mut(&mut stats, li).vocabulary = lv.len();
        vocab.extend(lv.iter().cloned());
    }
    stats.vocabulary = vocab.len();
    stats
}

fn level_counts_mut(stats: &mut DatasetStats, level: usize) -> &mut LevelCounts {
    match level {
        0 => &mut stats.sequence_level,
        1 => &mut stats.action_level,
        _ => &mut stats.part_level,
    }
}

fn tally(segs: &[TimedLabel], counts: &mut LevelCounts, vocab: &mut BTreeSet<String>) {
    for seg in segs {
        match seg.label.as_text() {
            None => counts.unknown += 1,
            Some(text) => {
                counts.labeled += 1;
                for token in text.split_whitespace() {
                    let cleaned: String = token
                        .to_lowercase()
                        .chars()
                        .filter(|c| c.is_alphanumeric())
                        .collect();
                    if !cleaned.is_empty() {
                        vocab.insert(cleaned);
                    }
                }
            }
        }
    }
}

/// Errors from reading or writing annotation dataset files.
#[derive(Debug, thiserror::Error)]
pub enum AnnotationIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

/// Reads a newline-delimited annotation dataset. Blank lines are skipped.
pub fn read_annotations(path: &Path) -> Result<Vec<HierarchicalAnnotation>, AnnotationIoError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ann = serde_json::from_str(&line)
            .map_err(|source| AnnotationIoError::Parse { line: idx + 1, source })?;
        out.push(ann);
    }
    Ok(out)
}

/// Writes a newline-delimited annotation dataset (one JSON object per line).
pub fn write_annotations(
    path: &Path,
    anns: &[HierarchicalAnnotation],
) -> Result<(), AnnotationIoError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ann in anns {
        serde_json::to_writer(&mut w, ann)
            .map_err(|e| AnnotationIoError::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
