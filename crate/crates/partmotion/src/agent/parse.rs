//! Strict parsing of backend responses.
//!
//! The accepted wire format is the single JSON object documented in
//! [`crate::agent::prompt::OUTPUT_SCHEMA`]. A response may wrap the object
//! in prose; one brace-matched extraction is attempted, then parsing fails.
//! Times are never clamped: anything outside `[0, num_frames]` is rejected.

use serde::Deserialize;

use crate::annotation::{
    FillError, HierarchicalAnnotation, Label, PartId, PartTracks, TimedLabel,
};

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("MALFORMED_JSON: {fragment}")]
    MalformedJson { fragment: String },
    #[error("SCHEMA_VIOLATION: {detail} in {fragment}")]
    SchemaViolation { detail: String, fragment: String },
    #[error(
        "TIME_OUT_OF_RANGE: {track}[{index}] spans {start}..{end} outside 0..{num_frames}"
    )]
    TimeOutOfRange {
        track: String,
        index: usize,
        start: i64,
        end: i64,
        num_frames: usize,
    },
    #[error(
        "OVERLAP: {track}[{index}] starts at frame {start} before the previous segment ends at {prev_end}"
    )]
    Overlap {
        track: String,
        index: usize,
        start: usize,
        prev_end: usize,
    },
}

/// A parsed, range-checked response. Tracks may still be sparse; gaps are
/// tiled with `unknown` by [`AgentResponse::into_annotation`].
#[derive(Debug, Clone)]
pub struct AgentResponse {
    pub fps: f64,
    pub num_frames: usize,
    pub refined_sequence: Vec<TimedLabel>,
    pub refined_actions: Vec<TimedLabel>,
    pub parts: PartTracks,
}

impl AgentResponse {
    pub fn into_annotation(self, id: &str) -> Result<HierarchicalAnnotation, FillError> {
        crate::annotation::fill_unknown_gaps(HierarchicalAnnotation {
            id: id.to_string(),
            fps: self.fps,
            num_frames: self.num_frames,
            sequence: self.refined_sequence,
            actions: self.refined_actions,
            parts: self.parts,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireResponse {
    refined_sequence: Vec<WireSegment>,
    refined_actions: Vec<WireSegment>,
    parts: WireParts,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSegment {
    label: String,
    start: i64,
    end: i64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct WireParts {
    head: Vec<WireSegment>,
    left_arm: Vec<WireSegment>,
    right_arm: Vec<WireSegment>,
    spine: Vec<WireSegment>,
    left_leg: Vec<WireSegment>,
    right_leg: Vec<WireSegment>,
    trajectory: Vec<WireSegment>,
}

impl WireParts {
    fn take(&mut self, part: PartId) -> Vec<WireSegment> {
        match part {
            PartId::Head => std::mem::take(&mut self.head),
            PartId::LeftArm => std::mem::take(&mut self.left_arm),
            PartId::RightArm => std::mem::take(&mut self.right_arm),
            PartId::Spine => std::mem::take(&mut self.spine),
            PartId::LeftLeg => std::mem::take(&mut self.left_leg),
            PartId::RightLeg => std::mem::take(&mut self.right_leg),
            PartId::Trajectory => std::mem::take(&mut self.trajectory),
        }
    }
}

/// First brace-matched JSON object in `raw`, respecting string literals
/// and escapes. `None` when no balanced object exists.
pub fn extract_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn fragment(s: &str) -> String {
    s.chars().take(120).collect()
}

/// Converts, range-checks, and overlap-checks one track. Segments are
/// sorted by start; the reported index refers to that order.
fn convert_track(
    track: &str,
    wires: Vec<WireSegment>,
    num_frames: usize,
) -> Result<Vec<TimedLabel>, ParseError> {
    for (index, w) in wires.iter().enumerate() {
        let trimmed = w.label.trim();
        if trimmed.is_empty() || trimmed != w.label {
            return Err(ParseError::SchemaViolation {
                detail: "empty or untrimmed label".to_string(),
                fragment: format!("{track}[{index}] label {:?}", w.label),
            });
        }
        if w.start < 0 || w.end > num_frames as i64 || w.start >= w.end {
            return Err(ParseError::TimeOutOfRange {
                track: track.to_string(),
                index,
                start: w.start,
                end: w.end,
                num_frames,
            });
        }
    }
    let mut segs: Vec<TimedLabel> = wires
        .into_iter()
        .map(|w| TimedLabel::new(Label::new(w.label), w.start as usize, w.end as usize))
        .collect();
    segs.sort_by_key(|s| (s.start, s.end));
    for index in 1..segs.len() {
        if segs[index].start < segs[index - 1].end {
            return Err(ParseError::Overlap {
                track: track.to_string(),
                index,
                start: segs[index].start,
                prev_end: segs[index - 1].end,
            });
        }
    }
    Ok(segs)
}

/// Parses a raw backend response against the documented schema. Unknown
/// labels normalize case-insensitively to the sentinel; times outside
/// `[0, num_frames]`, inverted spans, and overlaps are rejected.
pub fn parse_agent_response(
    raw: &str,
    num_frames: usize,
    fps: f64,
) -> Result<AgentResponse, ParseError> {
    let json = extract_json_object(raw).ok_or_else(|| ParseError::MalformedJson {
        fragment: fragment(raw),
    })?;
    let mut wire: WireResponse = serde_json::from_str(json).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof => ParseError::MalformedJson {
                fragment: fragment(json),
            },
            _ => ParseError::SchemaViolation {
                detail: e.to_string(),
                fragment: fragment(json),
            },
        }
    })?;

    let refined_sequence = convert_track("sequence", wire.refined_sequence, num_frames)?;
    let refined_actions = convert_track("action", wire.refined_actions, num_frames)?;
    let mut parts = PartTracks::default();
    for part in PartId::ALL {
        *parts.get_mut(part) = convert_track(part.name(), wire.parts.take(part), num_frames)?;
    }
    Ok(AgentResponse {
        fps,
        num_frames,
        refined_sequence,
        refined_actions,
        parts,
    })
}
