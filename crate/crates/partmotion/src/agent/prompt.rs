//! Prompt construction for the annotation agent.
//!
//! Templates are plain text with named `{placeholders}`. The default
//! template ships with the crate; alternates load from files at runtime.
//! The rendered track lines double as the machine-readable request copy
//! the mock backend reads back, so their format is part of the contract.

use crate::annotation::{HierarchicalAnnotation, PartId, TimedLabel};

/// Built-in decomposition template.
pub const DEFAULT_TEMPLATE: &str = include_str!("../../prompts/decompose.txt");

/// Placeholders every decomposition template must contain.
pub const REQUIRED_PLACEHOLDERS: [&str; 6] =
    ["duration", "fps", "parts", "sequence", "actions", "schema"];

/// The exact response shape requested from the backend.
pub const OUTPUT_SCHEMA: &str = r#"{
  "refined_sequence": [{"label": "text", "start": 0, "end": 0}],
  "refined_actions": [{"label": "text", "start": 0, "end": 0}],
  "parts": {
    "head": [{"label": "text", "start": 0, "end": 0}],
    "left_arm": [], "right_arm": [], "spine": [],
    "left_leg": [], "right_leg": [], "trajectory": []
  }
}"#;

/// Source tracks of one sequence awaiting part-level decomposition.
#[derive(Debug, Clone)]
pub struct AgentRequest {
    pub id: String,
    pub fps: f64,
    pub num_frames: usize,
    pub sequence: Vec<TimedLabel>,
    pub actions: Vec<TimedLabel>,
}

impl AgentRequest {
    /// Takes the sequence and action tracks of an existing annotation;
    /// part tracks are ignored (the agent produces them).
    pub fn from_annotation(ann: &HierarchicalAnnotation) -> AgentRequest {
        AgentRequest {
            id: ann.id.clone(),
            fps: ann.fps,
            num_frames: ann.num_frames,
            sequence: ann.sequence.clone(),
            actions: ann.actions.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template is missing the {{{name}}} placeholder")]
    MissingPlaceholder { name: &'static str },
}

/// One line per segment; the mock backend parses this format back.
pub(crate) fn render_track(segments: &[TimedLabel]) -> String {
    if segments.is_empty() {
        return "- (none)".to_string();
    }
    segments
        .iter()
        .map(|s| format!("- frames {}..{}: \"{}\"", s.start, s.end, s.label))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Substitutes the request into `template`. Every required placeholder
/// must appear at least once.
pub fn build_decomposition_prompt(
    req: &AgentRequest,
    template: &str,
) -> Result<String, TemplateError> {
    for name in REQUIRED_PLACEHOLDERS {
        if !template.contains(&format!("{{{name}}}")) {
            return Err(TemplateError::MissingPlaceholder { name });
        }
    }
    let parts = PartId::ALL
        .iter()
        .map(|p| p.name())
        .collect::<Vec<_>>()
        .join(", ");
    Ok(template
        .replace("{duration}", &req.num_frames.to_string())
        .replace("{fps}", &format!("{}", req.fps))
        .replace("{parts}", &parts)
        .replace("{sequence}", &render_track(&req.sequence))
        .replace("{actions}", &render_track(&req.actions))
        .replace("{schema}", OUTPUT_SCHEMA))
}
