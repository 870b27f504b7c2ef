//! Deterministic backends for tests and offline runs.
//!
//! The mock reads the request back out of the prompt's track lines (the
//! format contract lives in `prompt::render_track`) and decomposes each
//! action with a fixed verb rule table. It is a pure function of the
//! prompt, so identical requests yield identical annotations.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::sync::Mutex;

use serde_json::json;

use crate::agent::{AgentBackend, BackendError};
use crate::annotation::PartId;

/// Per-part consequences of one recognized verb. `Side::Both` duplicates
/// arm/leg targets; a "left"/"right" word in the label narrows them.
struct Rule {
    stem: &'static str,
    effects: &'static [(Target, &'static str)],
}

#[derive(Clone, Copy)]
enum Target {
    Part(PartId),
    Arms,
    Legs,
}

/// Later rules overwrite earlier ones per part, so generic gait rules
/// yield to specific limb verbs in compound labels.
const RULES: &[Rule] = &[
    Rule {
        stem: "walk",
        effects: &[
            (Target::Legs, "steps"),
            (Target::Arms, "swings"),
            (Target::Part(PartId::Trajectory), "moves forward"),
        ],
    },
    Rule {
        stem: "march",
        effects: &[(Target::Legs, "steps"), (Target::Arms, "swings")],
    },
    Rule {
        stem: "step",
        effects: &[(Target::Legs, "steps")],
    },
    Rule {
        stem: "wav",
        effects: &[(Target::Arms, "waves")],
    },
    Rule {
        stem: "rais",
        effects: &[(Target::Arms, "raises")],
    },
    Rule {
        stem: "nod",
        effects: &[(Target::Part(PartId::Head), "nods")],
    },
    Rule {
        stem: "bend",
        effects: &[(Target::Part(PartId::Spine), "bends forward")],
    },
    Rule {
        stem: "turn",
        effects: &[(Target::Part(PartId::Trajectory), "turns")],
    },
];

fn expand(target: Target, left: bool, right: bool) -> Vec<PartId> {
    let sides = |l: PartId, r: PartId| match (left, right) {
        (true, false) => vec![l],
        (false, true) => vec![r],
        _ => vec![l, r],
    };
    match target {
        Target::Part(p) => vec![p],
        Target::Arms => sides(PartId::LeftArm, PartId::RightArm),
        Target::Legs => sides(PartId::LeftLeg, PartId::RightLeg),
    }
}

/// Applies the rule table to one action label. Unrecognized verbs yield
/// an empty map, which downstream gap-filling turns into unknown tracks.
/// A side word narrows the limb targets of the nearest verb only, so
/// "walks forward waving the left arm" keeps both legs stepping while
/// the wave lands on the left arm alone.
pub(crate) fn decompose_label(label: &str) -> BTreeMap<PartId, &'static str> {
    let lower = label.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    let mut hits: Vec<(usize, &Rule)> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if let Some(rule) = RULES.iter().find(|r| w.starts_with(r.stem)) {
            hits.push((i, rule));
        }
    }
    // (left, right) flags per verb occurrence; ties go to the earlier verb.
    let mut flags = vec![(false, false); hits.len()];
    for (j, w) in words.iter().enumerate() {
        let is_left = *w == "left";
        if !is_left && *w != "right" {
            continue;
        }
        let Some(nearest) = (0..hits.len()).min_by_key(|&k| hits[k].0.abs_diff(j)) else {
            continue;
        };
        if is_left {
            flags[nearest].0 = true;
        } else {
            flags[nearest].1 = true;
        }
    }
    let mut out = BTreeMap::new();
    for (&(_, rule), &(left, right)) in hits.iter().zip(&flags) {
        for &(target, part_label) in rule.effects {
            for part in expand(target, left, right) {
                out.insert(part, part_label);
            }
        }
    }
    out
}

/// `- frames {start}..{end}: "{label}"` lines under `header`, in order.
fn parse_track_lines(prompt: &str, header: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut in_section = false;
    for line in prompt.lines() {
        let line = line.trim();
        if line == header {
            in_section = true;
            continue;
        }
        if !in_section {
            continue;
        }
        let Some(rest) = line.strip_prefix("- frames ") else {
            if line != "- (none)" {
                break;
            }
            continue;
        };
        let Some((start, rest)) = rest.split_once("..") else { break };
        let Some((end, label)) = rest.split_once(": ") else { break };
        let (Ok(start), Ok(end)) = (start.parse(), end.parse()) else { break };
        let label = label.trim_matches('"').to_string();
        out.push((start, end, label));
    }
    out
}

/// Rule-table backend: echoes the source tracks and derives part tracks
/// from each action label.
#[derive(Debug, Default)]
pub struct MockBackend;

impl AgentBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let sequence = parse_track_lines(prompt, "Sequence annotation:");
        let actions = parse_track_lines(prompt, "Action annotations:");

        let seg = |(start, end, label): &(usize, usize, String)| {
            json!({"label": label, "start": start, "end": end})
        };
        let mut parts: BTreeMap<&str, Vec<serde_json::Value>> = BTreeMap::new();
        for action in &actions {
            for (part, label) in decompose_label(&action.2) {
                parts
                    .entry(part.name())
                    .or_default()
                    .push(json!({"label": label, "start": action.0, "end": action.1}));
            }
        }
        Ok(json!({
            "refined_sequence": sequence.iter().map(seg).collect::<Vec<_>>(),
            "refined_actions": actions.iter().map(seg).collect::<Vec<_>>(),
            "parts": parts,
        })
        .to_string())
    }
}

/// Replays a fixed list of responses; the last one repeats once the list
/// is exhausted. Records every prompt it sees for test introspection.
pub struct ScriptedBackend {
    responses: Mutex<VecDeque<String>>,
    last: Mutex<String>,
    pub prompts: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(responses: impl IntoIterator<Item = impl Into<String>>) -> ScriptedBackend {
        let responses: VecDeque<String> = responses.into_iter().map(Into::into).collect();
        assert!(!responses.is_empty(), "scripted backend needs a response");
        let last = responses.back().cloned().unwrap();
        ScriptedBackend {
            responses: Mutex::new(responses),
            last: Mutex::new(last),
            prompts: Mutex::new(Vec::new()),
        }
    }
}

impl AgentBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        let next = self.responses.lock().unwrap().pop_front();
        Ok(next.unwrap_or_else(|| self.last.lock().unwrap().clone()))
    }
}

/// Always fails at transport level.
pub struct OfflineBackend;

impl AgentBackend for OfflineBackend {
    fn name(&self) -> &str {
        "offline"
    }

    fn complete(&self, _prompt: &str) -> Result<String, BackendError> {
        Err(BackendError::Unavailable("backend is offline".to_string()))
    }
}
