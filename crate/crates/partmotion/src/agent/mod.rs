//! LLM-backed decomposition of sequence/action annotations into part-level
//! annotations, with strict parsing, a bounded repair loop, transcripts,
//! and the Gwet AC1 agreement statistic.
//!
//! A backend is anything that completes a prompt. Every attempt's raw
//! response is recorded; invalid output retries with the same prompt plus
//! an appended reason, up to the configured attempt budget. Time
//! boundaries are immutable: the agent may reword the source labels but
//! any response that moves a sequence or action boundary is rejected.

pub mod agreement;
pub mod http;
pub mod mock;
pub mod parse;
pub mod prompt;
pub mod rate_limit;

pub use agreement::{gwet_ac1, AgreementError, RatingsTable};
pub use http::HttpBackend;
pub use mock::{MockBackend, OfflineBackend, ScriptedBackend};
pub use parse::{parse_agent_response, AgentResponse, ParseError};
pub use prompt::{build_decomposition_prompt, AgentRequest, TemplateError, DEFAULT_TEMPLATE};
pub use rate_limit::RateLimiter;

use serde::{Deserialize, Serialize};

use crate::annotation::{validate_annotation, HierarchicalAnnotation};
use crate::exec;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("{0}")]
    Unavailable(String),
    #[error("missing API key: set {var}")]
    MissingApiKey { var: &'static str },
}

/// A prompt-completion endpoint. Implementations must be shareable across
/// threads; annotation calls for distinct sequences may run concurrently.
pub trait AgentBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("AGENT_UNAVAILABLE: {0}")]
    Unavailable(String),
    #[error("EXHAUSTED_RETRIES: {attempts} attempts failed; last failure: {last}")]
    ExhaustedRetries { attempts: usize, last: String },
}

/// One attempt's record for the NDJSON transcript log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub id: String,
    pub attempt: usize,
    pub prompt: String,
    pub response: String,
    /// `"ok"` or the failure reason fed back into the retry prompt.
    pub status: String,
}

/// Sorted (start, end) spans; refinement may reword labels but a changed
/// boundary set is invalid output.
fn boundary_set(segments: &[crate::annotation::TimedLabel]) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = segments.iter().map(|s| (s.start, s.end)).collect();
    spans.sort_unstable();
    spans
}

/// Checks one parsed response against the request it answers, returning
/// the finished annotation or the reason the attempt is invalid.
fn accept_response(req: &AgentRequest, resp: AgentResponse) -> Result<HierarchicalAnnotation, String> {
    if boundary_set(&resp.refined_sequence) != boundary_set(&req.sequence) {
        return Err("the sequence span boundaries were modified".to_string());
    }
    if boundary_set(&resp.refined_actions) != boundary_set(&req.actions) {
        return Err("action segment boundaries were modified".to_string());
    }
    let ann = resp
        .into_annotation(&req.id)
        .map_err(|e| e.to_string())?;
    let violations = validate_annotation(&ann);
    if let Some(v) = violations.first() {
        return Err(v.to_string());
    }
    Ok(ann)
}

/// Decomposes one request into a fully valid part-level annotation.
/// Invalid output retries with the same prompt plus an appended
/// explanation until `max_attempts` is spent; transport failures abort
/// immediately. Every attempt is appended to `transcript`.
pub fn annotate_sequence(
    req: &AgentRequest,
    backend: &dyn AgentBackend,
    template: &str,
    max_attempts: usize,
    limiter: Option<&RateLimiter>,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<HierarchicalAnnotation, AgentError> {
    assert!(max_attempts >= 1);
    let base_prompt = build_decomposition_prompt(req, template)?;
    let mut reason: Option<String> = None;
    for attempt in 0..max_attempts {
        let prompt = match &reason {
            None => base_prompt.clone(),
            Some(r) => format!("{base_prompt}\n\nThe previous output was invalid because {r}. Answer again, fixing this."),
        };
        if let Some(limiter) = limiter {
            limiter.acquire();
        }
        let raw = match backend.complete(&prompt) {
            Ok(raw) => raw,
            Err(e) => {
                transcript.push(TranscriptEntry {
                    id: req.id.clone(),
                    attempt,
                    prompt,
                    response: String::new(),
                    status: format!("AGENT_UNAVAILABLE: {e}"),
                });
                return Err(AgentError::Unavailable(e.to_string()));
            }
        };
        let outcome = parse_agent_response(&raw, req.num_frames, req.fps)
            .map_err(|e| e.to_string())
            .and_then(|resp| accept_response(req, resp));
        match outcome {
            Ok(ann) => {
                transcript.push(TranscriptEntry {
                    id: req.id.clone(),
                    attempt,
                    prompt,
                    response: raw,
                    status: "ok".to_string(),
                });
                return Ok(ann);
            }
            Err(r) => {
                transcript.push(TranscriptEntry {
                    id: req.id.clone(),
                    attempt,
                    prompt,
                    response: raw,
                    status: r.clone(),
                });
                reason = Some(r);
            }
        }
    }
    Err(AgentError::ExhaustedRetries {
        attempts: max_attempts,
        last: reason.expect("at least one attempt ran"),
    })
}

/// Annotates many requests, in parallel when the `parallel` feature is
/// on. Results and transcripts come back in request order regardless of
/// the backend; the rate limiter is the only shared mutable state.
pub fn annotate_batch(
    reqs: &[AgentRequest],
    backend: &dyn AgentBackend,
    template: &str,
    max_attempts: usize,
    limiter: Option<&RateLimiter>,
) -> (
    Vec<Result<HierarchicalAnnotation, AgentError>>,
    Vec<TranscriptEntry>,
) {
    let outcomes = exec::par_map(reqs, |req| {
        let mut transcript = Vec::new();
        let result =
            annotate_sequence(req, backend, template, max_attempts, limiter, &mut transcript);
        (result, transcript)
    });
    let mut results = Vec::with_capacity(reqs.len());
    let mut transcripts = Vec::new();
    for (result, mut t) in outcomes {
        results.push(result);
        transcripts.append(&mut t);
    }
    (results, transcripts)
}
