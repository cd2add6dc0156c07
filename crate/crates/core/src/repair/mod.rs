//! Gated repair: span-edit patches, re-parse and differential checks, and a
//! bounded generate/apply/re-detect loop that only accepts exploited traces.

mod template;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{self, explain, DetectionResult, ExplanationRecord, FusionError, FusionModel};
use crate::uast::{parse_to_uast, Language, SourceSpan, UastDocument, UastError};
use crate::util::http;
use crate::validation::sinks::find_sinks;
use crate::validation::{
    ExploitedTrace, NotExploited, Payload, ValidationSample, ValidationTrace, VulnClass,
};

pub use template::template_patch;

pub const MAX_ITERATIONS: usize = 5;
pub const PATCH_TEMPERATURE: f64 = 0.2;
pub const PATCH_TOP_P: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepairError {
    #[error("repair gate: {0}")]
    GateViolation(#[from] NotExploited),
    #[error("patch generator unavailable: {0}")]
    GeneratorUnavailable(String),
    #[error("no patch template for {0}")]
    UnpatchableClass(VulnClass),
    #[error("template does not apply: {0}")]
    TemplateInapplicable(String),
    #[error("edits overlap or are out of order at edit {0}")]
    OverlappingEdits(usize),
    #[error(
        "edit {index} ({start}..{end}) is outside the {len}-byte source or splits a character"
    )]
    OutOfBounds {
        index: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("patched source does not parse cleanly: {0}")]
    SyntaxRejected(String),
    #[error("{0}")]
    Uast(String),
}

impl From<UastError> for RepairError {
    fn from(e: UastError) -> Self {
        RepairError::Uast(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub start_byte: usize,
    pub end_byte: usize,
    pub replacement: String,
}

impl Edit {
    pub fn insert(at: usize, text: impl Into<String>) -> Self {
        Self {
            start_byte: at,
            end_byte: at,
            replacement: text.into(),
        }
    }

    pub fn replace(span: &SourceSpan, text: impl Into<String>) -> Self {
        Self {
            start_byte: span.start_byte,
            end_byte: span.end_byte,
            replacement: text.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEdit {
    pub edits: Vec<Edit>,
}

impl PatchEdit {
    /// Sorted, non-overlapping, inside `source` and on character boundaries.
    /// Two insertions at the same offset count as overlapping.
    pub fn check(&self, source: &str) -> Result<(), RepairError> {
        for (i, e) in self.edits.iter().enumerate() {
            if e.start_byte > e.end_byte
                || e.end_byte > source.len()
                || !source.is_char_boundary(e.start_byte)
                || !source.is_char_boundary(e.end_byte)
            {
                return Err(RepairError::OutOfBounds {
                    index: i,
                    start: e.start_byte,
                    end: e.end_byte,
                    len: source.len(),
                });
            }
            if i > 0 {
                let prev = &self.edits[i - 1];
                if e.start_byte < prev.end_byte
                    || (prev.start_byte == prev.end_byte
                        && e.start_byte == e.end_byte
                        && e.start_byte == prev.start_byte)
                {
                    return Err(RepairError::OverlappingEdits(i));
                }
            }
        }
        Ok(())
    }

    /// Regions the edits occupy in the patched text.
    pub fn patched_regions(&self) -> Vec<(usize, usize)> {
        let mut shift: isize = 0;
        self.edits
            .iter()
            .map(|e| {
                let start = (e.start_byte as isize + shift) as usize;
                shift += e.replacement.len() as isize - (e.end_byte - e.start_byte) as isize;
                (start, start + e.replacement.len())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorAttempt {
    pub patch: PatchEdit,
    pub rejection_reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairPrompt {
    pub sample_id: String,
    pub language: Language,
    pub source: String,
    pub vuln_class: VulnClass,
    pub exploit_payload: Payload,
    pub observed_behavior: String,
    pub prior_attempts: Vec<PriorAttempt>,
}

/// Prompt for the next attempt. Only an exploited trace can produce one.
pub fn build_repair_prompt(
    sample: &ValidationSample,
    trace: &ExploitedTrace,
    prior: &[PriorAttempt],
) -> RepairPrompt {
    let (hyp, payload, item) = trace.confirming();
    let observed = match &item.artifact {
        Some(a) => format!("{}: {a}", item.description),
        None => item.description.clone(),
    };
    RepairPrompt {
        sample_id: sample.sample_id.clone(),
        language: sample.language,
        source: sample.source.clone(),
        vuln_class: hyp.vuln_class,
        exploit_payload: payload.clone(),
        observed_behavior: observed,
        prior_attempts: prior.to_vec(),
    }
}

pub trait PatchGenerator: Send + Sync {
    fn generate(&self, prompt: &RepairPrompt) -> Result<PatchEdit, RepairError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Generator {
    #[default]
    Template,
    Remote {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl PatchGenerator for Generator {
    fn generate(&self, prompt: &RepairPrompt) -> Result<PatchEdit, RepairError> {
        match self {
            Generator::Template => template_patch(prompt),
            Generator::Remote { url, timeout_ms } => remote_patch(prompt, url, *timeout_ms),
        }
    }
}

fn remote_patch(
    prompt: &RepairPrompt,
    url: &str,
    timeout_ms: u64,
) -> Result<PatchEdit, RepairError> {
    let mut body = serde_json::to_value(prompt)
        .map_err(|e| RepairError::GeneratorUnavailable(e.to_string()))?;
    body["temperature"] = PATCH_TEMPERATURE.into();
    body["top_p"] = PATCH_TOP_P.into();
    let reply = http::post_json(
        &http::join(url, "patch"),
        &body,
        Duration::from_millis(timeout_ms),
    )
    .map_err(RepairError::GeneratorUnavailable)?;
    serde_json::from_value(reply)
        .map_err(|e| RepairError::GeneratorUnavailable(format!("malformed patch: {e}")))
}

pub fn generate_patch(
    prompt: &RepairPrompt,
    generator: &dyn PatchGenerator,
) -> Result<PatchEdit, RepairError> {
    generator.generate(prompt)
}

/// Applies the edits right to left and re-parses the result.
pub fn apply_patch(
    source: &str,
    patch: &PatchEdit,
    language: Language,
) -> Result<(String, UastDocument), RepairError> {
    patch.check(source)?;
    let mut out = source.to_string();
    for e in patch.edits.iter().rev() {
        out.replace_range(e.start_byte..e.end_byte, &e.replacement);
    }
    let doc = parse_to_uast(out.as_bytes(), language)?;
    if doc.has_errors {
        let at = doc
            .nodes
            .iter()
            .find(|n| n.native_type == "ERROR" || n.native_type == "MISSING")
            .map(|n| format!("near line {}", n.span.start_line + 1))
            .unwrap_or_else(|| "error nodes present".into());
        return Err(RepairError::SyntaxRejected(at));
    }
    Ok((out, doc))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffReport {
    pub pass: bool,
    pub out_of_span_changes: Vec<String>,
}

/// Closed-interval overlap, so nodes touching an edit are set aside on both
/// sides alike.
fn touches(span: &SourceSpan, region: (usize, usize)) -> bool {
    span.start_byte <= region.1 && region.0 <= span.end_byte
}

fn outside_sequence(doc: &UastDocument, regions: &[(usize, usize)]) -> Vec<(usize, String)> {
    doc.nodes
        .iter()
        .filter(|n| !regions.iter().any(|&r| touches(&n.span, r)))
        .map(|n| {
            (
                n.index,
                format!(
                    "{} {} {:?}",
                    n.universal_category.name(),
                    n.native_type,
                    n.text
                ),
            )
        })
        .collect()
}

/// Compares the pre-order node sequences outside the edited regions.
pub fn differential_analysis(
    original: &UastDocument,
    patched: &UastDocument,
    patch: &PatchEdit,
) -> DiffReport {
    let before_regions: Vec<(usize, usize)> = patch
        .edits
        .iter()
        .map(|e| (e.start_byte, e.end_byte))
        .collect();
    let before = outside_sequence(original, &before_regions);
    let after = outside_sequence(patched, &patch.patched_regions());
    let mut changes = Vec::new();
    let n = before.len().max(after.len());
    for i in 0..n {
        match (before.get(i), after.get(i)) {
            (Some(a), Some(b)) if a.1 == b.1 => {}
            (Some(a), Some(b)) => changes.push(format!(
                "node {} `{}` became node {} `{}`",
                a.0, a.1, b.0, b.1
            )),
            (Some(a), None) => changes.push(format!("node {} `{}` removed", a.0, a.1)),
            (None, Some(b)) => changes.push(format!("node {} `{}` added", b.0, b.1)),
            (None, None) => {}
        }
        if changes.len() >= 20 {
            break;
        }
    }
    DiffReport {
        pass: changes.is_empty(),
        out_of_span_changes: changes,
    }
}

pub trait Redetector: Send + Sync {
    fn redetect(&self, source: &str, language: Language) -> Result<DetectionResult, FusionError>;
}

impl Redetector for FusionModel {
    fn redetect(&self, source: &str, language: Language) -> Result<DetectionResult, FusionError> {
        fusion::detect(source.as_bytes(), language, self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub iteration: usize,
    pub patch: Option<PatchEdit>,
    pub applied: bool,
    pub rejection_reason: Option<String>,
    pub re_detect_flag: Option<u8>,
    pub explanation: Option<ExplanationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticTrace {
    pub sample_id: String,
    pub vuln_class: VulnClass,
    pub attempts: Vec<AttemptRecord>,
    pub persistent_indicators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RepairOutcome {
    Success {
        patched_source: String,
        iterations_used: usize,
        final_detection: DetectionResult,
        attempts: Vec<AttemptRecord>,
    },
    NonConvergent {
        trace: DiagnosticTrace,
    },
}

impl RepairOutcome {
    pub fn iterations_used(&self) -> usize {
        match self {
            RepairOutcome::Success {
                iterations_used, ..
            } => *iterations_used,
            RepairOutcome::NonConvergent { trace } => trace.attempts.len(),
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, RepairOutcome::Success { .. })
    }
}

fn indicators(language: Language, source: &str, last: Option<&DetectionResult>) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(d) = last {
        out.push(format!(
            "detector still flags the patched code (p = {:.4})",
            d.prob_vulnerable
        ));
    }
    if let Ok(doc) = parse_to_uast(source.as_bytes(), language) {
        for hit in find_sinks(&doc, source) {
            if hit.concatenated || hit.class.is_memory() {
                out.push(format!(
                    "{} sink `{}` on line {}",
                    hit.class,
                    hit.callee,
                    doc.nodes[hit.node].span.start_line + 1
                ));
            }
        }
    }
    out
}

/// Gate first: a trace that is not an execution-confirmed exploit never
/// reaches the generator.
pub fn repair_sample(
    sample: &ValidationSample,
    trace: &ValidationTrace,
    detector: &dyn Redetector,
    generator: &dyn PatchGenerator,
) -> Result<RepairOutcome, RepairError> {
    let exploited = ExploitedTrace::try_from(trace.clone())?;
    Ok(repair_exploited(sample, &exploited, detector, generator))
}

pub fn repair_exploited(
    sample: &ValidationSample,
    trace: &ExploitedTrace,
    detector: &dyn Redetector,
    generator: &dyn PatchGenerator,
) -> RepairOutcome {
    let mut attempts: Vec<AttemptRecord> = Vec::new();
    let mut prior: Vec<PriorAttempt> = Vec::new();
    let mut last_source = sample.source.clone();
    let mut last_detection = None;
    let vuln_class = trace.confirming().0.vuln_class;

    for iteration in 1..=MAX_ITERATIONS {
        let prompt = build_repair_prompt(sample, trace, &prior);
        let mut record = AttemptRecord {
            iteration,
            patch: None,
            applied: false,
            rejection_reason: None,
            re_detect_flag: None,
            explanation: None,
        };
        let patch = match generator.generate(&prompt) {
            Ok(p) => p,
            Err(e) => {
                let fatal = matches!(
                    e,
                    RepairError::UnpatchableClass(_) | RepairError::GeneratorUnavailable(_)
                );
                record.rejection_reason = Some(e.to_string());
                prior.push(PriorAttempt {
                    patch: PatchEdit::default(),
                    rejection_reason: e.to_string(),
                });
                attempts.push(record);
                if fatal {
                    break;
                }
                continue;
            }
        };
        record.patch = Some(patch.clone());
        let rejection = match apply_patch(&sample.source, &patch, sample.language) {
            Err(e) => Some(e.to_string()),
            Ok((patched, doc)) => {
                let diff = differential_analysis(&sample.doc, &doc, &patch);
                if !diff.pass {
                    Some(format!(
                        "changes outside the edited spans: {}",
                        diff.out_of_span_changes.join("; ")
                    ))
                } else {
                    record.applied = true;
                    last_source = patched.clone();
                    match detector.redetect(&patched, sample.language) {
                        Err(e) => Some(format!("re-detection failed: {e}")),
                        Ok(det) => {
                            record.re_detect_flag = Some(det.flag);
                            record.explanation = Some(explain(&det));
                            if det.flag == 0 {
                                attempts.push(record);
                                log::info!(
                                    "repaired {} in {iteration} iteration(s)",
                                    sample.sample_id
                                );
                                return RepairOutcome::Success {
                                    patched_source: patched,
                                    iterations_used: iteration,
                                    final_detection: det,
                                    attempts,
                                };
                            }
                            let reason = format!(
                                "re-detection still flags (p = {:.4})",
                                det.prob_vulnerable
                            );
                            last_detection = Some(det);
                            Some(reason)
                        }
                    }
                }
            }
        };
        let reason = rejection.unwrap_or_default();
        record.rejection_reason = Some(reason.clone());
        prior.push(PriorAttempt {
            patch,
            rejection_reason: reason,
        });
        attempts.push(record);
    }
    log::info!("repair of {} did not converge", sample.sample_id);
    RepairOutcome::NonConvergent {
        trace: DiagnosticTrace {
            sample_id: sample.sample_id.clone(),
            vuln_class,
            persistent_indicators: indicators(
                sample.language,
                &last_source,
                last_detection.as_ref(),
            ),
            attempts,
        },
    }
}

#[cfg(test)]
mod tests;
