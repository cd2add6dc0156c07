//! Execution-backed validation: plan an exploit hypothesis, run instrumented
//! harnesses in a sandbox, classify what happened, and reach a verdict.

mod evidence;
mod harness;
mod orchestrator;
mod planner;
mod sandbox;
pub mod sinks;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::ExplanationRecord;

pub use evidence::{classify_evidence, escapes_root, normalize_path};
pub use harness::{generate_harness, HarnessBundle};
pub use orchestrator::{validate_sample, Budget, ValidationConfig, ValidationSample};
pub use planner::{families, family_count, plan_hypothesis, PlanRequest, Planner};
pub use sandbox::{
    assemble_sandbox_command, container_bin, execute_in_sandbox, format_size, parse_events,
    truncate_stream, ContainerDriver, Driver, MockDriver, ScriptedResult, CONTAINER_BIN_ENV,
    STREAM_CAP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VulnClass {
    SqlInjection,
    CommandInjection,
    PathTraversal,
    InsecureDeserialization,
    MemoryCorruption,
    Other,
}

impl VulnClass {
    pub const ALL: [VulnClass; 6] = [
        VulnClass::SqlInjection,
        VulnClass::CommandInjection,
        VulnClass::PathTraversal,
        VulnClass::InsecureDeserialization,
        VulnClass::MemoryCorruption,
        VulnClass::Other,
    ];

    pub fn is_memory(self) -> bool {
        self == VulnClass::MemoryCorruption
    }
}

impl fmt::Display for VulnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// How the harness delivers a payload to the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackVector {
    Argument,
    Stdin,
    TemplatedVariable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub id: String,
    pub data: String,
    pub marker: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploitHypothesis {
    pub vuln_class: VulnClass,
    pub attack_vector: AttackVector,
    pub payloads: Vec<Payload>,
    #[serde(default)]
    pub preconditions: Vec<String>,
    pub attempt_index: u32,
    /// Payload family the planner drew from; refinement moves to an untried one.
    #[serde(default)]
    pub family: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxSpec {
    pub memory_limit: u64,
    pub cpu_quota: f64,
    pub network: String,
    pub read_only: bool,
    pub tmpfs_size: u64,
    pub pid_limit: u32,
    pub no_new_privileges: bool,
    pub harness_timeout_s: u64,
    pub image: String,
}

pub const GIB: u64 = 1 << 30;
pub const MIB: u64 = 1 << 20;

impl SandboxSpec {
    pub fn for_language(language: crate::uast::Language) -> Self {
        use crate::uast::Language;
        let (memory_limit, image) = match language {
            Language::Java => (2 * GIB, "eclipse-temurin:21-jdk"),
            Language::Python => (GIB, "python:3.11-slim"),
            Language::Cpp => (GIB, "gcc:13"),
        };
        Self {
            memory_limit,
            cpu_quota: 0.9,
            network: "none".into(),
            read_only: true,
            tmpfs_size: 256 * MIB,
            pid_limit: 256,
            no_new_privileges: true,
            harness_timeout_s: 30,
            image: image.into(),
        }
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        let bad = |m: &str| Err(SandboxError::InvalidSpec(m.to_string()));
        if self.network != "none" {
            return bad("network must be none");
        }
        if self.memory_limit == 0
            || self.tmpfs_size == 0
            || self.pid_limit == 0
            || !(self.cpu_quota > 0.0)
        {
            return bad("limits must be positive");
        }
        if !(30..=45).contains(&self.harness_timeout_s) {
            return bad("harness timeout must be within 30..=45 s");
        }
        if self.image.is_empty() {
            return bad("image is empty");
        }
        Ok(())
    }
}

/// One `VLF_EVENT` line or one parsed sanitizer report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessEvent {
    pub sink: String,
    pub arg: String,
    #[serde(default)]
    pub ts: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub stdout: String,
    pub stderr: String,
    pub events: Vec<HarnessEvent>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvidenceClass {
    Confirming,
    Suggestive,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvidenceSource {
    SanitizerReport,
    HarnessEvent,
    ExitBehavior,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub class: EvidenceClass,
    pub description: String,
    pub source: EvidenceSource,
    pub payload_id: String,
    /// The event line or report excerpt a Confirming item rests on.
    #[serde(default)]
    pub artifact: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    Exploited,
    NotExploited,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub confirming_count: usize,
    pub suggestive_count: usize,
}

impl Verdict {
    pub fn from_counts(confirming_count: usize, suggestive_count: usize) -> Self {
        let kind = if confirming_count >= 1 {
            VerdictKind::Exploited
        } else if suggestive_count >= 1 {
            VerdictKind::Inconclusive
        } else {
            VerdictKind::NotExploited
        };
        Self {
            kind,
            confirming_count,
            suggestive_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum PayloadStatus {
    Executed,
    SkippedPrecondition(String),
    BudgetExhausted,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadRecord {
    pub payload_id: String,
    pub status: PayloadStatus,
    pub timeout_ms: u64,
    pub result: Option<ExecutionResult>,
    pub evidence: Vec<EvidenceItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub hypothesis: Option<ExploitHypothesis>,
    pub executions: Vec<PayloadRecord>,
    pub budget_ms: u64,
    pub used_ms: u64,
    /// Set when the planner offered fewer payloads than the protocol minimum.
    pub payload_shortfall: Option<String>,
    pub error: Option<String>,
    /// Evidence recorded without any execution (e.g. no sink pattern found).
    #[serde(default)]
    pub notes: Vec<EvidenceItem>,
}

impl HypothesisRecord {
    pub fn executed(&self) -> usize {
        self.executions
            .iter()
            .filter(|e| e.status == PayloadStatus::Executed)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationTrace {
    pub sample_id: String,
    pub flag_in: u8,
    pub hypotheses: Vec<HypothesisRecord>,
    pub verdict: Verdict,
    pub total_wall_ms: u64,
    pub stopped_early: bool,
    #[serde(default)]
    pub explanation: Option<ExplanationRecord>,
}

impl ValidationTrace {
    pub fn evidence(&self) -> impl Iterator<Item = &EvidenceItem> {
        self.hypotheses.iter().flat_map(|h| {
            h.notes
                .iter()
                .chain(h.executions.iter().flat_map(|e| e.evidence.iter()))
        })
    }

    pub fn executions(&self) -> usize {
        self.hypotheses.iter().map(HypothesisRecord::executed).sum()
    }

    /// Recounts the evidence and checks it against the stored verdict.
    pub fn verdict_is_sound(&self) -> bool {
        let c = self
            .evidence()
            .filter(|e| e.class == EvidenceClass::Confirming)
            .count();
        let s = self
            .evidence()
            .filter(|e| e.class == EvidenceClass::Suggestive)
            .count();
        self.verdict == Verdict::from_counts(c, s)
    }

    /// The first Confirming item and the payload it was produced by.
    pub fn first_confirming(&self) -> Option<(&ExploitHypothesis, &Payload, &EvidenceItem)> {
        for h in &self.hypotheses {
            let Some(hyp) = &h.hypothesis else { continue };
            for e in &h.executions {
                if let Some(item) = e
                    .evidence
                    .iter()
                    .find(|i| i.class == EvidenceClass::Confirming)
                {
                    let payload = hyp.payloads.iter().find(|p| p.id == item.payload_id)?;
                    return Some((hyp, payload, item));
                }
            }
        }
        None
    }
}

/// A trace whose verdict is Exploited and which carries its confirming
/// evidence. Repair only accepts this type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExploitedTrace(ValidationTrace);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace for {sample_id} is {kind:?}, not an execution-confirmed exploit")]
pub struct NotExploited {
    pub sample_id: String,
    pub kind: VerdictKind,
}

impl TryFrom<ValidationTrace> for ExploitedTrace {
    type Error = NotExploited;

    fn try_from(trace: ValidationTrace) -> Result<Self, NotExploited> {
        if trace.verdict.kind == VerdictKind::Exploited
            && trace.verdict_is_sound()
            && trace.first_confirming().is_some()
        {
            Ok(Self(trace))
        } else {
            Err(NotExploited {
                sample_id: trace.sample_id.clone(),
                kind: trace.verdict.kind,
            })
        }
    }
}

impl ExploitedTrace {
    pub fn trace(&self) -> &ValidationTrace {
        &self.0
    }

    pub fn into_inner(self) -> ValidationTrace {
        self.0
    }

    pub fn confirming(&self) -> (&ExploitHypothesis, &Payload, &EvidenceItem) {
        self.0.first_confirming().expect("checked on construction")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("planner unavailable: {0}")]
    PlannerUnavailable(String),
    #[error("no sink pattern found")]
    NoHypothesis,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("attack vector {0:?} is not supported for this language")]
    UnsupportedVector(AttackVector),
    #[error("template error: {0}")]
    TemplateError(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SandboxError {
    #[error("sandbox driver unavailable: {0}")]
    DriverUnavailable(String),
    #[error("failed to spawn sandbox: {0}")]
    SpawnFailure(String),
    #[error("harness did not compile: {0}")]
    CompileFailure(String),
    #[error("invalid sandbox spec: {0}")]
    InvalidSpec(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uast::Language;

    #[test]
    fn verdict_rule() {
        assert_eq!(Verdict::from_counts(1, 0).kind, VerdictKind::Exploited);
        assert_eq!(Verdict::from_counts(2, 5).kind, VerdictKind::Exploited);
        assert_eq!(Verdict::from_counts(0, 1).kind, VerdictKind::Inconclusive);
        assert_eq!(Verdict::from_counts(0, 0).kind, VerdictKind::NotExploited);
    }

    #[test]
    fn sandbox_defaults() {
        let py = SandboxSpec::for_language(Language::Python);
        assert_eq!(py.memory_limit, GIB);
        assert_eq!(
            SandboxSpec::for_language(Language::Java).memory_limit,
            2 * GIB
        );
        assert!(py.validate().is_ok());
        let open = SandboxSpec {
            network: "bridge".into(),
            ..py.clone()
        };
        assert!(open.validate().is_err());
        let slow = SandboxSpec {
            harness_timeout_s: 60,
            ..py
        };
        assert!(slow.validate().is_err());
    }

    #[test]
    fn non_exploited_trace_is_refused() {
        let trace = ValidationTrace {
            sample_id: "s".into(),
            flag_in: 1,
            hypotheses: vec![],
            verdict: Verdict::from_counts(0, 0),
            total_wall_ms: 0,
            stopped_early: false,
            explanation: None,
        };
        assert!(ExploitedTrace::try_from(trace.clone()).is_err());
        // a forged verdict without evidence is refused as well
        let forged = ValidationTrace {
            verdict: Verdict::from_counts(1, 0),
            ..trace
        };
        assert!(ExploitedTrace::try_from(forged).is_err());
    }
}
