use serde::{Deserialize, Serialize};

use super::evidence::classify_evidence;
use super::harness::generate_harness;
use super::planner::{plan_hypothesis, PlanRequest, Planner};
use super::sandbox::{execute_in_sandbox, Driver};
use super::{
    EvidenceClass, EvidenceItem, EvidenceSource, ExploitHypothesis, HypothesisRecord,
    PayloadRecord, PayloadStatus, PlanError, SandboxSpec, ValidationTrace, Verdict,
};
use crate::uast::{parse_to_uast, Language, UastDocument, UastError, UniversalCategory as C};

#[derive(Debug, Clone)]
pub struct ValidationSample {
    pub sample_id: String,
    pub language: Language,
    pub source: String,
    pub doc: UastDocument,
}

impl ValidationSample {
    pub fn parse(
        sample_id: impl Into<String>,
        language: Language,
        source: impl Into<String>,
    ) -> Result<Self, UastError> {
        let source = source.into();
        let doc = parse_to_uast(source.as_bytes(), language)?;
        Ok(Self {
            sample_id: sample_id.into(),
            language,
            source,
            doc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    #[serde(default)]
    pub planner: Planner,
    #[serde(default = "default_harness_timeout")]
    pub harness_timeout_s: u64,
}

fn default_harness_timeout() -> u64 {
    30
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            planner: Planner::default(),
            harness_timeout_s: default_harness_timeout(),
        }
    }
}

/// Protocol limits for one detection flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub max_hypotheses: usize,
    pub min_payloads: usize,
    pub max_payloads: usize,
    /// Wall budget per hypothesis.
    pub wall_ms: u64,
}

impl Budget {
    pub const ACTIVE: Budget = Budget {
        max_hypotheses: 5,
        min_payloads: 3,
        max_payloads: 5,
        wall_ms: 60_000,
    };
    pub const PROBE: Budget = Budget {
        max_hypotheses: 1,
        min_payloads: 1,
        max_payloads: 2,
        wall_ms: 15_000,
    };

    pub fn for_flag(flag: u8) -> Budget {
        if flag == 1 {
            Budget::ACTIVE
        } else {
            Budget::PROBE
        }
    }
}

/// Whether `doc` declares a function named `name`. The name is the first
/// identifier of the declaration outside its body and type annotations.
fn declares_function(doc: &UastDocument, name: &str) -> bool {
    doc.query_by_category(C::FunctionDeclaration)
        .into_iter()
        .any(|f| {
            let mut stack: Vec<usize> = doc.nodes[*f].children.iter().rev().copied().collect();
            while let Some(i) = stack.pop() {
                let n = &doc.nodes[i];
                match n.universal_category {
                    C::Block | C::TypeReference | C::Parameter => continue,
                    C::Identifier if n.native_type == "identifier" => return n.text == name,
                    _ => stack.extend(n.children.iter().rev().copied()),
                }
            }
            false
        })
}

fn unmet_precondition(sample: &ValidationSample, hyp: &ExploitHypothesis) -> Option<String> {
    hyp.preconditions
        .iter()
        .find_map(|p| match p.split_once(':') {
            Some(("entry", name)) if !declares_function(&sample.doc, name) => {
                Some(format!("no entry function `{name}`"))
            }
            Some(("entry", _)) => None,
            _ => Some(format!("unrecognised precondition `{p}`")),
        })
}

fn neutral(description: &str, payload_id: &str) -> EvidenceItem {
    EvidenceItem {
        class: EvidenceClass::Neutral,
        description: description.to_string(),
        source: EvidenceSource::ExitBehavior,
        payload_id: payload_id.to_string(),
        artifact: None,
    }
}

/// Runs one hypothesis; returns whether a Confirming item was observed.
fn run_hypothesis(
    sample: &ValidationSample,
    hyp: &ExploitHypothesis,
    spec: &SandboxSpec,
    budget: &Budget,
    driver: &dyn Driver,
    record: &mut HypothesisRecord,
) -> bool {
    let skip = unmet_precondition(sample, hyp);
    for payload in &hyp.payloads {
        let remaining = budget.wall_ms.saturating_sub(record.used_ms);
        let timeout_ms = (spec.harness_timeout_s * 1000).min(remaining);
        let mut rec = PayloadRecord {
            payload_id: payload.id.clone(),
            status: PayloadStatus::Executed,
            timeout_ms,
            result: None,
            evidence: Vec::new(),
        };
        if let Some(reason) = &skip {
            rec.status = PayloadStatus::SkippedPrecondition(reason.clone());
            record.executions.push(rec);
            continue;
        }
        if timeout_ms == 0 {
            rec.status = PayloadStatus::BudgetExhausted;
            record.executions.push(rec);
            continue;
        }
        let outcome = generate_harness(
            &sample.sample_id,
            sample.language,
            &sample.source,
            hyp,
            payload,
        )
        .map_err(|e| e.to_string())
        .and_then(|bundle| {
            execute_in_sandbox(&bundle, spec, driver, timeout_ms).map_err(|e| e.to_string())
        });
        match outcome {
            Ok(result) => {
                record.used_ms += result.wall_time_ms.min(timeout_ms);
                rec.evidence = classify_evidence(&result, hyp, payload);
                rec.result = Some(result);
            }
            Err(msg) => {
                rec.evidence
                    .push(neutral(&format!("execution failed: {msg}"), &payload.id));
                rec.status = PayloadStatus::Failed(msg);
            }
        }
        let confirmed = rec
            .evidence
            .iter()
            .any(|e| e.class == EvidenceClass::Confirming);
        record.executions.push(rec);
        if confirmed {
            return true;
        }
    }
    false
}

/// Plans, executes and classifies under the budget selected by `flag`.
/// Failures are recorded in the trace; this never errors.
pub fn validate_sample(
    sample: &ValidationSample,
    flag: u8,
    cfg: &ValidationConfig,
    driver: &dyn Driver,
) -> ValidationTrace {
    let budget = Budget::for_flag(flag);
    let spec = SandboxSpec {
        harness_timeout_s: cfg.harness_timeout_s,
        ..SandboxSpec::for_language(sample.language)
    };
    let mut prior: Vec<ExploitHypothesis> = Vec::new();
    let mut records: Vec<HypothesisRecord> = Vec::new();
    let mut stopped_early = false;

    while records.len() < budget.max_hypotheses {
        let empty = HypothesisRecord {
            hypothesis: None,
            executions: Vec::new(),
            budget_ms: budget.wall_ms,
            used_ms: 0,
            payload_shortfall: None,
            error: None,
            notes: Vec::new(),
        };
        let req = PlanRequest {
            sample_id: &sample.sample_id,
            language: sample.language,
            source: &sample.source,
            doc: &sample.doc,
            flag,
            prior: &prior,
        };
        let mut hyp = match plan_hypothesis(&req, &cfg.planner) {
            Ok(h) => h,
            Err(PlanError::NoHypothesis) => {
                if records.is_empty() {
                    records.push(HypothesisRecord {
                        notes: vec![neutral("no sink pattern found", "")],
                        ..empty
                    });
                }
                break;
            }
            Err(e) => {
                records.push(HypothesisRecord {
                    error: Some(e.to_string()),
                    ..empty
                });
                break;
            }
        };
        hyp.attempt_index = records.len() as u32 + 1;
        let mut record = empty;
        if hyp.payloads.len() > budget.max_payloads {
            hyp.payloads.truncate(budget.max_payloads);
        } else if hyp.payloads.len() < budget.min_payloads {
            record.payload_shortfall = Some(format!(
                "planner offered {} payloads, protocol minimum is {}",
                hyp.payloads.len(),
                budget.min_payloads
            ));
        }
        let confirmed = run_hypothesis(sample, &hyp, &spec, &budget, driver, &mut record);
        record.hypothesis = Some(hyp.clone());
        records.push(record);
        prior.push(hyp);
        if confirmed {
            stopped_early = true;
            break;
        }
    }

    let mut trace = ValidationTrace {
        sample_id: sample.sample_id.clone(),
        flag_in: flag,
        total_wall_ms: records.iter().map(|r| r.used_ms).sum(),
        hypotheses: records,
        verdict: Verdict::from_counts(0, 0),
        stopped_early,
        explanation: None,
    };
    let confirming = trace
        .evidence()
        .filter(|e| e.class == EvidenceClass::Confirming)
        .count();
    let suggestive = trace
        .evidence()
        .filter(|e| e.class == EvidenceClass::Suggestive)
        .count();
    trace.verdict = Verdict::from_counts(confirming, suggestive);
    log::info!(
        "validated {} (flag {flag}): {:?} after {} executions",
        trace.sample_id,
        trace.verdict.kind,
        trace.executions()
    );
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::{MockDriver, ScriptedResult, VerdictKind};

    const SQL: &str = "import sqlite3\n\ndef handle(user):\n    cur = sqlite3.connect(':memory:').cursor()\n    cur.execute(\"SELECT * FROM t WHERE n = '\" + user + \"'\")\n";

    fn sample() -> ValidationSample {
        ValidationSample::parse("s1", Language::Python, SQL).unwrap()
    }

    fn confirm() -> ScriptedResult {
        ScriptedResult {
            stdout: "VLF_EVENT {\"sink\":\"execute\",\"arg\":\"x {marker}\"}\n".into(),
            ..ScriptedResult::default()
        }
    }

    #[test]
    fn early_stop_on_second_payload() {
        let mut m = MockDriver::new();
        m.insert("s1", "sqli-tautology/1", confirm());
        let t = validate_sample(&sample(), 1, &ValidationConfig::default(), &m);
        assert_eq!(t.executions(), 2);
        assert!(t.stopped_early);
        assert_eq!(t.verdict.kind, VerdictKind::Exploited);
        assert!(t.verdict_is_sound());
    }

    #[test]
    fn all_neutral_exhausts_budget() {
        let t = validate_sample(
            &sample(),
            1,
            &ValidationConfig::default(),
            &MockDriver::new(),
        );
        assert_eq!(t.hypotheses.len(), 5);
        assert!(t.hypotheses.iter().all(|h| h.executions.len() == 4));
        assert_eq!(t.verdict.kind, VerdictKind::NotExploited);
        assert!(!t.stopped_early);
    }

    #[test]
    fn probe_is_single_short_hypothesis() {
        let mut m = MockDriver::new();
        m.insert(
            "s1",
            "sqli-tautology/0",
            ScriptedResult {
                exit_code: Some(1),
                stderr: "sqlite3.OperationalError: near \"{marker}\"".into(),
                ..ScriptedResult::default()
            },
        );
        let t = validate_sample(&sample(), 0, &ValidationConfig::default(), &m);
        assert_eq!(t.hypotheses.len(), 1);
        assert_eq!(t.hypotheses[0].executions.len(), 2);
        assert_eq!(t.verdict.kind, VerdictKind::Inconclusive);
    }

    #[test]
    fn per_payload_timeout_tracks_remaining_budget() {
        let mut m = MockDriver::new();
        for i in 0..4 {
            m.insert(
                "s1",
                &format!("sqli-tautology/{i}"),
                ScriptedResult {
                    wall_time_ms: 25_000,
                    ..ScriptedResult::default()
                },
            );
        }
        let t = validate_sample(&sample(), 1, &ValidationConfig::default(), &m);
        let h = &t.hypotheses[0];
        let timeouts: Vec<u64> = h.executions.iter().map(|e| e.timeout_ms).collect();
        assert_eq!(timeouts, vec![30_000, 30_000, 10_000, 0]);
        assert_eq!(h.executions[3].status, PayloadStatus::BudgetExhausted);
        assert_eq!(h.used_ms, 60_000);
    }

    #[test]
    fn no_sink_records_neutral_attempt() {
        let s = ValidationSample::parse("s2", Language::Python, "def handle(x):\n    return x\n")
            .unwrap();
        let t = validate_sample(&s, 1, &ValidationConfig::default(), &MockDriver::new());
        assert_eq!(t.hypotheses.len(), 1);
        assert!(t.hypotheses[0].hypothesis.is_none());
        assert_eq!(t.evidence().count(), 1);
        assert_eq!(t.verdict.kind, VerdictKind::NotExploited);
    }

    #[test]
    fn missing_entry_skips_payloads() {
        let src = SQL.replace("def handle", "def run");
        let s = ValidationSample::parse("s3", Language::Python, src).unwrap();
        let t = validate_sample(&s, 0, &ValidationConfig::default(), &MockDriver::new());
        assert!(t.hypotheses[0]
            .executions
            .iter()
            .all(|e| matches!(e.status, PayloadStatus::SkippedPrecondition(_))));
        assert_eq!(t.executions(), 0);
    }

    #[test]
    fn entry_detection_across_languages() {
        let cpp = parse_to_uast(
            b"#include <string>\nstd::string handle(const std::string& input) { return input; }\n",
            Language::Cpp,
        )
        .unwrap();
        assert!(declares_function(&cpp, "handle"));
        assert!(!declares_function(&cpp, "input"));
        let java = parse_to_uast(
            b"class A { static String handle(String p) { return run(p); } }",
            Language::Java,
        )
        .unwrap();
        assert!(declares_function(&java, "handle"));
        assert!(!declares_function(&java, "run"));
    }

    #[test]
    fn deterministic_under_mock() {
        let mut m = MockDriver::new();
        m.insert("s1", "sqli-union/2", confirm());
        let a = validate_sample(&sample(), 1, &ValidationConfig::default(), &m);
        let b = validate_sample(&sample(), 1, &ValidationConfig::default(), &m);
        assert_eq!(a, b);
        assert_eq!(a.hypotheses.len(), 2);
        assert_eq!(a.executions(), 4 + 3);
    }
}
