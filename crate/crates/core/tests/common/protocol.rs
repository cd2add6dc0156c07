use vlf_core::pipeline::corpus::SEED_CORPUS;
use vlf_core::uast::detect_language;
use vlf_core::validation::{
    validate_sample, Budget, EvidenceClass, ExploitHypothesis, MockDriver, Payload, PayloadStatus,
    ScriptedResult, ValidationConfig, ValidationSample, ValidationTrace, VerdictKind, VulnClass,
};

pub fn seed_samples() -> Vec<ValidationSample> {
    SEED_CORPUS
        .iter()
        .map(|f| {
            let lang = detect_language(f.path, f.source.as_bytes()).unwrap();
            ValidationSample::parse(f.path, lang, f.source).unwrap()
        })
        .collect()
}

fn event(sink: &str, arg: &str) -> String {
    format!(
        "VLF_EVENT {}\n",
        serde_json::json!({ "sink": sink, "arg": arg })
    )
}

/// A result that confirms `payload` under `hyp`, or None when the class has
/// no confirming channel.
pub fn confirming_result(hyp: &ExploitHypothesis, payload: &Payload) -> Option<ScriptedResult> {
    let stdout = match hyp.vuln_class {
        VulnClass::SqlInjection => event("execute", &format!("SELECT * FROM t WHERE n = '{}'", payload.data)),
        VulnClass::CommandInjection => event("system", &format!("ls {}", payload.data)),
        VulnClass::InsecureDeserialization => event("pickle.loads", &payload.data),
        VulnClass::PathTraversal => event("open", &joined_path(&payload.data)),
        VulnClass::MemoryCorruption => {
            return Some(ScriptedResult {
                exit_code: Some(1),
                stderr: "==1==ERROR: AddressSanitizer: stack-buffer-overflow on address 0x7ffc\nSUMMARY: AddressSanitizer: stack-buffer-overflow target.cpp:9 in handle\n".into(),
                ..ScriptedResult::default()
            })
        }
        VulnClass::Other => return None,
    };
    Some(ScriptedResult {
        stdout,
        ..ScriptedResult::default()
    })
}

/// What `os.path.join("/srv/files", data)` opens.
pub fn joined_path(data: &str) -> String {
    if data.starts_with('/') {
        data.to_string()
    } else {
        format!("/srv/files/{data}")
    }
}

/// Lexical resolution of `path`, independent of the library's normaliser.
pub fn leaves_srv_files(path: &str) -> bool {
    let mut parts: Vec<&str> = Vec::new();
    for c in path.split('/') {
        match c {
            "" | "." => {}
            ".." => {
                parts.pop();
            }
            other => parts.push(other),
        }
    }
    parts.len() < 2 || parts[0] != "srv" || parts[1] != "files"
}

/// Whether the scripted result of `confirming_result` should confirm.
pub fn should_confirm(hyp: &ExploitHypothesis, payload: &Payload) -> bool {
    match hyp.vuln_class {
        VulnClass::Other => false,
        VulnClass::PathTraversal => leaves_srv_files(&joined_path(&payload.data)),
        _ => true,
    }
}

pub fn suggestive_result() -> ScriptedResult {
    ScriptedResult {
        exit_code: Some(1),
        stderr: "Traceback: bad input near {marker}\n".into(),
        ..ScriptedResult::default()
    }
}

#[derive(Debug, Default)]
pub struct SuiteReport {
    pub runs: usize,
    pub violations: Vec<String>,
}

impl SuiteReport {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.violations.push(what());
        }
    }
}

/// Invariants every trace must satisfy regardless of scripting.
fn check_common(
    r: &mut SuiteReport,
    t: &ValidationTrace,
    flag: u8,
    cfg: &ValidationConfig,
    tag: &str,
) {
    let b = Budget::for_flag(flag);
    r.runs += 1;
    r.check(t.hypotheses.len() <= b.max_hypotheses, || {
        format!("{tag}: {} hypotheses", t.hypotheses.len())
    });
    r.check(t.verdict_is_sound(), || {
        format!("{tag}: unsound verdict {:?}", t.verdict)
    });
    let confirming = t
        .evidence()
        .filter(|e| e.class == EvidenceClass::Confirming)
        .count();
    r.check(
        (t.verdict.kind == VerdictKind::Exploited) == (confirming >= 1),
        || {
            format!(
                "{tag}: verdict {:?} with {confirming} confirming",
                t.verdict.kind
            )
        },
    );
    r.check(t.stopped_early == (confirming >= 1), || {
        format!("{tag}: stopped_early {}", t.stopped_early)
    });
    for (i, h) in t.hypotheses.iter().enumerate() {
        r.check(h.budget_ms == b.wall_ms, || {
            format!("{tag}: hypothesis {i} budget {}", h.budget_ms)
        });
        r.check(h.used_ms <= h.budget_ms, || {
            format!("{tag}: hypothesis {i} used {} ms", h.used_ms)
        });
        let Some(hyp) = &h.hypothesis else { continue };
        r.check(hyp.attempt_index as usize == i + 1, || {
            format!("{tag}: attempt index {}", hyp.attempt_index)
        });
        r.check(hyp.payloads.len() <= b.max_payloads, || {
            format!("{tag}: {} payloads", hyp.payloads.len())
        });
        r.check(
            (hyp.payloads.len() >= b.min_payloads) == h.payload_shortfall.is_none(),
            || format!("{tag}: shortfall flag with {} payloads", hyp.payloads.len()),
        );
        r.check(h.executions.len() <= hyp.payloads.len(), || {
            format!("{tag}: more records than payloads")
        });
        let mut used = 0u64;
        for (k, e) in h.executions.iter().enumerate() {
            r.check(e.payload_id == hyp.payloads[k].id, || {
                format!("{tag}: record {k} out of order")
            });
            let remaining = b.wall_ms - used;
            r.check(
                e.timeout_ms == (cfg.harness_timeout_s * 1000).min(remaining),
                || {
                    format!(
                        "{tag}: payload {k} timeout {} with {remaining} left",
                        e.timeout_ms
                    )
                },
            );
            if let Some(res) = &e.result {
                used += res.wall_time_ms.min(e.timeout_ms);
            }
            r.check(
                (e.status == PayloadStatus::BudgetExhausted) == (remaining == 0),
                || {
                    format!(
                        "{tag}: payload {k} status {:?} with {remaining} left",
                        e.status
                    )
                },
            );
        }
        r.check(used == h.used_ms, || {
            format!("{tag}: accounted {used} vs recorded {}", h.used_ms)
        });
    }
    r.check(
        t.total_wall_ms == t.hypotheses.iter().map(|h| h.used_ms).sum::<u64>(),
        || format!("{tag}: total wall"),
    );
}

/// Every seed sample under both flags: an unscripted baseline, one run per
/// payload position scripted to confirm, one per position scripted to be
/// suggestive, and a slow run that exhausts the wall budget.
pub fn run_suite() -> SuiteReport {
    let cfg = ValidationConfig::default();
    let mut r = SuiteReport::default();
    for sample in seed_samples() {
        for flag in [0u8, 1] {
            let b = Budget::for_flag(flag);
            let base = validate_sample(&sample, flag, &cfg, &MockDriver::new());
            let tag = format!("{} flag {flag}", sample.sample_id);
            check_common(&mut r, &base, flag, &cfg, &format!("{tag} baseline"));
            r.check(base.verdict.kind == VerdictKind::NotExploited, || {
                format!("{tag}: baseline {:?}", base.verdict.kind)
            });
            let planned: Vec<ExploitHypothesis> = base
                .hypotheses
                .iter()
                .filter_map(|h| h.hypothesis.clone())
                .collect();
            let lengths: Vec<usize> = planned.iter().map(|h| h.payloads.len()).collect();
            r.check(lengths.iter().all(|&n| n <= b.max_payloads), || {
                format!("{tag}: payload lengths {lengths:?}")
            });
            r.check(base.executions() == lengths.iter().sum::<usize>(), || {
                format!("{tag}: baseline executions")
            });

            for (h, hyp) in planned.iter().enumerate() {
                for (k, payload) in hyp.payloads.iter().enumerate() {
                    let ptag = format!("{tag} h{h} p{k}");
                    if let Some(res) = confirming_result(hyp, payload) {
                        let mut m = MockDriver::new();
                        m.insert(&sample.sample_id, &payload.id, res);
                        let t = validate_sample(&sample, flag, &cfg, &m);
                        check_common(&mut r, &t, flag, &cfg, &ptag);
                        if !should_confirm(hyp, payload) {
                            r.check(
                                t.verdict.kind == VerdictKind::NotExploited
                                    && t.executions() == base.executions(),
                                || {
                                    format!(
                                        "{ptag}: contained path {} confirmed",
                                        joined_path(&payload.data)
                                    )
                                },
                            );
                        } else {
                            let expected = lengths[..h].iter().sum::<usize>() + k + 1;
                            r.check(t.executions() == expected, || {
                                format!(
                                    "{ptag}: {} executions, expected {expected}",
                                    t.executions()
                                )
                            });
                            r.check(t.hypotheses.len() == h + 1, || {
                                format!("{ptag}: {} hypotheses", t.hypotheses.len())
                            });
                            r.check(t.verdict.kind == VerdictKind::Exploited, || {
                                format!("{ptag}: {:?}", t.verdict.kind)
                            });
                            r.check(
                                t.first_confirming().map(|c| c.1.id.as_str())
                                    == Some(payload.id.as_str()),
                                || format!("{ptag}: wrong confirming payload"),
                            );
                        }
                    }
                    let mut m = MockDriver::new();
                    m.insert(&sample.sample_id, &payload.id, suggestive_result());
                    let t = validate_sample(&sample, flag, &cfg, &m);
                    check_common(&mut r, &t, flag, &cfg, &format!("{ptag} suggestive"));
                    r.check(
                        t.verdict.kind == VerdictKind::Inconclusive
                            && t.verdict.suggestive_count == 1,
                        || format!("{ptag}: suggestive run gave {:?}", t.verdict),
                    );
                    r.check(t.executions() == base.executions(), || {
                        format!("{ptag}: suggestive run stopped early")
                    });
                }
            }

            let mut slow = MockDriver::new();
            for hyp in &planned {
                for p in &hyp.payloads {
                    slow.insert(
                        &sample.sample_id,
                        &p.id,
                        ScriptedResult {
                            wall_time_ms: 25_000,
                            ..ScriptedResult::default()
                        },
                    );
                }
            }
            let t = validate_sample(&sample, flag, &cfg, &slow);
            check_common(&mut r, &t, flag, &cfg, &format!("{tag} slow"));
            for h in &t.hypotheses {
                let n = h.hypothesis.as_ref().map_or(0, |x| x.payloads.len());
                let expected = if flag == 1 { n.min(3) } else { n.min(1) };
                r.check(h.executed() == expected, || {
                    format!("{tag} slow: {} executed, expected {expected}", h.executed())
                });
                r.check(
                    n == 0 || h.used_ms == b.wall_ms.min(n as u64 * 25_000),
                    || format!("{tag} slow: used {} ms", h.used_ms),
                );
            }
        }
    }
    r
}

pub const GOLDEN_ARGV: [&str; 3] = [
    "run --rm --network=none --memory=1g --cpus=0.9 --read-only -v /scratch/w1:/work:ro --tmpfs /tmp:size=256m --pids-limit=256 --security-opt no-new-privileges python:3.11-slim python3 /work/harness.py",
    "run --rm --network=none --memory=2g --cpus=0.9 --read-only -v /scratch/w1:/work:ro --tmpfs /tmp:size=256m --pids-limit=256 --security-opt no-new-privileges eclipse-temurin:21-jdk sh -c javac -d /tmp/classes /work/*.java && java -cp /tmp/classes VlfHarness",
    "run --rm --network=none --memory=1g --cpus=0.9 --read-only -v /scratch/w1:/work:ro --tmpfs /tmp:size=256m --pids-limit=256 --security-opt no-new-privileges gcc:13 /work/harness",
];

/// (assembled, golden) argv for Python, Java and C++, each joined by spaces.
pub fn argv_pairs() -> Vec<(String, String)> {
    use vlf_core::uast::Language;
    use vlf_core::validation::{
        assemble_sandbox_command, generate_harness, AttackVector, SandboxSpec,
    };
    let sources = [
        (Language::Python, "def handle(x):\n    pass\n"),
        (
            Language::Java,
            "public class Svc {\n    static void handle(String x) {}\n}\n",
        ),
        (Language::Cpp, "void handle(const char *x) {}\n"),
    ];
    let hyp = ExploitHypothesis {
        vuln_class: VulnClass::Other,
        attack_vector: AttackVector::Argument,
        payloads: vec![],
        preconditions: vec![],
        attempt_index: 1,
        family: "generic".into(),
    };
    let payload = Payload {
        id: "generic/0".into(),
        data: "VLF_MARK_0badf00d".into(),
        marker: "VLF_MARK_0badf00d".into(),
    };
    sources
        .iter()
        .zip(GOLDEN_ARGV)
        .map(|((lang, src), golden)| {
            let bundle = generate_harness("s", *lang, src, &hyp, &payload).unwrap();
            let argv = assemble_sandbox_command(
                &SandboxSpec::for_language(*lang),
                &bundle,
                std::path::Path::new("/scratch/w1"),
            );
            (argv.join(" "), golden.to_string())
        })
        .collect()
}

/// Flag-1 trace of `sample` confirmed at the first payload that can confirm.
pub fn exploited_trace(sample: &ValidationSample) -> Option<ValidationTrace> {
    let cfg = ValidationConfig::default();
    let base = validate_sample(sample, 1, &cfg, &MockDriver::new());
    let (hyp, payload) = base
        .hypotheses
        .iter()
        .filter_map(|h| h.hypothesis.as_ref())
        .flat_map(|h| h.payloads.iter().map(move |p| (h, p)))
        .find(|(h, p)| should_confirm(h, p))?;
    let mut m = MockDriver::new();
    m.insert(
        &sample.sample_id,
        &payload.id,
        confirming_result(hyp, payload)?,
    );
    Some(validate_sample(sample, 1, &cfg, &m))
}
