mod common;

use proptest::prelude::*;
use serde_json::json;

use common::http::StubServer;
use common::protocol::{exploited_trace, seed_samples};
use common::repair::{names, SinkDetector};
use vlf_core::repair::{
    apply_patch, differential_analysis, repair_sample, Edit, Generator, PatchEdit, PatchGenerator,
    RepairError, RepairOutcome, MAX_ITERATIONS,
};
use vlf_core::validation::ValidationSample;

fn samples() -> &'static [ValidationSample] {
    static S: std::sync::OnceLock<Vec<ValidationSample>> = std::sync::OnceLock::new();
    S.get_or_init(seed_samples)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn out_of_span_mutations_are_rejected(pick in any::<prop::sample::Index>(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let s = &samples()[pick.index(samples().len())];
        let ids = names(s);
        prop_assume!(ids.len() >= 2);
        let (i, j) = (a.index(ids.len()), b.index(ids.len()));
        let (ea, eb) = (&ids[i], &ids[j]);
        // closed intervals that share no byte position
        prop_assume!(eb.1 < ea.0 || ea.1 < eb.0);
        prop_assume!(eb.2 != "vlf_b");

        let declared = PatchEdit { edits: vec![Edit { start_byte: ea.0, end_byte: ea.1, replacement: "vlf_a".into() }] };
        let (honest, honest_doc) = apply_patch(&s.source, &declared, s.language).unwrap();
        prop_assert!(differential_analysis(&s.doc, &honest_doc, &declared).pass);

        let mut both = vec![
            Edit { start_byte: ea.0, end_byte: ea.1, replacement: "vlf_a".into() },
            Edit { start_byte: eb.0, end_byte: eb.1, replacement: "vlf_b".into() },
        ];
        both.sort_by_key(|e| e.start_byte);
        let (sneaky, sneaky_doc) = apply_patch(&s.source, &PatchEdit { edits: both }, s.language).unwrap();
        prop_assert_ne!(&sneaky, &honest);
        let report = differential_analysis(&s.doc, &sneaky_doc, &declared);
        prop_assert!(!report.pass);
        prop_assert!(!report.out_of_span_changes.is_empty());
    }

    #[test]
    fn patch_application_is_total(pick in any::<prop::sample::Index>(), at in any::<prop::sample::Index>(), text in "[ -~]{0,12}") {
        let s = &samples()[pick.index(samples().len())];
        let offset = at.index(s.source.len() + 1);
        let patch = PatchEdit { edits: vec![Edit::insert(offset, text.clone())] };
        match apply_patch(&s.source, &patch, s.language) {
            Ok((out, _)) => {
                prop_assert_eq!(out.len(), s.source.len() + text.len());
                prop_assert!(out.starts_with(&s.source[..offset]));
            }
            Err(e) => {
                let expected = matches!(e, RepairError::SyntaxRejected(_) | RepairError::OutOfBounds { .. });
                prop_assert!(expected, "{}", e);
            }
        }
    }
}

#[test]
fn template_outcomes_on_seed_corpus() {
    for s in samples().iter().filter(|s| !s.sample_id.contains("/safe_")) {
        let Some(trace) = exploited_trace(s) else {
            continue;
        };
        let outcome = repair_sample(s, &trace, &SinkDetector, &Generator::Template).unwrap();
        assert!(outcome.iterations_used() <= MAX_ITERATIONS);
        match outcome {
            RepairOutcome::Success {
                patched_source,
                final_detection,
                attempts,
                ..
            } => {
                assert_eq!(final_detection.flag, 0);
                let patch = attempts.last().unwrap().patch.clone().unwrap();
                let (out, doc) = apply_patch(&s.source, &patch, s.language).unwrap();
                assert_eq!(out, patched_source);
                assert!(
                    differential_analysis(&s.doc, &doc, &patch).pass,
                    "{}",
                    s.sample_id
                );
            }
            RepairOutcome::NonConvergent { trace } => {
                for (i, a) in trace.attempts.iter().enumerate() {
                    assert_eq!(a.iteration, i + 1);
                    assert!(a.rejection_reason.is_some(), "{}", s.sample_id);
                }
            }
        }
    }
}

#[test]
fn remote_generator_round_trip() {
    let s = samples()
        .iter()
        .find(|s| s.sample_id == "py/sqli_concat.py")
        .unwrap();
    let trace = exploited_trace(s).unwrap();
    let fixed = Generator::Template
        .generate(&vlf_core::repair::build_repair_prompt(
            s,
            &(trace.clone().try_into().unwrap()),
            &[],
        ))
        .unwrap();
    let reply = serde_json::to_value(&fixed).unwrap();
    let server = StubServer::start(move |path, _| match path {
        "/patch" => (200, reply.clone()),
        _ => (404, json!({})),
    });
    let remote = Generator::Remote {
        url: server.url.clone(),
        timeout_ms: 5000,
    };
    let outcome = repair_sample(s, &trace, &SinkDetector, &remote).unwrap();
    assert!(outcome.is_success());
    let seen = server.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].1["temperature"], 0.2);
    assert_eq!(seen[0].1["top_p"], 0.9);
    assert_eq!(seen[0].1["vuln_class"], "SqlInjection");
    assert!(seen[0].1["exploit_payload"]["marker"]
        .as_str()
        .unwrap()
        .starts_with("VLF_MARK_"));
}

#[test]
fn unreachable_generator_stops_the_loop() {
    let s = samples()
        .iter()
        .find(|s| s.sample_id == "py/sqli_concat.py")
        .unwrap();
    let trace = exploited_trace(s).unwrap();
    let remote = Generator::Remote {
        url: "http://127.0.0.1:9".into(),
        timeout_ms: 500,
    };
    match repair_sample(s, &trace, &SinkDetector, &remote).unwrap() {
        RepairOutcome::NonConvergent { trace } => {
            assert_eq!(trace.attempts.len(), 1);
            assert!(trace.attempts[0]
                .rejection_reason
                .as_deref()
                .unwrap()
                .contains("unavailable"));
            assert!(!trace.persistent_indicators.is_empty());
        }
        other => panic!("{other:?}"),
    }
}
