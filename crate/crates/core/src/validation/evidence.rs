use std::path::{Component, Path, PathBuf};

use super::{
    EvidenceClass, EvidenceItem, EvidenceSource, ExecutionResult, ExploitHypothesis, Payload,
    VulnClass,
};

fn class_sinks(class: VulnClass) -> &'static [&'static str] {
    match class {
        VulnClass::SqlInjection => &[
            "execute",
            "executemany",
            "executescript",
            "mysql_query",
            "executeQuery",
            "executeUpdate",
        ],
        VulnClass::CommandInjection => &["system", "popen", "subprocess_shell", "exec"],
        VulnClass::InsecureDeserialization => &["pickle.loads", "yaml.load", "readObject"],
        VulnClass::PathTraversal => &["open", "fopen"],
        VulnClass::MemoryCorruption | VulnClass::Other => &[],
    }
}

/// Lexical normalisation: drops `.`, folds `..` against preceding normal
/// components and keeps leading `..` of relative paths.
pub fn normalize_path(path: &str) -> PathBuf {
    let mut out: Vec<Component<'_>> = Vec::new();
    for c in Path::new(path).components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => match out.last() {
                Some(Component::Normal(_)) => {
                    out.pop();
                }
                Some(Component::RootDir) | Some(Component::Prefix(_)) => {}
                _ => out.push(c),
            },
            other => out.push(other),
        }
    }
    out.iter().collect()
}

/// Whether the opened path `arg` leaves the directory the program joined the
/// payload onto. The permitted root is whatever precedes the payload in `arg`.
pub fn escapes_root(arg: &str, data: &str) -> bool {
    // a path the payload no longer appears in verbatim is not attributed to it
    let Some(pos) = arg.find(data) else {
        return false;
    };
    let prefix = &arg[..pos];
    let root = if prefix.trim_end_matches('/').is_empty() {
        if prefix.starts_with('/') {
            PathBuf::from("/")
        } else {
            PathBuf::from(".")
        }
    } else {
        normalize_path(prefix)
    };
    let resolved = normalize_path(arg);
    if root == Path::new(".") {
        return resolved.is_absolute() || resolved.starts_with("..");
    }
    if root.is_absolute() != resolved.is_absolute() {
        return true;
    }
    !resolved.starts_with(&root) || resolved.starts_with(root.join(".."))
}

fn memory_event(sink: &str, arg: &str) -> bool {
    match sink {
        "asan" => true,
        "ubsan" => arg.contains("out of bounds") || arg.contains("overflow"),
        _ => false,
    }
}

pub fn classify_evidence(
    result: &ExecutionResult,
    hyp: &ExploitHypothesis,
    payload: &Payload,
) -> Vec<EvidenceItem> {
    let item = |class, description: String, source, artifact: Option<String>| EvidenceItem {
        class,
        description,
        source,
        payload_id: payload.id.clone(),
        artifact,
    };
    let mut items = Vec::new();
    let marker = payload.marker.as_str();
    for ev in &result.events {
        let artifact = serde_json::to_string(ev).ok();
        if hyp.vuln_class.is_memory() && memory_event(&ev.sink, &ev.arg) {
            items.push(item(
                EvidenceClass::Confirming,
                format!("sanitizer report: {}", ev.arg),
                EvidenceSource::SanitizerReport,
                artifact,
            ));
            continue;
        }
        if marker.is_empty()
            || !ev.arg.contains(marker)
            || !class_sinks(hyp.vuln_class).contains(&ev.sink.as_str())
        {
            continue;
        }
        if hyp.vuln_class == VulnClass::PathTraversal {
            if escapes_root(&ev.arg, &payload.data) {
                items.push(item(
                    EvidenceClass::Confirming,
                    format!(
                        "{} resolved outside the permitted root: {}",
                        ev.sink, ev.arg
                    ),
                    EvidenceSource::HarnessEvent,
                    artifact,
                ));
            }
            continue;
        }
        items.push(item(
            EvidenceClass::Confirming,
            format!("payload marker reached {}", ev.sink),
            EvidenceSource::HarnessEvent,
            artifact,
        ));
    }
    if !items.is_empty() {
        return items;
    }
    let abnormal = !result.timed_out && result.exit_code.is_some_and(|c| c != 0);
    if abnormal && !marker.is_empty() {
        let excerpt = [&result.stderr, &result.stdout]
            .into_iter()
            .find_map(|s| s.lines().find(|l| l.contains(marker)));
        if let Some(line) = excerpt {
            return vec![item(
                EvidenceClass::Suggestive,
                format!(
                    "abnormal exit {} echoed the payload",
                    result.exit_code.unwrap_or_default()
                ),
                EvidenceSource::ExitBehavior,
                Some(line.to_string()),
            )];
        }
    }
    let description = if result.timed_out {
        "timed out without sink evidence".to_string()
    } else {
        format!("exit {:?} without sink evidence", result.exit_code)
    };
    vec![item(
        EvidenceClass::Neutral,
        description,
        EvidenceSource::ExitBehavior,
        None,
    )]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::{AttackVector, HarnessEvent};

    fn hyp(class: VulnClass) -> ExploitHypothesis {
        ExploitHypothesis {
            vuln_class: class,
            attack_vector: AttackVector::Argument,
            payloads: vec![],
            preconditions: vec![],
            attempt_index: 1,
            family: String::new(),
        }
    }

    fn payload(data: &str) -> Payload {
        Payload {
            id: "p/0".into(),
            data: data.into(),
            marker: "VLF_MARK_00ff00ff".into(),
        }
    }

    fn result(events: Vec<HarnessEvent>, exit: Option<i32>, stderr: &str) -> ExecutionResult {
        ExecutionResult {
            exit_code: exit,
            timed_out: exit.is_none(),
            stdout: String::new(),
            stderr: stderr.into(),
            events,
            wall_time_ms: 5,
        }
    }

    fn ev(sink: &str, arg: &str) -> HarnessEvent {
        HarnessEvent {
            sink: sink.into(),
            arg: arg.into(),
            ts: None,
        }
    }

    #[test]
    fn marker_at_sink_confirms() {
        let p = payload("' OR 1=1 -- VLF_MARK_00ff00ff");
        let r = result(
            vec![ev(
                "execute",
                "SELECT * FROM t WHERE n = '' OR 1=1 -- VLF_MARK_00ff00ff'",
            )],
            Some(0),
            "",
        );
        let items = classify_evidence(&r, &hyp(VulnClass::SqlInjection), &p);
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].class, EvidenceClass::Confirming);
        assert!(items[0]
            .artifact
            .as_deref()
            .unwrap()
            .contains("VLF_MARK_00ff00ff"));
        // the same event means nothing for a different class
        let other = classify_evidence(&r, &hyp(VulnClass::CommandInjection), &p);
        assert_eq!(other[0].class, EvidenceClass::Neutral);
    }

    #[test]
    fn clean_exit_is_single_neutral() {
        let items = classify_evidence(
            &result(vec![], Some(0), ""),
            &hyp(VulnClass::SqlInjection),
            &payload("x"),
        );
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].class, EvidenceClass::Neutral);
        let timeout = classify_evidence(
            &result(vec![], None, ""),
            &hyp(VulnClass::SqlInjection),
            &payload("x"),
        );
        assert_eq!(timeout[0].class, EvidenceClass::Neutral);
    }

    #[test]
    fn crash_echoing_payload_is_suggestive() {
        let p = payload("'VLF_MARK_00ff00ff");
        let r = result(
            vec![],
            Some(1),
            "Traceback\nValueError: bad 'VLF_MARK_00ff00ff\n",
        );
        let items = classify_evidence(&r, &hyp(VulnClass::SqlInjection), &p);
        assert_eq!(items[0].class, EvidenceClass::Suggestive);
        assert_eq!(
            items[0].artifact.as_deref(),
            Some("ValueError: bad 'VLF_MARK_00ff00ff")
        );
    }

    #[test]
    fn sanitizer_report_confirms_memory_class_only() {
        let r = result(vec![ev("asan", "heap-buffer-overflow")], Some(1), "");
        let memory = classify_evidence(&r, &hyp(VulnClass::MemoryCorruption), &payload("AAAA"));
        assert_eq!(memory[0].class, EvidenceClass::Confirming);
        assert_eq!(memory[0].source, EvidenceSource::SanitizerReport);
        let sql = classify_evidence(&r, &hyp(VulnClass::SqlInjection), &payload("AAAA"));
        assert_ne!(sql[0].class, EvidenceClass::Confirming);
        let benign = result(
            vec![ev("ubsan", "signed integer division by zero")],
            Some(1),
            "",
        );
        assert_ne!(
            classify_evidence(&benign, &hyp(VulnClass::MemoryCorruption), &payload("A"))[0].class,
            EvidenceClass::Confirming
        );
    }

    #[test]
    fn path_escape_rules() {
        let m = "VLF_MARK_00ff00ff";
        let data = format!("../../etc/{m}");
        assert!(escapes_root(&format!("/srv/files/{data}"), &data));
        assert!(!escapes_root(
            &format!("/srv/files/sub/{m}"),
            &format!("sub/{m}")
        ));
        assert!(escapes_root(&format!("/etc/{m}"), &format!("/etc/{m}")));
        assert!(!escapes_root(
            &format!("/srv/files//etc/{m}"),
            &format!("/etc/{m}")
        ));
        assert!(escapes_root(&format!("../{m}"), &format!("../{m}")));
        assert!(!escapes_root(&format!("files/{m}"), m));
        assert!(!escapes_root(
            &format!("/srv/files/{m}"),
            &format!("../../{m}")
        ));
        assert_eq!(normalize_path("a/./b/../../../c"), PathBuf::from("../c"));
        assert_eq!(normalize_path("/../x"), PathBuf::from("/x"));

        let p = payload(&data);
        let open = result(vec![ev("open", &format!("/srv/files/{data}"))], Some(0), "");
        assert_eq!(
            classify_evidence(&open, &hyp(VulnClass::PathTraversal), &p)[0].class,
            EvidenceClass::Confirming
        );
        let safe = payload(m);
        let inside = result(vec![ev("open", &format!("/srv/files/{m}"))], Some(0), "");
        assert_eq!(
            classify_evidence(&inside, &hyp(VulnClass::PathTraversal), &safe)[0].class,
            EvidenceClass::Neutral
        );
    }
}
