use super::*;
use crate::validation::{validate_sample, MockDriver, ScriptedResult, ValidationConfig};
use ndarray::Array1;

const SQL: &str = "import sqlite3\n\ndef handle(user):\n    cur = sqlite3.connect(':memory:').cursor()\n    cur.execute(\"SELECT * FROM t WHERE n = '\" + user + \"'\")\n";

fn sample(id: &str, lang: Language, src: &str) -> ValidationSample {
    ValidationSample::parse(id, lang, src).unwrap()
}

fn exploited(s: &ValidationSample, payload_id: &str, event: &str) -> ValidationTrace {
    let mut m = MockDriver::new();
    m.insert(
        &s.sample_id,
        payload_id,
        ScriptedResult {
            stdout: format!("VLF_EVENT {event}\n"),
            ..ScriptedResult::default()
        },
    );
    let t = validate_sample(s, 1, &ValidationConfig::default(), &m);
    assert!(
        ExploitedTrace::try_from(t.clone()).is_ok(),
        "fixture must be exploited"
    );
    t
}

fn sql_trace(s: &ValidationSample) -> ValidationTrace {
    exploited(
        s,
        "sqli-tautology/0",
        "{\"sink\":\"execute\",\"arg\":\"x {marker}\"}",
    )
}

fn det(flag: u8) -> DetectionResult {
    DetectionResult {
        flag,
        prob_vulnerable: if flag == 1 { 0.9 } else { 0.1 },
        alpha_g: 0.5,
        alpha_l: 0.5,
        fused: Array1::zeros(4),
    }
}

/// Flags code while any concatenated sink remains.
struct SinkDetector;

impl Redetector for SinkDetector {
    fn redetect(&self, source: &str, language: Language) -> Result<DetectionResult, FusionError> {
        let doc = parse_to_uast(source.as_bytes(), language).map_err(FusionError::from)?;
        let flagged = find_sinks(&doc, source).iter().any(|h| h.concatenated);
        Ok(det(flagged as u8))
    }
}

struct Always(u8);

impl Redetector for Always {
    fn redetect(&self, _: &str, _: Language) -> Result<DetectionResult, FusionError> {
        Ok(det(self.0))
    }
}

struct Fixed(PatchEdit);

impl PatchGenerator for Fixed {
    fn generate(&self, _: &RepairPrompt) -> Result<PatchEdit, RepairError> {
        Ok(self.0.clone())
    }
}

fn apply(src: &str, lang: Language, class: VulnClass) -> String {
    let s = sample("t", lang, src);
    let prompt = RepairPrompt {
        sample_id: "t".into(),
        language: lang,
        source: src.into(),
        vuln_class: class,
        exploit_payload: Payload {
            id: "p/0".into(),
            data: "x".into(),
            marker: "VLF_MARK_00000000".into(),
        },
        observed_behavior: String::new(),
        prior_attempts: vec![],
    };
    let patch = template_patch(&prompt).unwrap();
    let (out, doc) = apply_patch(src, &patch, lang).unwrap();
    let diff = differential_analysis(&s.doc, &doc, &patch);
    assert!(diff.pass, "{:?}\n{out}", diff.out_of_span_changes);
    out
}

#[test]
fn gate_rejects_unconfirmed_trace() {
    let s = sample("s1", Language::Python, SQL);
    let t = validate_sample(&s, 1, &ValidationConfig::default(), &MockDriver::new());
    let err = repair_sample(&s, &t, &SinkDetector, &Generator::Template).unwrap_err();
    assert!(matches!(err, RepairError::GateViolation(_)));
}

#[test]
fn sql_template_succeeds_first_iteration() {
    let s = sample("s1", Language::Python, SQL);
    let out = repair_sample(&s, &sql_trace(&s), &SinkDetector, &Generator::Template).unwrap();
    let RepairOutcome::Success {
        patched_source,
        iterations_used,
        attempts,
        ..
    } = out
    else {
        panic!("expected success: {out:?}");
    };
    assert_eq!(iterations_used, 1);
    assert_eq!(attempts.len(), 1);
    assert_eq!(
        patched_source,
        "import sqlite3\n\ndef handle(user):\n    cur = sqlite3.connect(':memory:').cursor()\n    cur.execute(\"SELECT * FROM t WHERE n = ?\", (user,))\n"
    );
}

#[test]
fn never_fixing_detector_exhausts_iterations() {
    let s = sample("s1", Language::Python, SQL);
    let out = repair_sample(&s, &sql_trace(&s), &Always(1), &Generator::Template).unwrap();
    assert!(!out.is_success());
    assert_eq!(out.iterations_used(), MAX_ITERATIONS);
    let RepairOutcome::NonConvergent { trace } = out else {
        unreachable!()
    };
    assert!(trace
        .attempts
        .iter()
        .all(|a| a.applied && a.re_detect_flag == Some(1)));
    assert!(!trace.persistent_indicators.is_empty());
}

#[test]
fn rejected_patches_consume_iterations() {
    let s = sample("s1", Language::Python, SQL);
    let bad = PatchEdit {
        edits: vec![Edit::insert(SQL.len(), "def f(:\n")],
    };
    let out = repair_sample(&s, &sql_trace(&s), &Always(0), &Fixed(bad)).unwrap();
    let RepairOutcome::NonConvergent { trace } = out else {
        panic!()
    };
    assert_eq!(trace.attempts.len(), MAX_ITERATIONS);
    assert!(trace.attempts.iter().all(|a| !a.applied));
    assert!(trace.attempts[0]
        .rejection_reason
        .as_deref()
        .unwrap()
        .contains("parse"));
}

#[test]
fn empty_patch_is_identity() {
    let s = sample("s1", Language::Python, SQL);
    let (out, doc) = apply_patch(SQL, &PatchEdit::default(), Language::Python).unwrap();
    assert_eq!(out, SQL);
    assert!(differential_analysis(&s.doc, &doc, &PatchEdit::default()).pass);
}

#[test]
fn syntax_error_rejected() {
    let p = PatchEdit {
        edits: vec![Edit::insert(0, "def f(:\n")],
    };
    assert!(matches!(
        apply_patch(SQL, &p, Language::Python),
        Err(RepairError::SyntaxRejected(_))
    ));
}

#[test]
fn rename_outside_span_fails_differential() {
    let s = sample("s1", Language::Python, SQL);
    let at = SQL.find("SELECT").unwrap();
    let p = PatchEdit {
        edits: vec![Edit::insert(at, "/*x*/")],
    };
    // the text also renames the function, which no edit covers
    let patched = SQL
        .replacen("handle", "renamed", 1)
        .replacen("SELECT", "/*x*/SELECT", 1);
    let doc = parse_to_uast(patched.as_bytes(), Language::Python).unwrap();
    let shifted = PatchEdit {
        edits: vec![Edit::insert(at + 1, "/*x*/")],
    };
    let r = differential_analysis(&s.doc, &doc, &shifted);
    assert!(!r.pass);
    assert!(
        r.out_of_span_changes.iter().any(|c| c.contains("renamed")),
        "{r:?}"
    );
    let (_, clean) = apply_patch(SQL, &p, Language::Python).unwrap();
    assert!(differential_analysis(&s.doc, &clean, &p).pass);
}

#[test]
fn patch_checks() {
    let two_inserts = PatchEdit {
        edits: vec![Edit::insert(1, "a"), Edit::insert(1, "b")],
    };
    assert!(matches!(
        two_inserts.check("xyz"),
        Err(RepairError::OverlappingEdits(1))
    ));
    let overlap = PatchEdit {
        edits: vec![
            Edit {
                start_byte: 0,
                end_byte: 2,
                replacement: String::new(),
            },
            Edit {
                start_byte: 1,
                end_byte: 3,
                replacement: String::new(),
            },
        ],
    };
    assert!(matches!(
        overlap.check("xyz"),
        Err(RepairError::OverlappingEdits(1))
    ));
    let oob = PatchEdit {
        edits: vec![Edit::insert(9, "a")],
    };
    assert!(matches!(
        oob.check("xyz"),
        Err(RepairError::OutOfBounds { .. })
    ));
    let split = PatchEdit {
        edits: vec![Edit::insert(1, "a")],
    };
    assert!(matches!(
        split.check("é"),
        Err(RepairError::OutOfBounds { .. })
    ));
}

#[test]
fn other_class_is_unpatchable() {
    let s = sample("s1", Language::Python, SQL);
    let trace = sql_trace(&s);
    let exploited = ExploitedTrace::try_from(trace).unwrap();
    let mut prompt = build_repair_prompt(&s, &exploited, &[]);
    prompt.vuln_class = VulnClass::Other;
    assert_eq!(
        template_patch(&prompt),
        Err(RepairError::UnpatchableClass(VulnClass::Other))
    );
}

#[test]
fn template_is_deterministic() {
    let s = sample("s1", Language::Python, SQL);
    let exploited = ExploitedTrace::try_from(sql_trace(&s)).unwrap();
    let prompt = build_repair_prompt(&s, &exploited, &[]);
    assert_eq!(
        template_patch(&prompt).unwrap(),
        template_patch(&prompt).unwrap()
    );
}

#[test]
fn prompt_carries_payload_and_evidence() {
    let s = sample("s1", Language::Python, SQL);
    let exploited = ExploitedTrace::try_from(sql_trace(&s)).unwrap();
    let p = build_repair_prompt(&s, &exploited, &[]);
    assert_eq!(p.vuln_class, VulnClass::SqlInjection);
    assert_eq!(p.exploit_payload.id, "sqli-tautology/0");
    assert!(p.observed_behavior.contains(&p.exploit_payload.marker));
}

#[test]
fn python_rewrites() {
    let fstring =
        "def handle(u):\n    cur.execute(f\"SELECT a FROM t WHERE u = '{u}' AND k = {u}\")\n";
    assert!(apply(fstring, Language::Python, VulnClass::SqlInjection)
        .contains("cur.execute(\"SELECT a FROM t WHERE u = ? AND k = ?\", (u, u,))"));

    let via_var =
        "def handle(u):\n    q = \"SELECT a FROM t WHERE u = '\" + u + \"'\"\n    cur.execute(q)\n";
    let out = apply(via_var, Language::Python, VulnClass::SqlInjection);
    assert!(out.contains("q = \"SELECT a FROM t WHERE u = ?\""), "{out}");
    assert!(out.contains("cur.execute(q, (u,))"), "{out}");

    let cmd = "import os\n\ndef handle(host):\n    os.system(\"ping -c 1 \" + host)\n";
    let out = apply(cmd, Language::Python, VulnClass::CommandInjection);
    assert!(out.starts_with("import subprocess\nimport os\n"), "{out}");
    assert!(out.contains("subprocess.call([\"ping\", \"-c\", \"1\", host])"));

    let shell = "import subprocess\n\ndef handle(h):\n    return subprocess.check_output(\"nslookup \" + h, shell=True)\n";
    let out = apply(shell, Language::Python, VulnClass::CommandInjection);
    assert!(
        out.contains("subprocess.check_output([\"nslookup\", h])"),
        "{out}"
    );

    let path = "import os\nBASE = '/srv/files'\n\ndef handle(name):\n    with open(os.path.join(BASE, name)) as fh:\n        return fh.read()\n";
    let out = apply(path, Language::Python, VulnClass::PathTraversal);
    assert!(out.contains("    if not os.path.realpath(os.path.join(BASE, name)).startswith(os.path.realpath(BASE) + os.sep):\n        raise ValueError"), "{out}");

    let pickle = "import pickle\n\ndef handle(data):\n    return pickle.loads(data)\n";
    let out = apply(pickle, Language::Python, VulnClass::InsecureDeserialization);
    assert!(
        out.contains("return json.loads(data)") && out.starts_with("import json\n"),
        "{out}"
    );

    let yaml = "import yaml\n\ndef handle(data):\n    return yaml.load(data, Loader=yaml.Loader)\n";
    assert!(
        apply(yaml, Language::Python, VulnClass::InsecureDeserialization)
            .contains("yaml.safe_load(data)")
    );
}

#[test]
fn java_rewrites() {
    let sql = "class A {\n    void handle(String u) throws Exception {\n        Statement st = conn.createStatement();\n        st.executeQuery(\"SELECT a FROM t WHERE u = '\" + u + \"'\");\n    }\n}\n";
    let out = apply(sql, Language::Java, VulnClass::SqlInjection);
    assert!(
        out.contains("prepareStatement(\"SELECT a FROM t WHERE u = ?\")"),
        "{out}"
    );
    assert!(
        out.contains("vlfStmt.setString(1, String.valueOf(u));\n        vlfStmt.executeQuery();"),
        "{out}"
    );

    let cmd = "class A {\n    void handle(String h) throws Exception {\n        Runtime.getRuntime().exec(\"ping -c 1 \" + h);\n    }\n}\n";
    assert!(apply(cmd, Language::Java, VulnClass::CommandInjection)
        .contains(".exec(new String[]{\"ping\", \"-c\", \"1\", h})"));

    let path = "class A {\n    void handle(String n) throws Exception {\n        FileInputStream in = new FileInputStream(\"/srv/\" + n);\n    }\n}\n";
    let out = apply(path, Language::Java, VulnClass::PathTraversal);
    assert!(out.contains("if (!new java.io.File(\"/srv/\" + n).getCanonicalPath().startsWith(new java.io.File(\"/srv/\")"), "{out}");

    let deser = "class A {\n    Object handle(InputStream s) throws Exception {\n        ObjectInputStream in = new ObjectInputStream(s);\n        return in.readObject();\n    }\n}\n";
    assert!(
        apply(deser, Language::Java, VulnClass::InsecureDeserialization)
            .contains("in.setObjectInputFilter(")
    );
}

#[test]
fn cpp_rewrites() {
    let mem = "#include <cstring>\n\nvoid handle(const std::string& input) {\n    char buf[16];\n    strcpy(buf, input.c_str());\n}\n";
    let out = apply(mem, Language::Cpp, VulnClass::MemoryCorruption);
    assert!(
        out.contains("std::snprintf(buf, sizeof(buf), \"%s\", input.c_str());"),
        "{out}"
    );
    assert!(out.contains("#include <cstdio>"));
}

#[test]
fn cpp_guard_uses_parameters() {
    let cmd = "#include <cstdlib>\n#include <string>\n\nvoid handle(const std::string& input) {\n    system((\"ping \" + input).c_str());\n}\n";
    let out = apply(cmd, Language::Cpp, VulnClass::CommandInjection);
    assert!(
        out.contains("if (std::string(input).find_first_not_of("),
        "{out}"
    );
    assert!(out.contains("throw std::invalid_argument"));
    assert!(out.starts_with("#include <stdexcept>\n"));
}

#[test]
fn locals_are_followed() {
    let java = "public class A {\n    public static void handle(String key) throws Exception {\n        String sql = \"UPDATE t SET x = 1 WHERE k = '\" + key + \"'\";\n        st.executeUpdate(sql);\n    }\n}\n";
    let out = apply(java, Language::Java, VulnClass::SqlInjection);
    assert!(
        out.contains("prepareStatement(\"UPDATE t SET x = 1 WHERE k = ?\")"),
        "{out}"
    );

    let cpp = "#include <string>\n\nvoid handle(const std::string& input) {\n    std::string q(\"DELETE FROM t WHERE o = '\");\n    q += input;\n    q += \"'\";\n    mysql_query(nullptr, q.c_str());\n}\n";
    let out = apply(cpp, Language::Cpp, VulnClass::SqlInjection);
    assert!(
        out.contains("if (std::string(input).find_first_of("),
        "{out}"
    );
}
