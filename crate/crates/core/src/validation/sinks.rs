//! Per-language sink tables and the uAST query that finds sink calls.

use serde::{Deserialize, Serialize};

use super::VulnClass;
use crate::uast::{Language, UastDocument, UastNode, UniversalCategory as C};

/// Callee patterns. A leading `.` matches any receiver (`cur.execute`), a
/// leading `new ` matches constructor calls, anything else matches exactly.
pub fn sink_table(language: Language) -> &'static [(VulnClass, &'static [&'static str])] {
    use VulnClass::*;
    match language {
        Language::Python => &[
            (
                SqlInjection,
                &[".execute", ".executemany", ".executescript"],
            ),
            (
                CommandInjection,
                &[
                    "os.system",
                    "os.popen",
                    "subprocess.run",
                    "subprocess.call",
                    "subprocess.Popen",
                    "subprocess.check_output",
                    "subprocess.check_call",
                ],
            ),
            (PathTraversal, &["open", "io.open", "os.open"]),
            (
                InsecureDeserialization,
                &["pickle.loads", "pickle.load", "yaml.load"],
            ),
        ],
        Language::Java => &[
            (
                SqlInjection,
                &[".executeQuery", ".executeUpdate", ".execute", ".addBatch"],
            ),
            (CommandInjection, &[".exec", "new ProcessBuilder"]),
            (
                PathTraversal,
                &[
                    "new File",
                    "new FileInputStream",
                    "new FileReader",
                    "Files.readAllBytes",
                    "Files.readString",
                    "Paths.get",
                    "Path.of",
                ],
            ),
            (
                InsecureDeserialization,
                &[".readObject", "new ObjectInputStream"],
            ),
        ],
        Language::Cpp => &[
            (SqlInjection, &["mysql_query", "sqlite3_exec"]),
            (CommandInjection, &["system", "popen", "execl", "execlp"]),
            (PathTraversal, &["fopen", "open"]),
            (
                MemoryCorruption,
                &["strcpy", "strcat", "sprintf", "gets", "memcpy", "vsprintf"],
            ),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkHit {
    pub class: VulnClass,
    /// CALL or OBJECT_CREATION node.
    pub node: usize,
    pub callee: String,
    /// ARGUMENT_LIST child, when present.
    pub args: Option<usize>,
    /// The arguments are built by concatenation or interpolation, directly
    /// or through a local variable assigned that way.
    pub concatenated: bool,
}

pub fn node_source<'a>(source: &'a str, node: &UastNode) -> &'a str {
    source
        .get(node.span.start_byte..node.span.end_byte)
        .unwrap_or("")
}

fn argument_list(doc: &UastDocument, node: &UastNode) -> Option<usize> {
    node.children
        .iter()
        .copied()
        .find(|&c| doc.nodes[c].universal_category == C::ArgumentList)
}

fn callee_text(doc: &UastDocument, source: &str, node: &UastNode) -> String {
    let end = argument_list(doc, node)
        .map(|a| doc.nodes[a].span.start_byte)
        .unwrap_or(node.span.end_byte);
    let text = source.get(node.span.start_byte..end).unwrap_or("");
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn matches(callee: &str, pattern: &str, language: Language) -> bool {
    let bare = |s: &'_ str| -> String {
        if language == Language::Cpp {
            s.trim_start_matches("::")
                .trim_start_matches("std::")
                .to_string()
        } else {
            s.to_string()
        }
    };
    let callee = bare(callee);
    if let Some(method) = pattern.strip_prefix('.') {
        callee
            .rsplit_once('.')
            .is_some_and(|(recv, m)| !recv.is_empty() && m == method)
    } else {
        callee == pattern
    }
}

/// Whether a subtree builds a string dynamically.
fn is_dynamic_string(doc: &UastDocument, source: &str, root: usize) -> bool {
    let mut stack = vec![root];
    while let Some(i) = stack.pop() {
        let n = &doc.nodes[i];
        match n.universal_category {
            C::BinaryOperation => {
                let op_is_concat = n.children.iter().any(|&c| {
                    let t = &doc.nodes[c];
                    t.children.is_empty() && (t.text == "+" || t.text == "%")
                });
                if op_is_concat {
                    return true;
                }
            }
            C::StringLiteral if n.native_type == "interpolation" => return true,
            C::Call => {
                let callee = callee_text(doc, source, n);
                if callee.ends_with(".format")
                    || callee.ends_with("String.format")
                    || callee == "sprintf"
                    || callee == "snprintf"
                    || callee.ends_with(".concat")
                {
                    return true;
                }
            }
            _ => {}
        }
        stack.extend(n.children.iter().copied());
    }
    false
}

fn enclosing_scope(doc: &UastDocument, node: usize) -> usize {
    doc.ancestors(node)
        .find(|a| a.universal_category == C::FunctionDeclaration)
        .map(|a| a.index)
        .unwrap_or(0)
}

/// Names assigned from a dynamically built string within `scope`.
fn tainted_names(doc: &UastDocument, source: &str, scope: usize) -> Vec<String> {
    let mut names = Vec::new();
    for i in doc.descendants(scope) {
        let n = &doc.nodes[i];
        if !matches!(
            n.universal_category,
            C::VariableAssignment | C::VariableDeclaration
        ) {
            continue;
        }
        if !is_dynamic_string(doc, source, i) {
            continue;
        }
        if let Some(id) = doc
            .descendants(i)
            .into_iter()
            .find(|&d| doc.nodes[d].universal_category == C::Identifier)
        {
            names.push(doc.nodes[id].text.clone());
        }
    }
    names
}

/// Every sink call in the document, in pre-order.
pub fn find_sinks(doc: &UastDocument, source: &str) -> Vec<SinkHit> {
    let table = sink_table(doc.language);
    let mut hits = Vec::new();
    for node in &doc.nodes {
        let constructor = node.universal_category == C::ObjectCreation;
        if node.universal_category != C::Call && !constructor {
            continue;
        }
        let callee = callee_text(doc, source, node);
        for (class, patterns) in table {
            let hit = patterns.iter().any(|p| match p.strip_prefix("new ") {
                Some(ty) => {
                    constructor
                        && callee
                            .strip_prefix("new ")
                            .and_then(|t| t.trim().rsplit('.').next())
                            == Some(ty)
                }
                None => !constructor && matches(&callee, p, doc.language),
            });
            if !hit {
                continue;
            }
            let args = argument_list(doc, node);
            let concatenated = args.is_some_and(|a| {
                if is_dynamic_string(doc, source, a) {
                    return true;
                }
                let names = tainted_names(doc, source, enclosing_scope(doc, node.index));
                doc.descendants(a).into_iter().any(|d| {
                    let n = &doc.nodes[d];
                    n.universal_category == C::Identifier && names.contains(&n.text)
                })
            });
            hits.push(SinkHit {
                class: *class,
                node: node.index,
                callee: callee.clone(),
                args,
                concatenated,
            });
        }
    }
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uast::parse_to_uast;

    fn hits(src: &str, lang: Language) -> Vec<SinkHit> {
        find_sinks(&parse_to_uast(src.as_bytes(), lang).unwrap(), src)
    }

    #[test]
    fn python_sql_concatenation() {
        let h = hits(
            "def handle(user):\n    cur.execute(\"SELECT * FROM t WHERE n = '\" + user + \"'\")\n",
            Language::Python,
        );
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].class, VulnClass::SqlInjection);
        assert_eq!(h[0].callee, "cur.execute");
        assert!(h[0].concatenated);
    }

    #[test]
    fn concatenation_through_a_variable() {
        let src = "def handle(user):\n    q = f\"SELECT * FROM t WHERE n = '{user}'\"\n    cur.execute(q)\n";
        let h = hits(src, Language::Python);
        assert!(h[0].concatenated);
        let safe = hits(
            "def handle(user):\n    cur.execute(\"SELECT ?\", (user,))\n",
            Language::Python,
        );
        assert!(!safe[0].concatenated);
    }

    #[test]
    fn other_languages() {
        let cpp = hits(
            "void handle(const char* in) { char b[8]; strcpy(b, in); std::system(in); }",
            Language::Cpp,
        );
        let classes: Vec<_> = cpp.iter().map(|h| h.class).collect();
        assert_eq!(
            classes,
            vec![VulnClass::MemoryCorruption, VulnClass::CommandInjection]
        );
        let java = hits(
            "class A { void h(String p) throws Exception { new java.io.FileInputStream(p); new File(p); stmt.executeQuery(\"x\" + p); } }",
            Language::Java,
        );
        let classes: Vec<_> = java.iter().map(|h| h.class).collect();
        assert_eq!(
            classes,
            vec![
                VulnClass::PathTraversal,
                VulnClass::PathTraversal,
                VulnClass::SqlInjection
            ]
        );
        assert!(java[2].concatenated);
    }

    #[test]
    fn no_sinks() {
        assert!(hits("def f(x):\n    return x + 1\n", Language::Python).is_empty());
    }
}
