use tree_sitter::{Node, Parser};

use super::taxonomy::{self, UniversalCategory};
use super::{
    content_hash, Language, SourceSpan, UastDocument, UastError, UastNode, SCHEMA_VERSION,
    TEXT_CAP_BYTES,
};

fn grammar(language: Language) -> tree_sitter::Language {
    match language {
        Language::Python => tree_sitter_python::LANGUAGE.into(),
        Language::Java => tree_sitter_java::LANGUAGE.into(),
        Language::Cpp => tree_sitter_cpp::LANGUAGE.into(),
    }
}

/// Maps a grammar node kind to its universal category.
///
/// Named kinds come from the per-language tables. Kinds the grammar only
/// knows as anonymous symbols (keywords, operators, punctuation) get a token
/// class. Anything else is `UNKNOWN`.
pub fn categorize_node(native_type: &str, language: Language) -> UniversalCategory {
    if let Some(cat) = taxonomy::lookup_kind(native_type, language) {
        return cat;
    }
    if grammar(language).id_for_node_kind(native_type, false) != 0 {
        return taxonomy::token_class(native_type);
    }
    UniversalCategory::Unknown
}

/// Parser adapter. Holds one tree-sitter parser; not shareable across
/// threads, so use one per worker.
pub struct UastParser {
    parser: Parser,
    current: Option<Language>,
}

impl Default for UastParser {
    fn default() -> Self {
        Self::new()
    }
}

impl UastParser {
    pub fn new() -> Self {
        Self {
            parser: Parser::new(),
            current: None,
        }
    }

    pub fn parse(&mut self, source: &[u8], language: Language) -> Result<UastDocument, UastError> {
        let text = std::str::from_utf8(source)?;
        if self.current != Some(language) {
            self.parser
                .set_language(&grammar(language))
                .map_err(|_| UastError::GrammarUnavailable(language))?;
            self.current = Some(language);
        }
        let tree = self
            .parser
            .parse(text, None)
            .ok_or(UastError::GrammarUnavailable(language))?;
        let root = tree.root_node();
        let nodes = linearize(root, source, language);
        let category_index = UastDocument::build_category_index(&nodes);
        Ok(UastDocument {
            language,
            schema_version: SCHEMA_VERSION.to_string(),
            node_count: nodes.len(),
            content_hash: content_hash(source),
            nodes,
            category_index,
            has_errors: root.has_error(),
        })
    }
}

/// Parses `source` with a fresh adapter.
pub fn parse_to_uast(source: &[u8], language: Language) -> Result<UastDocument, UastError> {
    UastParser::new().parse(source, language)
}

fn span_of(node: &Node) -> SourceSpan {
    let start = node.start_position();
    let end = node.end_position();
    SourceSpan {
        start_byte: node.start_byte(),
        end_byte: node.end_byte(),
        start_line: start.row,
        start_col: start.column,
        end_line: end.row,
        end_col: end.column,
    }
}

fn capped_text(source: &[u8], span: &SourceSpan) -> String {
    let slice = &source[span.start_byte..span.end_byte];
    let mut end = slice.len().min(TEXT_CAP_BYTES);
    // source is valid UTF-8, so only a cut inside a code point can fail
    while std::str::from_utf8(&slice[..end]).is_err() {
        end -= 1;
    }
    String::from_utf8_lossy(&slice[..end]).into_owned()
}

fn cpp_declaration_type<'a>(node: &Node, source: &'a [u8]) -> Option<&'a str> {
    let ty = node.child_by_field_name("type")?;
    std::str::from_utf8(&source[ty.start_byte()..ty.end_byte()]).ok()
}

fn linearize(root: Node, source: &[u8], language: Language) -> Vec<UastNode> {
    let mut nodes: Vec<UastNode> = Vec::new();
    // (node, parent index); children are pushed in reverse so pops are pre-order
    let mut stack: Vec<(Node, Option<usize>)> = vec![(root, None)];
    while let Some((node, parent)) = stack.pop() {
        let index = nodes.len();
        let kind = node.kind();
        let category = if node.is_error() || node.is_missing() {
            UniversalCategory::Unknown
        } else {
            categorize_node(kind, language)
        };
        let span = span_of(&node);
        let text = if node.child_count() == 0 {
            capped_text(source, &span)
        } else {
            String::new()
        };
        let type_text = if language == Language::Cpp && kind == "declaration" {
            cpp_declaration_type(&node, source)
        } else {
            None
        };
        let role = taxonomy::semantic_role(kind, language, type_text).map(str::to_string);
        nodes.push(UastNode {
            index,
            universal_category: category,
            native_type: kind.to_string(),
            text,
            span,
            parent,
            children: Vec::new(),
            semantic_role: role,
        });
        if let Some(p) = parent {
            nodes[p].children.push(index);
        }
        let mut cursor = node.walk();
        let children: Vec<Node> = node.children(&mut cursor).collect();
        for child in children.into_iter().rev() {
            stack.push((child, Some(index)));
        }
    }
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn py(src: &str) -> UastDocument {
        parse_to_uast(src.as_bytes(), Language::Python).unwrap()
    }

    #[test]
    fn single_function_under_root() {
        let doc = py("def f():\n    pass\n");
        let fns: Vec<_> = doc
            .root()
            .children
            .iter()
            .filter(|&&c| doc.nodes[c].universal_category == UniversalCategory::FunctionDeclaration)
            .collect();
        assert_eq!(fns.len(), 1);
        assert_eq!(doc.nodes[*fns[0]].native_type, "function_definition");
        assert!(!doc.has_errors);
    }

    #[test]
    fn empty_source_is_a_lone_root() {
        for lang in Language::ALL {
            let doc = parse_to_uast(b"", lang).unwrap();
            assert_eq!(doc.node_count, 1, "{lang}");
            assert!(!doc.has_errors);
            assert_eq!(doc.root().parent, None);
        }
    }

    #[test]
    fn broken_source_keeps_error_nodes() {
        let doc = py("def f(:");
        assert!(doc.has_errors);
        assert!(!doc.query_by_category(UniversalCategory::Unknown).is_empty());
        assert!(crate::uast::validate_schema(&doc).is_valid());
    }

    #[test]
    fn rejects_invalid_utf8() {
        assert!(matches!(
            parse_to_uast(&[0xff, 0xfe, b'x'], Language::Python),
            Err(UastError::Encoding(_))
        ));
    }

    #[test]
    fn categorize_examples() {
        assert_eq!(
            categorize_node("function_definition", Language::Python),
            UniversalCategory::FunctionDeclaration
        );
        assert_eq!(
            categorize_node("method_declaration", Language::Java),
            UniversalCategory::FunctionDeclaration
        );
        assert_eq!(
            categorize_node("zzz_nonexistent", Language::Cpp),
            UniversalCategory::Unknown
        );
        assert_eq!(
            categorize_node("def", Language::Python),
            UniversalCategory::Keyword
        );
        assert_eq!(
            categorize_node("(", Language::Java),
            UniversalCategory::Punctuation
        );
    }

    #[test]
    fn long_leaf_text_is_capped() {
        let long = "x".repeat(5000);
        let doc = py(&format!("s = \"{long}\"\n"));
        let leaf = doc
            .nodes
            .iter()
            .find(|n| n.is_leaf() && n.span.len() > TEXT_CAP_BYTES)
            .expect("long leaf");
        assert_eq!(leaf.text.len(), TEXT_CAP_BYTES);
        assert!(doc.nodes.iter().all(|n| n.is_leaf() || n.text.is_empty()));
    }

    #[test]
    fn scoped_resources_share_a_role() {
        let p = py("with open('f') as fh:\n    pass\n");
        let j = parse_to_uast(
            b"class A { void f() throws Exception { try (var r = new java.io.FileReader(\"f\")) { } } }",
            Language::Java,
        )
        .unwrap();
        let c = parse_to_uast(
            b"void f() { std::lock_guard<std::mutex> g(m); }",
            Language::Cpp,
        )
        .unwrap();
        for doc in [&p, &j, &c] {
            assert!(
                doc.nodes
                    .iter()
                    .any(|n| n.semantic_role.as_deref() == Some("SCOPED_RESOURCE")),
                "{}",
                doc.language
            );
        }
    }
}
