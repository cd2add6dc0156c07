//! Universal abstract syntax tree.
//!
//! A document has four layers: file metadata (language, node count, content
//! hash), a flat pre-order node array addressed by index, a category index
//! over the 47-entry taxonomy, and per-node semantic roles that line up
//! equivalent constructs across languages.

mod json;
mod parse;
pub mod taxonomy;
mod validate;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use json::{load_document, serialize_document};
pub use parse::{categorize_node, parse_to_uast, UastParser};
pub use taxonomy::UniversalCategory;
pub use validate::{validate_schema, ValidationReport, Violation, ViolationKind};

/// Version tag written into every serialized document.
pub const SCHEMA_VERSION: &str = "uast/1";

/// Leaf text longer than this is stored as a prefix; the full length is
/// recoverable from the span.
pub const TEXT_CAP_BYTES: usize = 4096;

#[derive(Debug, Error)]
pub enum UastError {
    #[error("no language registered for `{0}`")]
    UnknownLanguage(String),
    #[error("source is not valid UTF-8: {0}")]
    Encoding(#[from] std::str::Utf8Error),
    #[error("grammar for {0} is unavailable")]
    GrammarUnavailable(Language),
    #[error("node index {index} out of range (node_count {count})")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("malformed document: {0}")]
    Parse(String),
    #[error("document violates the schema: {}", .0.summary())]
    SchemaInvalid(ValidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Java,
    Python,
    Cpp,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::Java, Language::Python, Language::Cpp];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Java => "java",
            Language::Python => "python",
            Language::Cpp => "cpp",
        }
    }

    /// Canonical file extension used when writing samples of this language.
    pub fn extension(self) -> &'static str {
        match self {
            Language::Java => "java",
            Language::Python => "py",
            Language::Cpp => "cpp",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = UastError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "java" => Ok(Language::Java),
            "python" => Ok(Language::Python),
            "cpp" => Ok(Language::Cpp),
            other => Err(UastError::UnknownLanguage(other.to_string())),
        }
    }
}

/// Maps a path to its language by extension. The content is not inspected.
pub fn detect_language(path: impl AsRef<Path>, _content: &[u8]) -> Result<Language, UastError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "java" => Ok(Language::Java),
        "py" => Ok(Language::Python),
        "cpp" | "cc" | "cxx" | "hpp" | "h" => Ok(Language::Cpp),
        _ => Err(UastError::UnknownLanguage(path.display().to_string())),
    }
}

/// SHA-256 of the exact source bytes, lowercase hex.
pub fn content_hash(source: &[u8]) -> String {
    hex::encode(Sha256::digest(source))
}

/// Byte offsets plus 0-based line/column (columns count bytes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SourceSpan {
    #[serde(rename = "sb")]
    pub start_byte: usize,
    #[serde(rename = "eb")]
    pub end_byte: usize,
    #[serde(rename = "sl")]
    pub start_line: usize,
    #[serde(rename = "sc")]
    pub start_col: usize,
    #[serde(rename = "el")]
    pub end_line: usize,
    #[serde(rename = "ec")]
    pub end_col: usize,
}

impl SourceSpan {
    pub fn len(&self) -> usize {
        self.end_byte.saturating_sub(self.start_byte)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, other: &SourceSpan) -> bool {
        self.start_byte <= other.start_byte && other.end_byte <= self.end_byte
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UastNode {
    pub index: usize,
    #[serde(rename = "category")]
    pub universal_category: UniversalCategory,
    pub native_type: String,
    pub text: String,
    pub span: SourceSpan,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    #[serde(rename = "role")]
    pub semantic_role: Option<String>,
}

impl UastNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A parsed file. Immutable once built; `category_index` is derived from the
/// nodes and never serialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UastDocument {
    pub language: Language,
    pub schema_version: String,
    pub node_count: usize,
    pub content_hash: String,
    pub nodes: Vec<UastNode>,
    pub category_index: Vec<Vec<usize>>,
    pub has_errors: bool,
}

impl UastDocument {
    pub(crate) fn build_category_index(nodes: &[UastNode]) -> Vec<Vec<usize>> {
        let mut index = vec![Vec::new(); UniversalCategory::COUNT];
        for node in nodes {
            index[node.universal_category.code() as usize].push(node.index);
        }
        index
    }

    pub fn root(&self) -> &UastNode {
        &self.nodes[0]
    }

    pub fn node_at(&self, index: usize) -> Result<&UastNode, UastError> {
        self.nodes.get(index).ok_or(UastError::IndexOutOfRange {
            index,
            count: self.node_count,
        })
    }

    /// Sorted indices of every node carrying `cat`.
    pub fn query_by_category(&self, cat: UniversalCategory) -> &[usize] {
        self.category_index
            .get(cat.code() as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Indices in pre-order from `start`, including `start` itself.
    pub fn descendants(&self, start: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            out.push(i);
            stack.extend(self.nodes[i].children.iter().rev());
        }
        out
    }

    /// Ancestors of `index`, nearest first.
    pub fn ancestors(&self, index: usize) -> impl Iterator<Item = &UastNode> {
        let mut cur = self.nodes.get(index).and_then(|n| n.parent);
        std::iter::from_fn(move || {
            let node = &self.nodes[cur?];
            cur = node.parent;
            Some(node)
        })
    }

    /// Depth of each node (root = 0), in index order.
    pub fn depths(&self) -> Vec<usize> {
        let mut depths = vec![0usize; self.nodes.len()];
        for i in self.descendants(0) {
            if let Some(p) = self.nodes[i].parent {
                depths[i] = depths[p] + 1;
            }
        }
        depths
    }
}

pub fn node_at(doc: &UastDocument, index: usize) -> Result<&UastNode, UastError> {
    doc.node_at(index)
}

pub fn query_by_category(doc: &UastDocument, cat: UniversalCategory) -> &[usize] {
    doc.query_by_category(cat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extension_table() {
        assert_eq!(
            detect_language("a/b/Foo.java", b"").unwrap(),
            Language::Java
        );
        assert_eq!(detect_language("x.py", b"").unwrap(), Language::Python);
        for p in ["a.cpp", "a.cc", "a.cxx", "a.hpp", "a.h"] {
            assert_eq!(detect_language(p, b"").unwrap(), Language::Cpp);
        }
        assert!(matches!(
            detect_language("readme.md", b""),
            Err(UastError::UnknownLanguage(_))
        ));
        assert!(detect_language("Makefile", b"").is_err());
    }

    #[test]
    fn sha256_vectors() {
        assert_eq!(
            content_hash(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            content_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(content_hash(b"same"), content_hash(b"same"));
    }

    #[test]
    fn language_names_round_trip() {
        for lang in Language::ALL {
            assert_eq!(lang.as_str().parse::<Language>().unwrap(), lang);
            let json = serde_json::to_string(&lang).unwrap();
            assert_eq!(json, format!("\"{}\"", lang.as_str()));
        }
    }
}
