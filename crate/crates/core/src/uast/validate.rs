use std::fmt;

use serde::{Deserialize, Serialize};

use super::{UastDocument, UniversalCategory, TEXT_CAP_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NodeCount,
    EmptyDocument,
    IndexMismatch,
    RootParent,
    MissingParent,
    ParentChildMismatch,
    ChildOutOfRange,
    ChildOrder,
    SpanOrder,
    Containment,
    CategoryIndex,
    Unreachable,
    ContentHash,
    InnerNodeText,
    TextTooLong,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub node: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        match self.violations.as_slice() {
            [] => "ok".to_string(),
            [first, rest @ ..] if rest.is_empty() => first.message.clone(),
            [first, rest @ ..] => format!("{} (+{} more)", first.message, rest.len()),
        }
    }

    fn push(&mut self, kind: ViolationKind, node: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            node,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            match v.node {
                Some(i) => writeln!(f, "node {i}: {}", v.message)?,
                None => writeln!(f, "{}", v.message)?,
            }
        }
        Ok(())
    }
}

/// Checks every document and node invariant, collecting all violations.
pub fn validate_schema(doc: &UastDocument) -> ValidationReport {
    use ViolationKind as K;
    let mut report = ValidationReport::default();
    let n = doc.nodes.len();

    if doc.node_count != n {
        report.push(
            K::NodeCount,
            None,
            format!("node_count {} but {} nodes", doc.node_count, n),
        );
    }
    if doc.content_hash.len() != 64
        || !doc
            .content_hash
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    {
        report.push(
            K::ContentHash,
            None,
            "content_hash is not 64 lowercase hex digits",
        );
    }
    if n == 0 {
        report.push(K::EmptyDocument, None, "document has no root node");
        return report;
    }

    for (pos, node) in doc.nodes.iter().enumerate() {
        if node.index != pos {
            report.push(
                K::IndexMismatch,
                Some(pos),
                format!("index field {} at position {pos}", node.index),
            );
        }
        let s = &node.span;
        if s.start_byte > s.end_byte || (s.start_line, s.start_col) > (s.end_line, s.end_col) {
            report.push(K::SpanOrder, Some(pos), "span start after span end");
        }
        if !node.is_leaf() && !node.text.is_empty() {
            report.push(K::InnerNodeText, Some(pos), "non-leaf node carries text");
        }
        if node.text.len() > TEXT_CAP_BYTES {
            report.push(K::TextTooLong, Some(pos), "text exceeds the capture cap");
        }
        match (pos, node.parent) {
            (0, Some(p)) => report.push(K::RootParent, Some(0), format!("root has parent {p}")),
            (0, None) => {}
            (_, None) => report.push(K::MissingParent, Some(pos), "non-root node without parent"),
            (_, Some(p)) if p >= n => report.push(
                K::ParentChildMismatch,
                Some(pos),
                format!("parent {p} out of range"),
            ),
            (_, Some(p)) => {
                if !doc.nodes[p].children.contains(&pos) {
                    report.push(
                        K::ParentChildMismatch,
                        Some(pos),
                        format!("parent {p} does not list this node as a child"),
                    );
                }
                if !doc.nodes[p].span.contains(s) {
                    report.push(
                        K::Containment,
                        Some(pos),
                        format!("span not contained in parent {p}"),
                    );
                }
            }
        }
        let mut prev_start = None;
        for &c in &node.children {
            if c >= n {
                report.push(
                    K::ChildOutOfRange,
                    Some(pos),
                    format!("child {c} out of range"),
                );
                continue;
            }
            if doc.nodes[c].parent != Some(pos) {
                report.push(
                    K::ParentChildMismatch,
                    Some(pos),
                    format!("child {c} names a different parent"),
                );
            }
            let start = doc.nodes[c].span.start_byte;
            if prev_start.is_some_and(|p| start < p) {
                report.push(
                    K::ChildOrder,
                    Some(pos),
                    "children not ordered by start_byte",
                );
            }
            prev_start = Some(start);
        }
    }

    // every node reachable from the root exactly once
    let mut seen = vec![0u32; n];
    let mut stack = vec![0usize];
    let mut steps = 0usize;
    while let Some(i) = stack.pop() {
        seen[i] += 1;
        steps += 1;
        if seen[i] > 1 || steps > n {
            break;
        }
        stack.extend(doc.nodes[i].children.iter().copied().filter(|&c| c < n));
    }
    for (i, &count) in seen.iter().enumerate() {
        if count != 1 {
            report.push(
                K::Unreachable,
                Some(i),
                format!("reached {count} times from the root"),
            );
        }
    }

    let expected = UastDocument::build_category_index(&doc.nodes);
    if doc.category_index.len() != UniversalCategory::COUNT {
        report.push(
            K::CategoryIndex,
            None,
            format!("category index has {} lists", doc.category_index.len()),
        );
    } else {
        for (code, (have, want)) in doc.category_index.iter().zip(&expected).enumerate() {
            if have != want {
                let cat = UniversalCategory::ALL[code];
                report.push(
                    K::CategoryIndex,
                    None,
                    format!("category index for {cat} is stale"),
                );
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uast::{parse_to_uast, Language};

    fn doc() -> UastDocument {
        parse_to_uast(b"def f(a):\n    return a + 1\n", Language::Python).unwrap()
    }

    #[test]
    fn fresh_document_is_valid() {
        assert!(validate_schema(&doc()).is_valid());
    }

    #[test]
    fn child_exceeding_parent_span() {
        let mut d = doc();
        let leaf = d
            .nodes
            .iter()
            .rposition(|n| n.is_leaf() && n.parent.is_some())
            .unwrap();
        let parent = d.nodes[leaf].parent.unwrap();
        d.nodes[leaf].span.end_byte = d.nodes[parent].span.end_byte + 5;
        d.nodes[leaf].span.end_line += 1;
        let report = validate_schema(&d);
        assert_eq!(report.violations.len(), 1, "{report}");
        assert_eq!(report.violations[0].kind, ViolationKind::Containment);
        assert_eq!(report.violations[0].node, Some(leaf));
    }

    #[test]
    fn missing_index_entry() {
        let mut d = doc();
        let cat = d.nodes[1].universal_category.code() as usize;
        d.category_index[cat].retain(|&i| i != 1);
        let report = validate_schema(&d);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::CategoryIndex);
        assert!(report.violations[0]
            .message
            .contains(d.nodes[1].universal_category.name()));
    }
}
