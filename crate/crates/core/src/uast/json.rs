//! Canonical JSON form of a document: sorted keys, compact, no trailing
//! newline. The category index is derived data and is rebuilt on load.

use serde::{Deserialize, Serialize};

use super::{validate_schema, Language, UastDocument, UastError, UastNode};

#[derive(Serialize)]
struct WireRef<'a> {
    schema_version: &'a str,
    language: Language,
    node_count: usize,
    content_hash: &'a str,
    has_errors: bool,
    nodes: &'a [UastNode],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    schema_version: String,
    language: Language,
    node_count: usize,
    content_hash: String,
    has_errors: bool,
    nodes: Vec<UastNode>,
}

pub fn serialize_document(doc: &UastDocument) -> Result<Vec<u8>, UastError> {
    let report = validate_schema(doc);
    if !report.is_valid() {
        return Err(UastError::SchemaInvalid(report));
    }
    let wire = WireRef {
        schema_version: &doc.schema_version,
        language: doc.language,
        node_count: doc.node_count,
        content_hash: &doc.content_hash,
        has_errors: doc.has_errors,
        nodes: &doc.nodes,
    };
    // Value maps are BTreeMaps, which gives sorted keys at every level.
    let value = serde_json::to_value(&wire).map_err(|e| UastError::Parse(e.to_string()))?;
    serde_json::to_vec(&value).map_err(|e| UastError::Parse(e.to_string()))
}

pub fn load_document(data: &[u8]) -> Result<UastDocument, UastError> {
    let wire: Wire = serde_json::from_slice(data).map_err(|e| UastError::Parse(e.to_string()))?;
    let category_index = UastDocument::build_category_index(&wire.nodes);
    let doc = UastDocument {
        language: wire.language,
        schema_version: wire.schema_version,
        node_count: wire.node_count,
        content_hash: wire.content_hash,
        nodes: wire.nodes,
        category_index,
        has_errors: wire.has_errors,
    };
    let report = validate_schema(&doc);
    if report.is_valid() {
        Ok(doc)
    } else {
        Err(UastError::SchemaInvalid(report))
    }
}
