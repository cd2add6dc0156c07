use ndarray::Array1;

use vlf_core::fusion::{DetectionResult, FusionError};
use vlf_core::repair::{apply_patch, differential_analysis, Edit, PatchEdit, Redetector};
use vlf_core::uast::{parse_to_uast, Language, UniversalCategory};
use vlf_core::validation::sinks::find_sinks;
use vlf_core::validation::ValidationSample;

pub fn det(flag: u8) -> DetectionResult {
    DetectionResult {
        flag,
        prob_vulnerable: if flag == 1 { 0.8 } else { 0.2 },
        alpha_g: 0.5,
        alpha_l: 0.5,
        fused: Array1::zeros(2),
    }
}

/// Flags a source while any concatenated or memory sink remains.
pub struct SinkDetector;

impl Redetector for SinkDetector {
    fn redetect(&self, source: &str, language: Language) -> Result<DetectionResult, FusionError> {
        let doc = parse_to_uast(source.as_bytes(), language)?;
        let risky = find_sinks(&doc, source)
            .iter()
            .any(|h| h.concatenated || h.class.is_memory());
        Ok(det(risky as u8))
    }
}

/// Identifier leaves whose text is a plain name.
pub fn names(s: &ValidationSample) -> Vec<(usize, usize, String)> {
    s.doc
        .nodes
        .iter()
        .filter(|n| {
            n.universal_category == UniversalCategory::Identifier
                && n.is_leaf()
                && !n.text.is_empty()
        })
        .map(|n| (n.span.start_byte, n.span.end_byte, n.text.clone()))
        .collect()
}

/// Adds an undeclared rename of every identifier that shares no byte with a
/// declared edit, one at a time. Returns (injected, rejected).
pub fn inject_out_of_span(s: &ValidationSample, declared: &PatchEdit) -> (usize, usize) {
    let (mut injected, mut rejected) = (0, 0);
    for (start, end, text) in names(s) {
        let touches = declared
            .edits
            .iter()
            .any(|e| !(end < e.start_byte || e.end_byte < start));
        if touches || text == "vlf_injected" {
            continue;
        }
        let mut edits = declared.edits.clone();
        edits.push(Edit {
            start_byte: start,
            end_byte: end,
            replacement: "vlf_injected".into(),
        });
        edits.sort_by_key(|e| e.start_byte);
        let Ok((_, doc)) = apply_patch(&s.source, &PatchEdit { edits }, s.language) else {
            continue;
        };
        injected += 1;
        if !differential_analysis(&s.doc, &doc, declared).pass {
            rejected += 1;
        }
    }
    (injected, rejected)
}
