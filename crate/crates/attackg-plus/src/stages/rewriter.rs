//! Stage 1: reconstruct a raw report into tactic-labeled, serial-numbered
//! paragraphs.
//!
//! Sections follow the catalog's canonical tactic order with "other" last;
//! paragraph serials are assigned globally (1..N, no gaps) after ordering.
//! Oversized documents are chunked at paragraph boundaries and the per-chunk
//! results merged by label.

use serde::{Deserialize, Serialize};

use super::{StageError, StageOptions};
use crate::catalog::{TtpCatalog, OTHER_LABEL};
use crate::gateway::{parse_json_payload, Backend, Bindings, ChatRequest, ModelParams, StageName};
use crate::ingest::RawDocument;

/// Max input characters per rewrite request.
pub const DEFAULT_CHUNK_BUDGET: usize = 12_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewrittenParagraph {
    /// Global position, 1..N over the whole report.
    pub serial: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TacticSection {
    /// One of the 14 tactic shortnames or "other".
    pub tactic: String,
    pub paragraphs: Vec<RewrittenParagraph>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewrittenReport {
    pub doc_id: String,
    pub model_info: String,
    pub sections: Vec<TacticSection>,
}

impl RewrittenReport {
    pub fn serial_count(&self) -> u32 {
        self.sections
            .iter()
            .map(|s| s.paragraphs.len() as u32)
            .sum()
    }

    pub fn non_other_sections(&self) -> impl Iterator<Item = &TacticSection> {
        self.sections.iter().filter(|s| s.tactic != OTHER_LABEL)
    }

    pub fn section(&self, tactic: &str) -> Option<&TacticSection> {
        self.sections.iter().find(|s| s.tactic == tactic)
    }

    /// Serials must run 1..N in document order with no gaps.
    pub fn serials_are_contiguous(&self) -> bool {
        let mut expected = 1u32;
        for section in &self.sections {
            for paragraph in &section.paragraphs {
                if paragraph.serial != expected {
                    return false;
                }
                expected += 1;
            }
        }
        true
    }
}

#[derive(Debug, Deserialize)]
struct RawRewrite {
    sections: Vec<RawRewriteSection>,
}

#[derive(Debug, Deserialize)]
struct RawRewriteSection {
    tactic: String,
    #[serde(default)]
    paragraphs: Vec<String>,
}

/// Split report text into chunks of at most `budget` characters, at
/// paragraph boundaries where possible.
pub fn split_chunks(text: &str, budget: usize) -> Vec<String> {
    let budget = budget.max(1);
    let mut chunks: Vec<String> = Vec::new();
    let mut current = String::new();
    for paragraph in text.split("\n\n") {
        let pieces: Vec<&str> = if paragraph.chars().count() > budget {
            hard_split(paragraph, budget)
        } else {
            vec![paragraph]
        };
        for piece in pieces {
            let extra = if current.is_empty() { 0 } else { 2 };
            if !current.is_empty() && current.chars().count() + extra + piece.chars().count() > budget
            {
                chunks.push(std::mem::take(&mut current));
            }
            if !current.is_empty() {
                current.push_str("\n\n");
            }
            current.push_str(piece);
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

fn hard_split(paragraph: &str, budget: usize) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = paragraph;
    while rest.chars().count() > budget {
        let cut_at = rest
            .char_indices()
            .nth(budget)
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        // Prefer a whitespace boundary inside the budget.
        let cut_at = rest[..cut_at]
            .rfind(char::is_whitespace)
            .filter(|&i| i > 0)
            .unwrap_or(cut_at);
        out.push(rest[..cut_at].trim_end());
        rest = rest[cut_at..].trim_start();
    }
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// The exact requests `rewrite` sends, for transcript inspection and fixture
/// recording.
pub fn build_requests(
    doc: &RawDocument,
    catalog: &TtpCatalog,
    params: &ModelParams,
    options: &StageOptions,
) -> Result<Vec<ChatRequest>, StageError> {
    let template = options.template(StageName::Rewriting);
    let definitions = catalog.render_tactic_definitions();
    split_chunks(&doc.text, options.chunk_chars)
        .into_iter()
        .map(|chunk| {
            let mut bindings = Bindings::new();
            bindings.insert("tactic_definitions", definitions.clone());
            bindings.insert("report", chunk);
            template
                .render(&bindings, params)
                .map_err(|e| StageError::gateway("rewrite", e))
        })
        .collect()
}

/// Parse one rewrite response into (tactic, paragraphs) pairs, rejecting
/// unknown tactic labels outright.
pub fn parse_response(
    text: &str,
    catalog: &TtpCatalog,
) -> Result<Vec<(String, Vec<String>)>, StageError> {
    let raw: RawRewrite =
        parse_json_payload("rewriter", text).map_err(|e| StageError::gateway("rewrite", e))?;
    let mut out = Vec::new();
    for section in raw.sections {
        let label = section.tactic.trim().to_lowercase();
        if !catalog.is_known_label(&label) {
            return Err(StageError::UnknownTacticLabel { label });
        }
        out.push((label, section.paragraphs));
    }
    Ok(out)
}

/// Merge per-chunk sections into a report: same-label sections merge in
/// chunk order, empty paragraphs drop, sections sort canonically with
/// "other" last, serials are assigned 1..N in final order.
pub fn assemble_report(
    doc_id: &str,
    model_info: &str,
    chunk_sections: Vec<Vec<(String, Vec<String>)>>,
    catalog: &TtpCatalog,
) -> (RewrittenReport, Vec<String>) {
    let mut warnings = Vec::new();
    // label -> paragraph texts, in first-appearance label order.
    let mut labels: Vec<String> = Vec::new();
    let mut merged: std::collections::HashMap<String, Vec<String>> = Default::default();
    let mut seen_text: std::collections::HashMap<String, String> = Default::default();

    for sections in chunk_sections {
        for (label, paragraphs) in sections {
            if !merged.contains_key(&label) {
                labels.push(label.clone());
                merged.insert(label.clone(), Vec::new());
            }
            for paragraph in paragraphs {
                let text = paragraph.trim().to_string();
                if text.is_empty() {
                    continue;
                }
                match seen_text.get(&text) {
                    Some(prior_label) if *prior_label != label => {
                        warnings.push(format!(
                            "paragraph already assigned to '{prior_label}' dropped from '{label}': {}",
                            preview(&text)
                        ));
                        continue;
                    }
                    _ => {}
                }
                seen_text.insert(text.clone(), label.clone());
                merged.get_mut(&label).expect("label registered").push(text);
            }
        }
    }

    let order = |label: &str| -> u8 {
        if label == OTHER_LABEL {
            15
        } else {
            catalog
                .tactic(label)
                .map(|t| t.canonical_order)
                .unwrap_or(15)
        }
    };
    labels.sort_by_key(|l| order(l));

    let mut serial = 0u32;
    let sections = labels
        .into_iter()
        .filter_map(|label| {
            let texts = merged.remove(&label).unwrap_or_default();
            if texts.is_empty() {
                return None;
            }
            let paragraphs = texts
                .into_iter()
                .map(|text| {
                    serial += 1;
                    RewrittenParagraph { serial, text }
                })
                .collect();
            Some(TacticSection {
                tactic: label,
                paragraphs,
            })
        })
        .collect();

    (
        RewrittenReport {
            doc_id: doc_id.to_string(),
            model_info: model_info.to_string(),
            sections,
        },
        warnings,
    )
}

fn preview(text: &str) -> String {
    let mut p: String = text.chars().take(60).collect();
    if p.len() < text.len() {
        p.push('…');
    }
    p
}

/// Run the rewriting stage for one document.
pub fn rewrite(
    doc: &RawDocument,
    catalog: &TtpCatalog,
    backend: &Backend,
    options: &StageOptions,
) -> Result<(RewrittenReport, Vec<String>), StageError> {
    let requests = build_requests(doc, catalog, backend.params(), options)?;
    let mut chunk_sections = Vec::with_capacity(requests.len());
    for request in &requests {
        let response = backend
            .complete(request)
            .map_err(|e| StageError::gateway("rewrite", e))?;
        chunk_sections.push(parse_response(&response.text, catalog)?);
    }
    Ok(assemble_report(
        &doc.doc_id,
        &backend.model_info(),
        chunk_sections,
        catalog,
    ))
}
