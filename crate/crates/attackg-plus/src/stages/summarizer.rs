//! Stage 4: per tactic section, summarize attacker state across permissions,
//! files, information, and tools.
//!
//! Summaries are per-stage deltas, not cumulative unions; renderers may
//! accumulate. One summary per non-"other" section, in section order.

use serde::{Deserialize, Serialize};

use super::{StageError, StageOptions};
use crate::gateway::{parse_json_payload, Backend, Bindings, ChatRequest, ModelParams, StageName};
use crate::stages::rewriter::{RewrittenReport, TacticSection};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSummary {
    pub tactic: String,
    pub permissions: Vec<String>,
    pub files: Vec<String>,
    pub information: Vec<String>,
    pub tools: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryOutput {
    pub doc_id: String,
    pub summaries: Vec<StateSummary>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SummaryOutput {
    /// Index by tactic, the query key for stored summaries.
    pub fn for_tactic(&self, tactic: &str) -> Option<&StateSummary> {
        self.summaries.iter().find(|s| s.tactic == tactic)
    }
}

#[derive(Debug, Deserialize)]
struct RawSummary {
    #[serde(default)]
    permissions: Vec<String>,
    #[serde(default)]
    files: Vec<String>,
    #[serde(default)]
    information: Vec<String>,
    #[serde(default)]
    tools: Vec<String>,
}

fn dedup_preserving_order(items: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items
        .into_iter()
        .map(|i| i.trim().to_string())
        .filter(|i| !i.is_empty())
        .filter(|i| seen.insert(i.clone()))
        .collect()
}

pub fn build_section_request(
    section: &TacticSection,
    params: &ModelParams,
    options: &StageOptions,
) -> Result<ChatRequest, StageError> {
    let template = options.template(StageName::StateSummarizer);
    let mut bindings = Bindings::new();
    bindings.insert("tactic", section.tactic.clone());
    bindings.insert(
        "paragraphs",
        crate::stages::extractor::render_paragraphs(
            &section.paragraphs.iter().collect::<Vec<_>>(),
        ),
    );
    template
        .render(&bindings, params)
        .map_err(|e| StageError::gateway("summarize", e))
}

pub fn parse_section_response(text: &str, tactic: &str) -> Result<StateSummary, StageError> {
    let raw: RawSummary =
        parse_json_payload("summary", text).map_err(|e| StageError::gateway("summarize", e))?;
    Ok(StateSummary {
        tactic: tactic.to_string(),
        permissions: dedup_preserving_order(raw.permissions),
        files: dedup_preserving_order(raw.files),
        information: dedup_preserving_order(raw.information),
        tools: dedup_preserving_order(raw.tools),
    })
}

/// Run state summarization: exactly one summary per non-"other" section.
pub fn summarize(
    rewritten: &RewrittenReport,
    backend: &Backend,
    options: &StageOptions,
) -> Result<SummaryOutput, StageError> {
    let mut summaries = Vec::new();
    for section in rewritten.non_other_sections() {
        let section_err = |source: StageError| StageError::Section {
            tactic: section.tactic.clone(),
            source: Box::new(source),
        };
        let request =
            build_section_request(section, backend.params(), options).map_err(&section_err)?;
        let response = backend
            .complete(&request)
            .map_err(|e| section_err(StageError::gateway("summarize", e)))?;
        summaries.push(parse_section_response(&response.text, &section.tactic).map_err(section_err)?);
    }
    Ok(SummaryOutput {
        doc_id: rewritten.doc_id.clone(),
        summaries,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stages::rewriter::RewrittenParagraph;

    #[test]
    fn absent_fields_become_empty_lists() {
        let summary = parse_section_response(r#"{"permissions": ["admin"]}"#, "execution").unwrap();
        assert_eq!(summary.permissions, vec!["admin"]);
        assert!(summary.files.is_empty());
        assert!(summary.information.is_empty());
        assert!(summary.tools.is_empty());
    }

    #[test]
    fn four_empty_fields_are_a_valid_summary() {
        let summary = parse_section_response(
            r#"{"permissions": [], "files": [], "information": [], "tools": []}"#,
            "discovery",
        )
        .unwrap();
        assert!(summary.permissions.is_empty() && summary.tools.is_empty());
        assert_eq!(summary.tactic, "discovery");
    }

    #[test]
    fn duplicate_items_dedup_preserving_order() {
        let summary = parse_section_response(
            r#"{"tools": ["Mimikatz", "PsExec", "Mimikatz", " Mimikatz "]}"#,
            "credential-access",
        )
        .unwrap();
        assert_eq!(summary.tools, vec!["Mimikatz", "PsExec"]);
    }

    #[test]
    fn request_contains_only_its_sections_paragraphs() {
        let section = TacticSection {
            tactic: "exfiltration".into(),
            paragraphs: vec![RewrittenParagraph {
                serial: 7,
                text: "Data left over the C2 channel.".into(),
            }],
        };
        let request =
            build_section_request(&section, &ModelParams::default(), &StageOptions::default())
                .unwrap();
        assert!(request.user.contains("\"exfiltration\""));
        assert!(request.user.contains("7: Data left"));
    }

    #[test]
    fn summaries_are_prompt_isolated_per_section_and_skip_other() {
        use crate::gateway::testing::{endpoint, ScriptedTransport};
        use crate::gateway::Backend;
        let rewritten = RewrittenReport {
            doc_id: "iso".into(),
            model_info: "m".into(),
            sections: vec![
                TacticSection {
                    tactic: "execution".into(),
                    paragraphs: vec![RewrittenParagraph {
                        serial: 1,
                        text: "EXECUTION-ONLY-TEXT".into(),
                    }],
                },
                TacticSection {
                    tactic: "collection".into(),
                    paragraphs: vec![RewrittenParagraph {
                        serial: 2,
                        text: "COLLECTION-ONLY-TEXT".into(),
                    }],
                },
                TacticSection {
                    tactic: "other".into(),
                    paragraphs: vec![RewrittenParagraph {
                        serial: 3,
                        text: "OTHER-ONLY-TEXT".into(),
                    }],
                },
            ],
        };
        let transport = std::sync::Arc::new(ScriptedTransport::always(
            r#"{"permissions": [], "files": [], "information": [], "tools": []}"#,
        ));
        let backend = Backend::live(endpoint(), ModelParams::default())
            .with_transport(transport.clone());
        let output = summarize(&rewritten, &backend, &StageOptions::default()).unwrap();
        // One summary per non-"other" section, zero for "other".
        assert_eq!(output.summaries.len(), 2);
        assert_eq!(output.summaries[0].tactic, "execution");
        assert_eq!(output.summaries[1].tactic, "collection");
        let transcript = transport.seen_prompts();
        assert_eq!(transcript.len(), 2);
        assert!(transcript[0].contains("EXECUTION-ONLY-TEXT"));
        assert!(!transcript[0].contains("COLLECTION-ONLY-TEXT"));
        assert!(transcript[1].contains("COLLECTION-ONLY-TEXT"));
        assert!(!transcript[1].contains("EXECUTION-ONLY-TEXT"));
        assert!(transcript.iter().all(|t| !t.contains("OTHER-ONLY-TEXT")));
    }
}
