//! Stage 3: assign MITRE technique labels to rewritten paragraphs per tactic
//! section and align them to events by serial.
//!
//! One request per non-"other" section (split further under the character
//! budget). Records are "serial: technique_id"; ids outside the section's
//! candidate set and serials outside the section are discarded with a
//! warning rather than remapped.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{StageError, StageOptions};
use crate::catalog::TtpCatalog;
use crate::gateway::{parse_line_records, Backend, Bindings, ChatRequest, ModelParams, StageName};
use crate::stages::extractor::{AtomicEvent, ExtractionOutput};
use crate::stages::rewriter::{RewrittenParagraph, RewrittenReport, TacticSection};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueAssignment {
    pub serial: u32,
    pub technique_id: String,
    /// Shortname of the section the assignment came from.
    pub tactic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentificationOutput {
    pub doc_id: String,
    pub assignments: Vec<TechniqueAssignment>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

pub fn technique_id_shape_ok(id: &str) -> bool {
    let bytes = id.as_bytes();
    let parent = bytes.len() >= 5 && bytes[0] == b'T' && bytes[1..5].iter().all(u8::is_ascii_digit);
    parent
        && match &bytes[5..] {
            [] => true,
            [b'.', rest @ ..] => rest.len() == 3 && rest.iter().all(u8::is_ascii_digit),
            _ => false,
        }
}

/// Render "serial: subject; action; object; context" lines for the events
/// whose serials fall in this section.
fn render_triplets(section: &TacticSection, extraction: Option<&ExtractionOutput>) -> String {
    let Some(extraction) = extraction else {
        return "(no extracted events available)".to_string();
    };
    let serials: HashSet<u32> = section.paragraphs.iter().map(|p| p.serial).collect();
    let name_of = |id: &str| {
        extraction
            .entity(id)
            .map(|e| e.name.clone())
            .unwrap_or_else(|| id.to_string())
    };
    let lines: Vec<String> = extraction
        .events
        .iter()
        .filter(|e| serials.contains(&e.serial))
        .map(|e| {
            format!(
                "{}: {}; {}; {}; P{}",
                e.serial,
                name_of(&e.subject),
                e.action,
                name_of(&e.object),
                e.serial
            )
        })
        .collect();
    if lines.is_empty() {
        "(no extracted events available)".to_string()
    } else {
        lines.join("\n")
    }
}

/// Requests for one section, chunked so fragment plus paragraphs stay under
/// `chunk_budget` characters. Each request carries the serials it covers.
pub fn build_section_requests(
    section: &TacticSection,
    catalog: &TtpCatalog,
    extraction: Option<&ExtractionOutput>,
    params: &ModelParams,
    options: &StageOptions,
) -> Result<Vec<(ChatRequest, Vec<u32>)>, StageError> {
    let fragment = catalog.render_technique_templates(&section.tactic, options.description_chars)?;
    let triplets = render_triplets(section, extraction);
    let template = options.template(StageName::TechniqueIdentifier);

    let overhead = fragment.len() + triplets.len();
    let paragraph_budget = options.chunk_chars.saturating_sub(overhead).max(1);

    let mut chunks: Vec<Vec<&RewrittenParagraph>> = Vec::new();
    let mut current: Vec<&RewrittenParagraph> = Vec::new();
    let mut current_len = 0usize;
    for paragraph in &section.paragraphs {
        let len = paragraph.text.chars().count() + 8;
        if !current.is_empty() && current_len + len > paragraph_budget {
            chunks.push(std::mem::take(&mut current));
            current_len = 0;
        }
        current.push(paragraph);
        current_len += len;
    }
    if !current.is_empty() {
        chunks.push(current);
    }

    chunks
        .into_iter()
        .map(|paragraphs| {
            let mut bindings = Bindings::new();
            bindings.insert("tactic", section.tactic.clone());
            bindings.insert("technique_templates", fragment.clone());
            bindings.insert("triplets", triplets.clone());
            bindings.insert(
                "paragraphs",
                crate::stages::extractor::render_paragraphs(&paragraphs),
            );
            let serials = paragraphs.iter().map(|p| p.serial).collect();
            template
                .render(&bindings, params)
                .map(|req| (req, serials))
                .map_err(|e| StageError::gateway("identify", e))
        })
        .collect()
}

/// Parse one identification response. `candidates` is the section's allowed
/// id set; `serials` the paragraphs the request covered.
pub fn parse_section_response(
    text: &str,
    tactic: &str,
    candidates: &HashSet<String>,
    serials: &[u32],
    warnings: &mut Vec<String>,
) -> Result<Vec<TechniqueAssignment>, StageError> {
    let records =
        parse_line_records("technique", text).map_err(|e| StageError::gateway("identify", e))?;
    let mut out = Vec::new();
    for record in records {
        let mut parts = record.rest.splitn(2, char::is_whitespace);
        let id_token = parts
            .next()
            .unwrap_or_default()
            .trim_end_matches([',', ';', '.'])
            .to_string();
        let note = parts
            .next()
            .map(str::trim)
            .filter(|n| !n.is_empty())
            .map(str::to_string);
        if !technique_id_shape_ok(&id_token) {
            warnings.push(format!(
                "{tactic}: malformed technique id '{}' on serial {} dropped",
                record.rest, record.serial
            ));
            continue;
        }
        if !serials.contains(&record.serial) {
            warnings.push(format!(
                "{tactic}: serial {} outside section dropped",
                record.serial
            ));
            continue;
        }
        if !candidates.contains(&id_token) {
            warnings.push(format!(
                "{tactic}: {id_token} is not a candidate technique for this tactic; dropped"
            ));
            continue;
        }
        out.push(TechniqueAssignment {
            serial: record.serial,
            technique_id: id_token,
            tactic: tactic.to_string(),
            confidence_note: note,
        });
    }
    Ok(out)
}

/// Run technique identification over every non-"other" section.
///
/// When an extraction is supplied its triplets ride along in the prompt;
/// otherwise identification is text-only.
pub fn identify(
    rewritten: &RewrittenReport,
    catalog: &TtpCatalog,
    backend: &Backend,
    extraction: Option<&ExtractionOutput>,
    options: &StageOptions,
) -> Result<IdentificationOutput, StageError> {
    let mut assignments = Vec::new();
    let mut warnings = Vec::new();
    for section in rewritten.non_other_sections() {
        let section_err = |source: StageError| StageError::Section {
            tactic: section.tactic.clone(),
            source: Box::new(source),
        };
        let candidates: HashSet<String> = catalog
            .techniques_for_tactic(&section.tactic)
            .map_err(StageError::Catalog)
            .map_err(&section_err)?
            .iter()
            .map(|t| t.id.clone())
            .collect();
        let requests =
            build_section_requests(section, catalog, extraction, backend.params(), options)
                .map_err(&section_err)?;
        for (request, serials) in requests {
            let response = backend
                .complete(&request)
                .map_err(|e| section_err(StageError::gateway("identify", e)))?;
            let parsed = parse_section_response(
                &response.text,
                &section.tactic,
                &candidates,
                &serials,
                &mut warnings,
            )
            .map_err(&section_err)?;
            assignments.extend(parsed);
        }
    }

    // Same (serial, id) from different chunks collapses to the first.
    let mut seen = HashSet::new();
    assignments.retain(|a| seen.insert((a.serial, a.technique_id.clone())));

    Ok(IdentificationOutput {
        doc_id: rewritten.doc_id.clone(),
        assignments,
        warnings,
    })
}

/// Events inherit every technique assigned to their paragraph serial;
/// events on unlabeled serials map to the empty set.
pub fn align(
    assignments: &[TechniqueAssignment],
    events: &[AtomicEvent],
) -> BTreeMap<String, BTreeSet<String>> {
    let mut by_serial: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
    for assignment in assignments {
        by_serial
            .entry(assignment.serial)
            .or_default()
            .insert(assignment.technique_id.clone());
    }
    events
        .iter()
        .map(|event| {
            (
                event.event_id.clone(),
                by_serial.get(&event.serial).cloned().unwrap_or_default(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::test_support::mini_catalog;
    use crate::stages::extractor::EventStatus;

    fn candidates(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn event(id: &str, serial: u32) -> AtomicEvent {
        AtomicEvent {
            event_id: id.into(),
            subject: "e1".into(),
            action: "use".into(),
            object: "e2".into(),
            status: EventStatus::Unknown,
            serial,
            ordinal: 1,
        }
    }

    #[test]
    fn in_candidate_assignment_is_kept() {
        let mut warnings = Vec::new();
        let parsed = parse_section_response(
            "9: T1612",
            "defense-evasion",
            &candidates(&["T1612"]),
            &[9],
            &mut warnings,
        )
        .unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].technique_id, "T1612");
        assert_eq!(parsed[0].tactic, "defense-evasion");
        assert!(warnings.is_empty());
    }

    #[test]
    fn out_of_candidate_id_is_discarded_with_warning() {
        let mut warnings = Vec::new();
        let parsed = parse_section_response(
            "3: T1612",
            "initial-access",
            &candidates(&["T1566"]),
            &[3],
            &mut warnings,
        )
        .unwrap();
        assert!(parsed.is_empty());
        assert!(warnings[0].contains("T1612"));
    }

    #[test]
    fn out_of_section_serial_is_discarded_with_warning() {
        let mut warnings = Vec::new();
        let parsed = parse_section_response(
            "42: T1612",
            "defense-evasion",
            &candidates(&["T1612"]),
            &[9, 10],
            &mut warnings,
        )
        .unwrap();
        assert!(parsed.is_empty());
        assert!(warnings[0].contains("42"));
    }

    #[test]
    fn rationale_after_the_id_becomes_the_note() {
        let mut warnings = Vec::new();
        let parsed = parse_section_response(
            "9: T1612 container image built on host",
            "defense-evasion",
            &candidates(&["T1612"]),
            &[9],
            &mut warnings,
        )
        .unwrap();
        assert_eq!(
            parsed[0].confidence_note.as_deref(),
            Some("container image built on host")
        );
    }

    #[test]
    fn malformed_id_warns_and_drops() {
        let mut warnings = Vec::new();
        let parsed = parse_section_response(
            "9: TXYZ",
            "defense-evasion",
            &candidates(&["T1612"]),
            &[9],
            &mut warnings,
        )
        .unwrap();
        assert!(parsed.is_empty());
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn align_inherits_by_serial() {
        let assignments = vec![
            TechniqueAssignment {
                serial: 9,
                technique_id: "T1612".into(),
                tactic: "defense-evasion".into(),
                confidence_note: None,
            },
            TechniqueAssignment {
                serial: 9,
                technique_id: "T1070".into(),
                tactic: "defense-evasion".into(),
                confidence_note: None,
            },
        ];
        let events = vec![event("ev1", 9), event("ev2", 9), event("ev3", 4)];
        let aligned = align(&assignments, &events);
        let expected: BTreeSet<String> = ["T1612".to_string(), "T1070".to_string()].into();
        assert_eq!(aligned["ev1"], expected);
        assert_eq!(aligned["ev2"], expected);
        assert!(aligned["ev3"].is_empty());
    }

    #[test]
    fn align_is_monotone_under_added_assignments() {
        let events = vec![event("ev1", 9)];
        let one = vec![TechniqueAssignment {
            serial: 9,
            technique_id: "T1612".into(),
            tactic: "defense-evasion".into(),
            confidence_note: None,
        }];
        let mut two = one.clone();
        two.push(TechniqueAssignment {
            serial: 9,
            technique_id: "T1070".into(),
            tactic: "defense-evasion".into(),
            confidence_note: None,
        });
        let before = align(&one, &events);
        let after = align(&two, &events);
        for (event_id, techniques) in before {
            assert!(techniques.is_subset(&after[&event_id]));
        }
    }

    #[test]
    fn section_requests_embed_templates_and_isolate_paragraphs() {
        let catalog = mini_catalog();
        let section = TacticSection {
            tactic: "defense-evasion".into(),
            paragraphs: vec![RewrittenParagraph {
                serial: 9,
                text: "They built a container image on the host.".into(),
            }],
        };
        let requests = build_section_requests(
            &section,
            &catalog,
            None,
            &ModelParams::default(),
            &StageOptions::default(),
        )
        .unwrap();
        assert_eq!(requests.len(), 1);
        let (request, serials) = &requests[0];
        assert_eq!(serials, &vec![9]);
        assert!(request.user.contains("T1612"));
        assert!(request.user.contains("9: They built"));
        // Candidates from another tactic are absent.
        assert!(!request.user.contains("T1059"));
    }

    #[test]
    fn section_prompts_never_see_other_sections_paragraphs() {
        use crate::gateway::testing::{endpoint, ScriptedTransport};
        use crate::gateway::Backend;
        let catalog = mini_catalog();
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
                    tactic: "defense-evasion".into(),
                    paragraphs: vec![RewrittenParagraph {
                        serial: 2,
                        text: "EVASION-ONLY-TEXT".into(),
                    }],
                },
            ],
        };
        let transport = std::sync::Arc::new(ScriptedTransport::always("none"));
        let backend = Backend::live(endpoint(), ModelParams::default())
            .with_transport(transport.clone());
        identify(&rewritten, &catalog, &backend, None, &StageOptions::default()).unwrap();
        let transcript = transport.seen_prompts();
        assert_eq!(transcript.len(), 2);
        assert!(transcript[0].contains("EXECUTION-ONLY-TEXT"));
        assert!(!transcript[0].contains("EVASION-ONLY-TEXT"));
        assert!(transcript[1].contains("EVASION-ONLY-TEXT"));
        assert!(!transcript[1].contains("EXECUTION-ONLY-TEXT"));
    }

    #[test]
    fn oversized_section_splits_into_multiple_requests() {
        let catalog = mini_catalog();
        let section = TacticSection {
            tactic: "execution".into(),
            paragraphs: (1..=4)
                .map(|serial| RewrittenParagraph {
                    serial,
                    text: "x".repeat(300),
                })
                .collect(),
        };
        let tight = StageOptions {
            chunk_chars: 800,
            ..Default::default()
        };
        let requests =
            build_section_requests(&section, &catalog, None, &ModelParams::default(), &tight)
                .unwrap();
        assert!(requests.len() >= 2);
        let all: Vec<u32> = requests.iter().flat_map(|(_, s)| s.clone()).collect();
        assert_eq!(all, vec![1, 2, 3, 4]);
    }
}
