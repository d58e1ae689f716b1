//! Assemble, validate, and serialize the three-layer attack graph.
//!
//! A graph bundles the behavior layer (entities, events, relations, temporal
//! chain), the technique layer (assignments plus the event alignment map),
//! and the state layer (per-tactic summaries), together with the report
//! outline that makes the file self-validating. Serialization is canonical:
//! sorted keys, document-ordered lists, version-tagged, byte-stable.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stages::extractor::{
    chain_events, AtomicEvent, Entity, EntityRelation, ExtractionOutput, TemporalEdge,
};
use crate::stages::identifier::{align, IdentificationOutput, TechniqueAssignment};
use crate::stages::rewriter::RewrittenReport;
use crate::stages::summarizer::{StateSummary, SummaryOutput};

/// Version tag of the canonical graph file.
pub const GRAPH_VERSION: &str = "attackg-plus/1";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("stage outputs mix documents: graph is '{expected}' but {stage} carries '{found}'")]
    DocMixing {
        expected: String,
        found: String,
        stage: &'static str,
    },
    #[error("dangling {kind} id '{id}'")]
    DanglingId { kind: &'static str, id: String },
    #[error("temporal chain violation: {0}")]
    ChainViolation(String),
    #[error("assignment serial {serial} does not exist in the report outline")]
    AssignmentSerial { serial: u32 },
    #[error("summary tactic '{tactic}' is not a section of the report")]
    SummaryTactic { tactic: String },
    #[error("outline serials are not contiguous from 1")]
    OutlineSerials,
    #[error("event alignment map is inconsistent with assignments")]
    Alignment,
    #[error("not a {GRAPH_VERSION} file (found version '{0}')")]
    Version(String),
    #[error("cannot decode graph file: {0}")]
    Decode(String),
    #[error("graph file i/o at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Section structure of the rewritten report the graph was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlineSection {
    pub tactic: String,
    pub serials: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_info: String,
    pub catalog_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackGraph {
    pub version: String,
    pub doc_id: String,
    pub outline: Vec<OutlineSection>,
    pub entities: Vec<Entity>,
    pub events: Vec<AtomicEvent>,
    pub entity_relations: Vec<EntityRelation>,
    pub temporal_edges: Vec<TemporalEdge>,
    pub technique_assignments: Vec<TechniqueAssignment>,
    /// event id -> technique ids aligned by paragraph serial.
    pub event_techniques: BTreeMap<String, BTreeSet<String>>,
    pub summaries: Vec<StateSummary>,
    pub provenance: Provenance,
}

impl AttackGraph {
    /// Technique ids present anywhere in the technique layer.
    pub fn technique_ids(&self) -> BTreeSet<String> {
        self.technique_assignments
            .iter()
            .map(|a| a.technique_id.clone())
            .collect()
    }
}

/// Build a graph from the four stage outputs, validating as a unit.
pub fn assemble(
    rewritten: &RewrittenReport,
    extraction: &ExtractionOutput,
    identification: &IdentificationOutput,
    summaries: &SummaryOutput,
    catalog_version: &str,
) -> Result<AttackGraph, GraphError> {
    for (stage, doc_id) in [
        ("extraction", &extraction.doc_id),
        ("identification", &identification.doc_id),
        ("summaries", &summaries.doc_id),
    ] {
        if *doc_id != rewritten.doc_id {
            return Err(GraphError::DocMixing {
                expected: rewritten.doc_id.clone(),
                found: doc_id.clone(),
                stage,
            });
        }
    }

    let outline = rewritten
        .sections
        .iter()
        .map(|s| OutlineSection {
            tactic: s.tactic.clone(),
            serials: s.paragraphs.iter().map(|p| p.serial).collect(),
        })
        .collect();

    let graph = AttackGraph {
        version: GRAPH_VERSION.to_string(),
        doc_id: rewritten.doc_id.clone(),
        outline,
        entities: extraction.entities.clone(),
        events: extraction.events.clone(),
        entity_relations: extraction.relations.clone(),
        temporal_edges: chain_events(&extraction.events),
        technique_assignments: identification.assignments.clone(),
        event_techniques: align(&identification.assignments, &extraction.events),
        summaries: summaries.summaries.clone(),
        provenance: Provenance {
            model_info: rewritten.model_info.clone(),
            catalog_version: catalog_version.to_string(),
        },
    };
    validate(&graph)?;
    Ok(graph)
}

/// Check every integrity invariant; a graph is usable iff this passes.
pub fn validate(graph: &AttackGraph) -> Result<(), GraphError> {
    if graph.version != GRAPH_VERSION {
        return Err(GraphError::Version(graph.version.clone()));
    }

    // Outline serials must run 1..N in order.
    let mut expected = 1u32;
    let mut serials = HashSet::new();
    for section in &graph.outline {
        for &serial in &section.serials {
            if serial != expected {
                return Err(GraphError::OutlineSerials);
            }
            serials.insert(serial);
            expected += 1;
        }
    }

    let entity_ids: HashSet<&str> = graph.entities.iter().map(|e| e.entity_id.as_str()).collect();
    if entity_ids.len() != graph.entities.len() {
        return Err(GraphError::Decode("duplicate entity ids".into()));
    }
    let event_ids: HashSet<&str> = graph.events.iter().map(|e| e.event_id.as_str()).collect();
    if event_ids.len() != graph.events.len() {
        return Err(GraphError::ChainViolation("duplicate event ids".into()));
    }

    for event in &graph.events {
        for (kind, id) in [
            ("subject entity", &event.subject),
            ("object entity", &event.object),
        ] {
            if !entity_ids.contains(id.as_str()) {
                return Err(GraphError::DanglingId {
                    kind,
                    id: id.clone(),
                });
            }
        }
        if !serials.contains(&event.serial) {
            return Err(GraphError::AssignmentSerial {
                serial: event.serial,
            });
        }
    }
    for relation in &graph.entity_relations {
        for (kind, id) in [
            ("relation source", &relation.source),
            ("relation target", &relation.target),
        ] {
            if !entity_ids.contains(id.as_str()) {
                return Err(GraphError::DanglingId {
                    kind,
                    id: id.clone(),
                });
            }
        }
    }

    // The temporal layer must be exactly the linear chain over the events.
    let expected_edges = chain_events(&graph.events);
    if graph.temporal_edges != expected_edges {
        return Err(GraphError::ChainViolation(format!(
            "expected {} chain edges in (serial, ordinal) order, found {}",
            expected_edges.len(),
            graph.temporal_edges.len()
        )));
    }

    for assignment in &graph.technique_assignments {
        if !serials.contains(&assignment.serial) {
            return Err(GraphError::AssignmentSerial {
                serial: assignment.serial,
            });
        }
    }

    if graph.event_techniques != align(&graph.technique_assignments, &graph.events) {
        return Err(GraphError::Alignment);
    }

    let section_tactics: HashSet<&str> =
        graph.outline.iter().map(|s| s.tactic.as_str()).collect();
    for summary in &graph.summaries {
        if !section_tactics.contains(summary.tactic.as_str()) {
            return Err(GraphError::SummaryTactic {
                tactic: summary.tactic.clone(),
            });
        }
    }

    Ok(())
}

/// Canonical bytes: JSON with sorted keys, two-space indent, trailing
/// newline. Structural equality iff byte equality.
pub fn to_canonical_file(graph: &AttackGraph) -> Result<Vec<u8>, GraphError> {
    validate(graph)?;
    // serde_json maps sort keys (BTreeMap-backed), so a Value round-trip
    // canonicalizes field order.
    let value = serde_json::to_value(graph).map_err(|e| GraphError::Decode(e.to_string()))?;
    let mut bytes =
        serde_json::to_vec_pretty(&value).map_err(|e| GraphError::Decode(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn from_canonical_file(bytes: &[u8]) -> Result<AttackGraph, GraphError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| GraphError::Decode(e.to_string()))?;
    if let Some(version) = value.get("version").and_then(|v| v.as_str()) {
        if version != GRAPH_VERSION {
            return Err(GraphError::Version(version.to_string()));
        }
    }
    let graph: AttackGraph =
        serde_json::from_value(value).map_err(|e| GraphError::Decode(e.to_string()))?;
    validate(&graph)?;
    Ok(graph)
}

pub fn write_canonical(graph: &AttackGraph, path: &std::path::Path) -> Result<(), GraphError> {
    let bytes = to_canonical_file(graph)?;
    std::fs::write(path, bytes).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_canonical(path: &std::path::Path) -> Result<AttackGraph, GraphError> {
    let bytes = std::fs::read(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_canonical_file(&bytes)
}

/// An empty but valid graph for a document with no extractable content.
pub fn empty_graph(doc_id: &str, model_info: &str, catalog_version: &str) -> AttackGraph {
    AttackGraph {
        version: GRAPH_VERSION.to_string(),
        doc_id: doc_id.to_string(),
        outline: Vec::new(),
        entities: Vec::new(),
        events: Vec::new(),
        entity_relations: Vec::new(),
        temporal_edges: Vec::new(),
        technique_assignments: Vec::new(),
        event_techniques: BTreeMap::new(),
        summaries: Vec::new(),
        provenance: Provenance {
            model_info: model_info.to_string(),
            catalog_version: catalog_version.to_string(),
        },
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::stages::extractor::{EntityType, EventStatus, RelationKind};
    use crate::stages::rewriter::{RewrittenParagraph, TacticSection};

    pub fn rewritten_fixture() -> RewrittenReport {
        RewrittenReport {
            doc_id: "fixture".into(),
            model_info: "replay:test-model".into(),
            sections: vec![
                TacticSection {
                    tactic: "initial-access".into(),
                    paragraphs: vec![
                        RewrittenParagraph {
                            serial: 1,
                            text: "The attacker compromised the update server.".into(),
                        },
                        RewrittenParagraph {
                            serial: 2,
                            text: "nation.exe was delivered to employee hosts.".into(),
                        },
                    ],
                },
                TacticSection {
                    tactic: "execution".into(),
                    paragraphs: vec![RewrittenParagraph {
                        serial: 3,
                        text: "The backdoor executed a script.".into(),
                    }],
                },
            ],
        }
    }

    pub fn extraction_fixture() -> ExtractionOutput {
        let entity = |id: &str, name: &str, t: EntityType, serial: u32| Entity {
            entity_id: id.into(),
            name: name.into(),
            entity_type: t,
            aliases: vec![name.to_string()],
            first_serial: serial,
        };
        ExtractionOutput {
            doc_id: "fixture".into(),
            entities: vec![
                entity("e1", "attacker", EntityType::Attacker, 1),
                entity("e2", "update server", EntityType::NetworkEndpoint, 1),
                entity("e3", "nation.exe", EntityType::Malware, 2),
            ],
            events: vec![
                AtomicEvent {
                    event_id: "ev1".into(),
                    subject: "e1".into(),
                    action: "compromise".into(),
                    object: "e2".into(),
                    status: EventStatus::Success,
                    serial: 1,
                    ordinal: 1,
                },
                AtomicEvent {
                    event_id: "ev2".into(),
                    subject: "e1".into(),
                    action: "deliver".into(),
                    object: "e3".into(),
                    status: EventStatus::Unknown,
                    serial: 2,
                    ordinal: 1,
                },
                AtomicEvent {
                    event_id: "ev3".into(),
                    subject: "e3".into(),
                    action: "execute".into(),
                    object: "e2".into(),
                    status: EventStatus::Failure,
                    serial: 3,
                    ordinal: 1,
                },
            ],
            relations: vec![EntityRelation {
                source: "e3".into(),
                relation: RelationKind::LocatedAt,
                target: "e2".into(),
                serial: 2,
            }],
            warnings: Vec::new(),
        }
    }

    pub fn identification_fixture() -> IdentificationOutput {
        IdentificationOutput {
            doc_id: "fixture".into(),
            assignments: vec![
                TechniqueAssignment {
                    serial: 1,
                    technique_id: "T1195".into(),
                    tactic: "initial-access".into(),
                    confidence_note: None,
                },
                TechniqueAssignment {
                    serial: 3,
                    technique_id: "T1059".into(),
                    tactic: "execution".into(),
                    confidence_note: None,
                },
            ],
            warnings: Vec::new(),
        }
    }

    pub fn summaries_fixture() -> SummaryOutput {
        SummaryOutput {
            doc_id: "fixture".into(),
            summaries: vec![StateSummary {
                tactic: "initial-access".into(),
                permissions: vec!["code execution on update server".into()],
                files: vec!["nation.exe".into()],
                information: Vec::new(),
                tools: Vec::new(),
            }],
            warnings: Vec::new(),
        }
    }

    pub fn graph_fixture() -> AttackGraph {
        assemble(
            &rewritten_fixture(),
            &extraction_fixture(),
            &identification_fixture(),
            &summaries_fixture(),
            "mini-1",
        )
        .unwrap()
    }
}
