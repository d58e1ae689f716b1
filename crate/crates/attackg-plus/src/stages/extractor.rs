//! Stage 2: extract atomic (subject, action, object) events, entity-entity
//! relations, and coreference-resolved entities from rewritten paragraphs.
//!
//! Paragraphs are batched at most [`BATCH_CAP`] at a time, one tactic per
//! batch. Record grammar (one record per line):
//!
//! ```text
//! serial: subject | subject_type | action | status | object | object_type
//! serial: source ~ relation ~ target
//! ```
//!
//! Entity fields may be written `canonical=surface` to tag a coreferring
//! mention. "other" sections are never extracted.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{StageError, StageOptions};
use crate::gateway::{parse_line_records, Backend, Bindings, ChatRequest, ModelParams, StageName};
use crate::stages::rewriter::{RewrittenParagraph, RewrittenReport};

/// Hard cap on paragraphs per extraction request.
pub const BATCH_CAP: usize = 10;

/// Closed entity vocabulary; unknown tokens fall back to `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "attacker")]
    Attacker,
    #[serde(rename = "victim")]
    Victim,
    #[serde(rename = "malware")]
    Malware,
    #[serde(rename = "tool")]
    Tool,
    #[serde(rename = "vulnerability")]
    Vulnerability,
    #[serde(rename = "file")]
    File,
    #[serde(rename = "process")]
    Process,
    #[serde(rename = "registry-key")]
    RegistryKey,
    #[serde(rename = "network-endpoint")]
    NetworkEndpoint,
    #[serde(rename = "email")]
    Email,
    #[serde(rename = "account")]
    Account,
    #[serde(rename = "c2-server")]
    C2Server,
    #[serde(rename = "campaign")]
    Campaign,
    #[serde(rename = "information")]
    Information,
    #[serde(rename = "organization")]
    Organization,
    #[serde(rename = "location")]
    Location,
    #[serde(rename = "other")]
    Other,
}

impl EntityType {
    pub const ALL: [EntityType; 17] = [
        EntityType::Attacker,
        EntityType::Victim,
        EntityType::Malware,
        EntityType::Tool,
        EntityType::Vulnerability,
        EntityType::File,
        EntityType::Process,
        EntityType::RegistryKey,
        EntityType::NetworkEndpoint,
        EntityType::Email,
        EntityType::Account,
        EntityType::C2Server,
        EntityType::Campaign,
        EntityType::Information,
        EntityType::Organization,
        EntityType::Location,
        EntityType::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityType::Attacker => "attacker",
            EntityType::Victim => "victim",
            EntityType::Malware => "malware",
            EntityType::Tool => "tool",
            EntityType::Vulnerability => "vulnerability",
            EntityType::File => "file",
            EntityType::Process => "process",
            EntityType::RegistryKey => "registry-key",
            EntityType::NetworkEndpoint => "network-endpoint",
            EntityType::Email => "email",
            EntityType::Account => "account",
            EntityType::C2Server => "c2-server",
            EntityType::Campaign => "campaign",
            EntityType::Information => "information",
            EntityType::Organization => "organization",
            EntityType::Location => "location",
            EntityType::Other => "other",
        }
    }

    /// Map a model token to the vocabulary, `Other` when unrecognized.
    pub fn parse(token: &str) -> EntityType {
        let normalized = token.trim().to_lowercase().replace([' ', '_'], "-");
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == normalized)
            .unwrap_or(EntityType::Other)
    }

    pub fn vocabulary() -> String {
        Self::ALL
            .iter()
            .map(|t| t.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventStatus {
    #[serde(rename = "success")]
    Success,
    #[serde(rename = "failure")]
    Failure,
    #[serde(rename = "unknown")]
    Unknown,
}

impl EventStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventStatus::Success => "success",
            EventStatus::Failure => "failure",
            EventStatus::Unknown => "unknown",
        }
    }
}

/// Non-verbal entity-entity relation tokens; anything else is preserved raw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelationKind {
    LocatedAt,
    BelongTo,
    PartOf,
    VariantOf,
    Targets,
    Hosts,
    CommunicatesWith,
    Uses,
    Other(String),
}

impl RelationKind {
    pub const KNOWN: [&'static str; 8] = [
        "located-at",
        "belong-to",
        "part-of",
        "variant-of",
        "targets",
        "hosts",
        "communicates-with",
        "uses",
    ];

    pub fn parse(raw: &str) -> RelationKind {
        let normalized = raw
            .trim()
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join("-");
        match normalized.as_str() {
            "located-at" => RelationKind::LocatedAt,
            "belong-to" => RelationKind::BelongTo,
            "part-of" => RelationKind::PartOf,
            "variant-of" => RelationKind::VariantOf,
            "targets" => RelationKind::Targets,
            "hosts" => RelationKind::Hosts,
            "communicates-with" => RelationKind::CommunicatesWith,
            "uses" => RelationKind::Uses,
            _ => RelationKind::Other(raw.trim().to_string()),
        }
    }

    pub fn vocabulary() -> String {
        Self::KNOWN.join(", ")
    }

    /// Normalized token for matching and stats ("other" collapses).
    pub fn token(&self) -> &str {
        match self {
            RelationKind::LocatedAt => "located-at",
            RelationKind::BelongTo => "belong-to",
            RelationKind::PartOf => "part-of",
            RelationKind::VariantOf => "variant-of",
            RelationKind::Targets => "targets",
            RelationKind::Hosts => "hosts",
            RelationKind::CommunicatesWith => "communicates-with",
            RelationKind::Uses => "uses",
            RelationKind::Other(raw) => raw,
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelationKind::Other(raw) => write!(f, "other({raw})"),
            known => f.write_str(known.token()),
        }
    }
}

impl Serialize for RelationKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RelationKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if let Some(raw) = s.strip_prefix("other(").and_then(|r| r.strip_suffix(')')) {
            return Ok(RelationKind::Other(raw.to_string()));
        }
        Ok(RelationKind::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    /// Stable id, "e1".. in first-mention order.
    pub entity_id: String,
    /// Longest non-pronoun alias.
    pub name: String,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    /// All co-referring surface forms, first-seen order, name included.
    pub aliases: Vec<String>,
    pub first_serial: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicEvent {
    /// "ev1".. in (serial, ordinal) order.
    pub event_id: String,
    /// Entity id of the action's initiator.
    pub subject: String,
    /// Lowercase lemmatized action verb.
    pub action: String,
    /// Entity id of the action's target.
    pub object: String,
    pub status: EventStatus,
    pub serial: u32,
    /// 1-based position among the paragraph's events.
    pub ordinal: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRelation {
    pub source: String,
    pub relation: RelationKind,
    pub target: String,
    pub serial: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionOutput {
    pub doc_id: String,
    pub entities: Vec<Entity>,
    pub events: Vec<AtomicEvent>,
    pub relations: Vec<EntityRelation>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ExtractionOutput {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.entity_id == id)
    }

    pub fn empty(doc_id: &str) -> Self {
        ExtractionOutput {
            doc_id: doc_id.to_string(),
            entities: Vec::new(),
            events: Vec::new(),
            relations: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Inflection table for the small action vocabulary; applied per token after
/// lowercasing.
const LEMMAS: [(&str, &str); 60] = [
    ("sent", "send"), ("sends", "send"), ("sending", "send"),
    ("uses", "use"), ("used", "use"), ("using", "use"),
    ("executed", "execute"), ("executes", "execute"), ("executing", "execute"),
    ("targeted", "target"), ("targets", "target"), ("targeting", "target"),
    ("communicated", "communicate"), ("communicates", "communicate"), ("communicating", "communicate"),
    ("hosted", "host"), ("hosts", "host"), ("hosting", "host"),
    ("installed", "install"), ("installs", "install"), ("installing", "install"),
    ("created", "create"), ("creates", "create"), ("creating", "create"),
    ("downloaded", "download"), ("downloads", "download"), ("downloading", "download"),
    ("uploaded", "upload"), ("uploads", "upload"), ("uploading", "upload"),
    ("stole", "steal"), ("stolen", "steal"), ("steals", "steal"), ("stealing", "steal"),
    ("exploited", "exploit"), ("exploits", "exploit"), ("exploiting", "exploit"),
    ("deployed", "deploy"), ("deploys", "deploy"), ("deploying", "deploy"),
    ("compromised", "compromise"), ("compromises", "compromise"), ("compromising", "compromise"),
    ("collected", "collect"), ("collects", "collect"), ("collecting", "collect"),
    ("exfiltrated", "exfiltrate"), ("exfiltrates", "exfiltrate"), ("exfiltrating", "exfiltrate"),
    ("delivered", "deliver"), ("delivers", "deliver"), ("delivering", "deliver"),
    ("dropped", "drop"), ("drops", "drop"), ("dropping", "drop"),
    ("cleared", "clear"), ("clears", "clear"),
    ("ran", "run"), ("runs", "run"), ("running", "run"),
];

/// Lowercase and lemmatize an action phrase token by token.
pub fn lemmatize_action(raw: &str) -> String {
    raw.to_lowercase()
        .split_whitespace()
        .map(|token| {
            LEMMAS
                .iter()
                .find(|(inflected, _)| *inflected == token)
                .map(|(_, lemma)| *lemma)
                .unwrap_or(token)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Case/whitespace normalization for implicit entity merging.
pub fn normalize_name(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

const PRONOUNS: [&str; 16] = [
    "it", "they", "them", "he", "she", "him", "her", "its", "this", "that", "these", "those",
    "we", "i", "you", "itself",
];

fn is_pronoun(name: &str) -> bool {
    PRONOUNS.contains(&normalize_name(name).as_str())
}

/// One surface mention as parsed from a record field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    /// Primary surface form (the canonical side of `canonical=surface`).
    pub primary: String,
    /// Explicitly tagged coreferring surface form, if any.
    pub alias: Option<String>,
    pub entity_type: EntityType,
    pub serial: u32,
}

impl Mention {
    fn surfaces(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.primary.as_str()).chain(self.alias.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEventRecord {
    pub serial: u32,
    pub subject: Mention,
    pub action: String,
    pub status: EventStatus,
    pub object: Mention,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRelationRecord {
    pub serial: u32,
    pub source: Mention,
    pub relation: RelationKind,
    pub target: Mention,
}

#[derive(Debug, Default)]
pub struct BatchRecords {
    pub events: Vec<RawEventRecord>,
    pub relations: Vec<RawRelationRecord>,
    pub warnings: Vec<String>,
}

fn parse_mention_field(field: &str, entity_type: EntityType, serial: u32) -> Mention {
    let field = field.trim();
    match field.split_once('=') {
        Some((primary, alias)) if !primary.trim().is_empty() && !alias.trim().is_empty() => {
            Mention {
                primary: primary.trim().to_string(),
                alias: Some(alias.trim().to_string()),
                entity_type,
                serial,
            }
        }
        _ => Mention {
            primary: field.to_string(),
            alias: None,
            entity_type,
            serial,
        },
    }
}

fn parse_status(token: &str, serial: u32, warnings: &mut Vec<String>) -> EventStatus {
    match token.trim().to_lowercase().as_str() {
        "success" => EventStatus::Success,
        "failure" => EventStatus::Failure,
        "unknown" | "" => EventStatus::Unknown,
        other => {
            warnings.push(format!(
                "serial {serial}: unrecognized status '{other}' treated as unknown"
            ));
            EventStatus::Unknown
        }
    }
}

/// Parse one batch response against the record grammar. Records outside the
/// batch's serial range are discarded with a warning, as are malformed or
/// object-less records.
pub fn parse_batch_response(
    text: &str,
    batch_serials: &[u32],
) -> Result<BatchRecords, StageError> {
    let records =
        parse_line_records("triplet", text).map_err(|e| StageError::gateway("extract", e))?;
    let mut out = BatchRecords::default();
    for record in records {
        if !batch_serials.contains(&record.serial) {
            out.warnings.push(format!(
                "record for serial {} outside batch {:?} dropped",
                record.serial, batch_serials
            ));
            continue;
        }
        let serial = record.serial;
        if record.rest.contains('~') {
            let parts: Vec<&str> = record.rest.split('~').map(str::trim).collect();
            if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
                out.warnings.push(format!(
                    "serial {serial}: malformed relation record '{}' dropped",
                    record.rest
                ));
                continue;
            }
            out.relations.push(RawRelationRecord {
                serial,
                source: parse_mention_field(parts[0], EntityType::Other, serial),
                relation: RelationKind::parse(parts[1]),
                target: parse_mention_field(parts[2], EntityType::Other, serial),
            });
        } else {
            let parts: Vec<&str> = record.rest.split('|').map(str::trim).collect();
            if parts.len() != 6 {
                out.warnings.push(format!(
                    "serial {serial}: malformed event record '{}' dropped (expected 6 fields)",
                    record.rest
                ));
                continue;
            }
            if parts[4].is_empty() {
                out.warnings.push(format!(
                    "serial {serial}: event record lacks an object; dropped"
                ));
                continue;
            }
            if parts[0].is_empty() || parts[2].is_empty() {
                out.warnings.push(format!(
                    "serial {serial}: event record lacks a subject or action; dropped"
                ));
                continue;
            }
            let status = parse_status(parts[3], serial, &mut out.warnings);
            out.events.push(RawEventRecord {
                serial,
                subject: parse_mention_field(parts[0], EntityType::parse(parts[1]), serial),
                action: parts[2].to_string(),
                status,
                object: parse_mention_field(parts[4], EntityType::parse(parts[5]), serial),
            });
        }
    }
    Ok(out)
}

/// The request one batch sends, for transcript inspection and recording.
pub fn build_batch_request(
    paragraphs: &[&RewrittenParagraph],
    tactic: &str,
    params: &ModelParams,
    options: &StageOptions,
) -> Result<ChatRequest, StageError> {
    if paragraphs.is_empty() || paragraphs.len() > BATCH_CAP {
        return Err(StageError::BatchOverflow {
            len: paragraphs.len(),
            cap: BATCH_CAP,
        });
    }
    let template = options.template(StageName::TripletExtractor);
    let mut bindings = Bindings::new();
    bindings.insert("tactic", tactic.to_string());
    bindings.insert("entity_types", EntityType::vocabulary());
    bindings.insert("relation_types", RelationKind::vocabulary());
    bindings.insert("paragraphs", render_paragraphs(paragraphs));
    template
        .render(&bindings, params)
        .map_err(|e| StageError::gateway("extract", e))
}

pub(crate) fn render_paragraphs(paragraphs: &[&RewrittenParagraph]) -> String {
    paragraphs
        .iter()
        .map(|p| format!("{}: {}", p.serial, p.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One gateway call over at most [`BATCH_CAP`] paragraphs of a single tactic.
/// Errors carry the batch's serial range.
pub fn extract_batch(
    paragraphs: &[&RewrittenParagraph],
    tactic: &str,
    backend: &Backend,
    options: &StageOptions,
) -> Result<BatchRecords, StageError> {
    let request = build_batch_request(paragraphs, tactic, backend.params(), options)?;
    let serials: Vec<u32> = paragraphs.iter().map(|p| p.serial).collect();
    let batch_err = |source: StageError| StageError::Batch {
        first: serials.first().copied().unwrap_or_default(),
        last: serials.last().copied().unwrap_or_default(),
        source: Box::new(source),
    };
    let response = backend
        .complete(&request)
        .map_err(|e| batch_err(StageError::gateway("extract", e)))?;
    parse_batch_response(&response.text, &serials).map_err(batch_err)
}

/// Merge raw mentions into entities.
///
/// Mentions merge when their case/whitespace-normalized surfaces are equal
/// or when a record explicitly tagged one surface as an alias of another.
/// Type conflicts resolve to the earliest non-"other" typed mention; the
/// canonical name is the longest non-pronoun alias.
pub fn resolve_entities(mentions: &[Mention]) -> (Vec<Entity>, HashMap<String, String>) {
    // Union-find over normalized surfaces.
    let mut parent: HashMap<String, String> = HashMap::new();

    fn find(parent: &mut HashMap<String, String>, key: &str) -> String {
        let up = match parent.get(key) {
            None => {
                parent.insert(key.to_string(), key.to_string());
                return key.to_string();
            }
            Some(up) => up.clone(),
        };
        if up == key {
            return up;
        }
        let root = find(parent, &up);
        parent.insert(key.to_string(), root.clone());
        root
    }

    fn union(parent: &mut HashMap<String, String>, a: &str, b: &str) {
        let ra = find(parent, a);
        let rb = find(parent, b);
        if ra != rb {
            parent.insert(rb, ra);
        }
    }

    for mention in mentions {
        let keys: Vec<String> = mention.surfaces().map(normalize_name).collect();
        for window in keys.windows(2) {
            union(&mut parent, &window[0], &window[1]);
        }
        if keys.len() == 1 {
            find(&mut parent, &keys[0]);
        }
    }

    struct Cluster {
        aliases: Vec<String>,
        first_serial: u32,
        first_index: usize,
        entity_type: Option<EntityType>,
    }

    let mut clusters: HashMap<String, Cluster> = HashMap::new();
    let mut order: Vec<String> = Vec::new();

    for (index, mention) in mentions.iter().enumerate() {
        let root = find(&mut parent, &normalize_name(&mention.primary));
        let cluster = clusters.entry(root.clone()).or_insert_with(|| {
            order.push(root.clone());
            Cluster {
                aliases: Vec::new(),
                first_serial: mention.serial,
                first_index: index,
                entity_type: None,
            }
        });
        cluster.first_serial = cluster.first_serial.min(mention.serial);
        for surface in mention.surfaces() {
            let surface = surface.trim();
            if !cluster.aliases.iter().any(|a| normalize_name(a) == normalize_name(surface)) {
                cluster.aliases.push(surface.to_string());
            }
        }
        if cluster.entity_type.is_none() && mention.entity_type != EntityType::Other {
            cluster.entity_type = Some(mention.entity_type);
        }
    }

    let mut ordered: Vec<(String, Cluster)> = order
        .into_iter()
        .map(|root| {
            let cluster = clusters.remove(&root).expect("cluster registered");
            (root, cluster)
        })
        .collect();
    ordered.sort_by_key(|(_, c)| (c.first_serial, c.first_index));

    let mut entities = Vec::with_capacity(ordered.len());
    let mut by_norm = HashMap::new();
    for (index, (_, cluster)) in ordered.into_iter().enumerate() {
        let entity_id = format!("e{}", index + 1);
        let name = cluster
            .aliases
            .iter()
            .filter(|a| !is_pronoun(a))
            .max_by_key(|a| a.chars().count())
            .unwrap_or(&cluster.aliases[0])
            .clone();
        for alias in &cluster.aliases {
            by_norm.insert(normalize_name(alias), entity_id.clone());
        }
        entities.push(Entity {
            entity_id,
            name,
            entity_type: cluster.entity_type.unwrap_or(EntityType::Other),
            aliases: cluster.aliases,
            first_serial: cluster.first_serial,
        });
    }
    (entities, by_norm)
}

/// Directed temporal edge between consecutive events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub from: String,
    pub to: String,
}

/// String events into one linear chain ordered by (serial, ordinal).
pub fn chain_events(events: &[AtomicEvent]) -> Vec<TemporalEdge> {
    let mut ordered: Vec<&AtomicEvent> = events.iter().collect();
    ordered.sort_by_key(|e| (e.serial, e.ordinal));
    ordered
        .windows(2)
        .map(|pair| TemporalEdge {
            from: pair[0].event_id.clone(),
            to: pair[1].event_id.clone(),
        })
        .collect()
}

/// Run the extraction stage over every non-"other" section.
pub fn extract(
    rewritten: &RewrittenReport,
    backend: &Backend,
    options: &StageOptions,
) -> Result<ExtractionOutput, StageError> {
    let mut batches: Vec<BatchRecords> = Vec::new();
    for section in rewritten.non_other_sections() {
        let paragraphs: Vec<&RewrittenParagraph> = section.paragraphs.iter().collect();
        for batch in paragraphs.chunks(BATCH_CAP) {
            batches.push(extract_batch(batch, &section.tactic, backend, options)?);
        }
    }
    Ok(merge_batches(&rewritten.doc_id, batches))
}

/// Merge batch records into the final extraction: resolve entities, map
/// event/relation endpoints onto entity ids, assign ids and ordinals.
pub fn merge_batches(doc_id: &str, batches: Vec<BatchRecords>) -> ExtractionOutput {
    let mut warnings = Vec::new();
    let mut event_records = Vec::new();
    let mut relation_records = Vec::new();
    for mut batch in batches {
        warnings.append(&mut batch.warnings);
        event_records.append(&mut batch.events);
        relation_records.append(&mut batch.relations);
    }

    let mut mentions = Vec::new();
    for record in &event_records {
        mentions.push(record.subject.clone());
        mentions.push(record.object.clone());
    }
    for record in &relation_records {
        mentions.push(record.source.clone());
        mentions.push(record.target.clone());
    }
    let (entities, id_of) = resolve_entities(&mentions);

    event_records.sort_by_key(|r| r.serial);
    let mut events = Vec::new();
    let mut ordinal_per_serial: HashMap<u32, u32> = HashMap::new();
    for record in &event_records {
        let subject_id = id_of[&normalize_name(&record.subject.primary)].clone();
        let object_id = id_of[&normalize_name(&record.object.primary)].clone();
        if subject_id == object_id
            && normalize_name(&record.subject.primary) != normalize_name(&record.object.primary)
        {
            warnings.push(format!(
                "serial {}: subject '{}' and object '{}' merged into one entity; event dropped",
                record.serial, record.subject.primary, record.object.primary
            ));
            continue;
        }
        let ordinal = ordinal_per_serial
            .entry(record.serial)
            .and_modify(|o| *o += 1)
            .or_insert(1);
        events.push(AtomicEvent {
            event_id: String::new(), // assigned below
            subject: subject_id,
            action: lemmatize_action(&record.action),
            object: object_id,
            status: record.status,
            serial: record.serial,
            ordinal: *ordinal,
        });
    }
    events.sort_by_key(|e| (e.serial, e.ordinal));
    for (index, event) in events.iter_mut().enumerate() {
        event.event_id = format!("ev{}", index + 1);
    }

    let relations = relation_records
        .iter()
        .map(|record| EntityRelation {
            source: id_of[&normalize_name(&record.source.primary)].clone(),
            relation: record.relation.clone(),
            target: id_of[&normalize_name(&record.target.primary)].clone(),
            serial: record.serial,
        })
        .collect();

    ExtractionOutput {
        doc_id: doc_id.to_string(),
        entities,
        events,
        relations,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mention(primary: &str, entity_type: EntityType, serial: u32) -> Mention {
        Mention {
            primary: primary.into(),
            alias: None,
            entity_type,
            serial,
        }
    }

    #[test]
    fn batch_cap_is_a_hard_error() {
        let paragraphs: Vec<RewrittenParagraph> = (1..=11)
            .map(|serial| RewrittenParagraph {
                serial,
                text: format!("p{serial}"),
            })
            .collect();
        let refs: Vec<&RewrittenParagraph> = paragraphs.iter().collect();
        let err = build_batch_request(
            &refs,
            "execution",
            &ModelParams::default(),
            &StageOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, StageError::BatchOverflow { len: 11, cap: 10 }));
    }

    #[test]
    fn out_of_range_serial_is_dropped_with_warning() {
        let text = "4: attacker | attacker | send | unknown | phishing email | email\n99: ghost | other | do | unknown | thing | other";
        let batch = parse_batch_response(text, &[4, 5]).unwrap();
        assert_eq!(batch.events.len(), 1);
        assert_eq!(batch.warnings.len(), 1);
        assert!(batch.warnings[0].contains("99"));
    }

    #[test]
    fn event_and_relation_records_parse_per_grammar() {
        let text = "4: attacker | attacker | sent | success | phishing email | email\n5: nation.exe ~ located-at ~ update server\n";
        let batch = parse_batch_response(text, &[4, 5]).unwrap();
        assert_eq!(batch.events.len(), 1);
        assert_eq!(batch.relations.len(), 1);
        let event = &batch.events[0];
        assert_eq!(event.subject.primary, "attacker");
        assert_eq!(event.status, EventStatus::Success);
        let relation = &batch.relations[0];
        assert_eq!(relation.relation, RelationKind::LocatedAt);
        assert_eq!(relation.target.primary, "update server");
    }

    #[test]
    fn object_less_record_is_dropped_with_warning() {
        let text = "4: attacker | attacker | scan | unknown |  | other";
        let batch = parse_batch_response(text, &[4]).unwrap();
        assert!(batch.events.is_empty());
        assert!(batch.warnings[0].contains("lacks an object"));
    }

    #[test]
    fn unrecognized_status_becomes_unknown_with_warning() {
        let text = "4: a | tool | use | maybe | b | file";
        let batch = parse_batch_response(text, &[4]).unwrap();
        assert_eq!(batch.events[0].status, EventStatus::Unknown);
        assert!(batch.warnings[0].contains("maybe"));
    }

    #[test]
    fn case_variants_merge_into_one_entity() {
        let mentions = vec![
            mention("Attacker", EntityType::Attacker, 1),
            mention("attacker", EntityType::Other, 2),
        ];
        let (entities, id_of) = resolve_entities(&mentions);
        assert_eq!(entities.len(), 1);
        assert_eq!(id_of["attacker"], entities[0].entity_id);
        assert_eq!(entities[0].entity_type, EntityType::Attacker);
    }

    #[test]
    fn distinct_names_never_merge_implicitly() {
        let mentions = vec![
            mention("nation.exe", EntityType::File, 1),
            mention("exfil.ps1", EntityType::File, 2),
        ];
        let (entities, _) = resolve_entities(&mentions);
        assert_eq!(entities.len(), 2);
    }

    #[test]
    fn explicit_alias_merges_and_collects_surfaces() {
        let mentions = vec![
            mention("Mimikatz", EntityType::Tool, 3),
            Mention {
                primary: "Mimikatz".into(),
                alias: Some("the tool".into()),
                entity_type: EntityType::Tool,
                serial: 5,
            },
        ];
        let (entities, id_of) = resolve_entities(&mentions);
        assert_eq!(entities.len(), 1);
        let entity = &entities[0];
        assert_eq!(entity.aliases, vec!["Mimikatz", "the tool"]);
        assert_eq!(entity.first_serial, 3);
        assert_eq!(id_of["the tool"], entity.entity_id);
    }

    #[test]
    fn earliest_non_other_type_wins() {
        let mentions = vec![
            mention("Backdoor.Agent.Hza", EntityType::Other, 1),
            mention("backdoor.agent.hza", EntityType::Malware, 2),
            mention("Backdoor.Agent.Hza", EntityType::Tool, 3),
        ];
        let (entities, _) = resolve_entities(&mentions);
        assert_eq!(entities[0].entity_type, EntityType::Malware);
    }

    #[test]
    fn canonical_name_is_longest_non_pronoun_alias() {
        let mentions = vec![
            Mention {
                primary: "it".into(),
                alias: Some("the implant".into()),
                entity_type: EntityType::Malware,
                serial: 1,
            },
            Mention {
                primary: "the implant".into(),
                alias: Some("MoonBounce bootkit".into()),
                entity_type: EntityType::Malware,
                serial: 2,
            },
        ];
        let (entities, _) = resolve_entities(&mentions);
        assert_eq!(entities.len(), 1);
        assert_eq!(entities[0].name, "MoonBounce bootkit");
    }

    #[test]
    fn resolution_partition_is_order_insensitive() {
        let mentions = vec![
            mention("Attacker", EntityType::Attacker, 1),
            mention("victim org", EntityType::Victim, 2),
            mention("attacker", EntityType::Other, 3),
            mention("Victim Org", EntityType::Other, 4),
        ];
        let partition = |ms: &[Mention]| -> std::collections::BTreeSet<Vec<String>> {
            let (entities, _) = resolve_entities(ms);
            entities
                .into_iter()
                .map(|e| {
                    let mut aliases: Vec<String> =
                        e.aliases.iter().map(|a| normalize_name(a)).collect();
                    aliases.sort();
                    aliases
                })
                .collect()
        };
        let mut reversed = mentions.clone();
        reversed.reverse();
        assert_eq!(partition(&mentions), partition(&reversed));
    }

    #[test]
    fn other_only_report_extracts_nothing_without_gateway_calls() {
        use crate::gateway::testing::PanicTransport;
        use crate::gateway::{Backend, EndpointConfig, ModelParams};
        let rewritten = crate::stages::rewriter::RewrittenReport {
            doc_id: "press".into(),
            model_info: "m".into(),
            sections: vec![crate::stages::rewriter::TacticSection {
                tactic: "other".into(),
                paragraphs: vec![RewrittenParagraph {
                    serial: 1,
                    text: "background only".into(),
                }],
            }],
        };
        let backend = Backend::live(
            EndpointConfig {
                base_url: "offline://none".into(),
                api_key: Some("unused".into()),
            },
            ModelParams::default(),
        )
        .with_transport(std::sync::Arc::new(PanicTransport));
        let output = extract(&rewritten, &backend, &StageOptions::default()).unwrap();
        assert!(output.entities.is_empty());
        assert!(output.events.is_empty());
        assert!(output.relations.is_empty());
    }

    #[test]
    fn chain_is_empty_for_zero_or_one_event() {
        assert!(chain_events(&[]).is_empty());
        let one = AtomicEvent {
            event_id: "ev1".into(),
            subject: "e1".into(),
            action: "send".into(),
            object: "e2".into(),
            status: EventStatus::Unknown,
            serial: 1,
            ordinal: 1,
        };
        assert!(chain_events(&[one]).is_empty());
    }

    #[test]
    fn chain_follows_serial_then_ordinal() {
        let make = |id: &str, serial, ordinal| AtomicEvent {
            event_id: id.into(),
            subject: "e1".into(),
            action: "use".into(),
            object: "e2".into(),
            status: EventStatus::Unknown,
            serial,
            ordinal,
        };
        let events = vec![make("c", 7, 1), make("a", 3, 1), make("b", 3, 2)];
        let edges = chain_events(&events);
        assert_eq!(edges.len(), 2);
        assert_eq!((edges[0].from.as_str(), edges[0].to.as_str()), ("a", "b"));
        assert_eq!((edges[1].from.as_str(), edges[1].to.as_str()), ("b", "c"));
    }

    #[test]
    fn merge_builds_events_with_referential_integrity() {
        let text = "1: attacker | attacker | sent | success | phishing email | email\n1: attacker | attacker | targets | unknown | employees | victim\n2: employees ~ belong-to ~ SK Communications\n";
        let batch = parse_batch_response(text, &[1, 2]).unwrap();
        let output = merge_batches("doc", vec![batch]);
        assert_eq!(output.events.len(), 2);
        assert_eq!(output.events[0].ordinal, 1);
        assert_eq!(output.events[1].ordinal, 2);
        assert_eq!(output.events[0].action, "send");
        for event in &output.events {
            assert!(output.entity(&event.subject).is_some());
            assert!(output.entity(&event.object).is_some());
        }
        for relation in &output.relations {
            assert!(output.entity(&relation.source).is_some());
            assert!(output.entity(&relation.target).is_some());
        }
    }

    #[test]
    fn coref_merged_reflexive_event_drops_but_literal_reflexive_stays() {
        let text = "1: the worm | malware | copies | success | the worm | malware\n2: Stuxnet=the worm | malware | infect | success | the worm | malware\n";
        let batch = parse_batch_response(text, &[1, 2]).unwrap();
        let output = merge_batches("doc", vec![batch]);
        // Literal self-reference on serial 1 stays; serial 2's subject and
        // object merged via the alias tag, so it drops.
        assert_eq!(output.events.len(), 1);
        assert_eq!(output.events[0].serial, 1);
        assert!(output.warnings.iter().any(|w| w.contains("serial 2")));
    }

    #[test]
    fn relation_kind_serializes_round_trip() {
        for raw in ["located-at", "communicates with", "chained to"] {
            let kind = RelationKind::parse(raw);
            let json = serde_json::to_string(&kind).unwrap();
            let back: RelationKind = serde_json::from_str(&json).unwrap();
            assert_eq!(kind, back);
        }
        assert_eq!(
            RelationKind::parse("Communicates With"),
            RelationKind::CommunicatesWith
        );
        let other = RelationKind::parse("chained to");
        assert_eq!(other.to_string(), "other(chained to)");
    }

    #[test]
    fn lemmatization_applies_per_token() {
        assert_eq!(lemmatize_action("Sent"), "send");
        assert_eq!(lemmatize_action("communicates with"), "communicate with");
        assert_eq!(lemmatize_action("Exfiltrated"), "exfiltrate");
        assert_eq!(lemmatize_action("pivots"), "pivots"); // not in table
    }
}
