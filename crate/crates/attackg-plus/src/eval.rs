//! Score pipeline outputs against gold annotations, classify reports by
//! tactic density, and compute corpus statistics.
//!
//! Matching is greedy one-to-one in document order (gold order, then
//! prediction order). The empty-vs-empty convention is P = R = F1 = 1 so
//! degenerate documents do not poison macro averages; a document with no
//! predictions has P = 1 (vacuous) and a document with no gold has R = 1.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::AttackGraph;
use crate::stages::extractor::{lemmatize_action, Entity, EntityRelation};
use crate::stages::identifier::technique_id_shape_ok;
use crate::stages::rewriter::RewrittenReport;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no documents to score")]
    EmptyInput,
    #[error("malformed technique id '{0}'")]
    MalformedTechniqueId(String),
    #[error("cannot read gold file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode gold file {path}: {detail}")]
    Decode { path: String, detail: String },
}

// ---------------------------------------------------------------------------
// Gold annotations

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldEntity {
    pub name: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<String>,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRelation {
    pub source: String,
    pub relation: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub doc_id: String,
    #[serde(default)]
    pub entities: Vec<GoldEntity>,
    #[serde(default)]
    pub relations: Vec<GoldRelation>,
    #[serde(default)]
    pub techniques: Vec<String>,
}

pub fn load_gold(path: &Path) -> Result<GoldAnnotation, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| EvalError::Decode {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Normalization

/// Alias normalization: casefold, trim, collapse whitespace, strip leading
/// articles.
pub fn normalize_alias(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase();
    let mut tokens: Vec<&str> = lowered.split_whitespace().collect();
    while matches!(tokens.first(), Some(&"the") | Some(&"a") | Some(&"an")) {
        tokens.remove(0);
    }
    if tokens.is_empty() {
        // An alias that is nothing but articles keeps its folded form.
        return lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    tokens.join(" ")
}

/// Relation/action token normalization: lowercase, hyphen/space-insensitive,
/// lemma table applied per token.
pub fn normalize_relation_token(raw: &str) -> String {
    lemmatize_action(&raw.to_lowercase().replace(['-', '_'], " "))
}

fn normalize_type_token(raw: &str) -> String {
    raw.trim().to_lowercase().replace([' ', '_'], "-")
}

// ---------------------------------------------------------------------------
// Match reports

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMatch {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// (gold item, predicted item) display pairs.
    pub matched: Vec<(String, String)>,
    pub unmatched_gold: Vec<String>,
    pub unmatched_predicted: Vec<String>,
}

impl CategoryMatch {
    /// tp+fn = |gold| and tp+fp = |predicted| must hold for every report.
    pub fn counts_consistent(&self) -> bool {
        self.tp == self.matched.len()
            && self.fn_ == self.unmatched_gold.len()
            && self.fp == self.unmatched_predicted.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    pub doc_id: String,
    pub entities: CategoryMatch,
    pub relations: CategoryMatch,
    pub techniques: CategoryMatch,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MatchOptions {
    /// Require entity types to match too.
    pub strict_types: bool,
    /// Compare technique ids at full sub-technique precision.
    pub strict_subtech: bool,
}

/// Mapping from matched predicted entity ids to gold entity indexes,
/// produced by entity matching and consumed by relation matching.
#[derive(Debug, Default)]
pub struct EntityMapping {
    pub predicted_to_gold: HashMap<String, usize>,
    pub gold_alias_index: HashMap<String, usize>,
}

/// Greedy one-to-one entity matching on normalized alias equality.
pub fn match_entities(
    predicted: &[Entity],
    gold: &[GoldEntity],
    options: MatchOptions,
) -> (CategoryMatch, EntityMapping) {
    let gold_aliases: Vec<HashSet<String>> = gold
        .iter()
        .map(|g| {
            std::iter::once(&g.name)
                .chain(g.aliases.iter())
                .map(|a| normalize_alias(a))
                .collect()
        })
        .collect();
    let predicted_aliases: Vec<HashSet<String>> = predicted
        .iter()
        .map(|p| p.aliases.iter().map(|a| normalize_alias(a)).collect())
        .collect();

    let mut mapping = EntityMapping::default();
    for (index, aliases) in gold_aliases.iter().enumerate() {
        for alias in aliases {
            mapping.gold_alias_index.entry(alias.clone()).or_insert(index);
        }
    }

    let mut result = CategoryMatch::default();
    let mut taken = vec![false; predicted.len()];
    for (gold_index, gold_entity) in gold.iter().enumerate() {
        let found = predicted.iter().enumerate().position(|(p_index, p)| {
            if taken[p_index] {
                return false;
            }
            if options.strict_types {
                if let Some(gold_type) = &gold_entity.entity_type {
                    if normalize_type_token(gold_type) != p.entity_type.as_str() {
                        return false;
                    }
                }
            }
            !gold_aliases[gold_index].is_disjoint(&predicted_aliases[p_index])
        });
        match found {
            Some(p_index) => {
                taken[p_index] = true;
                result.tp += 1;
                result
                    .matched
                    .push((gold_entity.name.clone(), predicted[p_index].name.clone()));
                mapping
                    .predicted_to_gold
                    .insert(predicted[p_index].entity_id.clone(), gold_index);
            }
            None => {
                result.fn_ += 1;
                result.unmatched_gold.push(gold_entity.name.clone());
            }
        }
    }
    for (p_index, predicted_entity) in predicted.iter().enumerate() {
        if !taken[p_index] {
            result.fp += 1;
            result
                .unmatched_predicted
                .push(predicted_entity.name.clone());
        }
    }
    (result, mapping)
}

/// One predicted relation-like item: an event's (s, a, o) or an
/// entity-entity relation.
#[derive(Debug, Clone)]
struct PredictedRelation {
    source_id: String,
    token: String,
    target_id: String,
    display: String,
}

fn predicted_relations(graph_entities: &[Entity], events: &[crate::stages::extractor::AtomicEvent], relations: &[EntityRelation]) -> Vec<PredictedRelation> {
    let name_of: HashMap<&str, &str> = graph_entities
        .iter()
        .map(|e| (e.entity_id.as_str(), e.name.as_str()))
        .collect();
    let display = |s: &str, t: &str, o: &str| {
        format!(
            "{} {} {}",
            name_of.get(s).copied().unwrap_or(s),
            t,
            name_of.get(o).copied().unwrap_or(o)
        )
    };
    let mut items: Vec<PredictedRelation> = Vec::new();
    for event in events {
        let token = normalize_relation_token(&event.action);
        items.push(PredictedRelation {
            display: display(&event.subject, &token, &event.object),
            source_id: event.subject.clone(),
            token,
            target_id: event.object.clone(),
        });
    }
    for relation in relations {
        let token = normalize_relation_token(relation.relation.token());
        items.push(PredictedRelation {
            display: display(&relation.source, &token, &relation.target),
            source_id: relation.source.clone(),
            token,
            target_id: relation.target.clone(),
        });
    }
    // Dedup identical triples so tp+fp equals the deduped prediction count.
    let mut seen = HashSet::new();
    items.retain(|i| seen.insert((i.source_id.clone(), i.token.clone(), i.target_id.clone())));
    items
}

/// Match predicted events and entity relations against gold relations.
/// Endpoints match through the entity mapping; tokens match after
/// normalization.
pub fn match_relations(
    entities: &[Entity],
    events: &[crate::stages::extractor::AtomicEvent],
    relations: &[EntityRelation],
    gold: &[GoldRelation],
    mapping: &EntityMapping,
) -> CategoryMatch {
    let items = predicted_relations(entities, events, relations);
    let entity_aliases: HashMap<&str, HashSet<String>> = entities
        .iter()
        .map(|e| {
            (
                e.entity_id.as_str(),
                e.aliases.iter().map(|a| normalize_alias(a)).collect(),
            )
        })
        .collect();

    // A predicted endpoint matches a gold endpoint name when both resolve to
    // the same gold entity; when the gold name is not a gold entity at all,
    // fall back to direct normalized-name equality.
    let endpoint_matches = |predicted_id: &str, gold_name: &str| -> bool {
        let gold_norm = normalize_alias(gold_name);
        match mapping.gold_alias_index.get(&gold_norm) {
            Some(gold_index) => {
                mapping.predicted_to_gold.get(predicted_id) == Some(gold_index)
            }
            None => entity_aliases
                .get(predicted_id)
                .map(|aliases| aliases.contains(&gold_norm))
                .unwrap_or(false),
        }
    };

    let mut result = CategoryMatch::default();
    let mut taken = vec![false; items.len()];
    for gold_relation in gold {
        let gold_token = normalize_relation_token(&gold_relation.relation);
        let found = items.iter().enumerate().position(|(index, item)| {
            !taken[index]
                && item.token == gold_token
                && endpoint_matches(&item.source_id, &gold_relation.source)
                && endpoint_matches(&item.target_id, &gold_relation.target)
        });
        let gold_display = format!(
            "{} {} {}",
            gold_relation.source, gold_relation.relation, gold_relation.target
        );
        match found {
            Some(index) => {
                taken[index] = true;
                result.tp += 1;
                result.matched.push((gold_display, items[index].display.clone()));
            }
            None => {
                result.fn_ += 1;
                result.unmatched_gold.push(gold_display);
            }
        }
    }
    for (index, item) in items.iter().enumerate() {
        if !taken[index] {
            result.fp += 1;
            result.unmatched_predicted.push(item.display.clone());
        }
    }
    result
}

/// Compare technique id sets, at the 4-digit parent level by default.
pub fn match_techniques(
    predicted: &[String],
    gold: &[String],
    options: MatchOptions,
) -> Result<CategoryMatch, EvalError> {
    let project = |ids: &[String]| -> Result<BTreeSet<String>, EvalError> {
        ids.iter()
            .map(|id| {
                let id = id.trim();
                if !technique_id_shape_ok(id) {
                    return Err(EvalError::MalformedTechniqueId(id.to_string()));
                }
                Ok(if options.strict_subtech {
                    id.to_string()
                } else {
                    id[..5].to_string()
                })
            })
            .collect()
    };
    let predicted_set = project(predicted)?;
    let gold_set = project(gold)?;

    let mut result = CategoryMatch::default();
    for id in &gold_set {
        if predicted_set.contains(id) {
            result.tp += 1;
            result.matched.push((id.clone(), id.clone()));
        } else {
            result.fn_ += 1;
            result.unmatched_gold.push(id.clone());
        }
    }
    for id in predicted_set.difference(&gold_set) {
        result.fp += 1;
        result.unmatched_predicted.push(id.clone());
    }
    Ok(result)
}

/// Score one graph against one gold annotation.
pub fn match_graph(
    graph: &AttackGraph,
    gold: &GoldAnnotation,
    options: MatchOptions,
) -> Result<MatchReport, EvalError> {
    let (entities, mapping) = match_entities(&graph.entities, &gold.entities, options);
    let relations = match_relations(
        &graph.entities,
        &graph.events,
        &graph.entity_relations,
        &gold.relations,
        &mapping,
    );
    let predicted_ids: Vec<String> = graph.technique_ids().into_iter().collect();
    let techniques = match_techniques(&predicted_ids, &gold.techniques, options)?;
    Ok(MatchReport {
        doc_id: gold.doc_id.clone(),
        entities,
        relations,
        techniques,
    })
}

// ---------------------------------------------------------------------------
// Scores

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metric {
    /// The vacuous-perfection convention: P = 1 when nothing was predicted,
    /// R = 1 when there was nothing to find, F1 = 0 when P + R = 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Metric {
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metric {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub micro: Metric,
    #[serde(rename = "macro")]
    pub macro_: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub entities: CategoryScores,
    pub relations: CategoryScores,
    pub techniques: CategoryScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Micro,
    Macro,
}

fn category_scores(counts: &[(usize, usize, usize)]) -> CategoryScores {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for &(t, f, n) in counts {
        tp += t;
        fp += f;
        fn_ += n;
    }
    let micro = Metric::from_counts(tp, fp, fn_);
    let per_doc: Vec<Metric> = counts
        .iter()
        .map(|&(t, f, n)| Metric::from_counts(t, f, n))
        .collect();
    // Sorted summation keeps macro averages exactly permutation-invariant.
    let mean = |values: Vec<f64>| -> f64 {
        let len = values.len().max(1) as f64;
        let mut values = values;
        values.sort_by(f64::total_cmp);
        values.into_iter().sum::<f64>() / len
    };
    let macro_ = Metric {
        precision: mean(per_doc.iter().map(|m| m.precision).collect()),
        recall: mean(per_doc.iter().map(|m| m.recall).collect()),
        f1: mean(per_doc.iter().map(|m| m.f1).collect()),
    };
    CategoryScores { micro, macro_ }
}

/// Micro and macro P/R/F1 per category over a corpus of match reports.
pub fn score(reports: &[MatchReport]) -> Result<Scores, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let pick = |f: fn(&MatchReport) -> &CategoryMatch| -> Vec<(usize, usize, usize)> {
        reports
            .iter()
            .map(|r| {
                let c = f(r);
                (c.tp, c.fp, c.fn_)
            })
            .collect()
    };
    Ok(Scores {
        entities: category_scores(&pick(|r| &r.entities)),
        relations: category_scores(&pick(|r| &r.relations)),
        techniques: category_scores(&pick(|r| &r.techniques)),
    })
}

// ---------------------------------------------------------------------------
// Scoreboard

/// Per-category gold/fn/fp counts, the information in one table row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
}

impl Counts {
    pub fn tp(&self) -> usize {
        self.gold.saturating_sub(self.fn_)
    }

    pub fn metric(&self) -> Metric {
        Metric::from_counts(self.tp(), self.fp, self.fn_)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub doc_id: String,
    pub entities: Counts,
    pub relations: Counts,
    pub techniques: Counts,
}

impl From<&MatchReport> for ReportCounts {
    fn from(report: &MatchReport) -> Self {
        let counts = |c: &CategoryMatch| Counts {
            gold: c.tp + c.fn_,
            fn_: c.fn_,
            fp: c.fp,
        };
        ReportCounts {
            doc_id: report.doc_id.clone(),
            entities: counts(&report.entities),
            relations: counts(&report.relations),
            techniques: counts(&report.techniques),
        }
    }
}

/// Published overall numbers to print alongside computed ones, without
/// asserting equality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOveralls {
    pub label: String,
    pub entities: Metric,
    pub relations: Metric,
    pub techniques: Metric,
}

#[derive(Debug, Clone)]
pub struct Scoreboard {
    /// Aligned text table.
    pub text: String,
    /// Machine-readable equivalent.
    pub machine: serde_json::Value,
}

fn rows_scores(rows: &[ReportCounts]) -> Scores {
    let counts = |f: fn(&ReportCounts) -> Counts| -> Vec<(usize, usize, usize)> {
        rows.iter()
            .map(|r| {
                let c = f(r);
                (c.tp(), c.fp, c.fn_)
            })
            .collect()
    };
    Scores {
        entities: category_scores(&counts(|r| r.entities)),
        relations: category_scores(&counts(|r| r.relations)),
        techniques: category_scores(&counts(|r| r.techniques)),
    }
}

/// Render per-report gold/fn/fp counts plus overall precision/recall/F1
/// rows under both aggregations, optionally alongside published reference
/// overalls.
pub fn render_scoreboard(
    rows: &[ReportCounts],
    reference: Option<&ReferenceOveralls>,
) -> Result<Scoreboard, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let scores = rows_scores(rows);

    let mut text = String::new();
    writeln!(
        text,
        "{:<24} | {:>5} {:>4} {:>4} | {:>5} {:>4} {:>4} | {:>5} {:>4} {:>4}",
        "CTI Report", "E-man", "E-fn", "E-fp", "R-man", "R-fn", "R-fp", "T-man", "T-fn", "T-fp"
    )
    .unwrap();
    let rule = "-".repeat(text.len() - 1);
    writeln!(text, "{rule}").unwrap();
    for row in rows {
        writeln!(
            text,
            "{:<24} | {:>5} {:>4} {:>4} | {:>5} {:>4} {:>4} | {:>5} {:>4} {:>4}",
            row.doc_id,
            row.entities.gold,
            row.entities.fn_,
            row.entities.fp,
            row.relations.gold,
            row.relations.fn_,
            row.relations.fp,
            row.techniques.gold,
            row.techniques.fn_,
            row.techniques.fp,
        )
        .unwrap();
    }
    writeln!(text, "{rule}").unwrap();

    type MetricPick = fn(&CategoryScores) -> Metric;
    type ValuePick = fn(Metric) -> f64;
    let metric_rows: [(&str, MetricPick); 2] = [
        ("micro", |c| c.micro),
        ("macro", |c| c.macro_),
    ];
    let value_rows: [(&str, ValuePick); 3] = [
        ("Overall Precision", |m| m.precision),
        ("Overall Recall", |m| m.recall),
        ("Overall F-1 Score", |m| m.f1),
    ];
    for (mode, pick) in metric_rows {
        for (name, value) in value_rows {
            writeln!(
                text,
                "{:<24} | {:>15.3} | {:>15.3} | {:>15.3}",
                format!("{name} ({mode})"),
                value(pick(&scores.entities)),
                value(pick(&scores.relations)),
                value(pick(&scores.techniques)),
            )
            .unwrap();
        }
    }
    if let Some(reference) = reference {
        writeln!(text, "{rule}").unwrap();
        let reference_rows: [(&str, ValuePick); 3] = [
            ("Precision", |m| m.precision),
            ("Recall", |m| m.recall),
            ("F-1 Score", |m| m.f1),
        ];
        for (name, value) in reference_rows {
            writeln!(
                text,
                "{:<24} | {:>15.3} | {:>15.3} | {:>15.3}",
                format!("{} {name}", reference.label),
                value(reference.entities),
                value(reference.relations),
                value(reference.techniques),
            )
            .unwrap();
        }
        writeln!(
            text,
            "(published overalls shown for comparison; aggregation method unspecified)"
        )
        .unwrap();
    }

    let per_report: Vec<serde_json::Value> = rows
        .iter()
        .map(|row| {
            let category = |c: Counts| {
                serde_json::json!({
                    "gold": c.gold, "fn": c.fn_, "fp": c.fp, "tp": c.tp(),
                    "precision": c.metric().precision,
                    "recall": c.metric().recall,
                    "f1": c.metric().f1,
                })
            };
            serde_json::json!({
                "doc_id": row.doc_id,
                "entities": category(row.entities),
                "relations": category(row.relations),
                "techniques": category(row.techniques),
            })
        })
        .collect();
    let machine = serde_json::json!({
        "reports": per_report,
        "overall": serde_json::to_value(scores).expect("scores serialize"),
        "reference": reference.map(|r| serde_json::to_value(r).expect("reference serializes")),
    });

    Ok(Scoreboard { text, machine })
}

// ---------------------------------------------------------------------------
// RQ3 classifier

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportClass {
    #[serde(rename = "high-tactic")]
    HighTactic,
    #[serde(rename = "low-tactic")]
    LowTactic,
    #[serde(rename = "non-tactic")]
    NonTactic,
}

impl ReportClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReportClass::HighTactic => "high-tactic",
            ReportClass::LowTactic => "low-tactic",
            ReportClass::NonTactic => "non-tactic",
        }
    }
}

pub const DEFAULT_T_LOW: usize = 3;

/// Classify by k = number of distinct non-"other" sections with at least
/// one paragraph: k = 0 non-tactic, k <= t_low low-tactic, else high-tactic.
pub fn classify_report(rewritten: &RewrittenReport, t_low: usize) -> (ReportClass, usize) {
    let k = rewritten
        .non_other_sections()
        .filter(|s| !s.paragraphs.is_empty())
        .map(|s| s.tactic.as_str())
        .collect::<HashSet<_>>()
        .len();
    let class = if k == 0 {
        ReportClass::NonTactic
    } else if k <= t_low {
        ReportClass::LowTactic
    } else {
        ReportClass::HighTactic
    };
    (class, k)
}

// ---------------------------------------------------------------------------
// Corpus statistics

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopTable {
    /// (display name, occurrence count), count-descending.
    pub top: Vec<(String, usize)>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub tactics: TopTable,
    pub techniques: TopTable,
    pub entities: TopTable,
    pub relations: TopTable,
}

pub const DEFAULT_TOP_K: usize = 5;

fn top_table(counts: HashMap<String, usize>, k: usize) -> TopTable {
    let total = counts.values().sum();
    let mut entries: Vec<(String, usize)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(k);
    TopTable {
        top: entries,
        total,
    }
}

fn display_tactic(shortname: &str) -> String {
    shortname
        .split('-')
        .map(|word| {
            let mut chars = word.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Occurrence tables over a set of graphs: tactic section occurrences,
/// technique assignment occurrences, normalized entity-name occurrences,
/// and pooled action verbs plus relation tokens.
pub fn corpus_stats(graphs: &[AttackGraph], top_k: usize) -> Result<CorpusStats, EvalError> {
    if graphs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut tactics: HashMap<String, usize> = HashMap::new();
    let mut techniques: HashMap<String, usize> = HashMap::new();
    let mut entity_names: HashMap<String, usize> = HashMap::new();
    let mut entity_display: BTreeMap<String, String> = BTreeMap::new();
    let mut relations: HashMap<String, usize> = HashMap::new();

    for graph in graphs {
        for section in &graph.outline {
            if section.tactic != crate::catalog::OTHER_LABEL {
                *tactics.entry(display_tactic(&section.tactic)).or_default() += 1;
            }
        }
        for assignment in &graph.technique_assignments {
            *techniques.entry(assignment.technique_id.clone()).or_default() += 1;
        }
        for entity in &graph.entities {
            let key = normalize_alias(&entity.name);
            entity_display
                .entry(key.clone())
                .or_insert_with(|| entity.name.clone());
            *entity_names.entry(key).or_default() += 1;
        }
        for event in &graph.events {
            *relations.entry(event.action.clone()).or_default() += 1;
        }
        for relation in &graph.entity_relations {
            *relations
                .entry(relation.relation.token().to_string())
                .or_default() += 1;
        }
    }

    let entities = entity_names
        .into_iter()
        .map(|(key, count)| (entity_display.remove(&key).unwrap_or(key), count))
        .collect();

    Ok(CorpusStats {
        tactics: top_table(tactics, top_k),
        techniques: top_table(techniques, top_k),
        entities: top_table(entities, top_k),
        relations: top_table(relations, top_k),
    })
}

/// Aligned text rendering in the four-column occurrence-table shape.
pub fn render_stats(stats: &CorpusStats) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<24} {:>6} | {:<12} {:>6} | {:<20} {:>6} | {:<20} {:>6}",
        "Tactics", "Occur", "Techniques", "Occur", "Entities", "Occur", "Relations", "Occur"
    )
    .unwrap();
    writeln!(out, "{}", "-".repeat(out.len() - 1)).unwrap();
    let rows = stats
        .tactics
        .top
        .len()
        .max(stats.techniques.top.len())
        .max(stats.entities.top.len())
        .max(stats.relations.top.len());
    let cell = |table: &TopTable, index: usize| -> (String, String) {
        table
            .top
            .get(index)
            .map(|(name, count)| (name.clone(), count.to_string()))
            .unwrap_or_default()
    };
    for index in 0..rows {
        let (tactic, tactic_count) = cell(&stats.tactics, index);
        let (technique, technique_count) = cell(&stats.techniques, index);
        let (entity, entity_count) = cell(&stats.entities, index);
        let (relation, relation_count) = cell(&stats.relations, index);
        writeln!(
            out,
            "{tactic:<24} {tactic_count:>6} | {technique:<12} {technique_count:>6} | {entity:<20} {entity_count:>6} | {relation:<20} {relation_count:>6}",
        )
        .unwrap();
    }
    writeln!(
        out,
        "{:<24} {:>6} | {:<12} {:>6} | {:<20} {:>6} | {:<20} {:>6}",
        "All",
        stats.tactics.total,
        "All",
        stats.techniques.total,
        "All",
        stats.entities.total,
        "All",
        stats.relations.total,
    )
    .unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_support::graph_fixture;
    use crate::stages::extractor::EntityType;
    use crate::stages::rewriter::{RewrittenParagraph, TacticSection};

    fn entity(id: &str, name: &str, aliases: &[&str], entity_type: EntityType) -> Entity {
        let mut all = vec![name.to_string()];
        all.extend(aliases.iter().map(|s| s.to_string()));
        Entity {
            entity_id: id.into(),
            name: name.into(),
            entity_type,
            aliases: all,
            first_serial: 1,
        }
    }

    fn gold_entity(name: &str, aliases: &[&str]) -> GoldEntity {
        GoldEntity {
            name: name.into(),
            entity_type: None,
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn article_stripping_matches_the_attacker() {
        let predicted = vec![entity("e1", "the attacker", &[], EntityType::Attacker)];
        let gold = vec![gold_entity("Attacker", &[])];
        let (result, _) = match_entities(&predicted, &gold, MatchOptions::default());
        assert_eq!((result.tp, result.fp, result.fn_), (1, 0, 0));
    }

    #[test]
    fn empty_predictions_give_full_false_negatives() {
        let gold: Vec<GoldEntity> = (0..13)
            .map(|i| gold_entity(&format!("entity {i}"), &[]))
            .collect();
        let (result, _) = match_entities(&[], &gold, MatchOptions::default());
        assert_eq!(result.fn_, 13);
        assert_eq!(Metric::from_counts(result.tp, result.fp, result.fn_).recall, 0.0);
    }

    #[test]
    fn bronze_arithmetic_from_counts() {
        // gold 13, fn 2, fp 9 => tp 11, P=0.550, R=0.846.
        let counts = Counts {
            gold: 13,
            fn_: 2,
            fp: 9,
        };
        let metric = counts.metric();
        assert_eq!(counts.tp(), 11);
        assert!((metric.precision - 0.550).abs() < 5e-4);
        assert!((metric.recall - 0.846).abs() < 5e-4);
        // techniques: gold 4, fn 3, fp 4 => tp 1, P=0.200, R=0.250.
        let techniques = Counts {
            gold: 4,
            fn_: 3,
            fp: 4,
        };
        assert!((techniques.metric().precision - 0.200).abs() < 1e-9);
        assert!((techniques.metric().recall - 0.250).abs() < 1e-9);
    }

    #[test]
    fn greedy_matching_never_double_counts() {
        let predicted = vec![
            entity("e1", "attacker", &[], EntityType::Attacker),
            entity("e2", "Attacker", &[], EntityType::Attacker),
        ];
        let gold = vec![gold_entity("the attacker", &[])];
        let (result, _) = match_entities(&predicted, &gold, MatchOptions::default());
        assert_eq!((result.tp, result.fp, result.fn_), (1, 1, 0));
        assert!(result.counts_consistent());
    }

    #[test]
    fn strict_types_require_type_agreement() {
        let predicted = vec![entity("e1", "Mimikatz", &[], EntityType::Malware)];
        let gold = vec![GoldEntity {
            name: "Mimikatz".into(),
            entity_type: Some("tool".into()),
            aliases: Vec::new(),
        }];
        let strict = MatchOptions {
            strict_types: true,
            ..Default::default()
        };
        let (result, _) = match_entities(&predicted, &gold, strict);
        assert_eq!((result.tp, result.fp, result.fn_), (0, 1, 1));
        let (result, _) = match_entities(&predicted, &gold, MatchOptions::default());
        assert_eq!(result.tp, 1);
    }

    fn relation_setup() -> (Vec<Entity>, Vec<crate::stages::extractor::AtomicEvent>, EntityMapping, Vec<GoldRelation>) {
        let entities = vec![
            entity("e1", "attacker", &[], EntityType::Attacker),
            entity("e2", "phishing email", &["the email"], EntityType::Email),
        ];
        let events = vec![crate::stages::extractor::AtomicEvent {
            event_id: "ev1".into(),
            subject: "e1".into(),
            action: "send".into(),
            object: "e2".into(),
            status: crate::stages::extractor::EventStatus::Unknown,
            serial: 1,
            ordinal: 1,
        }];
        let gold = vec![GoldRelation {
            source: "Attacker".into(),
            relation: "Send".into(),
            target: "the email".into(),
        }];
        let gold_entities = vec![
            gold_entity("Attacker", &[]),
            gold_entity("phishing email", &["the email"]),
        ];
        let (_, mapping) = match_entities(&entities, &gold_entities, MatchOptions::default());
        (entities, events, mapping, gold)
    }

    #[test]
    fn identical_relation_sets_score_perfectly() {
        let (entities, events, mapping, gold) = relation_setup();
        let result = match_relations(&entities, &events, &[], &gold, &mapping);
        assert_eq!((result.tp, result.fp, result.fn_), (1, 0, 0));
        let metric = Metric::from_counts(result.tp, result.fp, result.fn_);
        assert_eq!((metric.precision, metric.recall, metric.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn verb_mismatch_is_no_match() {
        let (entities, events, mapping, mut gold) = relation_setup();
        gold[0].relation = "execute".into();
        let result = match_relations(&entities, &events, &[], &gold, &mapping);
        assert_eq!((result.tp, result.fp, result.fn_), (0, 1, 1));
    }

    #[test]
    fn hyphen_space_and_inflection_insensitive_tokens_match() {
        assert_eq!(
            normalize_relation_token("Communicate With"),
            normalize_relation_token("communicates-with")
        );
        assert_eq!(normalize_relation_token("Used"), "use");
    }

    #[test]
    fn parent_level_technique_matching_is_the_default() {
        let predicted = vec!["T1566.001".to_string()];
        let gold = vec!["T1566".to_string()];
        let result = match_techniques(&predicted, &gold, MatchOptions::default()).unwrap();
        assert_eq!((result.tp, result.fp, result.fn_), (1, 0, 0));
        let strict = MatchOptions {
            strict_subtech: true,
            ..Default::default()
        };
        let result = match_techniques(&predicted, &gold, strict).unwrap();
        assert_eq!((result.tp, result.fp, result.fn_), (0, 1, 1));
    }

    #[test]
    fn parent_level_matching_is_idempotent() {
        let predicted = vec!["T1566".to_string()];
        let gold = vec!["T1566".to_string()];
        let once = match_techniques(&predicted, &gold, MatchOptions::default()).unwrap();
        let twice = match_techniques(
            &once.matched.iter().map(|(g, _)| g.clone()).collect::<Vec<_>>(),
            &gold,
            MatchOptions::default(),
        )
        .unwrap();
        assert_eq!(once.tp, twice.tp);
    }

    #[test]
    fn empty_vs_empty_scores_one() {
        let result = match_techniques(&[], &[], MatchOptions::default()).unwrap();
        let metric = Metric::from_counts(result.tp, result.fp, result.fn_);
        assert_eq!((metric.precision, metric.recall, metric.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn malformed_technique_id_is_an_error() {
        assert!(matches!(
            match_techniques(&["TX99".to_string()], &[], MatchOptions::default()),
            Err(EvalError::MalformedTechniqueId(_))
        ));
    }

    fn report(doc_id: &str, tp: usize, fp: usize, fn_: usize) -> MatchReport {
        let category = CategoryMatch {
            tp,
            fp,
            fn_,
            matched: vec![(String::new(), String::new()); tp],
            unmatched_gold: vec![String::new(); fn_],
            unmatched_predicted: vec![String::new(); fp],
        };
        MatchReport {
            doc_id: doc_id.into(),
            entities: category.clone(),
            relations: category.clone(),
            techniques: category,
        }
    }

    #[test]
    fn single_document_micro_equals_macro() {
        let scores = score(&[report("only", 3, 1, 2)]).unwrap();
        assert_eq!(scores.entities.micro, scores.entities.macro_);
    }

    #[test]
    fn spec_example_micro_and_macro() {
        // doc1 (tp,fp,fn) = (1,1,0); doc2 = (0,0,1).
        let scores = score(&[report("doc1", 1, 1, 0), report("doc2", 0, 0, 1)]).unwrap();
        let micro = scores.entities.micro;
        assert!((micro.precision - 0.5).abs() < 1e-12);
        assert!((micro.recall - 0.5).abs() < 1e-12);
        let macro_ = scores.entities.macro_;
        // doc1: P=0.5, R=1, F1=2/3; doc2: P=1 (vacuous), R=0, F1=0.
        assert!((macro_.precision - 0.75).abs() < 1e-12);
        assert!((macro_.recall - 0.5).abs() < 1e-12);
        assert!((macro_.f1 - (2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn all_perfect_corpus_scores_one_in_both_modes() {
        let scores = score(&[report("a", 4, 0, 0), report("b", 2, 0, 0)]).unwrap();
        for category in [scores.entities, scores.relations, scores.techniques] {
            for metric in [category.micro, category.macro_] {
                assert_eq!((metric.precision, metric.recall, metric.f1), (1.0, 1.0, 1.0));
            }
        }
    }

    #[test]
    fn score_is_permutation_invariant() {
        let a = vec![report("a", 1, 2, 3), report("b", 4, 0, 1), report("c", 0, 0, 0)];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(score(&a).unwrap(), score(&b).unwrap());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(score(&[]), Err(EvalError::EmptyInput)));
        assert!(matches!(
            render_scoreboard(&[], None),
            Err(EvalError::EmptyInput)
        ));
    }

    #[test]
    fn scoreboard_renders_rows_and_overalls() {
        let rows = vec![ReportCounts {
            doc_id: "BRONZE".into(),
            entities: Counts {
                gold: 13,
                fn_: 2,
                fp: 9,
            },
            relations: Counts {
                gold: 8,
                fn_: 2,
                fp: 9,
            },
            techniques: Counts {
                gold: 4,
                fn_: 3,
                fp: 4,
            },
        }];
        let board = render_scoreboard(&rows, None).unwrap();
        assert!(board.text.contains("BRONZE"));
        assert!(board.text.contains("Overall Precision (micro)"));
        assert!(board.text.contains("Overall F-1 Score (macro)"));
        let precision = board.machine["reports"][0]["entities"]["precision"]
            .as_f64()
            .unwrap();
        assert!((precision - 0.55).abs() < 1e-12);
    }

    #[test]
    fn match_graph_scores_the_fixture() {
        let graph = graph_fixture();
        let gold = GoldAnnotation {
            doc_id: "fixture".into(),
            entities: vec![
                gold_entity("attacker", &[]),
                gold_entity("nation.exe", &[]),
                gold_entity("C2 server", &[]),
            ],
            relations: vec![GoldRelation {
                source: "attacker".into(),
                relation: "delivers".into(),
                target: "nation.exe".into(),
            }],
            techniques: vec!["T1195".into(), "T1071".into()],
        };
        let report = match_graph(&graph, &gold, MatchOptions::default()).unwrap();
        assert_eq!((report.entities.tp, report.entities.fp, report.entities.fn_), (2, 1, 1));
        assert_eq!(report.relations.tp, 1);
        assert_eq!((report.techniques.tp, report.techniques.fp, report.techniques.fn_), (1, 1, 1));
        for category in [&report.entities, &report.relations, &report.techniques] {
            assert!(category.counts_consistent());
        }
    }

    fn rewritten_with_k(k: usize) -> RewrittenReport {
        let tactics = [
            "reconnaissance",
            "initial-access",
            "execution",
            "persistence",
            "privilege-escalation",
            "defense-evasion",
            "credential-access",
            "discovery",
            "collection",
        ];
        let mut sections: Vec<TacticSection> = tactics[..k]
            .iter()
            .enumerate()
            .map(|(index, tactic)| TacticSection {
                tactic: tactic.to_string(),
                paragraphs: vec![RewrittenParagraph {
                    serial: index as u32 + 1,
                    text: format!("step {index}"),
                }],
            })
            .collect();
        sections.push(TacticSection {
            tactic: "other".into(),
            paragraphs: vec![RewrittenParagraph {
                serial: k as u32 + 1,
                text: "background".into(),
            }],
        });
        RewrittenReport {
            doc_id: "classify".into(),
            model_info: "m".into(),
            sections,
        }
    }

    #[test]
    fn classifier_thresholds() {
        assert_eq!(
            classify_report(&rewritten_with_k(0), DEFAULT_T_LOW),
            (ReportClass::NonTactic, 0)
        );
        assert_eq!(
            classify_report(&rewritten_with_k(2), DEFAULT_T_LOW),
            (ReportClass::LowTactic, 2)
        );
        assert_eq!(
            classify_report(&rewritten_with_k(9), DEFAULT_T_LOW),
            (ReportClass::HighTactic, 9)
        );
        // Configurable threshold moves the boundary.
        assert_eq!(
            classify_report(&rewritten_with_k(2), 1),
            (ReportClass::HighTactic, 2)
        );
    }

    #[test]
    fn corpus_stats_count_by_hand() {
        let graph = graph_fixture();
        let stats = corpus_stats(&[graph.clone(), graph], DEFAULT_TOP_K).unwrap();
        // Two graphs, two non-"other" sections each.
        assert_eq!(stats.tactics.total, 4);
        assert_eq!(stats.tactics.top[0].1, 2);
        // T1195 and T1059 twice each.
        assert_eq!(
            stats.techniques.top,
            vec![("T1059".to_string(), 2), ("T1195".to_string(), 2)]
        );
        // Relations pool action verbs and relation tokens.
        let relation_names: Vec<&str> =
            stats.relations.top.iter().map(|(n, _)| n.as_str()).collect();
        assert!(relation_names.contains(&"located-at"));
        assert!(relation_names.contains(&"compromise"));
        assert_eq!(stats.relations.total, 8);
    }

    #[test]
    fn stats_corpus_engineered_so_initial_access_leads() {
        let section = |tactic: &str, serials: std::ops::RangeInclusive<u32>| {
            crate::graph::OutlineSection {
                tactic: tactic.into(),
                serials: serials.collect(),
            }
        };
        let mut a = crate::graph::empty_graph("a", "m", "v");
        a.outline = vec![section("initial-access", 1..=1), section("execution", 2..=2)];
        let mut b = crate::graph::empty_graph("b", "m", "v");
        b.outline = vec![section("initial-access", 1..=1)];
        let stats = corpus_stats(&[a, b], DEFAULT_TOP_K).unwrap();
        assert_eq!(stats.tactics.top[0], ("Initial Access".to_string(), 2));
        let text = render_stats(&stats);
        assert!(text.lines().nth(2).unwrap().starts_with("Initial Access"));
    }

    #[test]
    fn empty_graph_contributes_zero_totals() {
        let stats = corpus_stats(
            &[crate::graph::empty_graph("d", "m", "v")],
            DEFAULT_TOP_K,
        )
        .unwrap();
        assert_eq!(stats.tactics.total, 0);
        assert_eq!(stats.techniques.total, 0);
        assert_eq!(stats.entities.total, 0);
        assert_eq!(stats.relations.total, 0);
    }

    #[test]
    fn stats_render_has_table_shape() {
        let stats = corpus_stats(&[graph_fixture()], DEFAULT_TOP_K).unwrap();
        let text = render_stats(&stats);
        assert!(text.contains("Tactics"));
        assert!(text.contains("Initial Access"));
        assert!(text.lines().last().unwrap().starts_with("All"));
    }
}
