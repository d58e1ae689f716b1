//! DOT and self-contained HTML renderers for attack graphs.
//!
//! Both renderers consume the same [`RenderModel`], so node and edge counts
//! always agree. Node semantics: events are triangles (green for success,
//! red inverted for failure, gray for unknown), subject entities render
//! lighter blue, object entities darker blue, technique labels annotate
//! event nodes, temporal edges are bold, entity-entity relations dashed.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::graph::AttackGraph;
use crate::stages::extractor::EventStatus;
use crate::stages::summarizer::StateSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Event,
    SubjectEntity,
    ObjectEntity,
}

#[derive(Debug, Clone)]
pub struct RenderNode {
    pub id: String,
    pub label: String,
    pub sublabel: String,
    pub role: NodeRole,
    pub status: Option<EventStatus>,
    pub techniques: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRole {
    SubjectToEvent,
    EventToObject,
    Temporal,
    Relation,
}

#[derive(Debug, Clone)]
pub struct RenderEdge {
    pub from: String,
    pub to: String,
    pub role: EdgeRole,
    pub label: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RenderModel {
    pub doc_id: String,
    pub nodes: Vec<RenderNode>,
    pub edges: Vec<RenderEdge>,
    pub summaries: Vec<StateSummary>,
}

/// Project a validated graph onto drawable nodes and edges.
pub fn build_model(graph: &AttackGraph) -> RenderModel {
    let mut subjects: BTreeSet<&str> = BTreeSet::new();
    let mut objects: BTreeSet<&str> = BTreeSet::new();
    for event in &graph.events {
        subjects.insert(&event.subject);
        objects.insert(&event.object);
    }

    let mut nodes = Vec::new();
    for entity in &graph.entities {
        // Acting as a subject anywhere wins the lighter shade; entities in
        // relations only also render as subjects.
        let role = if subjects.contains(entity.entity_id.as_str()) {
            NodeRole::SubjectEntity
        } else if objects.contains(entity.entity_id.as_str()) {
            NodeRole::ObjectEntity
        } else {
            NodeRole::SubjectEntity
        };
        nodes.push(RenderNode {
            id: entity.entity_id.clone(),
            label: entity.name.clone(),
            sublabel: format!("({})", entity.entity_type),
            role,
            status: None,
            techniques: Vec::new(),
        });
    }
    for event in &graph.events {
        let techniques: Vec<String> = graph
            .event_techniques
            .get(&event.event_id)
            .map(|set| set.iter().cloned().collect())
            .unwrap_or_default();
        nodes.push(RenderNode {
            id: event.event_id.clone(),
            label: event.action.clone(),
            sublabel: format!("#{}", event.serial),
            role: NodeRole::Event,
            status: Some(event.status),
            techniques,
        });
    }

    let mut edges = Vec::new();
    for event in &graph.events {
        edges.push(RenderEdge {
            from: event.subject.clone(),
            to: event.event_id.clone(),
            role: EdgeRole::SubjectToEvent,
            label: None,
        });
        edges.push(RenderEdge {
            from: event.event_id.clone(),
            to: event.object.clone(),
            role: EdgeRole::EventToObject,
            label: None,
        });
    }
    for edge in &graph.temporal_edges {
        edges.push(RenderEdge {
            from: edge.from.clone(),
            to: edge.to.clone(),
            role: EdgeRole::Temporal,
            label: None,
        });
    }
    for relation in &graph.entity_relations {
        edges.push(RenderEdge {
            from: relation.source.clone(),
            to: relation.target.clone(),
            role: EdgeRole::Relation,
            label: Some(relation.relation.token().to_string()),
        });
    }

    RenderModel {
        doc_id: graph.doc_id.clone(),
        nodes,
        edges,
        summaries: graph.summaries.clone(),
    }
}

fn dot_escape(text: &str) -> String {
    text.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Directed-graph text for Graphviz.
pub fn to_dot(graph: &AttackGraph) -> String {
    let model = build_model(graph);
    let mut out = String::new();
    writeln!(out, "digraph \"{}\" {{", dot_escape(&model.doc_id)).unwrap();
    writeln!(out, "  rankdir=LR;").unwrap();
    writeln!(out, "  node [fontname=\"Helvetica\"];").unwrap();

    for node in &model.nodes {
        let mut label = node.label.clone();
        if !node.sublabel.is_empty() {
            label.push('\n');
            label.push_str(&node.sublabel);
        }
        let attrs = match node.role {
            NodeRole::SubjectEntity => {
                "shape=box, style=\"rounded,filled\", fillcolor=\"#bee3f8\"".to_string()
            }
            NodeRole::ObjectEntity => {
                "shape=box, style=\"rounded,filled\", fillcolor=\"#2b6cb0\", fontcolor=\"white\""
                    .to_string()
            }
            NodeRole::Event => {
                let (shape, color) = match node.status {
                    Some(EventStatus::Success) => ("triangle", "#48bb78"),
                    Some(EventStatus::Failure) => ("invtriangle", "#e53e3e"),
                    _ => ("triangle", "#a0aec0"),
                };
                let mut attrs = format!("shape={shape}, style=filled, fillcolor=\"{color}\"");
                if !node.techniques.is_empty() {
                    label.push('\n');
                    label.push_str(&node.techniques.join(" "));
                    // Red border with yellow-tinted label band marks an
                    // annotated event.
                    attrs.push_str(", color=\"#c53030\", penwidth=2.0");
                }
                attrs
            }
        };
        writeln!(
            out,
            "  \"{}\" [label=\"{}\", {}];",
            dot_escape(&node.id),
            dot_escape(&label).replace('\n', "\\n"),
            attrs
        )
        .unwrap();
    }

    for edge in &model.edges {
        let attrs = match edge.role {
            EdgeRole::SubjectToEvent => "color=\"#4a5568\"".to_string(),
            EdgeRole::EventToObject => "color=\"#4a5568\"".to_string(),
            EdgeRole::Temporal => "style=bold, color=\"#1a202c\", weight=3".to_string(),
            EdgeRole::Relation => {
                let label = edge.label.clone().unwrap_or_default();
                format!("style=dashed, color=\"#805ad5\", label=\"{}\"", dot_escape(&label))
            }
        };
        writeln!(
            out,
            "  \"{}\" -> \"{}\" [{}];",
            dot_escape(&edge.from),
            dot_escape(&edge.to),
            attrs
        )
        .unwrap();
    }

    writeln!(out, "}}").unwrap();
    out
}

fn html_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Layout {
    positions: HashMap<String, (i64, i64)>,
    width: i64,
    height: i64,
}

/// Static layout: events on a center timeline, subjects above, objects
/// below; entity x is the mean of its connected events.
fn layout(model: &RenderModel) -> Layout {
    const X_STEP: i64 = 190;
    const X0: i64 = 140;
    const Y_SUBJECT: i64 = 110;
    const Y_EVENT: i64 = 300;
    const Y_OBJECT: i64 = 470;

    let mut positions: HashMap<String, (i64, i64)> = HashMap::new();
    let events: Vec<&RenderNode> = model
        .nodes
        .iter()
        .filter(|n| n.role == NodeRole::Event)
        .collect();
    for (index, event) in events.iter().enumerate() {
        positions.insert(event.id.clone(), (X0 + index as i64 * X_STEP, Y_EVENT));
    }

    let mut linked_x: HashMap<&str, Vec<i64>> = HashMap::new();
    for edge in &model.edges {
        match edge.role {
            EdgeRole::SubjectToEvent => {
                if let Some(&(x, _)) = positions.get(&edge.to) {
                    linked_x.entry(edge.from.as_str()).or_default().push(x);
                }
            }
            EdgeRole::EventToObject => {
                if let Some(&(x, _)) = positions.get(&edge.from) {
                    linked_x.entry(edge.to.as_str()).or_default().push(x);
                }
            }
            _ => {}
        }
    }

    let mut row_cursor: HashMap<i64, i64> = HashMap::new();
    for node in &model.nodes {
        if node.role == NodeRole::Event {
            continue;
        }
        let y = match node.role {
            NodeRole::SubjectEntity => Y_SUBJECT,
            NodeRole::ObjectEntity => Y_OBJECT,
            NodeRole::Event => unreachable!(),
        };
        let wanted = linked_x
            .get(node.id.as_str())
            .map(|xs| xs.iter().sum::<i64>() / xs.len() as i64)
            .unwrap_or(X0);
        let cursor = row_cursor.entry(y).or_insert(X0 - X_STEP);
        let x = wanted.max(*cursor + 170);
        *cursor = x;
        positions.insert(node.id.clone(), (x, y));
    }

    let width = positions
        .values()
        .map(|&(x, _)| x)
        .max()
        .unwrap_or(X0)
        + 160;
    Layout {
        positions,
        width,
        height: Y_OBJECT + 90,
    }
}

const HTML_STYLE: &str = r#"
  body { margin: 0; font-family: Helvetica, Arial, sans-serif; background: #f7fafc; color: #1a202c; display: flex; }
  main { flex: 1 1 auto; overflow: auto; padding: 16px; }
  aside.panel { flex: 0 0 300px; border-left: 1px solid #cbd5e0; background: #fff; padding: 16px; overflow: auto; height: 100vh; box-sizing: border-box; }
  h1 { font-size: 18px; }
  h2 { font-size: 14px; text-transform: capitalize; border-bottom: 1px solid #e2e8f0; padding-bottom: 4px; }
  .panel dt { font-weight: bold; font-size: 12px; margin-top: 6px; }
  .panel dd { margin: 2px 0 2px 14px; font-size: 12px; }
  .panel .empty { color: #a0aec0; font-style: italic; }
  svg { background: #fff; border: 1px solid #cbd5e0; }
  .entity rect { stroke: #2c5282; rx: 8; }
  .entity.subject rect { fill: #bee3f8; }
  .entity.object rect { fill: #2b6cb0; }
  .entity.subject text { fill: #1a202c; }
  .entity.object text { fill: #ffffff; }
  .event polygon { stroke: #2d3748; }
  .event.success polygon { fill: #48bb78; }
  .event.failure polygon { fill: #e53e3e; }
  .event.unknown polygon { fill: #a0aec0; }
  .event.annotated polygon { stroke: #c53030; stroke-width: 2.5; }
  .event text.action { fill: #1a202c; font-size: 12px; }
  .tech-label { fill: #c53030; font-size: 11px; font-weight: bold; }
  .tech-label-bg { fill: #faf089; stroke: #c53030; stroke-width: 0.5; }
  .edge { stroke: #4a5568; stroke-width: 1.2; fill: none; }
  .edge.temporal { stroke: #1a202c; stroke-width: 2.6; }
  .edge.relation { stroke: #805ad5; stroke-dasharray: 6 4; }
  .edge-label { fill: #805ad5; font-size: 11px; }
  .legend text { font-size: 11px; fill: #4a5568; }
"#;

/// One self-contained HTML page: inline styles, static SVG, no external
/// references and no scripts.
pub fn to_html(graph: &AttackGraph) -> Vec<u8> {
    let model = build_model(graph);
    let layout = layout(&model);
    let mut svg = String::new();

    // Edges under nodes.
    for (index, edge) in model.edges.iter().enumerate() {
        let Some(&(x1, y1)) = layout.positions.get(&edge.from) else {
            continue;
        };
        let Some(&(x2, y2)) = layout.positions.get(&edge.to) else {
            continue;
        };
        let class = match edge.role {
            EdgeRole::SubjectToEvent => "edge subject-event",
            EdgeRole::EventToObject => "edge event-object",
            EdgeRole::Temporal => "edge temporal",
            EdgeRole::Relation => "edge relation",
        };
        writeln!(
            svg,
            "    <line class=\"{class}\" data-edge=\"{index}\" x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\" />"
        )
        .unwrap();
        if let Some(label) = &edge.label {
            writeln!(
                svg,
                "    <text class=\"edge-label\" x=\"{}\" y=\"{}\">{}</text>",
                (x1 + x2) / 2,
                (y1 + y2) / 2 - 6,
                html_escape(label)
            )
            .unwrap();
        }
    }

    for node in &model.nodes {
        let &(x, y) = layout.positions.get(&node.id).expect("every node is laid out");
        match node.role {
            NodeRole::SubjectEntity | NodeRole::ObjectEntity => {
                let class = if node.role == NodeRole::SubjectEntity {
                    "entity subject"
                } else {
                    "entity object"
                };
                writeln!(svg, "    <g class=\"{class}\" data-node=\"{}\">", html_escape(&node.id))
                    .unwrap();
                writeln!(
                    svg,
                    "      <rect x=\"{}\" y=\"{}\" width=\"150\" height=\"46\" rx=\"8\" />",
                    x - 75,
                    y - 23
                )
                .unwrap();
                writeln!(
                    svg,
                    "      <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                    y - 2,
                    html_escape(&node.label)
                )
                .unwrap();
                writeln!(
                    svg,
                    "      <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
                    y + 14,
                    html_escape(&node.sublabel)
                )
                .unwrap();
                writeln!(svg, "    </g>").unwrap();
            }
            NodeRole::Event => {
                let status_class = match node.status {
                    Some(EventStatus::Success) => "success",
                    Some(EventStatus::Failure) => "failure",
                    _ => "unknown",
                };
                let annotated = if node.techniques.is_empty() {
                    ""
                } else {
                    " annotated"
                };
                writeln!(
                    svg,
                    "    <g class=\"event {status_class}{annotated}\" data-node=\"{}\">",
                    html_escape(&node.id)
                )
                .unwrap();
                // Success points up, failure points down (inverted), unknown
                // points up in gray.
                let points = if node.status == Some(EventStatus::Failure) {
                    format!("{},{} {},{} {},{}", x - 26, y - 22, x + 26, y - 22, x, y + 24)
                } else {
                    format!("{},{} {},{} {},{}", x, y - 24, x + 26, y + 22, x - 26, y + 22)
                };
                writeln!(svg, "      <polygon points=\"{points}\" />").unwrap();
                writeln!(
                    svg,
                    "      <text class=\"action\" x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                    y + 42,
                    html_escape(&node.label)
                )
                .unwrap();
                if !node.techniques.is_empty() {
                    let label = node.techniques.join(" ");
                    let width = 14 + 8 * label.len() as i64;
                    writeln!(
                        svg,
                        "      <rect class=\"tech-label-bg\" x=\"{}\" y=\"{}\" width=\"{width}\" height=\"18\" rx=\"4\" />",
                        x - width / 2,
                        y - 52
                    )
                    .unwrap();
                    writeln!(
                        svg,
                        "      <text class=\"tech-label\" x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                        y - 39,
                        html_escape(&label)
                    )
                    .unwrap();
                }
                writeln!(svg, "    </g>").unwrap();
            }
        }
    }

    let mut panel = String::new();
    if model.summaries.is_empty() {
        panel.push_str("    <p class=\"empty\">No state summaries.</p>\n");
    }
    for summary in &model.summaries {
        writeln!(panel, "    <h2>{}</h2>", html_escape(&summary.tactic)).unwrap();
        panel.push_str("    <dl>\n");
        for (field, items) in [
            ("permissions", &summary.permissions),
            ("files", &summary.files),
            ("information", &summary.information),
            ("tools", &summary.tools),
        ] {
            writeln!(panel, "      <dt>{field}</dt>").unwrap();
            if items.is_empty() {
                panel.push_str("      <dd class=\"empty\">none</dd>\n");
            }
            for item in items {
                writeln!(panel, "      <dd>{}</dd>", html_escape(item)).unwrap();
            }
        }
        panel.push_str("    </dl>\n");
    }

    let html = format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\" />\n<title>{title}</title>\n<style>{style}</style>\n</head>\n<body>\n<main>\n  <h1>{title}</h1>\n  <svg width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" xmlns=\"http://www.w3.org/2000/svg\" role=\"img\">\n{svg}  </svg>\n</main>\n<aside class=\"panel\">\n  <h1>State summaries</h1>\n{panel}</aside>\n</body>\n</html>\n",
        title = html_escape(&model.doc_id),
        style = HTML_STYLE,
        width = layout.width,
        height = layout.height,
        svg = svg,
        panel = panel,
    );
    html.into_bytes()
}

/// Node and edge counts parsed back out of rendered DOT text.
pub fn dot_counts(dot: &str) -> (usize, usize) {
    let mut nodes = 0;
    let mut edges = 0;
    for line in dot.lines() {
        let line = line.trim();
        if line.contains(" -> ") {
            edges += 1;
        } else if line.starts_with('"') && line.contains('[') {
            nodes += 1;
        }
    }
    (nodes, edges)
}

/// Node and edge counts parsed back out of rendered HTML bytes.
pub fn html_counts(html: &[u8]) -> (usize, usize) {
    let text = String::from_utf8_lossy(html);
    let nodes = text.matches("data-node=").count();
    let edges = text.matches("data-edge=").count();
    (nodes, edges)
}
