//! Run the full four-stage pipeline over the sample reports in replay
//! mode: deterministic, offline, served entirely from recorded fixtures.
//!
//! ```bash
//! cargo run --example run_replay_pipeline
//! ```

use std::path::PathBuf;

use attackg_plus::config::RunConfig;
use attackg_plus::gateway::BackendMode;
use attackg_plus::graph;
use attackg_plus::pipeline::{self, StagePaths};

fn main() {
    let manifest_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out_dir = std::env::temp_dir().join(format!("attackg-replay-{}", std::process::id()));

    let config = RunConfig {
        mode: BackendMode::Replay,
        fixture_dir: Some(manifest_dir.join("samples/fixtures")),
        attack_bundle: manifest_dir.join("data/enterprise-attack.json"),
        out_dir: out_dir.clone(),
        ..Default::default()
    };

    let docs: Vec<PathBuf> = std::fs::read_dir(manifest_dir.join("samples/reports"))
        .expect("sample reports present")
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "txt").unwrap_or(false))
        .collect();

    let manifest = pipeline::run(&docs, &config).expect("replay run succeeds");

    let paths = StagePaths::new(&out_dir);
    println!("{:<16} {:<7} {:>7} {:>7} {:>6} {:>11}", "document", "status", "events", "entities", "edges", "techniques");
    for record in &manifest.docs {
        if record.status != "ok" {
            println!("{:<16} failed at {:?}", record.doc_id, record.failed_stage);
            continue;
        }
        let graph = graph::read_canonical(&paths.graph(&record.doc_id)).expect("graph loads");
        println!(
            "{:<16} {:<7} {:>7} {:>7} {:>6} {:>11}",
            graph.doc_id,
            record.status,
            graph.events.len(),
            graph.entities.len(),
            graph.temporal_edges.len(),
            graph.technique_ids().len(),
        );
    }
    println!("\nstage files in {}", out_dir.display());
}
