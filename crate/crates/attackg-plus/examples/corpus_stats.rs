//! Corpus-level views over a set of extracted graphs: top-k occurrence
//! tables and the tactic-density report classifier.
//!
//! ```bash
//! cargo run --example corpus_stats
//! ```

use std::path::PathBuf;

use attackg_plus::config::RunConfig;
use attackg_plus::eval;
use attackg_plus::gateway::BackendMode;
use attackg_plus::graph;
use attackg_plus::pipeline::{self, StagePaths};
use attackg_plus::stages::rewriter::RewrittenReport;

fn main() {
    let manifest_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out_dir = std::env::temp_dir().join(format!("attackg-stats-{}", std::process::id()));

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
    assert!(!manifest.any_failed());

    let paths = StagePaths::new(&out_dir);
    let graphs: Vec<graph::AttackGraph> = manifest
        .docs
        .iter()
        .map(|record| graph::read_canonical(&paths.graph(&record.doc_id)).expect("graph loads"))
        .collect();

    let stats = eval::corpus_stats(&graphs, eval::DEFAULT_TOP_K).expect("stats compute");
    print!("{}", eval::render_stats(&stats));

    println!("\ntactic-density classes (t_low = {}):", eval::DEFAULT_T_LOW);
    for record in &manifest.docs {
        let rewritten: RewrittenReport =
            pipeline::read_json(&paths.rewritten(&record.doc_id)).expect("rewritten loads");
        let (class, k) = eval::classify_report(&rewritten, eval::DEFAULT_T_LOW);
        println!("  {:<16} {} (k={k})", record.doc_id, class.as_str());
    }

    let _ = std::fs::remove_dir_all(&out_dir);
}
