//! Score pipeline outputs against the shipped gold annotations and print
//! the per-report scoreboard with micro and macro overalls.
//!
//! ```bash
//! cargo run --example score_predictions
//! ```

use std::path::PathBuf;

use attackg_plus::config::RunConfig;
use attackg_plus::eval::{self, MatchOptions};
use attackg_plus::gateway::BackendMode;
use attackg_plus::graph;
use attackg_plus::pipeline::{self, StagePaths};

fn main() {
    let manifest_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out_dir = std::env::temp_dir().join(format!("attackg-score-{}", std::process::id()));

    let config = RunConfig {
        mode: BackendMode::Replay,
        fixture_dir: Some(manifest_dir.join("samples/fixtures")),
        attack_bundle: manifest_dir.join("data/enterprise-attack.json"),
        out_dir: out_dir.clone(),
        ..Default::default()
    };
    let docs = vec![
        manifest_dir.join("samples/reports/c5-apt-skhack.txt"),
        manifest_dir.join("samples/reports/vortex-phish.txt"),
    ];
    let manifest = pipeline::run(&docs, &config).expect("replay run succeeds");
    assert!(!manifest.any_failed());

    let paths = StagePaths::new(&out_dir);
    let mut reports = Vec::new();
    for gold_name in ["c5-apt-skhack", "vortex-phish"] {
        let gold = eval::load_gold(&manifest_dir.join(format!("samples/gold/{gold_name}.json")))
            .expect("gold loads");
        let graph = graph::read_canonical(&paths.graph(gold_name)).expect("graph loads");
        reports.push(eval::match_graph(&graph, &gold, MatchOptions::default()).expect("scored"));
    }

    let rows: Vec<eval::ReportCounts> = reports.iter().map(Into::into).collect();
    let scoreboard = eval::render_scoreboard(&rows, None).expect("scoreboard renders");
    print!("{}", scoreboard.text);

    // The same matchers under strict sub-technique comparison.
    let strict = MatchOptions {
        strict_subtech: true,
        ..Default::default()
    };
    let gold = eval::load_gold(&manifest_dir.join("samples/gold/vortex-phish.json")).unwrap();
    let graph = graph::read_canonical(&paths.graph("vortex-phish")).unwrap();
    let report = eval::match_graph(&graph, &gold, strict).unwrap();
    println!(
        "\nvortex-phish techniques under --strict-subtech: tp={} fp={} fn={}",
        report.techniques.tp, report.techniques.fp, report.techniques.fn_
    );

    let _ = std::fs::remove_dir_all(&out_dir);
}
