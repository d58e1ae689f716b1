//! Render an attack graph as Graphviz DOT and as one self-contained HTML
//! page (static SVG, embedded styles, no external fetches).
//!
//! ```bash
//! cargo run --example render_graph
//! dot -Tpng attackg-skhack.dot -o attackg-skhack.png   # if graphviz is installed
//! ```

use std::path::PathBuf;

use attackg_plus::config::RunConfig;
use attackg_plus::gateway::BackendMode;
use attackg_plus::pipeline::{self, StagePaths};
use attackg_plus::render;

fn main() {
    let manifest_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out_dir = std::env::temp_dir().join(format!("attackg-render-{}", std::process::id()));

    let config = RunConfig {
        mode: BackendMode::Replay,
        fixture_dir: Some(manifest_dir.join("samples/fixtures")),
        attack_bundle: manifest_dir.join("data/enterprise-attack.json"),
        out_dir: out_dir.clone(),
        ..Default::default()
    };
    let doc = manifest_dir.join("samples/reports/c5-apt-skhack.txt");
    let manifest = pipeline::run(&[doc], &config).expect("replay run succeeds");
    assert!(!manifest.any_failed());

    let graph =
        attackg_plus::graph::read_canonical(&StagePaths::new(&out_dir).graph("c5-apt-skhack"))
            .expect("graph loads");

    let dot = render::to_dot(&graph);
    let html = render::to_html(&graph);
    let (dot_nodes, dot_edges) = render::dot_counts(&dot);
    let (html_nodes, html_edges) = render::html_counts(&html);
    println!("dot : {dot_nodes} nodes, {dot_edges} edges");
    println!("html: {html_nodes} nodes, {html_edges} edges");
    assert_eq!((dot_nodes, dot_edges), (html_nodes, html_edges));

    std::fs::write("attackg-skhack.dot", &dot).expect("dot written");
    std::fs::write("attackg-skhack.html", &html).expect("html written");
    println!("wrote attackg-skhack.dot and attackg-skhack.html");

    let _ = std::fs::remove_dir_all(&out_dir);
}
