//! Load the ATT&CK catalog and poke around: counts, anchors, and the
//! prompt fragments the pipeline embeds.
//!
//! ```bash
//! cargo run --example explore_catalog
//! ```

use std::path::PathBuf;

use attackg_plus::catalog::{load_catalog, DEFAULT_DESCRIPTION_BUDGET};

fn main() {
    let bundle = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/enterprise-attack.json");
    let catalog = load_catalog(&bundle).expect("bundle loads");

    println!("bundle version : {}", catalog.version);
    println!("tactics        : {}", catalog.tactics.len());
    let subtechniques = catalog
        .techniques
        .iter()
        .filter(|t| t.is_subtechnique)
        .count();
    println!(
        "techniques     : {} ({} parents, {} sub-techniques)",
        catalog.techniques.len(),
        catalog.techniques.len() - subtechniques,
        subtechniques
    );

    println!("\nmatrix order:");
    for tactic in &catalog.tactics {
        println!(
            "  {:>2}. {:<22} {} ({} techniques)",
            tactic.canonical_order,
            tactic.shortname,
            tactic.id,
            catalog
                .techniques_for_tactic(&tactic.shortname)
                .map(|t| t.len())
                .unwrap_or(0)
        );
    }

    // Two well-known anchors.
    for (id, tactic) in [("T1566", "initial-access"), ("T1612", "defense-evasion")] {
        let technique = catalog.technique(id).expect("anchor technique present");
        let serves = technique.tactic_shortnames.contains(&tactic.to_string());
        println!("\n{id} {} — serves {tactic}: {serves}", technique.name);
    }

    println!("\ntactic definitions fragment (first 3 lines):");
    for line in catalog.render_tactic_definitions().lines().take(3) {
        println!("  {line}");
    }

    println!("\ntechnique templates for defense-evasion (first 3 lines):");
    let fragment = catalog
        .render_technique_templates("defense-evasion", DEFAULT_DESCRIPTION_BUDGET)
        .expect("fragment renders");
    for line in fragment.lines().take(3) {
        println!("  {line}");
    }
}
