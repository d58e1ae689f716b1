//! Command-line interface: the full pipeline plus every stage, renderer,
//! and evaluator as a subcommand.
//!
//! Exit codes: 0 success, 1 partial or runtime failure, 2 config/usage
//! error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::catalog::{self, load_catalog};
use crate::config::{ConfigError, RunConfig};
use crate::eval::{self, MatchOptions};
use crate::graph;
use crate::pipeline::{self, PipelineError, StagePaths};
use crate::render;
use crate::stages::{extractor, identifier, rewriter, summarizer};

#[derive(Parser)]
#[command(
    name = "attackg-plus",
    version,
    about = "Convert CTI reports into three-layer attack knowledge graphs"
)]
pub struct Cli {
    /// TOML config file; ATTACKG_* env vars override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// STIX 2.1 enterprise-attack bundle.
    #[arg(long, global = true)]
    attack_bundle: Option<PathBuf>,

    /// Backend mode: live, record, or replay.
    #[arg(long, global = true)]
    backend: Option<String>,

    /// Fixture directory for record/replay.
    #[arg(long, global = true)]
    fixture_dir: Option<PathBuf>,

    /// Output directory for stage files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize reports (.txt or .pdf) into plain-text documents.
    Ingest {
        /// Report files.
        paths: Vec<PathBuf>,
        /// Converter command template with an {input} placeholder.
        #[arg(long)]
        pdf_cmd: Option<String>,
    },
    /// Run the full pipeline: rewrite, extract, identify, summarize,
    /// assemble.
    Run {
        /// Report files (.txt or .pdf).
        docs: Vec<PathBuf>,
    },
    /// Stage 1: tactic-labeled rewrite of one report.
    Rewrite {
        doc: PathBuf,
    },
    /// Stage 2: extract events, entities, and relations from a rewritten
    /// report.
    Extract {
        rewritten: PathBuf,
    },
    /// Stage 3: assign technique labels to a rewritten report.
    Identify {
        rewritten: PathBuf,
        /// Extraction stage file; its triplets ride along in the prompt.
        #[arg(long)]
        extraction: Option<PathBuf>,
    },
    /// Stage 4: summarize attacker state per tactic section.
    Summarize {
        rewritten: PathBuf,
    },
    /// Assemble stage files into a canonical attack graph.
    Assemble {
        /// Rewritten-report stage file; siblings are located by doc id.
        rewritten: PathBuf,
    },
    /// Render a graph file as DOT or self-contained HTML.
    Render {
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = RenderFormat::Dot)]
        format: RenderFormat,
        /// Write here instead of stdout.
        #[arg(long)]
        to: Option<PathBuf>,
    },
    /// Score predicted graphs against gold annotations.
    Eval {
        /// Directory of gold files (<doc_id>.json).
        #[arg(long)]
        gold: PathBuf,
        /// Directory of predicted graphs (<doc_id>.graph.json).
        #[arg(long)]
        pred: PathBuf,
        /// Aggregation highlighted in the summary line.
        #[arg(long, default_value = "micro")]
        mode: String,
        /// Require entity types to match.
        #[arg(long)]
        strict_types: bool,
        /// Compare technique ids at sub-technique precision.
        #[arg(long)]
        strict_subtech: bool,
        /// Machine-readable scoreboard destination.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify a rewritten report by tactic density.
    Classify {
        rewritten: PathBuf,
        /// Max distinct tactics for the low-tactic class.
        #[arg(long)]
        t_low: Option<usize>,
    },
    /// Corpus occurrence tables over graph files.
    Stats {
        graphs: Vec<PathBuf>,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Inspect or fetch the ATT&CK catalog.
    Catalog {
        #[command(subcommand)]
        command: CatalogCommand,
    },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Tactic and technique counts plus version.
    Info,
    /// List the techniques serving one tactic.
    Techniques {
        #[arg(long)]
        tactic: String,
    },
    /// Download a bundle over HTTPS.
    Fetch {
        #[arg(long, default_value = catalog::DEFAULT_BUNDLE_URL)]
        url: String,
        #[arg(long)]
        to: PathBuf,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum RenderFormat {
    Dot,
    Html,
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            2
        }
        Err(Failure::Runtime(message)) => {
            eprintln!("error: {message}");
            1
        }
    }
}

enum Failure {
    /// Configuration or argument problems: exit 2.
    Usage(String),
    /// Everything else: exit 1.
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::NoInput | PipelineError::Config(_) | PipelineError::Catalog(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<crate::catalog::CatalogError> for Failure {
    fn from(e: crate::catalog::CatalogError) -> Self {
        // A missing or malformed bundle is a setup problem, not a runtime
        // failure.
        Failure::Usage(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($error:ty),*) => {
        $(impl From<$error> for Failure {
            fn from(e: $error) -> Self {
                Failure::Runtime(e.to_string())
            }
        })*
    };
}
runtime_from!(
    crate::ingest::IngestError,
    crate::stages::StageError,
    crate::graph::GraphError,
    crate::eval::EvalError
);

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(bundle) = &cli.attack_bundle {
        config.attack_bundle = bundle.clone();
    }
    if let Some(mode) = &cli.backend {
        config.mode = mode.parse().map_err(Failure::Usage)?;
    }
    if let Some(dir) = &cli.fixture_dir {
        config.fixture_dir = Some(dir.clone());
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn write_or_print(bytes: &[u8], to: Option<&Path>) -> Result<(), Failure> {
    match to {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| Failure::Runtime(e.to_string()))
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, Failure> {
    let config = load_config(&cli)?;
    let paths = StagePaths::new(&config.out_dir);

    match cli.command {
        Command::Ingest { paths: inputs, pdf_cmd } => {
            if inputs.is_empty() {
                return Err(Failure::Usage("no input documents".into()));
            }
            let pdf_command = pdf_cmd.unwrap_or_else(|| config.pdf_command.clone());
            std::fs::create_dir_all(paths.out_dir())
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            for input in inputs {
                let doc = pipeline::load_document(&input, &pdf_command)?;
                let target = paths.ingested(&doc.doc_id);
                std::fs::write(&target, &doc.text)
                    .map_err(|e| Failure::Runtime(format!("{}: {e}", target.display())))?;
                println!("{} -> {}", doc.doc_id, target.display());
            }
            Ok(0)
        }

        Command::Run { docs } => {
            let manifest = pipeline::run(&docs, &config)?;
            for record in &manifest.docs {
                match &record.failed_stage {
                    None => println!("{}: ok", record.doc_id),
                    Some(stage) => println!(
                        "{}: failed at {stage}: {}",
                        record.doc_id,
                        record.error.as_deref().unwrap_or("unknown error")
                    ),
                }
            }
            Ok(if manifest.any_failed() { 1 } else { 0 })
        }

        Command::Rewrite { doc } => {
            let catalog = load_catalog(&config.attack_bundle)?;
            let backend = config.backend()?;
            let document = pipeline::load_document(&doc, &config.pdf_command)?;
            let (rewritten, warnings) =
                rewriter::rewrite(&document, &catalog, &backend, &config.stage_options())?;
            for warning in warnings {
                log::warn!("{}: {warning}", document.doc_id);
            }
            let target = paths.rewritten(&rewritten.doc_id);
            pipeline::write_json(&rewritten, &target)?;
            println!("{}", target.display());
            Ok(0)
        }

        Command::Extract { rewritten } => {
            let report: rewriter::RewrittenReport = pipeline::read_json(&rewritten)?;
            if !report.serials_are_contiguous() {
                return Err(Failure::Runtime(format!(
                    "{}: paragraph serials are not contiguous; not a valid rewritten report",
                    rewritten.display()
                )));
            }
            let backend = config.backend()?;
            let extraction = extractor::extract(&report, &backend, &config.stage_options())?;
            let target = paths.extraction(&report.doc_id);
            pipeline::write_json(&extraction, &target)?;
            println!("{}", target.display());
            Ok(0)
        }

        Command::Identify { rewritten, extraction } => {
            let report: rewriter::RewrittenReport = pipeline::read_json(&rewritten)?;
            let extraction_output: Option<extractor::ExtractionOutput> = match extraction {
                Some(path) => Some(pipeline::read_json(&path)?),
                None => None,
            };
            let catalog = load_catalog(&config.attack_bundle)?;
            let backend = config.backend()?;
            let identification = identifier::identify(
                &report,
                &catalog,
                &backend,
                extraction_output.as_ref(),
                &config.stage_options(),
            )?;
            let target = paths.assignments(&report.doc_id);
            pipeline::write_json(&identification, &target)?;
            println!("{}", target.display());
            Ok(0)
        }

        Command::Summarize { rewritten } => {
            let report: rewriter::RewrittenReport = pipeline::read_json(&rewritten)?;
            let backend = config.backend()?;
            let summaries = summarizer::summarize(&report, &backend, &config.stage_options())?;
            let target = paths.summaries(&report.doc_id);
            pipeline::write_json(&summaries, &target)?;
            println!("{}", target.display());
            Ok(0)
        }

        Command::Assemble { rewritten } => {
            let report: rewriter::RewrittenReport = pipeline::read_json(&rewritten)?;
            let doc_id = report.doc_id.clone();
            let stage_dir = rewritten
                .parent()
                .map(StagePaths::new)
                .unwrap_or_else(|| StagePaths::new("."));
            let extraction: extractor::ExtractionOutput =
                pipeline::read_json(&stage_dir.extraction(&doc_id))?;
            let identification: identifier::IdentificationOutput =
                pipeline::read_json(&stage_dir.assignments(&doc_id))?;
            let summaries: summarizer::SummaryOutput =
                pipeline::read_json(&stage_dir.summaries(&doc_id))?;
            let catalog = load_catalog(&config.attack_bundle)?;
            let attack_graph = graph::assemble(
                &report,
                &extraction,
                &identification,
                &summaries,
                &catalog.version,
            )?;
            let target = paths.graph(&doc_id);
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Failure::Runtime(e.to_string()))?;
            }
            graph::write_canonical(&attack_graph, &target)?;
            println!("{}", target.display());
            Ok(0)
        }

        Command::Render { graph: graph_path, format, to } => {
            let attack_graph = graph::read_canonical(&graph_path)?;
            match format {
                RenderFormat::Dot => {
                    write_or_print(render::to_dot(&attack_graph).as_bytes(), to.as_deref())?
                }
                RenderFormat::Html => {
                    write_or_print(&render::to_html(&attack_graph), to.as_deref())?
                }
            }
            Ok(0)
        }

        Command::Eval {
            gold,
            pred,
            mode,
            strict_types,
            strict_subtech,
            report,
        } => {
            let aggregation = match mode.as_str() {
                "micro" => eval::Aggregation::Micro,
                "macro" => eval::Aggregation::Macro,
                other => {
                    return Err(Failure::Usage(format!(
                        "unknown aggregation mode '{other}' (micro or macro)"
                    )))
                }
            };
            let options = MatchOptions {
                strict_types,
                strict_subtech,
            };
            let reports = evaluate_directories(&gold, &pred, options)?;
            let rows: Vec<eval::ReportCounts> = reports.iter().map(Into::into).collect();
            let scoreboard = eval::render_scoreboard(&rows, None)?;
            print!("{}", scoreboard.text);
            let scores = eval::score(&reports)?;
            let highlighted = match aggregation {
                eval::Aggregation::Macro => scores.entities.macro_,
                eval::Aggregation::Micro => scores.entities.micro,
            };
            println!(
                "(entities {mode} F1 = {:.3}; see machine-readable output for all modes)",
                highlighted.f1
            );
            let target = report.unwrap_or_else(|| paths.out_dir().join("scoreboard.json"));
            pipeline::write_json(&scoreboard.machine, &target)?;
            println!("scoreboard written to {}", target.display());
            Ok(0)
        }

        Command::Classify { rewritten, t_low } => {
            let report: rewriter::RewrittenReport = pipeline::read_json(&rewritten)?;
            let t_low = t_low.unwrap_or(config.t_low);
            let (class, k) = eval::classify_report(&report, t_low);
            println!("{} (k={k}, t_low={t_low})", class.as_str());
            Ok(0)
        }

        Command::Stats { graphs, top } => {
            if graphs.is_empty() {
                return Err(Failure::Usage("no graph files".into()));
            }
            let loaded: Vec<graph::AttackGraph> = graphs
                .iter()
                .map(|path| graph::read_canonical(path))
                .collect::<Result<_, _>>()?;
            let stats = eval::corpus_stats(&loaded, top.unwrap_or(config.top_k))?;
            print!("{}", eval::render_stats(&stats));
            Ok(0)
        }

        Command::Catalog { command } => match command {
            CatalogCommand::Info => {
                let catalog = load_catalog(&config.attack_bundle)?;
                let subtechniques = catalog.techniques.iter().filter(|t| t.is_subtechnique).count();
                println!("version: {}", catalog.version);
                println!("tactics: {}", catalog.tactics.len());
                println!(
                    "techniques: {} ({} parents, {} sub-techniques)",
                    catalog.techniques.len(),
                    catalog.techniques.len() - subtechniques,
                    subtechniques
                );
                Ok(0)
            }
            CatalogCommand::Techniques { tactic } => {
                let catalog = load_catalog(&config.attack_bundle)?;
                for technique in catalog.techniques_for_tactic(&tactic)? {
                    println!("{} — {}", technique.id, technique.name);
                }
                Ok(0)
            }
            CatalogCommand::Fetch { url, to } => {
                catalog::fetch_bundle(&url, &to)?;
                println!("bundle written to {}", to.display());
                Ok(0)
            }
        },
    }
}

/// Pair gold files with predicted graphs by doc id. Gold drives: a missing
/// prediction scores as empty; predictions without gold are skipped with a
/// warning.
fn evaluate_directories(
    gold_dir: &Path,
    pred_dir: &Path,
    options: MatchOptions,
) -> Result<Vec<eval::MatchReport>, Failure> {
    let mut reports = Vec::new();
    let mut gold_paths: Vec<PathBuf> = std::fs::read_dir(gold_dir)
        .map_err(|e| Failure::Usage(format!("cannot read gold dir {}: {e}", gold_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    gold_paths.sort();
    if gold_paths.is_empty() {
        return Err(Failure::Usage(format!(
            "no gold files in {}",
            gold_dir.display()
        )));
    }
    let mut matched_graphs = 0usize;
    for gold_path in &gold_paths {
        let gold = eval::load_gold(gold_path)?;
        let graph_path = pred_dir.join(format!("{}.graph.json", gold.doc_id));
        let graph = if graph_path.exists() {
            matched_graphs += 1;
            graph::read_canonical(&graph_path)?
        } else {
            log::warn!(
                "no prediction for {}; scoring empty predictions",
                gold.doc_id
            );
            graph::empty_graph(&gold.doc_id, "none", "none")
        };
        reports.push(eval::match_graph(&graph, &gold, options)?);
    }
    if matched_graphs == 0 {
        return Err(Failure::Usage(format!(
            "no predicted graphs in {} match any gold doc id",
            pred_dir.display()
        )));
    }
    Ok(reports)
}
