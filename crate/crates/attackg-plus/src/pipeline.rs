//! Full pipeline orchestration: rewrite -> extract -> identify -> summarize
//! -> assemble, with every intermediate persisted so stages are resumable
//! and independently runnable.
//!
//! Failures isolate to the document: the run continues, the manifest records
//! per-document status and stage timings, and the caller maps any failure to
//! a nonzero exit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{load_catalog, TtpCatalog};
use crate::config::RunConfig;
use crate::gateway::Backend;
use crate::graph::{self, AttackGraph};
use crate::ingest::{self, RawDocument};
use crate::stages::extractor::{self, ExtractionOutput};
use crate::stages::identifier::{self, IdentificationOutput};
use crate::stages::rewriter::{self, RewrittenReport};
use crate::stages::summarizer::{self, SummaryOutput};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no input documents")]
    NoInput,
    #[error(transparent)]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Stage(#[from] crate::stages::StageError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("i/o at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {detail} (is this the right stage file?)")]
    Decode { path: String, detail: String },
}

// ---------------------------------------------------------------------------
// Stage files

/// File naming for persisted stage outputs under one output directory.
pub struct StagePaths {
    out_dir: PathBuf,
}

impl StagePaths {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        StagePaths {
            out_dir: out_dir.into(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn ingested(&self, doc_id: &str) -> PathBuf {
        self.out_dir.join(format!("{doc_id}.txt"))
    }

    pub fn rewritten(&self, doc_id: &str) -> PathBuf {
        self.out_dir.join(format!("{doc_id}.rewritten.json"))
    }

    pub fn extraction(&self, doc_id: &str) -> PathBuf {
        self.out_dir.join(format!("{doc_id}.extraction.json"))
    }

    pub fn assignments(&self, doc_id: &str) -> PathBuf {
        self.out_dir.join(format!("{doc_id}.assignments.json"))
    }

    pub fn summaries(&self, doc_id: &str) -> PathBuf {
        self.out_dir.join(format!("{doc_id}.summaries.json"))
    }

    pub fn graph(&self, doc_id: &str) -> PathBuf {
        self.out_dir.join(format!("{doc_id}.graph.json"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.out_dir.join("manifest.json")
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).expect("stage outputs serialize");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Decode {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRecord {
    pub doc_id: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stage_timings_ms: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub docs: Vec<DocRecord>,
}

impl Manifest {
    pub fn any_failed(&self) -> bool {
        self.docs.iter().any(|d| d.status != "ok")
    }
}

// ---------------------------------------------------------------------------
// Document loading

/// Load a report by extension: `.pdf` goes through the converter command,
/// everything else is read as text.
pub fn load_document(path: &Path, pdf_command: &str) -> Result<RawDocument, PipelineError> {
    let is_pdf = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("pdf"))
        .unwrap_or(false);
    let doc = if is_pdf {
        ingest::load_pdf(path, pdf_command)?
    } else {
        ingest::load_text(path, None)?
    };
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Per-document processing

pub struct DocOutputs {
    pub rewritten: RewrittenReport,
    pub extraction: ExtractionOutput,
    pub identification: IdentificationOutput,
    pub summaries: SummaryOutput,
    pub graph: AttackGraph,
}

/// Run the four stages plus assembly for one document, persisting each
/// output. `timings` records per-stage wall time in milliseconds.
pub fn process_document(
    doc: &RawDocument,
    catalog: &TtpCatalog,
    backend: &Backend,
    config: &RunConfig,
    paths: &StagePaths,
    timings: &mut BTreeMap<String, u64>,
) -> Result<DocOutputs, (String, PipelineError)> {
    let staged = |stage: &str, e: PipelineError| (stage.to_string(), e);
    let timed = |stage: &'static str, timings: &mut BTreeMap<String, u64>, start: Instant| {
        timings.insert(stage.to_string(), start.elapsed().as_millis() as u64);
    };

    let options = config.stage_options();
    let start = Instant::now();
    let (rewritten, warnings) = rewriter::rewrite(doc, catalog, backend, &options)
        .map_err(|e| staged("rewrite", e.into()))?;
    for warning in &warnings {
        log::warn!("{}: rewrite: {warning}", doc.doc_id);
    }
    write_json(&rewritten, &paths.rewritten(&doc.doc_id)).map_err(|e| staged("rewrite", e))?;
    timed("rewrite", timings, start);

    let start = Instant::now();
    let extraction = extractor::extract(&rewritten, backend, &options)
        .map_err(|e| staged("extract", e.into()))?;
    write_json(&extraction, &paths.extraction(&doc.doc_id))
        .map_err(|e| staged("extract", e))?;
    timed("extract", timings, start);

    let start = Instant::now();
    let identification =
        identifier::identify(&rewritten, catalog, backend, Some(&extraction), &options)
            .map_err(|e| staged("identify", e.into()))?;
    write_json(&identification, &paths.assignments(&doc.doc_id))
        .map_err(|e| staged("identify", e))?;
    timed("identify", timings, start);

    let start = Instant::now();
    let summaries = summarizer::summarize(&rewritten, backend, &options)
        .map_err(|e| staged("summarize", e.into()))?;
    write_json(&summaries, &paths.summaries(&doc.doc_id))
        .map_err(|e| staged("summarize", e))?;
    timed("summarize", timings, start);

    let start = Instant::now();
    let attack_graph = graph::assemble(
        &rewritten,
        &extraction,
        &identification,
        &summaries,
        &catalog.version,
    )
    .map_err(|e| staged("assemble", e.into()))?;
    graph::write_canonical(&attack_graph, &paths.graph(&doc.doc_id))
        .map_err(|e| staged("assemble", e.into()))?;
    timed("assemble", timings, start);

    Ok(DocOutputs {
        rewritten,
        extraction,
        identification,
        summaries,
        graph: attack_graph,
    })
}

// ---------------------------------------------------------------------------
// Corpus run

/// Run the pipeline over a set of documents with a bounded worker pool.
/// Returns the manifest (also written to the output directory).
pub fn run(doc_paths: &[PathBuf], config: &RunConfig) -> Result<Manifest, PipelineError> {
    if doc_paths.is_empty() {
        return Err(PipelineError::NoInput);
    }
    let catalog = load_catalog(&config.attack_bundle)?;
    let backend = config.backend()?;
    run_with(doc_paths, config, &catalog, &backend)
}

/// Same as [`run`] with a caller-supplied catalog and backend (custom
/// transports, preloaded catalogs).
pub fn run_with(
    doc_paths: &[PathBuf],
    config: &RunConfig,
    catalog: &TtpCatalog,
    backend: &Backend,
) -> Result<Manifest, PipelineError> {
    if doc_paths.is_empty() {
        return Err(PipelineError::NoInput);
    }
    let paths = StagePaths::new(&config.out_dir);
    std::fs::create_dir_all(paths.out_dir()).map_err(|source| PipelineError::Io {
        path: paths.out_dir().display().to_string(),
        source,
    })?;

    let workers = if config.workers > 0 {
        config.workers
    } else {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    }
    .min(doc_paths.len());

    let next = AtomicUsize::new(0);
    let records: Vec<Mutex<Option<DocRecord>>> =
        doc_paths.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= doc_paths.len() {
                    break;
                }
                let record = run_one(&doc_paths[index], catalog, backend, config, &paths);
                *records[index].lock().expect("record lock") = Some(record);
            });
        }
    });

    let manifest = Manifest {
        docs: records
            .into_iter()
            .map(|slot| slot.into_inner().expect("lock").expect("record written"))
            .collect(),
    };
    write_json(&manifest, &paths.manifest())?;
    Ok(manifest)
}

fn run_one(
    doc_path: &Path,
    catalog: &TtpCatalog,
    backend: &Backend,
    config: &RunConfig,
    paths: &StagePaths,
) -> DocRecord {
    let mut timings = BTreeMap::new();
    let doc = match load_document(doc_path, &config.pdf_command) {
        Ok(doc) => doc,
        Err(e) => {
            return DocRecord {
                doc_id: doc_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| doc_path.display().to_string()),
                status: "failed".into(),
                failed_stage: Some("ingest".into()),
                error: Some(e.to_string()),
                stage_timings_ms: timings,
                graph_file: None,
            }
        }
    };
    match process_document(&doc, catalog, backend, config, paths, &mut timings) {
        Ok(_) => DocRecord {
            doc_id: doc.doc_id.clone(),
            status: "ok".into(),
            failed_stage: None,
            error: None,
            stage_timings_ms: timings,
            graph_file: Some(
                paths
                    .graph(&doc.doc_id)
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            ),
        },
        Err((stage, error)) => {
            log::error!("{}: {stage} failed: {error}", doc.doc_id);
            DocRecord {
                doc_id: doc.doc_id,
                status: "failed".into(),
                failed_stage: Some(stage),
                error: Some(error.to_string()),
                stage_timings_ms: timings,
                graph_file: None,
            }
        }
    }
}
