//! The four chat-model stages: rewrite, extract, identify, summarize.

pub mod extractor;
pub mod identifier;
pub mod rewriter;
pub mod summarizer;

use thiserror::Error;

use crate::catalog::CatalogError;
use crate::gateway::GatewayError;

#[derive(Debug, Error)]
pub enum StageError {
    #[error("{stage} stage: {source}")]
    Gateway {
        stage: &'static str,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("model assigned unknown tactic label '{label}'")]
    UnknownTacticLabel { label: String },
    #[error("batch of {len} paragraphs exceeds the cap of {cap}")]
    BatchOverflow { len: usize, cap: usize },
    #[error("batch over serials {first}..{last}: {source}")]
    Batch {
        first: u32,
        last: u32,
        #[source]
        source: Box<StageError>,
    },
    #[error("section '{tactic}': {source}")]
    Section {
        tactic: String,
        #[source]
        source: Box<StageError>,
    },
    #[error("{0}")]
    Invalid(String),
}

impl StageError {
    pub(crate) fn gateway(stage: &'static str, source: GatewayError) -> Self {
        StageError::Gateway { stage, source }
    }
}

/// Knobs shared by the stages: character budgets plus an optional prompt
/// override directory, so wording is editable without code changes.
#[derive(Debug, Clone)]
pub struct StageOptions {
    /// Max input characters per rewrite/identify request.
    pub chunk_chars: usize,
    /// Max characters per technique description in prompt fragments.
    pub description_chars: usize,
    /// Directory of `<stage>.txt` files replacing the builtin wording.
    pub prompts_dir: Option<std::path::PathBuf>,
}

impl Default for StageOptions {
    fn default() -> Self {
        StageOptions {
            chunk_chars: rewriter::DEFAULT_CHUNK_BUDGET,
            description_chars: crate::catalog::DEFAULT_DESCRIPTION_BUDGET,
            prompts_dir: None,
        }
    }
}

impl StageOptions {

    pub(crate) fn template(&self, name: crate::gateway::StageName) -> crate::gateway::PromptTemplate {
        crate::gateway::PromptTemplate::load(name, self.prompts_dir.as_deref())
    }
}
