//! Prompt templates for the four pipeline stages.
//!
//! Wording lives in `templates/*.txt` and can be overridden at runtime from a
//! directory, so prompts are editable without code changes. Slots are
//! `{lower_snake}` markers; rendering is strict: bindings must cover exactly
//! the slots the body declares.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use super::{ChatRequest, GatewayError, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageName {
    Rewriting,
    TripletExtractor,
    TechniqueIdentifier,
    StateSummarizer,
}

impl StageName {
    pub const ALL: [StageName; 4] = [
        StageName::Rewriting,
        StageName::TripletExtractor,
        StageName::TechniqueIdentifier,
        StageName::StateSummarizer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StageName::Rewriting => "rewriting",
            StageName::TripletExtractor => "triplet_extractor",
            StageName::TechniqueIdentifier => "technique_identifier",
            StageName::StateSummarizer => "state_summarizer",
        }
    }

    fn builtin_body(&self) -> &'static str {
        match self {
            StageName::Rewriting => include_str!("../../templates/rewriting.txt"),
            StageName::TripletExtractor => include_str!("../../templates/triplet_extractor.txt"),
            StageName::TechniqueIdentifier => {
                include_str!("../../templates/technique_identifier.txt")
            }
            StageName::StateSummarizer => include_str!("../../templates/state_summarizer.txt"),
        }
    }

    fn system_text(&self) -> &'static str {
        match self {
            StageName::Rewriting => {
                "You are a cyber threat intelligence analyst who restructures reports into standardized tactical phases."
            }
            StageName::TripletExtractor => {
                "You are a cyber threat intelligence analyst who extracts structured threat behavior records from reports."
            }
            StageName::TechniqueIdentifier => {
                "You are a cyber threat intelligence analyst who maps threat behavior to MITRE technique ids."
            }
            StageName::StateSummarizer => {
                "You are a cyber threat intelligence analyst who tracks attacker state across intrusion stages."
            }
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: StageName,
    pub system: String,
    pub body: String,
}

pub type Bindings = BTreeMap<&'static str, String>;

impl PromptTemplate {
    pub fn builtin(name: StageName) -> Self {
        PromptTemplate {
            name,
            system: name.system_text().to_string(),
            body: name.builtin_body().to_string(),
        }
    }

    /// Builtin wording unless `<dir>/<stage>.txt` exists.
    pub fn load(name: StageName, override_dir: Option<&Path>) -> Self {
        if let Some(dir) = override_dir {
            let path = dir.join(format!("{}.txt", name.as_str()));
            if let Ok(body) = std::fs::read_to_string(&path) {
                return PromptTemplate {
                    name,
                    system: name.system_text().to_string(),
                    body,
                };
            }
        }
        Self::builtin(name)
    }

    /// Slot names the body declares.
    pub fn slots(&self) -> BTreeSet<String> {
        find_slots(&self.body).into_iter().map(|(_, _, n)| n).collect()
    }

    /// Substitute bindings into the body, producing a request.
    ///
    /// Single-pass: binding values are never re-scanned, so substitution is
    /// deterministic and cannot introduce new slots.
    pub fn render(
        &self,
        bindings: &Bindings,
        params: &ModelParams,
    ) -> Result<ChatRequest, GatewayError> {
        let slots = self.slots();
        for key in bindings.keys() {
            if !slots.contains(*key) {
                return Err(GatewayError::UnknownBinding {
                    template: self.name.as_str(),
                    slot: key.to_string(),
                });
            }
        }

        let mut user = String::with_capacity(self.body.len());
        let mut cursor = 0;
        for (start, end, name) in find_slots(&self.body) {
            user.push_str(&self.body[cursor..start]);
            let value = bindings
                .iter()
                .find(|(k, _)| **k == name)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| GatewayError::MissingBinding {
                    template: self.name.as_str(),
                    slot: name.clone(),
                })?;
            user.push_str(value);
            cursor = end;
        }
        user.push_str(&self.body[cursor..]);

        Ok(ChatRequest {
            model: params.model.clone(),
            system: self.system.clone(),
            user,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            label: self.name.as_str().to_string(),
        })
    }
}

/// Byte ranges and names of `{lower_snake}` markers.
fn find_slots(body: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                out.push((i, j + 1, body[i + 1..j].to_string()));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}
