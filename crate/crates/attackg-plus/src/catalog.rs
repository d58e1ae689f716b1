//! MITRE ATT&CK enterprise matrix loaded from a STIX 2.1 bundle.
//!
//! The catalog indexes the 14 enterprise tactics and their techniques and
//! renders the prompt fragments the pipeline stages embed. Revoked and
//! deprecated objects are dropped at load so candidate sets match the live
//! matrix.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

/// Default source for `catalog fetch`.
pub const DEFAULT_BUNDLE_URL: &str =
    "https://raw.githubusercontent.com/mitre/cti/master/enterprise-attack/enterprise-attack.json";

/// Default per-technique description budget for prompt fragments.
pub const DEFAULT_DESCRIPTION_BUDGET: usize = 400;

/// Marker appended when a description is cut at the budget.
pub const TRUNCATION_MARKER: &str = "...";

/// Synthetic 15th label for content with no tactical character.
pub const OTHER_LABEL: &str = "other";

/// Enterprise matrix order, used when a bundle ships no x-mitre-matrix object.
const FALLBACK_ORDER: [&str; 14] = [
    "reconnaissance",
    "resource-development",
    "initial-access",
    "execution",
    "persistence",
    "privilege-escalation",
    "defense-evasion",
    "credential-access",
    "discovery",
    "lateral-movement",
    "collection",
    "command-and-control",
    "exfiltration",
    "impact",
];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read bundle {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error("expected 14 tactics after filtering, found {0} (wrong or partial bundle?)")]
    TacticCount(usize),
    #[error("unknown tactic shortname '{0}'")]
    UnknownTactic(String),
    #[error("fetch failed: {0}")]
    Fetch(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tactic {
    /// ATT&CK tactic id, e.g. "TA0001".
    pub id: String,
    /// Kill-chain phase token, e.g. "initial-access".
    pub shortname: String,
    pub name: String,
    pub description: String,
    /// Rank 1..=14 in the standard matrix order.
    pub canonical_order: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Technique {
    /// Technique id matching `T\d{4}(\.\d{3})?`.
    pub id: String,
    pub name: String,
    pub description: String,
    /// Kill-chain phases this technique serves.
    pub tactic_shortnames: Vec<String>,
    pub is_subtechnique: bool,
    pub parent_id: Option<String>,
}

/// Immutable after load; safe to share across pipeline workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TtpCatalog {
    /// Source bundle version string.
    pub version: String,
    /// All 14 tactics, sorted by canonical order.
    pub tactics: Vec<Tactic>,
    /// All live techniques, sorted by id.
    pub techniques: Vec<Technique>,
    technique_by_id: HashMap<String, usize>,
    tactic_by_shortname: HashMap<String, usize>,
    techniques_by_tactic: HashMap<String, Vec<usize>>,
}

// Raw STIX shapes; unknown fields ignored.
#[derive(Deserialize)]
struct RawBundle {
    #[serde(default)]
    objects: Vec<RawObject>,
}

#[derive(Deserialize)]
struct RawObject {
    #[serde(rename = "type")]
    object_type: String,
    #[serde(default)]
    id: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    revoked: bool,
    #[serde(default)]
    x_mitre_deprecated: bool,
    #[serde(default)]
    x_mitre_shortname: Option<String>,
    #[serde(default)]
    x_mitre_version: Option<String>,
    #[serde(default)]
    kill_chain_phases: Vec<RawKillChainPhase>,
    #[serde(default)]
    external_references: Vec<RawExternalReference>,
    #[serde(default)]
    tactic_refs: Vec<String>,
}

#[derive(Deserialize)]
struct RawKillChainPhase {
    #[serde(default)]
    kill_chain_name: String,
    #[serde(default)]
    phase_name: String,
}

#[derive(Deserialize)]
struct RawExternalReference {
    #[serde(default)]
    source_name: String,
    #[serde(default)]
    external_id: String,
}

fn mitre_external_id(obj: &RawObject) -> Option<&str> {
    obj.external_references
        .iter()
        .find(|r| r.source_name == "mitre-attack" && !r.external_id.is_empty())
        .map(|r| r.external_id.as_str())
}

fn technique_id_valid(id: &str) -> bool {
    let bytes = id.as_bytes();
    let parent_ok = bytes.len() >= 5
        && bytes[0] == b'T'
        && bytes[1..5].iter().all(u8::is_ascii_digit);
    if !parent_ok {
        return false;
    }
    match &bytes[5..] {
        [] => true,
        [b'.', rest @ ..] => rest.len() == 3 && rest.iter().all(u8::is_ascii_digit),
        _ => false,
    }
}

/// Load and index a STIX 2.1 enterprise-attack bundle.
///
/// Revoked/deprecated objects are dropped; the result carries exactly 14
/// tactics or the load fails.
pub fn load_catalog(bundle_path: &Path) -> Result<TtpCatalog, CatalogError> {
    let text = std::fs::read_to_string(bundle_path).map_err(|source| CatalogError::Io {
        path: bundle_path.display().to_string(),
        source,
    })?;
    load_catalog_str(&text)
}

/// Same as [`load_catalog`] but from bundle text already in memory.
pub fn load_catalog_str(bundle_text: &str) -> Result<TtpCatalog, CatalogError> {
    let raw: RawBundle = serde_json::from_str(bundle_text)
        .map_err(|e| CatalogError::MalformedBundle(e.to_string()))?;
    if raw.objects.is_empty() {
        return Err(CatalogError::MalformedBundle("bundle has no objects".into()));
    }

    let mut version = String::from("unknown");
    let mut matrix_order: Vec<String> = Vec::new();
    let mut tactics: Vec<Tactic> = Vec::new();
    let mut tactic_stix_ids: HashMap<String, String> = HashMap::new();
    let mut techniques: Vec<Technique> = Vec::new();

    for obj in &raw.objects {
        if obj.revoked || obj.x_mitre_deprecated {
            continue;
        }
        match obj.object_type.as_str() {
            "x-mitre-collection" => {
                if let Some(v) = &obj.x_mitre_version {
                    version = v.clone();
                }
            }
            "x-mitre-matrix" => {
                matrix_order = obj.tactic_refs.clone();
            }
            "x-mitre-tactic" => {
                let Some(ta_id) = mitre_external_id(obj) else {
                    continue;
                };
                let Some(shortname) = obj.x_mitre_shortname.clone() else {
                    continue;
                };
                tactic_stix_ids.insert(obj.id.clone(), shortname.clone());
                tactics.push(Tactic {
                    id: ta_id.to_string(),
                    shortname,
                    name: obj.name.clone(),
                    description: obj.description.clone(),
                    canonical_order: 0, // ranked below
                });
            }
            "attack-pattern" => {
                let Some(id) = mitre_external_id(obj) else {
                    continue;
                };
                if !technique_id_valid(id) {
                    continue;
                }
                let tactic_shortnames: Vec<String> = obj
                    .kill_chain_phases
                    .iter()
                    .filter(|p| p.kill_chain_name == "mitre-attack")
                    .map(|p| p.phase_name.clone())
                    .collect();
                let is_subtechnique = id.contains('.');
                let parent_id = is_subtechnique.then(|| id[..id.find('.').unwrap()].to_string());
                techniques.push(Technique {
                    id: id.to_string(),
                    name: obj.name.clone(),
                    description: obj.description.clone(),
                    tactic_shortnames,
                    is_subtechnique,
                    parent_id,
                });
            }
            _ => {}
        }
    }

    if tactics.len() != 14 {
        return Err(CatalogError::TacticCount(tactics.len()));
    }

    // Rank tactics by the bundle's matrix order, falling back to the
    // built-in enterprise order.
    let rank_of = |tactic: &Tactic| -> Option<u8> {
        if !matrix_order.is_empty() {
            let pos = matrix_order
                .iter()
                .position(|stix_id| tactic_stix_ids.get(stix_id) == Some(&tactic.shortname))?;
            return Some(pos as u8 + 1);
        }
        FALLBACK_ORDER
            .iter()
            .position(|s| *s == tactic.shortname)
            .map(|p| p as u8 + 1)
    };
    for tactic in &mut tactics {
        tactic.canonical_order = rank_of(tactic).ok_or_else(|| {
            CatalogError::MalformedBundle(format!(
                "cannot rank tactic '{}' in matrix order",
                tactic.shortname
            ))
        })?;
    }
    tactics.sort_by_key(|t| t.canonical_order);
    let orders_ok = tactics
        .iter()
        .enumerate()
        .all(|(i, t)| t.canonical_order == i as u8 + 1);
    if !orders_ok {
        return Err(CatalogError::MalformedBundle(
            "tactic order is not a permutation of 1..14".into(),
        ));
    }

    let mut shortnames = HashMap::new();
    for (idx, tactic) in tactics.iter().enumerate() {
        if shortnames.insert(tactic.shortname.clone(), idx).is_some() {
            return Err(CatalogError::MalformedBundle(format!(
                "duplicate tactic shortname '{}'",
                tactic.shortname
            )));
        }
    }

    // Keep only phases that name a loaded tactic; drop techniques with no
    // enterprise phase left.
    for technique in &mut techniques {
        technique
            .tactic_shortnames
            .retain(|s| shortnames.contains_key(s));
    }
    techniques.retain(|t| !t.tactic_shortnames.is_empty());
    techniques.sort_by(|a, b| a.id.cmp(&b.id));
    techniques.dedup_by(|a, b| a.id == b.id);

    let mut technique_by_id = HashMap::new();
    let mut techniques_by_tactic: HashMap<String, Vec<usize>> = HashMap::new();
    for (idx, technique) in techniques.iter().enumerate() {
        technique_by_id.insert(technique.id.clone(), idx);
        for shortname in &technique.tactic_shortnames {
            techniques_by_tactic
                .entry(shortname.clone())
                .or_default()
                .push(idx);
        }
    }

    Ok(TtpCatalog {
        version,
        tactics,
        techniques,
        technique_by_id,
        tactic_by_shortname: shortnames,
        techniques_by_tactic,
    })
}

impl TtpCatalog {
    pub fn tactic(&self, shortname: &str) -> Option<&Tactic> {
        self.tactic_by_shortname
            .get(shortname)
            .map(|&i| &self.tactics[i])
    }

    pub fn technique(&self, id: &str) -> Option<&Technique> {
        self.technique_by_id.get(id).map(|&i| &self.techniques[i])
    }

    /// True for the 14 shortnames plus the synthetic "other" label.
    pub fn is_known_label(&self, label: &str) -> bool {
        label == OTHER_LABEL || self.tactic_by_shortname.contains_key(label)
    }

    /// Techniques serving a tactic, sorted by id (which places every parent
    /// immediately before its sub-techniques).
    pub fn techniques_for_tactic(&self, shortname: &str) -> Result<Vec<&Technique>, CatalogError> {
        if !self.tactic_by_shortname.contains_key(shortname) {
            return Err(CatalogError::UnknownTactic(shortname.to_string()));
        }
        Ok(self
            .techniques_by_tactic
            .get(shortname)
            .map(|ids| ids.iter().map(|&i| &self.techniques[i]).collect())
            .unwrap_or_default())
    }

    /// Prompt fragment listing all 14 tactics in canonical order plus the
    /// synthetic "other" entry, one "shortname — name: description" per line.
    pub fn render_tactic_definitions(&self) -> String {
        let mut out = String::new();
        for tactic in &self.tactics {
            out.push_str(&format!(
                "{} — {}: {}\n",
                tactic.shortname,
                sanitize(&tactic.name),
                sanitize(&tactic.description)
            ));
        }
        out.push_str("other — Other: contextual information with no tactical character\n");
        out
    }

    /// Prompt fragment listing one tactic's techniques as "id — name:
    /// description" lines, descriptions cut at `budget` chars.
    pub fn render_technique_templates(
        &self,
        shortname: &str,
        budget: usize,
    ) -> Result<String, CatalogError> {
        let techniques = self.techniques_for_tactic(shortname)?;
        let mut out = String::new();
        for technique in techniques {
            out.push_str(&format!(
                "{} — {}: {}\n",
                technique.id,
                sanitize(&technique.name),
                truncate(&sanitize(&technique.description), budget)
            ));
        }
        Ok(out)
    }
}

/// Replace control characters with spaces and collapse runs so descriptions
/// cannot inject lines into rendered fragments.
fn sanitize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = false;
    for ch in text.chars() {
        let ch = if ch.is_control() { ' ' } else { ch };
        if ch == ' ' {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else {
            out.push(ch);
            last_space = false;
        }
    }
    out.trim().to_string()
}

fn truncate(text: &str, budget: usize) -> String {
    if text.chars().count() <= budget {
        return text.to_string();
    }
    let mut out: String = text.chars().take(budget).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

/// Download a bundle over HTTPS to `out_path` (the `catalog fetch` command).
pub fn fetch_bundle(url: &str, out_path: &Path) -> Result<(), CatalogError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(300))
        .build()
        .map_err(|e| CatalogError::Fetch(e.to_string()))?;
    let body = client
        .get(url)
        .send()
        .and_then(|r| r.error_for_status())
        .and_then(|r| r.text())
        .map_err(|e| CatalogError::Fetch(e.to_string()))?;
    // Validate before writing so a bad download never clobbers a good file.
    load_catalog_str(&body)?;
    std::fs::write(out_path, body).map_err(|source| CatalogError::Io {
        path: out_path.display().to_string(),
        source,
    })?;
    Ok(())
}
