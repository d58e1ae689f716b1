//! Load CTI reports into a normalized plain-text representation.
//!
//! PDF conversion is delegated to an external command; everything else is
//! pure text normalization, idempotent by construction.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Command template used when no converter is configured. `{input}` is
/// replaced with the PDF path; output is read from stdout.
pub const DEFAULT_PDF_COMMAND: &str = "pdftotext -layout {input} -";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty document: {0}")]
    EmptyDocument(String),
    #[error("pdf converter '{command}' failed to start: {source}")]
    ConverterMissing {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("pdf converter '{command}' exited with {status}: {stderr}")]
    ConverterFailed {
        command: String,
        status: String,
        stderr: String,
    },
}

/// One report in normalized form, the unit the pipeline operates on.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RawDocument {
    /// Stable identifier, file stem by default.
    pub doc_id: String,
    /// Origin label: vendor, url, or free text.
    pub source: String,
    /// Normalized UTF-8 body.
    pub text: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// Normalize report text: NFC, CRLF to LF, soft hyphens removed, hyphenated
/// line breaks joined, blank-line runs collapsed, control chars (except LF)
/// dropped with tabs becoming spaces.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();

    let mut cleaned = String::with_capacity(nfc.len());
    for ch in nfc.chars() {
        match ch {
            '\u{00AD}' => {} // soft hyphen
            '\r' | '\n' => cleaned.push(ch),
            '\t' => cleaned.push(' '),
            c if c.is_control() => {}
            c => cleaned.push(c),
        }
    }
    let cleaned = cleaned.replace("\r\n", "\n").replace('\r', "\n");

    // Join words split across a line break: "exe-\ncution" -> "execution".
    let mut dehyphenated = String::with_capacity(cleaned.len());
    let chars: Vec<char> = cleaned.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let joinable = chars[i] == '-'
            && i + 1 < chars.len()
            && chars[i + 1] == '\n'
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && i + 2 < chars.len()
            && chars[i + 2].is_alphanumeric();
        if joinable {
            i += 2;
        } else {
            dehyphenated.push(chars[i]);
            i += 1;
        }
    }

    // Collapse runs of blank lines down to a single blank line.
    let mut out = String::with_capacity(dehyphenated.len());
    let mut newline_run = 0usize;
    for ch in dehyphenated.chars() {
        if ch == '\n' {
            newline_run += 1;
            if newline_run <= 2 {
                out.push('\n');
            }
        } else {
            newline_run = 0;
            out.push(ch);
        }
    }
    out.trim().to_string()
}

fn doc_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Load a plain-text report, applying normalization.
pub fn load_text(path: &Path, doc_id: Option<&str>) -> Result<RawDocument, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    from_text(&text, doc_id.map(str::to_string).unwrap_or_else(|| doc_id_from_path(path)), path)
}

fn from_text(text: &str, doc_id: String, origin: &Path) -> Result<RawDocument, IngestError> {
    let normalized = normalize(text);
    if normalized.is_empty() {
        return Err(IngestError::EmptyDocument(origin.display().to_string()));
    }
    Ok(RawDocument {
        doc_id,
        source: origin.display().to_string(),
        text: normalized,
        meta: BTreeMap::new(),
    })
}

/// Extract text from a PDF via an external converter command and normalize
/// it like [`load_text`] does.
pub fn load_pdf(path: &Path, command_template: &str) -> Result<RawDocument, IngestError> {
    let rendered = command_template.replace("{input}", &path.display().to_string());
    let mut parts = rendered.split_whitespace();
    let program = parts.next().unwrap_or_default().to_string();
    let args: Vec<&str> = parts.collect();

    let output = Command::new(&program)
        .args(&args)
        .output()
        .map_err(|source| IngestError::ConverterMissing {
            command: command_template.to_string(),
            source,
        })?;
    if !output.status.success() {
        return Err(IngestError::ConverterFailed {
            command: command_template.to_string(),
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    let text = String::from_utf8_lossy(&output.stdout);
    from_text(&text, doc_id_from_path(path), path)
}
