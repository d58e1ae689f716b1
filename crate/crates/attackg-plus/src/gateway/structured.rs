//! Strict parsing of model responses into stage payloads.
//!
//! Two payload families exist: JSON object payloads (rewriting, state
//! summary) and line-oriented records (triplet extraction, technique
//! identification). Parsing strips code fences, locates the first
//! well-formed payload, and makes one repair pass (trim surrounding prose,
//! drop trailing commas) before giving up.

use serde::de::DeserializeOwned;

use super::GatewayError;

/// Marker a model may emit when a line-record stage has nothing to report.
pub const EMPTY_MARKER: &str = "none";

/// One "serial: rest" record from a line-oriented payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineRecord {
    pub serial: u32,
    pub rest: String,
}

/// Drop surrounding markdown code fences (``` or ```lang) if present.
pub fn strip_code_fences(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(inner) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let Some(inner) = inner.strip_suffix("```") else {
        return trimmed;
    };
    // Skip an optional language tag on the opening fence.
    match inner.split_once('\n') {
        Some((first, rest)) if first.chars().all(|c| c.is_ascii_alphanumeric()) => rest.trim(),
        _ => inner.trim(),
    }
}

/// First balanced `{...}` object in the text, string-aware.
pub fn first_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Remove trailing commas before `}` or `]`, outside strings.
pub fn remove_trailing_commas(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut in_string = false;
    let mut escaped = false;
    for &b in bytes {
        if in_string {
            out.push(b);
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => {
                in_string = true;
                out.push(b);
            }
            b'}' | b']' => {
                // Drop a comma that directly precedes the closer.
                let mut k = out.len();
                while k > 0 && (out[k - 1] as char).is_ascii_whitespace() {
                    k -= 1;
                }
                if k > 0 && out[k - 1] == b',' {
                    out.remove(k - 1);
                }
                out.push(b);
            }
            _ => out.push(b),
        }
    }
    String::from_utf8(out).expect("comma removal keeps utf8 intact")
}

fn truncate_raw(text: &str) -> String {
    const LIMIT: usize = 2000;
    if text.len() <= LIMIT {
        text.to_string()
    } else {
        let mut cut = LIMIT;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        format!("{}…", &text[..cut])
    }
}

/// Parse a JSON object payload against schema `T`.
///
/// Invalid JSON after the repair pass is [`GatewayError::Unparseable`] (the
/// raw text rides along for fixture capture); valid JSON that violates the
/// schema is [`GatewayError::Schema`] naming the violated field.
pub fn parse_json_payload<T: DeserializeOwned>(
    schema: &'static str,
    text: &str,
) -> Result<T, GatewayError> {
    let stripped = strip_code_fences(text);
    let candidate = first_json_object(stripped).ok_or_else(|| GatewayError::Unparseable {
        schema,
        raw: truncate_raw(text),
    })?;

    let value: serde_json::Value = match serde_json::from_str(candidate) {
        Ok(v) => v,
        Err(_) => serde_json::from_str(&remove_trailing_commas(candidate)).map_err(|_| {
            GatewayError::Unparseable {
                schema,
                raw: truncate_raw(text),
            }
        })?,
    };

    serde_path_to_error::deserialize(value).map_err(|e| GatewayError::Schema {
        schema,
        detail: e.to_string(),
    })
}

/// Parse a line-oriented payload into "serial: rest" records.
///
/// Lines that do not look like records are ignored (models wrap output in
/// prose); a payload with no records at all is unparseable unless it is the
/// single [`EMPTY_MARKER`] line.
pub fn parse_line_records(
    schema: &'static str,
    text: &str,
) -> Result<Vec<LineRecord>, GatewayError> {
    let stripped = strip_code_fences(text);
    let mut records = Vec::new();
    let mut nonempty_lines = 0usize;
    for line in stripped.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        nonempty_lines += 1;
        if let Some((serial_part, rest)) = line.split_once(':') {
            let serial_part = serial_part.trim().trim_start_matches('#');
            if let Ok(serial) = serial_part.parse::<u32>() {
                records.push(LineRecord {
                    serial,
                    rest: rest.trim().to_string(),
                });
            }
        }
    }
    if records.is_empty() {
        let only_marker =
            nonempty_lines == 1 && stripped.trim().eq_ignore_ascii_case(EMPTY_MARKER);
        if only_marker {
            return Ok(Vec::new());
        }
        return Err(GatewayError::Unparseable {
            schema,
            raw: truncate_raw(text),
        });
    }
    Ok(records)
}
