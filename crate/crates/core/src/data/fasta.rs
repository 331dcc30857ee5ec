//! Minimal FASTA reader.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Records as `(header, sequence)` with headers verbatim (minus `>`) and
/// wrapped sequence lines joined.
pub fn parse_fasta(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    parse_fasta_str(&text, path)
}

pub fn parse_fasta_str(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut records: Vec<(String, String, usize)> = Vec::new();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if let Some(header) = line.strip_prefix('>') {
            if let Some((h, s, at)) = records.last() {
                if s.is_empty() {
                    return Err(err(*at, format!("record {h:?} has no sequence")));
                }
            }
            records.push((header.to_string(), String::new(), line_no));
        } else if line.starts_with(';') || line.trim().is_empty() {
            continue;
        } else {
            match records.last_mut() {
                Some((_, seq, _)) => seq.push_str(line.trim()),
                None => return Err(err(line_no, "sequence data before the first header".into())),
            }
        }
    }
    if let Some((h, s, at)) = records.last() {
        if s.is_empty() {
            return Err(err(*at, format!("record {h:?} has no sequence")));
        }
    }
    Ok(records.into_iter().map(|(h, s, _)| (h, s)).collect())
}

/// Strain key of a header: the text before the first whitespace or `|`.
pub fn header_key(header: &str) -> &str {
    header
        .split(|c: char| c.is_whitespace() || c == '|')
        .next()
        .unwrap_or("")
}
