//! Strain records, the metadata sidecar, and the curated dataset file.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fasta::header_key;
use crate::error::{Error, Result};
use crate::DATASET_FORMAT_VERSION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "IRD")]
    Ird,
    #[serde(rename = "GISAID")]
    Gisaid,
    #[serde(rename = "other")]
    Other,
}

impl Source {
    pub fn parse(s: &str) -> Source {
        match s.trim().to_ascii_uppercase().as_str() {
            "IRD" => Source::Ird,
            "GISAID" => Source::Gisaid,
            _ => Source::Other,
        }
    }

    /// Lower ranks win when the same strain comes from several sources.
    pub fn precedence(self) -> u8 {
        match self {
            Source::Ird => 0,
            Source::Gisaid => 1,
            Source::Other => 2,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Ird => "IRD",
            Source::Gisaid => "GISAID",
            Source::Other => "other",
        })
    }
}

/// One metadata row joined with its sequences, before curation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub strain_id: String,
    pub source: Source,
    pub host: String,
    pub subtype: String,
    pub year: Option<i32>,
    pub complete: bool,
    pub ha_seq: Option<String>,
    pub na_seq: Option<String>,
}

/// A curated strain. Class fields hold names from the [`LabelSchema`](super::LabelSchema).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrainRecord {
    pub format: u32,
    pub strain_id: String,
    pub ha_seq: Option<String>,
    pub na_seq: Option<String>,
    pub host_raw: String,
    pub host_class: String,
    pub subtype_raw: String,
    pub ha_subtype: String,
    pub na_subtype: String,
    pub year: Option<i32>,
    pub complete: bool,
    pub source: Source,
}

impl StrainRecord {
    /// The raw form this record was curated from.
    pub fn to_raw(&self) -> RawRecord {
        RawRecord {
            strain_id: self.strain_id.clone(),
            source: self.source,
            host: self.host_raw.clone(),
            subtype: self.subtype_raw.clone(),
            year: self.year,
            complete: self.complete,
            ha_seq: self.ha_seq.clone(),
            na_seq: self.na_seq.clone(),
        }
    }

    pub fn without_na(&self) -> StrainRecord {
        StrainRecord {
            na_seq: None,
            ..self.clone()
        }
    }

    pub fn without_ha(&self) -> StrainRecord {
        StrainRecord {
            ha_seq: None,
            ..self.clone()
        }
    }
}

pub const METADATA_COLUMNS: [&str; 6] = ["strain_id", "source", "host", "subtype", "year", "completeness"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetadataRow {
    pub strain_id: String,
    pub source: Source,
    pub host: String,
    pub subtype: String,
    pub year: Option<i32>,
    pub complete: bool,
}

fn parse_bool_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "complete" | "true" | "1" | "yes" | "y" => Some(true),
        "incomplete" | "partial" | "false" | "0" | "no" | "n" => Some(false),
        _ => None,
    }
}

fn parse_year(s: &str) -> std::result::Result<Option<i32>, String> {
    let t = s.trim();
    if t.is_empty() || matches!(t.to_ascii_lowercase().as_str(), "na" | "n/a" | "unknown" | "?") {
        return Ok(None);
    }
    t.parse::<i32>().map(Some).map_err(|_| format!("invalid year {t:?}"))
}

/// Reads the tab-separated metadata sidecar. The header row must name
/// exactly the six expected columns in order.
pub fn read_metadata(path: &Path) -> Result<Vec<MetadataRow>> {
    let text = fs::read_to_string(path)?;
    read_metadata_str(&text, path)
}

pub fn read_metadata_str(text: &str, path: &Path) -> Result<Vec<MetadataRow>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != METADATA_COLUMNS {
        return Err(err(
            1,
            format!("expected header {:?}, found {:?}", METADATA_COLUMNS.join("\t"), got.join("\t")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() != 6 {
            return Err(err(line, format!("expected 6 columns, found {}", rec.len())));
        }
        let strain_id = rec[0].trim().to_string();
        if strain_id.is_empty() {
            return Err(err(line, "empty strain_id".into()));
        }
        let year = parse_year(&rec[4]).map_err(|m| err(line, m))?;
        let complete =
            parse_bool_flag(&rec[5]).ok_or_else(|| err(line, format!("invalid completeness {:?}", &rec[5])))?;
        rows.push(MetadataRow {
            strain_id,
            source: Source::parse(&rec[1]),
            host: rec[2].trim().to_string(),
            subtype: rec[3].trim().to_string(),
            year,
            complete,
        });
    }
    Ok(rows)
}

/// Sequences indexed by strain key, optionally qualified by source
/// (`>strain|IRD`). Distinct sequences under one key are all kept.
#[derive(Default)]
pub struct SequenceIndex {
    map: HashMap<(String, Option<Source>), Vec<String>>,
}

impl SequenceIndex {
    pub fn from_fasta(records: &[(String, String)]) -> Self {
        let mut idx = SequenceIndex::default();
        for (header, seq) in records {
            let key = header_key(header).to_string();
            let source = header
                .split('|')
                .nth(1)
                .map(|s| s.split_whitespace().next().unwrap_or(""))
                .filter(|s| !s.is_empty())
                .map(Source::parse);
            let entry = idx.map.entry((key, source)).or_default();
            if !entry.contains(seq) {
                entry.push(seq.clone());
            }
        }
        idx
    }

    fn lookup(&self, id: &str, source: Source) -> &[String] {
        self.map
            .get(&(id.to_string(), Some(source)))
            .or_else(|| self.map.get(&(id.to_string(), None)))
            .map_or(&[], Vec::as_slice)
    }
}

/// Joins metadata rows with HA/NA sequences. A strain with several distinct
/// sequences under the same key yields one raw record per combination so
/// that curation can reject it as multi-label.
pub fn assemble(rows: &[MetadataRow], ha: &SequenceIndex, na: &SequenceIndex) -> Vec<RawRecord> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let opts = |seqs: &[String]| -> Vec<Option<String>> {
            if seqs.is_empty() {
                vec![None]
            } else {
                seqs.iter().cloned().map(Some).collect()
            }
        };
        for h in opts(ha.lookup(&row.strain_id, row.source)) {
            for n in opts(na.lookup(&row.strain_id, row.source)) {
                out.push(RawRecord {
                    strain_id: row.strain_id.clone(),
                    source: row.source,
                    host: row.host.clone(),
                    subtype: row.subtype.clone(),
                    year: row.year,
                    complete: row.complete,
                    ha_seq: h.clone(),
                    na_seq: n,
                });
            }
        }
    }
    out
}

pub fn write_dataset(path: &Path, records: &[StrainRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<StrainRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: StrainRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.format != DATASET_FORMAT_VERSION {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("unsupported record format {}", rec.format),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_requires_exact_header() {
        let p = Path::new("m.tsv");
        let ok = "strain_id\tsource\thost\tsubtype\tyear\tcompleteness\n\
                  A/duck/1\tIRD\tmallard\tH5N1\t2019\tcomplete\n\
                  A/duck/2\tgisaid\tchicken\tH9N2\t\tincomplete\n";
        let rows = read_metadata_str(ok, p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].source, Source::Gisaid);
        assert_eq!(rows[1].year, None);
        assert!(!rows[1].complete);

        let bad_header = "strain\tsource\thost\tsubtype\tyear\tcompleteness\n";
        assert!(matches!(read_metadata_str(bad_header, p), Err(Error::Parse { line: 1, .. })));
        let bad_flag = "strain_id\tsource\thost\tsubtype\tyear\tcompleteness\nA\tIRD\tx\tH1N1\t2000\tmaybe\n";
        assert!(matches!(read_metadata_str(bad_flag, p), Err(Error::Parse { line: 2, .. })));
        let short_row = "strain_id\tsource\thost\tsubtype\tyear\tcompleteness\nA\tIRD\tx\n";
        assert!(matches!(read_metadata_str(short_row, p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn assemble_prefers_source_qualified_sequences() {
        let ha = SequenceIndex::from_fasta(&[
            ("s1|IRD".into(), "AAAA".into()),
            ("s1|GISAID".into(), "CCCC".into()),
            ("s2".into(), "DDDD".into()),
        ]);
        let na = SequenceIndex::from_fasta(&[("s1".into(), "EEEE".into())]);
        let row = |id: &str, src| MetadataRow {
            strain_id: id.into(),
            source: src,
            host: "duck".into(),
            subtype: "H1N1".into(),
            year: Some(2000),
            complete: true,
        };
        let raw = assemble(&[row("s1", Source::Gisaid), row("s2", Source::Ird), row("s3", Source::Ird)], &ha, &na);
        assert_eq!(raw[0].ha_seq.as_deref(), Some("CCCC"));
        assert_eq!(raw[0].na_seq.as_deref(), Some("EEEE"));
        assert_eq!(raw[1].ha_seq.as_deref(), Some("DDDD"));
        assert_eq!(raw[1].na_seq, None);
        assert_eq!((raw[2].ha_seq.as_ref(), raw[2].na_seq.as_ref()), (None, None));
    }
}
