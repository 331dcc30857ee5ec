//! Curation: label validation, cross-source deduplication and removal of
//! conflicting (multi-label) strains.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::record::{RawRecord, Source, StrainRecord};
use super::schema::{split_subtype, LabelSchema};
use crate::tokenizer::{normalize_sequence, validate_sequence};
use crate::DATASET_FORMAT_VERSION;

/// Why a raw record did not make it into the curated set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum DropReason {
    #[serde(rename = "h0n0")]
    H0N0,
    #[serde(rename = "bad-subtype")]
    BadSubtype,
    #[serde(rename = "unmapped-host")]
    UnmappedHost,
    #[serde(rename = "no-sequence")]
    NoSequence,
    #[serde(rename = "bad-sequence")]
    BadSequence,
    #[serde(rename = "dedup-gisaid")]
    DedupGisaid,
    #[serde(rename = "dedup-other")]
    DedupOther,
    #[serde(rename = "redundant")]
    Redundant,
    #[serde(rename = "multi-label")]
    MultiLabel,
}

impl DropReason {
    pub fn label(self) -> &'static str {
        match self {
            DropReason::H0N0 => "h0n0",
            DropReason::BadSubtype => "bad-subtype",
            DropReason::UnmappedHost => "unmapped-host",
            DropReason::NoSequence => "no-sequence",
            DropReason::BadSequence => "bad-sequence",
            DropReason::DedupGisaid => "dedup-gisaid",
            DropReason::DedupOther => "dedup-other",
            DropReason::Redundant => "redundant",
            DropReason::MultiLabel => "multi-label",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Dropped {
    pub strain_id: String,
    pub source: Source,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CurationLog {
    pub input: usize,
    pub kept: usize,
    pub dropped: Vec<Dropped>,
}

impl CurationLog {
    pub fn counts(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for d in &self.dropped {
            *m.entry(d.reason.label()).or_insert(0) += 1;
        }
        m
    }

    pub fn count(&self, reason: DropReason) -> usize {
        self.dropped.iter().filter(|d| d.reason == reason).count()
    }

    /// `reason:count` lines, sorted by reason, preceded by the kept count.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("input:{}", self.input), format!("kept:{}", self.kept)];
        lines.extend(self.counts().into_iter().map(|(k, v)| format!("{k}:{v}")));
        lines
    }
}

fn clean_seq(seq: &Option<String>) -> Result<Option<String>, String> {
    match seq {
        None => Ok(None),
        Some(s) => {
            let n = normalize_sequence(s);
            if n.is_empty() {
                return Ok(None);
            }
            validate_sequence(&n).map_err(|e| e.to_string())?;
            Ok(Some(n))
        }
    }
}

fn validate(raw: &RawRecord, schema: &LabelSchema) -> Result<StrainRecord, (DropReason, String)> {
    if split_subtype(&raw.subtype) == Some((0, 0)) {
        return Err((DropReason::H0N0, raw.subtype.clone()));
    }
    let subtype = schema.parse_subtype(&raw.subtype).map_err(|e| {
        log::warn!("{}: {e}", raw.strain_id);
        (DropReason::BadSubtype, e.to_string())
    })?;
    let host_class = schema
        .map_host(&raw.host)
        .ok_or_else(|| (DropReason::UnmappedHost, raw.host.clone()))?
        .to_string();
    let ha_seq = clean_seq(&raw.ha_seq).map_err(|e| (DropReason::BadSequence, format!("HA: {e}")))?;
    let na_seq = clean_seq(&raw.na_seq).map_err(|e| (DropReason::BadSequence, format!("NA: {e}")))?;
    if ha_seq.is_none() && na_seq.is_none() {
        return Err((DropReason::NoSequence, String::new()));
    }
    Ok(StrainRecord {
        format: DATASET_FORMAT_VERSION,
        strain_id: raw.strain_id.clone(),
        ha_seq,
        na_seq,
        host_raw: raw.host.clone(),
        host_class,
        subtype_raw: raw.subtype.clone(),
        ha_subtype: subtype.ha,
        na_subtype: subtype.na,
        year: raw.year,
        complete: raw.complete,
        source: raw.source,
    })
}

/// Curates raw records against `schema`.
///
/// Per record: H0N0 strains, unparsable subtypes, unmapped hosts and records
/// without a usable sequence are dropped. Per strain id: copies from a
/// lower-precedence source are dropped when a higher one exists (IRD over
/// GISAID over other), identical copies collapse to one, and strains left
/// with conflicting copies are dropped entirely. Output keeps the order of
/// first appearance.
pub fn curate(raw: &[RawRecord], schema: &LabelSchema) -> (Vec<StrainRecord>, CurationLog) {
    let mut log = CurationLog {
        input: raw.len(),
        ..Default::default()
    };
    let drop = |log: &mut CurationLog, r: &RawRecord, reason: DropReason, detail: String| {
        log::debug!("drop {} ({}): {}", r.strain_id, reason.label(), detail);
        log.dropped.push(Dropped {
            strain_id: r.strain_id.clone(),
            source: r.source,
            reason,
            detail,
        });
    };

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(&RawRecord, StrainRecord)>> = HashMap::new();
    for r in raw {
        match validate(r, schema) {
            Ok(rec) => {
                let g = groups.entry(r.strain_id.clone()).or_insert_with(|| {
                    order.push(r.strain_id.clone());
                    Vec::new()
                });
                g.push((r, rec));
            }
            Err((reason, detail)) => drop(&mut log, r, reason, detail),
        }
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let group = groups.remove(&id).unwrap();
        let best = group.iter().map(|(r, _)| r.source.precedence()).min().unwrap();
        let mut survivors: Vec<StrainRecord> = Vec::new();
        let mut survivor_raws: Vec<&RawRecord> = Vec::new();
        for (r, rec) in group {
            if r.source.precedence() > best {
                let reason = if r.source == Source::Gisaid {
                    DropReason::DedupGisaid
                } else {
                    DropReason::DedupOther
                };
                drop(&mut log, r, reason, "present in a higher-precedence source".into());
            } else if survivors.contains(&rec) {
                drop(&mut log, r, DropReason::Redundant, "identical copy".into());
            } else {
                survivors.push(rec);
                survivor_raws.push(r);
            }
        }
        if survivors.len() > 1 {
            for r in survivor_raws {
                drop(&mut log, r, DropReason::MultiLabel, "conflicting copies".into());
            }
        } else {
            out.extend(survivors);
        }
    }
    log.kept = out.len();
    (out, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn raw(id: &str, source: Source, host: &str, subtype: &str) -> RawRecord {
        RawRecord {
            strain_id: id.into(),
            source,
            host: host.into(),
            subtype: subtype.into(),
            year: Some(2015),
            complete: true,
            ha_seq: Some("MKAILVVLLYTFATA".into()),
            na_seq: Some("MNPNQKIITIGSICM".into()),
        }
    }

    #[test]
    fn ird_copy_wins_over_gisaid() {
        let schema = LabelSchema::default_schema();
        let mut g = raw("s1", Source::Gisaid, "mallard", "H5N1");
        g.ha_seq = Some("MKAILVVLLYTFATAQ".into());
        let (out, log) = curate(&[g, raw("s1", Source::Ird, "mallard", "H5N1")], &schema);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, Source::Ird);
        assert_eq!(log.count(DropReason::DedupGisaid), 1);
        assert!(log.summary_lines().contains(&"dedup-gisaid:1".to_string()));
    }

    #[test]
    fn h0n0_and_unmapped_hosts_are_dropped() {
        let schema = LabelSchema::default_schema();
        let (out, log) = curate(
            &[
                raw("a", Source::Ird, "chicken", "H0N0"),
                raw("b", Source::Gisaid, "host", "H5N8"),
                raw("c", Source::Ird, "chicken", "H5Nx"),
                raw("d", Source::Ird, "chicken", "H9N2"),
            ],
            &schema,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].strain_id, "d");
        assert_eq!(out[0].host_class, "Phasianidae");
        assert_eq!(log.count(DropReason::H0N0), 1);
        assert_eq!(log.count(DropReason::UnmappedHost), 1);
        assert_eq!(log.count(DropReason::BadSubtype), 1);
        let unmapped = log.dropped.iter().find(|d| d.reason == DropReason::UnmappedHost).unwrap();
        assert_eq!(unmapped.strain_id, "b");
        assert!(log.summary_lines().contains(&"unmapped-host:1".to_string()));
    }

    #[test]
    fn conflicting_copies_in_one_source_drop_the_strain() {
        let schema = LabelSchema::default_schema();
        let (out, log) = curate(
            &[
                raw("x", Source::Ird, "chicken", "H5N1"),
                raw("x", Source::Ird, "chicken", "H7N9"),
                raw("y", Source::Ird, "dog", "H3N2"),
                raw("y", Source::Ird, "dog", "H3N2"),
            ],
            &schema,
        );
        assert_eq!(out.iter().map(|r| r.strain_id.as_str()).collect::<Vec<_>>(), vec!["y"]);
        assert_eq!(log.count(DropReason::MultiLabel), 2);
        assert_eq!(log.count(DropReason::Redundant), 1);
    }

    #[test]
    fn sequences_are_normalized_and_validated() {
        let schema = LabelSchema::default_schema();
        let mut a = raw("a", Source::Ird, "chicken", "H5N1");
        a.ha_seq = Some("mkai-lv*".into());
        let mut b = raw("b", Source::Ird, "chicken", "H5N1");
        b.na_seq = Some("MK1".into());
        let mut c = raw("c", Source::Ird, "chicken", "H5N1");
        c.ha_seq = None;
        c.na_seq = None;
        let (out, log) = curate(&[a, b, c], &schema);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].ha_seq.as_deref(), Some("MKAILV"));
        assert_eq!(log.count(DropReason::BadSequence), 1);
        assert_eq!(log.count(DropReason::NoSequence), 1);
    }

    fn arb_raw() -> impl Strategy<Value = RawRecord> {
        let ids = prop::sample::select(vec!["s1", "s2", "s3", "s4"]);
        let sources = prop::sample::select(vec![Source::Ird, Source::Gisaid, Source::Other]);
        let hosts = prop::sample::select(vec!["chicken", "mallard", "host", "Human"]);
        let subtypes = prop::sample::select(vec!["H5N1", "H0N0", "H3N2", "H17N10", "bad"]);
        let seqs = prop::sample::select(vec![None, Some("MKAILV"), Some("mnpnq*"), Some("MK7")]);
        (ids, sources, hosts, subtypes, seqs.clone(), seqs, prop::option::of(1990..2023i32), any::<bool>())
            .prop_map(|(id, source, host, subtype, ha, na, year, complete)| RawRecord {
                strain_id: id.into(),
                source,
                host: host.into(),
                subtype: subtype.into(),
                year,
                complete,
                ha_seq: ha.map(String::from),
                na_seq: na.map(String::from),
            })
    }

    proptest! {
        #[test]
        fn curation_is_idempotent_with_unique_ids(raws in prop::collection::vec(arb_raw(), 0..16)) {
            let schema = LabelSchema::default_schema();
            let (once, _) = curate(&raws, &schema);
            let ids: HashSet<_> = once.iter().map(|r| &r.strain_id).collect();
            prop_assert_eq!(ids.len(), once.len());
            let again: Vec<RawRecord> = once.iter().map(StrainRecord::to_raw).collect();
            let (twice, log) = curate(&again, &schema);
            prop_assert_eq!(&twice, &once);
            prop_assert!(log.dropped.is_empty());
        }
    }
}
