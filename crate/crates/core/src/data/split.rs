//! Era splits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::record::StrainRecord;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Pre20,
    Post20,
    Incomplete,
    Custom,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Pre20 => "pre20",
            SplitName::Post20 => "post20",
            SplitName::Incomplete => "incomplete",
            SplitName::Custom => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub records: Vec<StrainRecord>,
}

/// Result of [`split_by_era`]. `later` holds complete records dated after
/// 2022 and `quarantine` holds complete records without a year; neither
/// belongs to the three era splits but both are kept for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct EraSplit {
    pub pre20: DatasetSplit,
    pub post20: DatasetSplit,
    pub incomplete: DatasetSplit,
    pub later: Vec<StrainRecord>,
    pub quarantine: Vec<StrainRecord>,
}

pub fn split_by_era(records: &[StrainRecord]) -> EraSplit {
    let mut out = EraSplit {
        pre20: DatasetSplit { name: SplitName::Pre20, records: Vec::new() },
        post20: DatasetSplit { name: SplitName::Post20, records: Vec::new() },
        incomplete: DatasetSplit { name: SplitName::Incomplete, records: Vec::new() },
        later: Vec::new(),
        quarantine: Vec::new(),
    };
    for r in records {
        let bucket = match (r.complete, r.year) {
            (false, _) => &mut out.incomplete.records,
            (true, None) => {
                log::warn!("{}: missing year, quarantined", r.strain_id);
                &mut out.quarantine
            }
            (true, Some(y)) if y < 2020 => &mut out.pre20.records,
            (true, Some(y)) if y <= 2022 => &mut out.post20.records,
            (true, Some(_)) => &mut out.later,
        };
        bucket.push(r.clone());
    }
    out
}

/// Seeded random holdout: `(kept, held)` with `round(fraction·n)` records
/// held out, both in input order.
pub fn holdout_split(records: &[StrainRecord], fraction: f64, seed: u64) -> (Vec<StrainRecord>, Vec<StrainRecord>) {
    let n = records.len();
    let held = ((fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "data/holdout"));
    let mut is_held = vec![false; n];
    for &i in &order[..held] {
        is_held[i] = true;
    }
    let (h, k): (Vec<_>, Vec<_>) = records.iter().cloned().zip(is_held).partition(|(_, h)| *h);
    (k.into_iter().map(|(r, _)| r).collect(), h.into_iter().map(|(r, _)| r).collect())
}
