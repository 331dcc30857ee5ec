//! Alignment-free nearest-neighbour baseline on trigram count vectors, and
//! scoring of externally produced best-hit tables.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nested_cv::{summarize, CvSummary};
use super::report::{one_vs_all_report, EvalReport, Provenance};
use crate::data::{FoldPlan, LabelSchema, StrainRecord};
use crate::error::{Error, Result};
use crate::tokenizer::{tokenize, NGRAM};

/// Sparse trigram counts of a strain; HA and NA trigrams are kept apart.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrigramProfile {
    counts: HashMap<(u8, String), f64>,
    norm: f64,
}

impl TrigramProfile {
    pub fn of(r: &StrainRecord) -> Result<Self> {
        let mut counts = HashMap::new();
        for (channel, seq) in [(0u8, &r.ha_seq), (1u8, &r.na_seq)] {
            if let Some(s) = seq {
                for t in tokenize(s, NGRAM)? {
                    *counts.entry((channel, t)).or_insert(0.0) += 1.0;
                }
            }
        }
        let norm = counts.values().map(|c: &f64| c * c).sum::<f64>().sqrt();
        Ok(TrigramProfile { counts, norm })
    }

    pub fn cosine(&self, other: &TrigramProfile) -> f64 {
        if self.norm == 0.0 || other.norm == 0.0 {
            return 0.0;
        }
        let (small, large) = if self.counts.len() <= other.counts.len() { (self, other) } else { (other, self) };
        let dot: f64 = small
            .counts
            .iter()
            .filter_map(|(k, a)| large.counts.get(k).map(|b| a * b))
            .sum();
        dot / (self.norm * other.norm)
    }
}

fn labels_of(schema: &LabelSchema, r: &StrainRecord) -> Result<[usize; 3]> {
    let missing = |v: &str| Error::Label(format!("{}: {v:?} is not in the label schema", r.strain_id));
    Ok([
        schema.host_index(&r.host_class).ok_or_else(|| missing(&r.host_class))?,
        schema.ha_index(&r.ha_subtype).ok_or_else(|| missing(&r.ha_subtype))?,
        schema.na_index(&r.na_subtype).ok_or_else(|| missing(&r.na_subtype))?,
    ])
}

fn vote(schema: &LabelSchema, neighbours: &[[usize; 3]]) -> [Vec<f64>; 3] {
    let counts = schema.class_counts();
    let mut out: [Vec<f64>; 3] = [vec![0.0; counts[0]], vec![0.0; counts[1]], vec![0.0; counts[2]]];
    let w = 1.0 / neighbours.len() as f64;
    for n in neighbours {
        for h in 0..3 {
            out[h][n[h]] += w;
        }
    }
    out
}

/// Vote-share probabilities for each test record from its `k` most
/// cosine-similar training records. Equal similarities favour the earlier
/// training record.
pub fn knn_predict(train: &[StrainRecord], test: &[StrainRecord], k: usize, schema: &LabelSchema) -> Result<Vec<[Vec<f64>; 3]>> {
    if train.is_empty() {
        return Err(Error::Contract("nearest-neighbour baseline needs a non-empty training set".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let k = k.min(train.len());
    let profiles = train.iter().map(TrigramProfile::of).collect::<Result<Vec<_>>>()?;
    let labels = train.iter().map(|r| labels_of(schema, r)).collect::<Result<Vec<_>>>()?;
    test.iter()
        .map(|q| {
            let qp = TrigramProfile::of(q)?;
            let mut sims: Vec<(usize, f64)> = profiles.iter().map(|p| qp.cosine(p)).enumerate().collect();
            sims.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite similarity").then(a.0.cmp(&b.0)));
            let nn: Vec<[usize; 3]> = sims[..k].iter().map(|&(i, _)| labels[i]).collect();
            Ok(vote(schema, &nn))
        })
        .collect()
}

/// Baseline report on `test` using `train` as the reference set.
pub fn knn_baseline(
    train: &[StrainRecord],
    test: &[StrainRecord],
    k: usize,
    schema: &LabelSchema,
    provenance: Provenance,
) -> Result<EvalReport> {
    let probs = knn_predict(train, test, k, schema)?;
    let truth = test.iter().map(|r| labels_of(schema, r)).collect::<Result<Vec<_>>>()?;
    one_vs_all_report(&probs, &truth, schema, provenance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineCvResult {
    pub folds: Vec<EvalReport>,
    pub summary: CvSummary,
}

/// The baseline under the outer folds of `plan`.
pub fn knn_baseline_cv(records: &[StrainRecord], plan: &FoldPlan, k: usize, schema: &LabelSchema) -> Result<BaselineCvResult> {
    let index: HashMap<&str, &StrainRecord> = records.iter().map(|r| (r.strain_id.as_str(), r)).collect();
    let pick = |ids: &[String]| -> Result<Vec<StrainRecord>> {
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|r| (*r).clone())
                    .ok_or_else(|| Error::Contract(format!("fold plan id {id} is not in the dataset")))
            })
            .collect()
    };
    let mut folds = Vec::with_capacity(plan.outer.len());
    for (i, outer) in plan.outer.iter().enumerate() {
        let train = pick(&plan.outer_train(i))?;
        let test = pick(&outer.test)?;
        folds.push(knn_baseline(
            &train,
            &test,
            k,
            schema,
            Provenance {
                label: format!("knn baseline outer fold {i}"),
                fold: Some(i),
                seed: Some(plan.seed),
                test_ids: outer.test.clone(),
            },
        )?);
    }
    let summary = summarize(&folds);
    Ok(BaselineCvResult { folds, summary })
}

/// Reads a headerless two-column TSV of `(query_id, subject_id)` best hits.
/// Extra columns (as in tabular aligner output) are ignored; for repeated
/// queries the first row wins.
pub fn read_best_hits(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let (q, s) = match (cols.next(), cols.next()) {
            (Some(q), Some(s)) if !q.is_empty() && !s.is_empty() => (q.to_string(), s.to_string()),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    msg: "expected query_id<TAB>subject_id".into(),
                })
            }
        };
        if seen.insert(q.clone()) {
            out.push((q, s));
        }
    }
    Ok(out)
}

/// Scores best hits: each test record takes its subject's labels. Test
/// records without a hit, or whose subject is not a training record, get a
/// uniform distribution.
pub fn score_best_hits(
    hits: &[(String, String)],
    train: &[StrainRecord],
    test: &[StrainRecord],
    schema: &LabelSchema,
    provenance: Provenance,
) -> Result<EvalReport> {
    let by_id: HashMap<&str, &StrainRecord> = train.iter().map(|r| (r.strain_id.as_str(), r)).collect();
    let hit: HashMap<&str, &str> = hits.iter().map(|(q, s)| (q.as_str(), s.as_str())).collect();
    let counts = schema.class_counts();
    let mut probs = Vec::with_capacity(test.len());
    let mut missing = 0;
    for q in test {
        match hit.get(q.strain_id.as_str()).and_then(|s| by_id.get(s)) {
            Some(subject) => probs.push(vote(schema, &[labels_of(schema, subject)?])),
            None => {
                missing += 1;
                probs.push([0, 1, 2].map(|h| vec![1.0 / counts[h] as f64; counts[h]]));
            }
        }
    }
    if missing > 0 {
        log::warn!("{missing} test records have no usable best hit; scored as uniform");
    }
    let truth = test.iter().map(|r| labels_of(schema, r)).collect::<Result<Vec<_>>>()?;
    one_vs_all_report(&probs, &truth, schema, provenance)
}
