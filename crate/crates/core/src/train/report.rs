//! One-vs-all evaluation reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{average_precision, confusion_matrix, pr_curve, precision_recall_f1};
use crate::data::LabelSchema;
use crate::error::{Error, Result};
use crate::model::{argmax, HEADS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the class has no true instance.
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub class: String,
    /// `[recall, precision]` after each rank.
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub head: String,
    pub classes: Vec<ClassMetrics>,
    /// Classes entering the macro averages (at least one true instance).
    pub macro_classes: usize,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_ap: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    /// Classes absent from both truth and predictions.
    pub excluded: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    pub pr_curves: Vec<PrCurve>,
}

/// Where an evaluation came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub label: String,
    pub fold: Option<usize>,
    pub seed: Option<u64>,
    pub test_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub heads: Vec<HeadReport>,
    pub provenance: Provenance,
}

fn check_rows(probs: &[Vec<f64>], classes: usize) -> Result<()> {
    for (i, row) in probs.iter().enumerate() {
        if row.len() != classes {
            return Err(Error::dim("one_vs_all_report", &[i, row.len()], &[i, classes]));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Contract(format!("probability row {i} is not a distribution (sum {s})")));
        }
    }
    Ok(())
}

/// Report for one head from per-sample class probabilities and true classes.
pub fn head_report(head: &str, class_names: &[String], probs: &[Vec<f64>], truth: &[usize]) -> Result<HeadReport> {
    let k = class_names.len();
    if probs.len() != truth.len() {
        return Err(Error::Contract(format!("{} probability rows for {} labels", probs.len(), truth.len())));
    }
    if probs.is_empty() {
        return Err(Error::Contract("cannot report on an empty evaluation set".into()));
    }
    check_rows(probs, k)?;
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let confusion = confusion_matrix(truth, &pred, k)?;
    let mut classes = Vec::with_capacity(k);
    let mut pr_curves = Vec::new();
    let mut excluded = Vec::new();
    let (mut sp, mut sr, mut sf, mut sa, mut counted) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for c in 0..k {
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let tp = confusion[c][c];
        let (p, r, f1) = precision_recall_f1(tp as i64, (predicted - tp) as i64, (support - tp) as i64)?;
        if support > 0 && (tp == 0 || predicted == 0) {
            log::debug!("{head}/{}: zero denominator or no hits, metric set to 0", class_names[c]);
        }
        let ap = if support > 0 {
            let scores: Vec<f64> = probs.iter().map(|row| row[c]).collect();
            let labels: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            let curve = pr_curve(&scores, &labels)?;
            pr_curves.push(PrCurve {
                class: class_names[c].clone(),
                points: curve.into_iter().map(|(r, p)| [r, p]).collect(),
            });
            Some(average_precision(&scores, &labels)?)
        } else {
            if predicted == 0 {
                log::debug!("{head}/{}: absent from truth and predictions, excluded", class_names[c]);
                excluded.push(class_names[c].clone());
            } else {
                log::debug!("{head}/{}: no true instances, AP undefined, left out of macro", class_names[c]);
            }
            None
        };
        if let Some(a) = ap {
            sp += p;
            sr += r;
            sf += f1;
            sa += a;
            counted += 1;
        }
        classes.push(ClassMetrics {
            class: class_names[c].clone(),
            support,
            predicted,
            precision: p,
            recall: r,
            f1,
            ap,
        });
    }
    let n = counted as f64;
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / truth.len() as f64;
    // Single-label multi-class: micro P = micro R = accuracy.
    Ok(HeadReport {
        head: head.to_string(),
        classes,
        macro_classes: counted,
        macro_precision: sp / n,
        macro_recall: sr / n,
        macro_f1: sf / n,
        macro_ap: sa / n,
        micro_precision: accuracy,
        micro_recall: accuracy,
        micro_f1: accuracy,
        accuracy,
        excluded,
        confusion,
        pr_curves,
    })
}

/// Three-head report. `probs[i][h]` is sample `i`'s distribution for head `h`.
pub fn one_vs_all_report(
    probs: &[[Vec<f64>; 3]],
    truth: &[[usize; 3]],
    schema: &LabelSchema,
    provenance: Provenance,
) -> Result<EvalReport> {
    let heads = (0..3)
        .map(|h| {
            let p: Vec<Vec<f64>> = probs.iter().map(|row| row[h].clone()).collect();
            let t: Vec<usize> = truth.iter().map(|row| row[h]).collect();
            head_report(HEADS[h], schema.head_classes(h), &p, &t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        samples: truth.len(),
        heads,
        provenance,
    })
}

impl EvalReport {
    pub fn head(&self, name: &str) -> Option<&HeadReport> {
        self.heads.iter().find(|h| h.head == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// PR curve rows `class,recall,precision` for one head.
    pub fn pr_csv(&self, head: usize) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "recall", "precision"]).expect("in-memory write");
        for curve in &self.heads[head].pr_curves {
            for [r, p] in &curve.points {
                w.write_record([curve.class.as_str(), &r.to_string(), &p.to_string()])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Writes `<stem>.json` and one `<stem>.<head>.pr.csv` per head. Returns the paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json())?;
        let mut out = vec![json];
        for (h, head) in self.heads.iter().enumerate() {
            let p = dir.join(format!("{stem}.{}.pr.csv", head.head));
            fs::write(&p, self.pr_csv(h))?;
            out.push(p);
        }
        Ok(out)
    }
}
