//! Precision, recall, F1 and non-interpolated average precision.

use crate::error::{Error, Result};

/// Precision, recall and F1 from confusion counts. A zero denominator
/// yields 0 for that metric.
pub fn precision_recall_f1(tp: i64, fp: i64, fn_: i64) -> Result<(f64, f64, f64)> {
    if tp < 0 || fp < 0 || fn_ < 0 {
        return Err(Error::Contract(format!("negative confusion count ({tp}, {fp}, {fn_})")));
    }
    let ratio = |num: i64, den: i64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Ok((p, r, f1))
}

fn ranking(scores: &[f64], labels: &[bool]) -> Result<Vec<usize>> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::UndefinedAp);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN"));
    Ok(order)
}

/// Σₙ (Rₙ − Rₙ₋₁)·Pₙ over the ranking by descending score, one rank per
/// item (equal scores keep their input order). No interpolation.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let order = ranking(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut tp = 0.0;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (n, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1.0;
        }
        let recall = tp / positives;
        let precision = tp / (n + 1) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// `(recall, precision)` after each rank of the sweep.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let order = ranking(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut tp = 0.0;
    Ok(order
        .iter()
        .enumerate()
        .map(|(n, &i)| {
            if labels[i] {
                tp += 1.0;
            }
            (tp / positives, tp / (n + 1) as f64)
        })
        .collect())
}

/// `m[t][p]` counts samples of true class `t` predicted as `p`.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if truth.len() != pred.len() {
        return Err(Error::Contract(format!("{} truths for {} predictions", truth.len(), pred.len())));
    }
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= classes || p >= classes {
            return Err(Error::Label(format!("class index {} out of {classes}", t.max(p))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Unweighted mean F1 over classes with at least one true instance.
pub fn macro_f1(truth: &[usize], pred: &[usize], classes: usize) -> Result<f64> {
    let m = confusion_matrix(truth, pred, classes)?;
    let mut sum = 0.0;
    let mut counted = 0;
    for c in 0..classes {
        let support: usize = m[c].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = m[c][c];
        let predicted: usize = m.iter().map(|row| row[c]).sum();
        let (_, _, f1) = precision_recall_f1(tp as i64, (predicted - tp) as i64, (support - tp) as i64)?;
        sum += f1;
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { sum / counted as f64 })
}
