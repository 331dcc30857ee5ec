//! Nested cross-validation with grid search and an id-level leakage audit.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::HyperGrid;
use super::report::{one_vs_all_report, EvalReport, Provenance};
use super::trainer::{predict_probs, train, TrainSettings};
use crate::data::{plan_nested_folds, FoldPlan, LabelSchema, StrainRecord};
use crate::error::{Error, Result};
use crate::model::{McnnConfig, McnnModel, HEADS};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSettings {
    pub k_outer: usize,
    pub k_inner: usize,
    pub seed: u64,
    pub train: TrainSettings,
    /// Upper bound on concurrently running trials.
    pub jobs: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            k_outer: 5,
            k_inner: 4,
            seed: 0,
            train: TrainSettings::default(),
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub point: usize,
    pub config: McnnConfig,
    pub inner_scores: Vec<f64>,
    pub mean_score: f64,
    pub best_epochs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterFoldResult {
    pub fold: usize,
    pub chosen_point: usize,
    pub chosen: McnnConfig,
    pub retrain_epochs: usize,
    pub trials: Vec<TrialScore>,
    pub report: EvalReport,
}

/// Mean, sample standard deviation and mean ± 1.96·SE over folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub ci95: [f64; 2],
}

impl Spread {
    pub fn of(xs: &[f64]) -> Spread {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let half = 1.96 * std / n.sqrt();
        Spread {
            mean,
            std,
            ci95: [mean - half, mean + half],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSummary {
    pub head: String,
    pub macro_precision: Spread,
    pub macro_recall: Spread,
    pub macro_f1: Spread,
    pub macro_ap: Spread,
    pub accuracy: Spread,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: usize,
    pub interval: String,
    pub heads: Vec<HeadSummary>,
}

/// Per-metric spread across fold reports.
pub fn summarize(reports: &[EvalReport]) -> CvSummary {
    let heads = HEADS
        .iter()
        .enumerate()
        .map(|(h, name)| {
            let pick = |f: fn(&super::report::HeadReport) -> f64| -> Spread {
                Spread::of(&reports.iter().map(|r| f(&r.heads[h])).collect::<Vec<_>>())
            };
            HeadSummary {
                head: name.to_string(),
                macro_precision: pick(|r| r.macro_precision),
                macro_recall: pick(|r| r.macro_recall),
                macro_f1: pick(|r| r.macro_f1),
                macro_ap: pick(|r| r.macro_ap),
                accuracy: pick(|r| r.accuracy),
            }
        })
        .collect();
    CvSummary {
        folds: reports.len(),
        interval: "per-fold mean ± 1.96·SE".into(),
        heads,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedCvResult {
    pub plan: FoldPlan,
    pub folds: Vec<OuterFoldResult>,
    pub summary: CvSummary,
    /// Outer-test ids found in any structure built for that fold's training.
    pub audit_violations: Vec<String>,
}

/// Ids seen by each training-side structure of one outer fold.
#[derive(Default)]
struct Touched(BTreeSet<String>);

impl Touched {
    fn add<'a>(&mut self, ids: impl IntoIterator<Item = &'a String>) {
        self.0.extend(ids.into_iter().cloned());
    }
}

fn select(index: &HashMap<&str, &StrainRecord>, ids: &[String]) -> Vec<StrainRecord> {
    ids.iter().map(|id| index[id.as_str()].clone()).collect()
}

fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    rng::indexed_stream(seed, label, index).gen()
}

struct TrialOutcome {
    point: usize,
    inner: usize,
    score: f64,
    best_epoch: usize,
    touched: Vec<String>,
}

fn run_trial(
    config: &McnnConfig,
    schema: &LabelSchema,
    train_recs: &[StrainRecord],
    val_recs: &[StrainRecord],
    settings: &TrainSettings,
) -> Result<(f64, usize)> {
    let mut model = McnnModel::for_training(config.clone(), schema.clone(), train_recs)?;
    let tr = model.samples(train_recs)?;
    let va = model.samples(val_recs)?;
    let history = train(&mut model, &tr, &va, settings, &mut |_| {})?;
    let best = &history.epochs[history.best_epoch - 1];
    Ok((best.val_score.unwrap_or(0.0), history.best_epoch))
}

/// Nested cross-validation over `records` (ids must be unique).
pub fn nested_cv(
    records: &[StrainRecord],
    schema: &LabelSchema,
    grid: &HyperGrid,
    base: &McnnConfig,
    settings: &CvSettings,
) -> Result<NestedCvResult> {
    let plan = plan_nested_folds(records, settings.k_outer, settings.k_inner, settings.seed)?;
    nested_cv_with_plan(records, schema, grid, base, settings, plan)
}

pub fn nested_cv_with_plan(
    records: &[StrainRecord],
    schema: &LabelSchema,
    grid: &HyperGrid,
    base: &McnnConfig,
    settings: &CvSettings,
    plan: FoldPlan,
) -> Result<NestedCvResult> {
    let v = grid.violations();
    if !v.is_empty() {
        return Err(Error::Config(v.join("; ")));
    }
    let points = grid.points(base);
    if points.is_empty() {
        return Err(Error::Config("hyperparameter grid has no valid points".into()));
    }
    let index: HashMap<&str, &StrainRecord> = records.iter().map(|r| (r.strain_id.as_str(), r)).collect();
    if index.len() != records.len() {
        return Err(Error::Contract("duplicate strain ids in cross-validation input".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut folds = Vec::with_capacity(plan.outer.len());
    let mut violations = Vec::new();
    for (i, outer) in plan.outer.iter().enumerate() {
        let mut touched = Touched::default();
        let tasks: Vec<(usize, usize)> = (0..points.len())
            .flat_map(|p| (0..plan.outer[i].inner.len()).map(move |j| (p, j)))
            .collect();
        let outcomes: Vec<TrialOutcome> = pool.install(|| {
            tasks
                .par_iter()
                .map(|&(p, j)| {
                    let (tr_ids, va_ids) = plan.inner_split(i, j);
                    let trial_index = ((i * points.len() + p) * plan.k_inner + j) as u64;
                    let config = McnnConfig {
                        seed: derive_seed(settings.seed, "cv/trial", trial_index),
                        ..points[p].clone()
                    };
                    let (score, best_epoch) = run_trial(
                        &config,
                        schema,
                        &select(&index, &tr_ids),
                        &select(&index, &va_ids),
                        &settings.train,
                    )?;
                    log::info!("outer {i} point {p} inner {j}: score {score:.4} at epoch {best_epoch}");
                    let mut ids = tr_ids;
                    ids.extend(va_ids);
                    Ok(TrialOutcome {
                        point: p,
                        inner: j,
                        score,
                        best_epoch,
                        touched: ids,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut trials: Vec<TrialScore> = points
            .iter()
            .enumerate()
            .map(|(p, c)| TrialScore {
                point: p,
                config: c.clone(),
                inner_scores: vec![0.0; plan.k_inner],
                mean_score: 0.0,
                best_epochs: vec![0; plan.k_inner],
            })
            .collect();
        for o in &outcomes {
            touched.add(&o.touched);
            trials[o.point].inner_scores[o.inner] = o.score;
            trials[o.point].best_epochs[o.inner] = o.best_epoch;
        }
        let mut chosen = 0;
        for t in trials.iter_mut() {
            t.mean_score = t.inner_scores.iter().sum::<f64>() / t.inner_scores.len() as f64;
        }
        for (p, t) in trials.iter().enumerate() {
            if t.mean_score > trials[chosen].mean_score {
                chosen = p;
            }
        }
        let epochs = &trials[chosen].best_epochs;
        let retrain_epochs = ((epochs.iter().sum::<usize>() as f64 / epochs.len() as f64).round() as usize).max(1);

        let train_ids = plan.outer_train(i);
        touched.add(&train_ids);
        let train_recs = select(&index, &train_ids);
        let config = McnnConfig {
            seed: derive_seed(settings.seed, "cv/retrain", i as u64),
            ..points[chosen].clone()
        };
        let mut model = McnnModel::for_training(config.clone(), schema.clone(), &train_recs)?;
        let tr = model.samples(&train_recs)?;
        let fixed = TrainSettings {
            max_epochs: retrain_epochs,
            patience: None,
            stop_at_perfect: false,
            ..settings.train.clone()
        };
        train(&mut model, &tr, &[], &fixed, &mut |_| {})?;

        for id in &outer.test {
            if touched.0.contains(id) {
                violations.push(format!("outer {i}: test id {id} reached a training structure"));
            }
        }
        let test_recs = select(&index, &outer.test);
        let test = model.samples(&test_recs)?;
        let probs = predict_probs(&model, &test)?;
        let truth: Vec<[usize; 3]> = test.iter().map(|s| s.labels).collect();
        let report = one_vs_all_report(
            &probs,
            &truth,
            schema,
            Provenance {
                label: format!("nested-cv outer fold {i}"),
                fold: Some(i),
                seed: Some(settings.seed),
                test_ids: outer.test.clone(),
            },
        )?;
        folds.push(OuterFoldResult {
            fold: i,
            chosen_point: chosen,
            chosen: config,
            retrain_epochs,
            trials,
            report,
        });
    }
    let reports: Vec<EvalReport> = folds.iter().map(|f| f.report.clone()).collect();
    Ok(NestedCvResult {
        plan,
        folds,
        summary: summarize(&reports),
        audit_violations: violations,
    })
}
