use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mcnn::data::{
    assemble, curate, holdout_split, parse_fasta, plan_nested_folds, read_dataset, read_metadata, split_by_era,
    write_dataset, FoldPlan, LabelSchema, SequenceIndex, StrainRecord,
};
use mcnn::model::{McnnModel, HEADS};
use mcnn::synth::SyntheticWorld;
use mcnn::train::{
    knn_baseline_cv, nested_cv_with_plan, one_vs_all_report, predict_probs, read_best_hits, score_best_hits,
    summarize, train, CvSettings, EpochRecord, Provenance,
};

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

/// Writes through a sibling temp file so readers never see partial output.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let io = |e: std::io::Error| CliError::Data(format!("{}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load_schema(path: Option<&Path>) -> Result<LabelSchema> {
    Ok(match path {
        Some(p) => LabelSchema::load(p)?,
        None => LabelSchema::default_schema(),
    })
}

fn load_checkpoint(path: &Path) -> Result<McnnModel> {
    McnnModel::load(path).map_err(|e| match e {
        mcnn::Error::Checkpoint(m) => CliError::Checkpoint(m),
        other => CliError::Checkpoint(format!("{}: {other}", path.display())),
    })
}

pub struct IngestArgs {
    pub ha: Vec<PathBuf>,
    pub na: Vec<PathBuf>,
    pub metadata: PathBuf,
    pub schema: Option<PathBuf>,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    pub split_dir: Option<PathBuf>,
}

fn read_fastas(paths: &[PathBuf]) -> Result<Vec<(String, String)>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(parse_fasta(p)?);
    }
    Ok(all)
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let schema = load_schema(a.schema.as_deref())?;
    let ha = SequenceIndex::from_fasta(&read_fastas(&a.ha)?);
    let na = SequenceIndex::from_fasta(&read_fastas(&a.na)?);
    let meta = read_metadata(&a.metadata)?;
    let (records, log) = curate(&assemble(&meta, &ha, &na), &schema);

    write_dataset(&a.out, &records)?;
    let mut text = log.summary_lines().join("\n");
    text.push('\n');
    for d in &log.dropped {
        text += &format!("{}\t{}\t{}\t{}\n", d.strain_id, d.source, d.reason.label(), d.detail);
    }
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log"));
    write_atomic(&log_path, text.as_bytes())?;
    for line in log.summary_lines() {
        println!("{line}");
    }

    if let Some(dir) = &a.split_dir {
        create_dir(dir)?;
        let era = split_by_era(&records);
        for split in [&era.pre20, &era.post20, &era.incomplete] {
            write_dataset(&dir.join(format!("{}.jsonl", split.name.as_str())), &split.records)?;
            println!("{}:{}", split.name.as_str(), split.records.len());
        }
        for (name, recs) in [("later", &era.later), ("quarantine", &era.quarantine)] {
            if !recs.is_empty() {
                write_dataset(&dir.join(format!("{name}.jsonl")), recs)?;
                println!("{name}:{}", recs.len());
            }
        }
    }
    Ok(())
}

fn fmt_epoch(e: &EpochRecord) -> String {
    let mut line = format!("epoch {:>3} train_loss {:.5}", e.epoch, e.train_loss);
    if let (Some(l), Some(f)) = (e.val_loss, e.val_macro_f1) {
        line += &format!(" val_loss {l:.5} val_macro_f1 {:.4}/{:.4}/{:.4}", f[0], f[1], f[2]);
    }
    line
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let config = cfg.model.clone().expect("validated");
    let schema = load_schema(cfg.schema.as_deref())?;
    let records = read_dataset(&cfg.dataset)?;
    let (fit, val) = match &cfg.validation {
        Some(p) => (records, read_dataset(p)?),
        None => holdout_split(&records, cfg.validation_fraction, cfg.seed),
    };
    if fit.is_empty() {
        return Err(CliError::Data(format!("{}: no training records", cfg.dataset.display())));
    }
    let mut model = McnnModel::for_training(config, schema, &fit)?;
    let fs_ = model.samples(&fit)?;
    let vs = model.samples(&val)?;
    log::info!("training on {} records, validating on {}", fs_.len(), vs.len());
    let history = train(&mut model, &fs_, &vs, &cfg.train, &mut |e| println!("{}", fmt_epoch(e)))?;
    println!("best epoch {} ({:?})", history.best_epoch, history.stop);

    create_dir(&cfg.output)?;
    let ckpt = cfg.output.join("model.ckpt");
    write_atomic(&ckpt, &model.to_bytes())?;
    write_json(&cfg.output.join("history.json"), &history)?;
    write_json(&cfg.output.join("config.json"), &model.config)?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn fold_plan(cfg: &RunConfig, records: &[StrainRecord]) -> Result<FoldPlan> {
    let plan = match &cfg.fold_plan {
        Some(p) => FoldPlan::load(p)?,
        None => plan_nested_folds(records, cfg.folds.k_outer, cfg.folds.k_inner, cfg.seed)?,
    };
    let ids: Vec<String> = records.iter().map(|r| r.strain_id.clone()).collect();
    let problems = plan.audit(&ids);
    if !problems.is_empty() {
        return Err(CliError::Data(format!("fold plan does not match the dataset: {}", problems.join("; "))));
    }
    Ok(plan)
}

pub fn cmd_nested_cv(cfg: &RunConfig) -> Result<()> {
    let base = cfg.model.clone().expect("validated");
    let grid = cfg.grid.clone().expect("validated");
    let schema = load_schema(cfg.schema.as_deref())?;
    let records = read_dataset(&cfg.dataset)?;
    let plan = fold_plan(cfg, &records)?;
    let settings = CvSettings {
        k_outer: plan.k_outer,
        k_inner: plan.k_inner,
        seed: cfg.seed,
        train: cfg.train.clone(),
        jobs: cfg.jobs,
    };
    let points = grid.points(&base).len();
    println!("{} outer x {} inner folds, {points} grid points", plan.k_outer, plan.k_inner);
    let result = nested_cv_with_plan(&records, &schema, &grid, &base, &settings, plan)?;
    if !result.audit_violations.is_empty() {
        return Err(CliError::Internal(format!("leakage audit failed: {:?}", result.audit_violations)));
    }

    create_dir(&cfg.output)?;
    result.plan.save(&cfg.output.join("folds.json"))?;
    for f in &result.folds {
        f.report.write(&cfg.output, &format!("fold{}", f.fold))?;
        println!(
            "fold {} chose point {} (embedding {}, lr {}) retrain {} epochs: host macro-F1 {:.4}",
            f.fold, f.chosen_point, f.chosen.embedding_size, f.chosen.learning_rate, f.retrain_epochs,
            f.report.heads[0].macro_f1
        );
    }
    write_json(&cfg.output.join("nested_cv.json"), &result)?;
    write_json(&cfg.output.join("summary.json"), &result.summary)?;
    print_summary(&result.summary);
    Ok(())
}

fn print_summary(s: &mcnn::train::CvSummary) {
    for h in &s.heads {
        println!(
            "{:<11} macro-F1 {:.4} [{:.4}, {:.4}]  macro-AP {:.4} [{:.4}, {:.4}]",
            h.head, h.macro_f1.mean, h.macro_f1.ci95[0], h.macro_f1.ci95[1], h.macro_ap.mean, h.macro_ap.ci95[0],
            h.macro_ap.ci95[1]
        );
    }
}

pub fn cmd_baseline(cfg: &RunConfig) -> Result<()> {
    let schema = load_schema(cfg.schema.as_deref())?;
    let records = read_dataset(&cfg.dataset)?;
    let plan = fold_plan(cfg, &records)?;
    create_dir(&cfg.output)?;
    let (folds, summary) = match &cfg.baseline.best_hits {
        None => {
            let r = knn_baseline_cv(&records, &plan, cfg.baseline.k, &schema)?;
            (r.folds, r.summary)
        }
        Some(path) => {
            let hits = read_best_hits(path)?;
            let index: HashMap<&str, &StrainRecord> = records.iter().map(|r| (r.strain_id.as_str(), r)).collect();
            let pick = |ids: &[String]| -> Vec<StrainRecord> { ids.iter().map(|i| index[i.as_str()].clone()).collect() };
            let mut reports = Vec::new();
            for (i, outer) in plan.outer.iter().enumerate() {
                let prov = Provenance {
                    label: "best-hit".into(),
                    fold: Some(i),
                    seed: Some(plan.seed),
                    test_ids: outer.test.clone(),
                };
                reports.push(score_best_hits(&hits, &pick(&plan.outer_train(i)), &pick(&outer.test), &schema, prov)?);
            }
            let summary = summarize(&reports);
            (reports, summary)
        }
    };
    plan.save(&cfg.output.join("folds.json"))?;
    for (i, r) in folds.iter().enumerate() {
        r.write(&cfg.output, &format!("baseline_fold{i}"))?;
    }
    write_json(&cfg.output.join("baseline_summary.json"), &summary)?;
    print_summary(&summary);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mask {
    None,
    HaOnly,
    NaOnly,
}

pub fn cmd_evaluate(checkpoint: &Path, dataset: &Path, out: &Path, stem: &str, mask: Mask) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let mut records = read_dataset(dataset)?;
    match mask {
        Mask::None => {}
        Mask::HaOnly => records = records.iter().map(StrainRecord::without_na).collect(),
        Mask::NaOnly => records = records.iter().map(StrainRecord::without_ha).collect(),
    }
    let samples = model.samples(&records)?;
    let probs = predict_probs(&model, &samples)?;
    let truth: Vec<[usize; 3]> = samples.iter().map(|s| s.labels).collect();
    let label = match mask {
        Mask::None => "evaluate",
        Mask::HaOnly => "evaluate/ha-only",
        Mask::NaOnly => "evaluate/na-only",
    };
    let prov = Provenance {
        label: label.into(),
        fold: None,
        seed: Some(model.config.seed),
        test_ids: records.iter().map(|r| r.strain_id.clone()).collect(),
    };
    let report = one_vs_all_report(&probs, &truth, &model.schema, prov)?;
    create_dir(out)?;
    for p in report.write(out, stem)? {
        log::info!("wrote {}", p.display());
    }
    for h in &report.heads {
        println!("{:<11} accuracy {:.4} macro-F1 {:.4} macro-AP {:.4}", h.head, h.accuracy, h.macro_f1, h.macro_ap);
    }
    Ok(())
}

pub fn cmd_predict(checkpoint: &Path, ha: Option<&Path>, na: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let read = |p: Option<&Path>| -> Result<Vec<(String, String)>> { Ok(p.map(parse_fasta).transpose()?.unwrap_or_default()) };
    let (ha_recs, na_recs) = (read(ha)?, read(na)?);

    let mut order: Vec<String> = Vec::new();
    let mut pairs: HashMap<String, (Option<String>, Option<String>)> = HashMap::new();
    for (slot, recs) in [(0, &ha_recs), (1, &na_recs)] {
        for (header, seq) in recs {
            let key = mcnn::data::header_key(header).to_string();
            let entry = pairs.entry(key.clone()).or_insert_with(|| {
                order.push(key.clone());
                (None, None)
            });
            let target = if slot == 0 { &mut entry.0 } else { &mut entry.1 };
            if target.is_some() {
                return Err(CliError::Data(format!("{key}: more than one {} sequence", ["HA", "NA"][slot])));
            }
            *target = Some(seq.clone());
        }
    }

    let mut text = String::from("strain_id\thost\tha_subtype\tna_subtype\thost_confidence\tha_confidence\tna_confidence\n");
    for key in &order {
        let (h, n) = &pairs[key];
        let (hi, ni) = model
            .encode_inputs(h.as_deref(), n.as_deref())
            .map_err(|e| CliError::Data(format!("{key}: {e}")))?;
        let p = model.predict(hi.as_deref(), ni.as_deref()).map_err(|e| CliError::Data(format!("{key}: {e}")))?;
        let names: Vec<&str> = (0..3).map(|i| model.schema.head_classes(i)[p.classes[i]].as_str()).collect();
        text += &format!(
            "{key}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
            names[0], names[1], names[2], p.confidences[0], p.confidences[1], p.confidences[2]
        );
    }
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(CliError::from),
    }
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub schema_out: Option<PathBuf>,
    pub n: usize,
    pub noise: f64,
    pub world_seed: u64,
    pub seed: u64,
    pub prefix: String,
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(CliError::Config(vec![format!("--noise {} outside [0, 1]", a.noise)]));
    }
    let world = SyntheticWorld::new(a.world_seed);
    let records = world.sample(a.n, a.seed, a.noise, &a.prefix);
    write_dataset(&a.out, &records)?;
    let schema_out = a.schema_out.clone().unwrap_or_else(|| a.out.with_extension("schema.toml"));
    write_atomic(&schema_out, world.schema().to_toml().as_bytes())?;
    println!("wrote {} strains to {} (schema {})", records.len(), a.out.display(), schema_out.display());
    Ok(())
}

pub fn version_text() -> String {
    format!(
        "mcnn {}\ndataset format {}\nschema format {}\ncheckpoint format {}\nfold plan format {}\nheads {}",
        env!("CARGO_PKG_VERSION"),
        mcnn::DATASET_FORMAT_VERSION,
        mcnn::SCHEMA_FORMAT_VERSION,
        mcnn::model::CHECKPOINT_FORMAT_VERSION,
        mcnn::data::FOLD_PLAN_VERSION,
        HEADS.join(",")
    )
}
