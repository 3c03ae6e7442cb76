use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use calfplay::alignment::read_samples;
use calfplay::classifier::{evaluate as eval_model, load_checkpoint, train as fit_model, write_checkpoint, DataSplit};
use calfplay::dataset::{load_embedding, read_manifest, write_manifest, LabelledDataset, PlayClass, Sample, Split};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::Context;
use crate::artifacts::{open, write_atomic, write_json, write_table, write_text, Stage};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct PrepareReport {
    pool: BTreeMap<PlayClass, usize>,
    per_class: usize,
    balanced: BTreeMap<PlayClass, usize>,
    /// Class by split.
    splits: BTreeMap<PlayClass, BTreeMap<Split, usize>>,
    fractions: [f64; 3],
}

pub fn prepare(ctx: &Context) -> CliResult<String> {
    let sp = ctx.layout.require(Stage::Filter, "samples.csv")?;
    let samples = read_samples(open(&sp)?).map_err(|e| CliError::reading(&sp, e))?;
    let pool: Vec<Sample> = samples
        .iter()
        .filter_map(|s| {
            PlayClass::from_label(s.final_label)
                .map(|class| Sample { embedding_path: PathBuf::from(&s.frame.embedding_path), class })
        })
        .collect();
    let mut pool_counts: BTreeMap<PlayClass, usize> = PlayClass::ALL.iter().map(|&c| (c, 0)).collect();
    for s in &pool {
        *pool_counts.get_mut(&s.class).unwrap() += 1;
    }
    let data = LabelledDataset::prepare(&pool, ctx.cfg.split.fractions, ctx.cfg.seed)
        .map_err(|e| CliError::user(format!("cannot build a balanced dataset from {}: {e}", sp.display())))?;

    let counts = data.class_counts();
    let table = data.split_table();
    let report = PrepareReport {
        pool: pool_counts,
        per_class: counts[0],
        balanced: PlayClass::ALL.iter().map(|&c| (c, counts[c.index()])).collect(),
        splits: PlayClass::ALL
            .iter()
            .map(|&c| (c, Split::ALL.iter().map(|&s| (s, table[c.index()][s as usize])).collect()))
            .collect(),
        fractions: ctx.cfg.split.fractions,
    };
    ctx.layout.create(Stage::Prepare)?;
    write_table(&ctx.layout.path(Stage::Prepare, "manifest.csv"), &ctx.prov, |buf| write_manifest(buf, &data))?;
    write_json(&ctx.layout.path(Stage::Prepare, "report.json"), &ctx.prov, &report)?;
    let n = data.samples.len();
    let [tr, va, te] = Split::ALL.map(|s| data.subset(s).len());
    Ok(format!("prepare: {n} samples ({} per class); train {tr}, val {va}, test {te}", counts[0]))
}

fn resolve(ctx: &Context, p: &Path) -> PathBuf {
    match &ctx.cfg.inputs.embeddings {
        Some(root) if p.is_relative() => root.join(p),
        _ => p.to_path_buf(),
    }
}

/// Embeddings and labels of one split of the manifest, in manifest order.
fn load_split(ctx: &Context, rows: &[(Sample, Split)], split: Split) -> CliResult<DataSplit> {
    let chosen: Vec<&Sample> = rows.iter().filter(|(_, s)| *s == split).map(|(x, _)| x).collect();
    if chosen.is_empty() {
        return Err(CliError::user(format!("the manifest has no {} samples", split.as_str())));
    }
    let vectors: Vec<Vec<f32>> = chosen
        .par_iter()
        .map(|s| {
            let p = resolve(ctx, &s.embedding_path);
            load_embedding(&p).map(|e| e.values).map_err(|e| CliError::reading(&p, e))
        })
        .collect::<CliResult<_>>()?;
    let y = chosen.iter().map(|s| s.class.index()).collect();
    Ok(DataSplit::from_rows(&vectors, y)?)
}

fn manifest(ctx: &Context) -> CliResult<Vec<(Sample, Split)>> {
    let mp = ctx.layout.require(Stage::Prepare, "manifest.csv")?;
    read_manifest(open(&mp)?).map_err(|e| CliError::reading(&mp, e))
}

pub fn train(ctx: &Context) -> CliResult<String> {
    let rows = manifest(ctx)?;
    let train_set = load_split(ctx, &rows, Split::Train)?;
    let val_set = load_split(ctx, &rows, Split::Val)?;
    let cfg = ctx.cfg.train_config();
    let mut out = fit_model(&train_set, &val_set, &cfg)?;
    out.log.provenance = ctx.prov.to_map();

    ctx.layout.create(Stage::Train)?;
    let echo = json!({ "train": cfg, "provenance": ctx.prov });
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &out.model, &echo)
        .map_err(|e| CliError::internal(format!("cannot encode checkpoint: {e}")))?;
    write_atomic(&ctx.layout.path(Stage::Train, "checkpoint.bin"), &bytes)?;
    let mut log = Vec::new();
    out.log.write_jsonl(&mut log).map_err(|e| CliError::internal(e.to_string()))?;
    write_atomic(&ctx.layout.path(Stage::Train, "run_log.jsonl"), &log)?;

    let acc = out.log.epochs.iter().find(|e| e.epoch == out.log.best_epoch).map_or(f64::NAN, |e| e.val_accuracy);
    Ok(format!(
        "train: {} epochs, best epoch {} (val loss {:.4}, val accuracy {:.4})",
        out.log.epochs.len(),
        out.log.best_epoch,
        out.log.best_val_loss,
        acc
    ))
}

pub fn evaluate(ctx: &Context) -> CliResult<String> {
    let cp = ctx.layout.require(Stage::Train, "checkpoint.bin")?;
    let rows = manifest(ctx)?;
    let ck = load_checkpoint(&cp).map_err(|e| CliError::reading(&cp, e))?;
    let test = load_split(ctx, &rows, Split::Test)?;
    let report = eval_model(&ck.model, &test)?;
    ctx.layout.create(Stage::Evaluate)?;
    write_json(
        &ctx.layout.path(Stage::Evaluate, "report.json"),
        &ctx.prov,
        &json!({ "test": report, "checkpoint": ck.config }),
    )?;
    write_text(&ctx.layout.path(Stage::Evaluate, "report.txt"), &ctx.prov, &report.to_text())?;
    Ok(format!("evaluate: test accuracy {:.4} on {} samples", report.accuracy, report.n))
}
