use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use did_core::config::RunConfig;
use did_core::eval::{
    evaluate as eval_report, fuse as fuse_scores, rtf_benchmark, ScoreInput, ScoreMatrix,
};
use did_core::features::{
    fbank, read_features, read_manifest, read_wav, write_features, write_manifest, FeatureMatrix,
    ManifestEntry,
};
use did_core::fsutil::write_atomic;
use did_core::models::{load_checkpoint, model_gradcheck_suite, Classifier};
use did_core::rng::derive_rng;
use did_core::training::{fit, Example, FitOutput};
use did_core::{DidError, Result};
use rayon::prelude::*;

use crate::{ModelKind, Scope};

/// Features of one manifest entry: read directly for `.feat` paths,
/// otherwise computed from the audio.
fn features(cfg: &RunConfig, entry: &ManifestEntry) -> Result<FeatureMatrix> {
    if entry.path.extension().is_some_and(|e| e == "feat") {
        read_features(&entry.path)
    } else {
        fbank(&read_wav(&entry.path)?, &cfg.frontend)
    }
}

fn all_features(cfg: &RunConfig, entries: &[ManifestEntry]) -> Result<Vec<FeatureMatrix>> {
    entries.par_iter().map(|e| features(cfg, e)).collect()
}

fn label_index(classes: &[String]) -> HashMap<&str, usize> {
    classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect()
}

fn lookup(index: &HashMap<&str, usize>, entry: &ManifestEntry) -> Result<usize> {
    index.get(entry.label.as_str()).copied().ok_or_else(|| {
        DidError::Input(format!(
            "utterance {} has label {:?}, which the model does not know",
            entry.utt_id, entry.label
        ))
    })
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| DidError::Format(e.to_string()))
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = did_core::synth::generate(&cfg.synth, out)?;
    println!("{}", json(&corpus)?);
    Ok(())
}

pub fn featurize(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let entries = read_manifest(manifest)?;
    let feat_dir = out.join("feats");
    std::fs::create_dir_all(&feat_dir).map_err(|e| DidError::io(&feat_dir, e))?;
    let written = entries
        .par_iter()
        .map(|e| {
            let feats = features(cfg, e)?;
            let path = feat_dir.join(format!("{}.feat", e.utt_id));
            write_features(&path, &feats)?;
            Ok(ManifestEntry { path, ..e.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let name = manifest
        .file_name()
        .ok_or_else(|| DidError::Input(format!("{} has no file name", manifest.display())))?;
    let out_manifest = out.join(name);
    write_manifest(&out_manifest, &written)?;
    log::info!("wrote {} feature files", written.len());
    println!("{}", out_manifest.display());
    Ok(())
}

pub fn train(
    cfg: &RunConfig,
    seed: u64,
    kind: ModelKind,
    train: &Path,
    dev: &Path,
    out: &Path,
) -> Result<()> {
    let train_entries = read_manifest(train)?;
    let dev_entries = read_manifest(dev)?;
    let classes: Vec<String> = train_entries
        .iter()
        .map(|e| e.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut init = derive_rng(seed, "init");
    let mut model = match kind {
        ModelKind::Transformer => Classifier::transformer(
            cfg.transformer.clone(),
            cfg.stacking(),
            classes.clone(),
            &mut init,
        )?,
        ModelKind::Cnn => Classifier::cnn(cfg.cnn.clone(), classes.clone(), &mut init)?,
    };
    let index = label_index(&classes);
    let examples = |entries: &[ManifestEntry]| -> Result<Vec<Example>> {
        let feats = all_features(cfg, entries)?;
        entries
            .iter()
            .zip(feats)
            .map(|(e, f)| {
                Ok(Example {
                    utt_id: e.utt_id.clone(),
                    feats: model.prepare(&f)?,
                    label: lookup(&index, e)?,
                })
            })
            .collect()
    };
    let train_set = examples(&train_entries)?;
    let dev_set = examples(&dev_entries)?;
    std::fs::create_dir_all(out).map_err(|e| DidError::io(out, e))?;
    write_atomic(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    let output = FitOutput {
        dir: out.to_path_buf(),
    };
    let summary = fit(
        &mut model,
        &train_set,
        &dev_set,
        &cfg.train,
        seed,
        Some(&output),
    )?;
    println!(
        "best epoch {} dev accuracy {:.2}% -> {}",
        summary.best_epoch,
        100.0 * summary.best_dev_acc,
        output.best_checkpoint().display()
    );
    Ok(())
}

pub fn score(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let entries = read_manifest(manifest)?;
    let feats = all_features(cfg, &entries)?;
    let index = label_index(&model.classes);
    let inputs = entries
        .iter()
        .zip(&feats)
        .map(|(e, f)| {
            Ok(ScoreInput {
                utt_id: &e.utt_id,
                duration: e.duration,
                label: Some(lookup(&index, e)?),
                feats: f,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = did_core::eval::score(&model, &inputs)?;
    scores.write(out)
}

pub fn fuse(a: &Path, b: &Path, out: &Path) -> Result<()> {
    let fused = fuse_scores(&ScoreMatrix::read(a)?, &ScoreMatrix::read(b)?)?;
    fused.write(out)
}

pub fn evaluate(scores: &Path, out: Option<&Path>) -> Result<()> {
    let report = eval_report(&ScoreMatrix::read(scores)?)?;
    if let Some(path) = out {
        write_atomic(path, report.to_json().as_bytes())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

pub fn benchmark(
    cfg: &RunConfig,
    checkpoint: &Path,
    duration: Option<f64>,
    downsampling: bool,
) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let seconds = duration.unwrap_or(cfg.eval.benchmark_seconds);
    let result = rtf_benchmark(
        &model,
        &cfg.frontend,
        seconds,
        downsampling,
        cfg.eval.repetitions,
    )?;
    println!("{}", json(&result)?);
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, seed: u64, scope: Scope) -> Result<()> {
    let (tolerance, reports) = match scope {
        Scope::Ops => (
            1e-6,
            did_tensor::gradcheck::primitive_suite(seed)?
                .into_iter()
                .map(|c| (c.name.to_string(), c.report))
                .collect::<Vec<_>>(),
        ),
        Scope::Model => (
            1e-3,
            model_gradcheck_suite(seed, cfg.eval.gradcheck_stride)?,
        ),
    };
    let mut failed = 0;
    for (name, report) in &reports {
        let ok = report.passes(tolerance);
        failed += usize::from(!ok);
        println!(
            "{} {name} max_rel_error={:.3e} entries={}",
            if ok { "PASS" } else { "FAIL" },
            report.max_rel_error,
            report.checked
        );
    }
    if failed > 0 {
        return Err(DidError::Numeric(format!(
            "{failed} of {} gradient checks exceed {tolerance:e}",
            reports.len()
        )));
    }
    Ok(())
}
