use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prosody_emph::conditioning::{export_bundle, ConditioningBundle, ConditioningTables};
use prosody_emph::corpus::{
    ids_with_suffix, load_annotation, load_labels_for, load_utterance, utterance_ids,
    validate_corpus, DepAnnotation, EmphasisLabels, Tagset, Utterance, ANN_SUFFIX, LAB_SUFFIX,
    UTT_SUFFIX,
};
use prosody_emph::embed::SemanticProvider;
use prosody_emph::graph::GraphOptions;
use prosody_emph::predictor::{
    evaluate, filter_by_confidence, load_checkpoint, save_checkpoint, split_ids, train, Example,
    PredictorModel,
};
use prosody_emph::prominence::label_utterance;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::{write_json, CommonArgs, Failure, Outcome};

fn failure(id: &str, e: impl std::fmt::Display) -> Failure {
    Failure {
        id: id.to_string(),
        error: e.to_string(),
    }
}

/// Ids named by `--ids`, or every utterance of the corpus; sorted.
fn selected_ids(args: &CommonArgs) -> Result<Vec<String>> {
    let mut ids = match &args.ids {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        None => utterance_ids(&args.corpus)?,
    };
    ids.sort();
    ids.dedup();
    Ok(ids)
}

fn utt_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{UTT_SUFFIX}"))
}

fn lab_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{LAB_SUFFIX}"))
}

fn load_pair(dir: &Path, id: &str, tagset: &Tagset) -> Result<(Utterance, DepAnnotation)> {
    let utt = load_utterance(&utt_path(dir, id))?;
    let ann = load_annotation(&dir.join(format!("{id}{ANN_SUFFIX}")), &utt, tagset)?;
    Ok((utt, ann))
}

/// Runs `f` over ids in parallel, splitting successes from failures while
/// keeping id order.
fn per_utterance<T: Send>(
    ids: &[String],
    f: impl Fn(&str) -> Result<T> + Sync,
) -> (Vec<(String, T)>, Vec<Failure>) {
    let results: Vec<(String, Result<T>)> =
        ids.par_iter().map(|id| (id.clone(), f(id))).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => ok.push((id, v)),
            Err(e) => failed.push(failure(&id, format!("{e:#}"))),
        }
    }
    (ok, failed)
}

fn labels_dir(args: &CommonArgs) -> &Path {
    args.labels.as_deref().unwrap_or(&args.corpus)
}

fn require<'a>(opt: &'a Option<PathBuf>, flag: &str, cmd: &str) -> Result<&'a Path> {
    match opt {
        Some(p) => Ok(p),
        None => bail!("{cmd} requires --{flag}"),
    }
}

fn checkpoint_model(args: &CommonArgs, tagset: &Tagset, cmd: &str) -> Result<PredictorModel> {
    let path = require(&args.checkpoint, "checkpoint", cmd)?;
    let model = load_checkpoint(path)?;
    model.check_tagset(tagset)?;
    Ok(model)
}

pub fn cmd_validate(args: &CommonArgs, _cfg: &RunConfig) -> Result<Outcome> {
    let report = validate_corpus(&args.corpus)?;
    let path = args.out.join("validation.json");
    write_json(&path, &report)?;
    let mut out = Outcome::default();
    out.inputs.insert("utterances".into(), json!(report.entries.len()));
    out.outputs.push(path);
    out.failures = report
        .entries
        .iter()
        .filter_map(|e| e.first_failure.as_ref().map(|f| failure(&e.id, f)))
        .collect();
    Ok(out)
}

pub fn cmd_label(args: &CommonArgs, cfg: &RunConfig) -> Result<Outcome> {
    let wav_dir = require(&args.wav, "wav", "label")?;
    let ids = selected_ids(args)?;
    let (done, failures) = per_utterance(&ids, |id| {
        let utt = load_utterance(&utt_path(&args.corpus, id))?;
        let wav = wav_dir.join(format!("{id}.wav"));
        let res = label_utterance(&wav, &utt, &cfg.prominence)?;
        let mut written = vec![lab_path(&args.out, id)];
        res.labels.save(&written[0])?;
        if cfg.write_scores {
            let p = args.out.join(format!("{id}.scores.tsv"));
            fs::write(&p, res.scores_tsv())?;
            written.push(p);
        }
        Ok(written)
    });
    let mut out = Outcome::default();
    out.inputs.insert("utterances".into(), json!(ids.len()));
    out.outputs = done.into_iter().flat_map(|(_, p)| p).collect();
    out.failures = failures;
    Ok(out)
}

fn build_examples(
    args: &CommonArgs,
    ids: &[String],
    tagset: &Tagset,
    provider: &SemanticProvider,
    with_labels: bool,
) -> (Vec<Example>, Vec<Failure>) {
    let (ok, failures) = per_utterance(ids, |id| {
        let (utt, ann) = load_pair(&args.corpus, id, tagset)?;
        let labels = if with_labels {
            Some(load_labels_for(&lab_path(labels_dir(args), id), &utt)?)
        } else {
            None
        };
        Ok(Example::new(&utt, &ann, tagset, provider, GraphOptions::default(), labels.as_ref())?)
    });
    (ok.into_iter().map(|(_, e)| e).collect(), failures)
}

pub fn cmd_train(args: &CommonArgs, cfg: &RunConfig) -> Result<Outcome> {
    let tagset = Tagset::for_corpus(&args.corpus)?;
    let ids = selected_ids(args)?;
    let provider = cfg.semantic.provider(None)?;
    let (examples, failures) = build_examples(args, &ids, &tagset, &provider, true);
    let usable: Vec<String> = examples.iter().map(|e| e.id.clone()).collect();
    let (train_ids, val_ids) = split_ids(&usable, cfg.validation_fraction, cfg.train.seed);
    let pick = |set: &[String]| -> Vec<Example> {
        examples
            .iter()
            .filter(|e| set.binary_search(&e.id).is_ok())
            .cloned()
            .collect()
    };
    let (train_set, val_set) = (pick(&train_ids), pick(&val_ids));

    let model = match &args.checkpoint {
        Some(_) => {
            let m = checkpoint_model(args, &tagset, "train")?;
            if m.config.semantic_dim != provider.dim() {
                bail!(
                    "checkpoint expects semantic dim {}, provider has {}",
                    m.config.semantic_dim,
                    provider.dim()
                );
            }
            m
        }
        None => {
            let mut mc = cfg.model;
            mc.semantic_dim = provider.dim();
            PredictorModel::new(mc, &tagset, cfg.train.seed)
        }
    };
    let result = train(model, &train_set, &val_set, &cfg.train)?;

    let model_path = args.out.join("model.pemo");
    save_checkpoint(&result.model, &model_path)?;
    let log_path = args.out.join("train_log.jsonl");
    let mut log = String::new();
    for e in &result.log {
        log.push_str(&serde_json::to_string(e)?);
        log.push('\n');
    }
    fs::write(&log_path, log)?;
    let val_path = args.out.join("val_ids.txt");
    fs::write(&val_path, val_ids.iter().map(|i| format!("{i}\n")).collect::<String>())?;

    let mut out = Outcome::default();
    out.inputs.insert("utterances".into(), json!(ids.len()));
    out.inputs.insert("train".into(), json!(train_set.len()));
    out.inputs.insert("validation".into(), json!(val_set.len()));
    out.outputs = vec![model_path, log_path, val_path];
    out.failures = failures;
    Ok(out)
}

fn predictions(
    args: &CommonArgs,
    model: &PredictorModel,
    tagset: &Tagset,
    cfg: &RunConfig,
) -> Result<(Vec<(String, EmphasisLabels)>, Vec<Failure>)> {
    let provider = cfg.semantic.provider(Some(model.config.semantic_dim))?;
    let ids = selected_ids(args)?;
    let (examples, mut failures) = build_examples(args, &ids, tagset, &provider, false);
    let results: Vec<(String, Result<EmphasisLabels, _>)> = examples
        .par_iter()
        .map(|ex| (ex.id.clone(), model.predict(ex)))
        .collect();
    let mut ok = Vec::new();
    for (id, r) in results {
        match r {
            Ok(l) => ok.push((id, l)),
            Err(e) => failures.push(failure(&id, e)),
        }
    }
    Ok((ok, failures))
}

pub fn cmd_predict(args: &CommonArgs, cfg: &RunConfig) -> Result<Outcome> {
    let tagset = Tagset::for_corpus(&args.corpus)?;
    let model = checkpoint_model(args, &tagset, "predict")?;
    let (preds, mut failures) = predictions(args, &model, &tagset, cfg)?;
    let mut out = Outcome::default();
    out.inputs
        .insert("utterances".into(), json!(preds.len() + failures.len()));
    for (id, labels) in &preds {
        let p = lab_path(&args.out, id);
        match labels.save(&p) {
            Ok(()) => out.outputs.push(p),
            Err(e) => failures.push(failure(id, e)),
        }
    }
    out.failures = failures;
    Ok(out)
}

#[derive(Serialize)]
struct FilterDecision {
    id: String,
    keep: bool,
    agrees: bool,
    min_confidence: f64,
}

pub fn cmd_filter(args: &CommonArgs, cfg: &RunConfig) -> Result<Outcome> {
    let tagset = Tagset::for_corpus(&args.corpus)?;
    let model = checkpoint_model(args, &tagset, "filter")?;
    let (preds, mut failures) = predictions(args, &model, &tagset, cfg)?;
    let pseudo_dir = labels_dir(args);
    let tau = cfg.filter.tau;
    let mut decisions = Vec::new();
    for (id, pred) in &preds {
        let decided = load_utterance(&utt_path(&args.corpus, id))
            .and_then(|u| load_labels_for(&lab_path(pseudo_dir, id), &u))
            .map_err(anyhow::Error::from)
            .and_then(|pseudo| {
                let keep = filter_by_confidence(&pseudo, pred, tau)?;
                Ok(FilterDecision {
                    id: id.clone(),
                    keep,
                    agrees: pseudo.labels == pred.labels,
                    min_confidence: pred.confidences.iter().copied().fold(f64::INFINITY, f64::min),
                })
            });
        match decided {
            Ok(d) => decisions.push(d),
            Err(e) => failures.push(failure(id, format!("{e:#}"))),
        }
    }
    let mut out = Outcome::default();
    let kept: Vec<&str> = decisions.iter().filter(|d| d.keep).map(|d| d.id.as_str()).collect();
    for id in &kept {
        let dst = lab_path(&args.out, id);
        fs::copy(lab_path(pseudo_dir, id), &dst)?;
        out.outputs.push(dst);
    }
    let kept_path = args.out.join("kept.txt");
    fs::write(&kept_path, kept.iter().map(|i| format!("{i}\n")).collect::<String>())?;
    let report_path = args.out.join("filter.json");
    write_json(
        &report_path,
        &json!({ "tau": tau, "kept": kept.len(), "considered": decisions.len(), "utterances": decisions }),
    )?;
    out.outputs.push(kept_path);
    out.outputs.push(report_path);
    out.inputs
        .insert("utterances".into(), json!(preds.len() + failures.len()));
    out.inputs.insert("kept".into(), json!(kept.len()));
    out.failures = failures;
    Ok(out)
}

pub fn cmd_evaluate(args: &CommonArgs, _cfg: &RunConfig) -> Result<Outcome> {
    let pred_dir = require(&args.labels, "labels", "evaluate")?;
    let ids = match &args.ids {
        Some(_) => selected_ids(args)?,
        None => ids_with_suffix(pred_dir, LAB_SUFFIX)?,
    };
    let (pairs, failures) = per_utterance(&ids, |id| {
        let utt = load_utterance(&utt_path(&args.corpus, id))?;
        let gold = load_labels_for(&lab_path(&args.corpus, id), &utt).context("gold labels")?;
        let pred = load_labels_for(&lab_path(pred_dir, id), &utt).context("predicted labels")?;
        Ok((pred, gold))
    });
    let (pred, gold): (Vec<_>, Vec<_>) = pairs.into_iter().map(|(_, p)| p).unzip();
    let metrics = evaluate(&pred, &gold)?;
    let path = args.out.join("metrics.json");
    write_json(&path, &metrics)?;
    let mut out = Outcome::default();
    out.inputs.insert("utterances".into(), json!(ids.len()));
    out.inputs.insert("evaluated".into(), json!(pred.len()));
    out.outputs.push(path);
    out.failures = failures;
    Ok(out)
}

pub fn cmd_condition(args: &CommonArgs, cfg: &RunConfig) -> Result<Outcome> {
    let tagset = Tagset::for_corpus(&args.corpus)?;
    let provider = cfg.semantic.provider(None)?;
    let tables = ConditioningTables::seeded(&cfg.conditioning, &tagset, provider.dim());
    let ids = selected_ids(args)?;
    let (done, failures) = per_utterance(&ids, |id| {
        let (utt, ann) = load_pair(&args.corpus, id, &tagset)?;
        let labels = load_labels_for(&lab_path(labels_dir(args), id), &utt)?;
        let bundle = ConditioningBundle::build(&utt, &ann, &labels, &tagset, &provider, &tables)?;
        let path = args.out.join(format!("{id}.pcnd"));
        export_bundle(&bundle, &path)?;
        Ok(path)
    });
    let mut out = Outcome::default();
    out.inputs.insert("utterances".into(), json!(ids.len()));
    out.outputs = done.into_iter().map(|(_, p)| p).collect();
    out.failures = failures;
    Ok(out)
}
