use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, loss_and_grads, Example, Metrics, ModelError, Params, PredictorModel};
use crate::corpus::{EmphasisLabels, LabelSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub class_weight_positive: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 5e-5,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            class_weight_positive: 3.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err("learning_rate must be finite and non-negative".into());
        }
        if !(self.class_weight_positive > 0.0) || !(self.weight_decay >= 0.0) {
            return Err("class_weight_positive must be positive, weight_decay non-negative".into());
        }
        Ok(())
    }
}

/// Plain SGD or bias-corrected Adam with decoupled decay. Parameters are
/// rounded to f32 after every step.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    step: i32,
    m: Option<Params>,
    v: Option<Params>,
}

impl Optimizer {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            lr,
            weight_decay,
            step: 0,
            m: None,
            v: None,
        }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.step += 1;
        if self.lr == 0.0 {
            return;
        }
        let lr = self.lr;
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                for ((_, p), (_, g)) in params.slices_mut().into_iter().zip(grad.slices()) {
                    for (p, g) in p.iter_mut().zip(g) {
                        *p -= lr * (g + wd * *p);
                    }
                }
            }
            OptimizerKind::Adam => {
                let m = self.m.get_or_insert_with(|| params.zeros_like());
                let v = self.v.get_or_insert_with(|| params.zeros_like());
                let c1 = 1.0 - Self::BETA1.powi(self.step);
                let c2 = 1.0 - Self::BETA2.powi(self.step);
                let groups = params
                    .slices_mut()
                    .into_iter()
                    .zip(grad.slices())
                    .zip(m.slices_mut().into_iter().zip(v.slices_mut()));
                for (((_, p), (_, g)), ((_, m), (_, v))) in groups {
                    for i in 0..p.len() {
                        m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                        v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                        let update = (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                        p[i] -= lr * (update + wd * p[i]);
                    }
                }
            }
        }
        params.round_to_f32();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Character-weighted mean of the batch losses seen during the epoch.
    pub loss: f64,
    pub val_precision: Option<f64>,
    pub val_recall: Option<f64>,
    pub val_f: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    pub log: Vec<EpochLog>,
}

fn gold(ex: &Example) -> EmphasisLabels {
    let labels = ex.labels.clone().unwrap_or_default();
    EmphasisLabels {
        utterance_id: ex.id.clone(),
        confidences: vec![1.0; labels.len()],
        labels,
        source: LabelSource::Human,
    }
}

/// Held-out metrics of `model` on labelled examples.
pub fn validation_metrics(model: &PredictorModel, val: &[Example]) -> Result<Metrics, ModelError> {
    use rayon::prelude::*;
    let predicted: Vec<EmphasisLabels> = val
        .par_iter()
        .map(|ex| model.predict(ex))
        .collect::<Result<_, _>>()?;
    let gold: Vec<EmphasisLabels> = val.iter().map(gold).collect();
    evaluate(&predicted, &gold)
}

/// Mini-batch training. The shuffle order is drawn from a ChaCha8 stream
/// seeded with `cfg.seed`, so equal inputs give bitwise-equal models.
pub fn train(
    mut model: PredictorModel,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    if train_set.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if let Some(ex) = train_set.iter().chain(val_set).find(|e| e.labels.is_none()) {
        return Err(ModelError::MissingLabels(ex.id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut chars = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let n: usize = batch.iter().map(Example::num_chars).sum();
            if n == 0 {
                continue;
            }
            let (loss, grad) = loss_and_grads(&model, &batch, cfg.class_weight_positive)?;
            loss_sum += loss * n as f64;
            chars += n;
            opt.step(&mut model.params, &grad);
        }
        let (p, r, f) = if val_set.is_empty() {
            (None, None, None)
        } else {
            let m = validation_metrics(&model, val_set)?;
            (Some(m.precision), Some(m.recall), Some(m.f_score))
        };
        log.push(EpochLog {
            epoch,
            loss: loss_sum / chars.max(1) as f64,
            val_precision: p,
            val_recall: r,
            val_f: f,
        });
    }
    Ok(TrainOutcome { model, log })
}

/// Deterministic hold-out split: ids are sorted, shuffled with a ChaCha8
/// stream seeded by `seed`, and the first `floor(n * fraction)` become the
/// validation set. Both halves are returned sorted.
pub fn split_ids(ids: &[String], fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut all = ids.to_vec();
    all.sort();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((all.len() as f64) * fraction).floor() as usize;
    let mut val = all[..n_val].to_vec();
    let mut train = all[n_val..].to_vec();
    val.sort();
    train.sort();
    (train, val)
}
