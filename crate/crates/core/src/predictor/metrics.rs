use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::EmphasisLabels;

/// Micro-averaged character-level scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            precision,
            recall,
            f_score,
            tp,
            fp,
            fn_,
        }
    }
}

/// Pools counts over utterances matched by id; both sides must cover the
/// same id set.
pub fn evaluate(predicted: &[EmphasisLabels], gold: &[EmphasisLabels]) -> Result<Metrics, ModelError> {
    let gold_by_id: HashMap<&str, &EmphasisLabels> =
        gold.iter().map(|g| (g.utterance_id.as_str(), g)).collect();
    if gold_by_id.len() != gold.len() || predicted.len() != gold.len() {
        return Err(ModelError::UtteranceSetMismatch);
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut seen = std::collections::HashSet::new();
    for p in predicted {
        let g = gold_by_id
            .get(p.utterance_id.as_str())
            .ok_or(ModelError::UtteranceSetMismatch)?;
        if !seen.insert(p.utterance_id.as_str()) {
            return Err(ModelError::UtteranceSetMismatch);
        }
        if p.len() != g.len() {
            return Err(ModelError::LengthMismatch {
                id: p.utterance_id.clone(),
                expected: g.len(),
                found: p.len(),
            });
        }
        for (&a, &b) in p.labels.iter().zip(&g.labels) {
            match (a != 0, b != 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_))
}

/// Keeps an utterance iff the predictor reproduces every pseudo label and
/// its least confident character still reaches `tau`.
pub fn filter_by_confidence(
    pseudo: &EmphasisLabels,
    predicted: &EmphasisLabels,
    tau: f64,
) -> Result<bool, ModelError> {
    if pseudo.len() != predicted.len() {
        return Err(ModelError::LengthMismatch {
            id: pseudo.utterance_id.clone(),
            expected: pseudo.len(),
            found: predicted.len(),
        });
    }
    let agree = pseudo.labels.iter().zip(&predicted.labels).all(|(a, b)| a == b);
    let min_conf = predicted
        .confidences
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(agree && min_conf >= tau)
}
