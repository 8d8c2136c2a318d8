//! Unsupervised emphasis labels from prosody.
//!
//! Pitch (in semitones), energy and log-duration tracks are z-scored and
//! summed with weights; the sum is analysed with a Ricker continuous wavelet
//! transform, each character is scored by its peak coefficient over a band
//! of scales, and the per-utterance z-scored scores are thresholded.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EmphasisLabels, LabelSource, Utterance};
use crate::dsp::{self, DspError, FrameConfig, ProsodicTrack, TrackKind, Waveform};

/// Variance below which a signal is treated as constant.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;
/// Slope of the logistic mapping z-scores to confidences.
pub const CONFIDENCE_SLOPE: f64 = 4.0;
/// Kernel half-width in units of the scale.
const RICKER_SUPPORT: f64 = 8.0;

#[derive(Debug, Error)]
pub enum ProminenceError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("frame rates differ: {0} vs {1}")]
    FrameRateMismatch(f64, f64),
    #[error("scale band {min}..={max} outside 0..{num_scales}")]
    BandOutOfRange {
        min: usize,
        max: usize,
        num_scales: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("utterance {id}: {source}")]
    InUtterance {
        id: String,
        #[source]
        source: Box<ProminenceError>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombineWeights {
    pub w_f0: f64,
    pub w_energy: f64,
    pub w_duration: f64,
}

impl Default for CombineWeights {
    fn default() -> Self {
        CombineWeights {
            w_f0: 1.0,
            w_energy: 1.0,
            w_duration: 1.0,
        }
    }
}

impl CombineWeights {
    pub fn validate(&self) -> Result<(), ProminenceError> {
        let ws = [self.w_f0, self.w_energy, self.w_duration];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(ProminenceError::InvalidConfig(
                "weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveletConfig {
    pub num_scales: usize,
    pub scales_per_octave: usize,
    pub base_scale_frames: f64,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig {
            num_scales: 12,
            scales_per_octave: 2,
            base_scale_frames: 4.0,
        }
    }
}

/// Contents of `prominence.json`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProminenceConfig {
    pub frame: FrameConfig,
    pub weights: CombineWeights,
    pub wavelet: WaveletConfig,
    /// Inclusive scale-index range searched for per-character peaks.
    pub band: (usize, usize),
    pub threshold_sigma: f64,
}

impl Default for ProminenceConfig {
    /// Band 3..=10 spans scales of 11 to 128 frames (0.11 s to 1.28 s at 100 fps).
    fn default() -> Self {
        ProminenceConfig {
            frame: FrameConfig::default(),
            weights: CombineWeights::default(),
            wavelet: WaveletConfig::default(),
            band: (3, 10),
            threshold_sigma: 1.0,
        }
    }
}

/// Wavelet coefficients, one row per scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Scalogram {
    pub coefficients: Array2<f64>,
    pub scales_frames: Vec<f64>,
    pub frame_rate: f64,
    /// Set when the track is shorter than four times the largest scale.
    pub large_scale_truncated: bool,
}

impl Scalogram {
    pub fn num_scales(&self) -> usize {
        self.scales_frames.len()
    }

    pub fn num_frames(&self) -> usize {
        self.coefficients.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProminenceResult {
    pub utterance_id: String,
    pub scores: Vec<f64>,
    pub labels: EmphasisLabels,
    /// Threshold on the raw score scale; `labels[i] == 1` iff `scores[i] >= threshold_used`.
    pub threshold_used: f64,
}

impl ProminenceResult {
    /// `char_index \t raw score \t z-score` rows with a header line.
    pub fn scores_tsv(&self) -> String {
        let z = standardize(&self.scores);
        let mut out = String::from("#char_index\tscore\tzscore\n");
        for (i, (s, z)) in self.scores.iter().zip(z).enumerate() {
            out.push_str(&format!("{i}\t{s}\t{z}\n"));
        }
        out
    }
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Population z-scores; all zeros when the variance is degenerate.
fn standardize(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let (mean, var) = mean_var(values);
    if var < DEGENERATE_VARIANCE {
        return vec![0.0; values.len()];
    }
    let sd = var.sqrt();
    values.iter().map(|v| (v - mean) / sd).collect()
}

pub fn zscore(t: &ProsodicTrack) -> ProsodicTrack {
    ProsodicTrack::new(TrackKind::Zscore, t.frame_rate, standardize(&t.values))
}

/// Weighted frame-wise sum; tracks are truncated to the shortest.
pub fn combine(
    f0: &ProsodicTrack,
    energy: &ProsodicTrack,
    duration: &ProsodicTrack,
    w: &CombineWeights,
) -> Result<ProsodicTrack, ProminenceError> {
    w.validate()?;
    let rate = f0.frame_rate;
    for other in [energy.frame_rate, duration.frame_rate] {
        if (other - rate).abs() > 1e-9 * rate {
            return Err(ProminenceError::FrameRateMismatch(rate, other));
        }
    }
    let n = f0.len().min(energy.len()).min(duration.len());
    let values = (0..n)
        .map(|i| w.w_f0 * f0.values[i] + w.w_energy * energy.values[i] + w.w_duration * duration.values[i])
        .collect();
    Ok(ProsodicTrack::new(TrackKind::Combined, rate, values))
}

/// Mexican-hat wavelet at scale `s`, unit L2 norm in continuous time.
pub fn ricker(t: f64, s: f64) -> f64 {
    let a = 2.0 / ((3.0 * s).sqrt() * PI.powf(0.25));
    let u = t / s;
    a * (1.0 - u * u) * (-0.5 * u * u).exp()
}

/// Discrete kernel `k[d] = ricker(d, s) / norm` for `d = 0..=max_lag`, where
/// `norm² = Σ_{|d| ≤ 8s} ricker(d, s)²` so that white noise maps to unit
/// variance.
fn ricker_kernel(s: f64, max_lag: usize) -> Vec<f64> {
    let hw = (RICKER_SUPPORT * s).ceil() as i64;
    let energy: f64 = (-hw..=hw).map(|d| ricker(d as f64, s).powi(2)).sum();
    let norm = energy.sqrt();
    (0..=max_lag.min(hw as usize))
        .map(|d| ricker(d as f64, s) / norm)
        .collect()
}

/// `s_j = base · 2^(j / scales_per_octave)`.
pub fn wavelet_scales(num_scales: usize, scales_per_octave: usize, base_scale_frames: f64) -> Vec<f64> {
    (0..num_scales)
        .map(|j| base_scale_frames * 2f64.powf(j as f64 / scales_per_octave as f64))
        .collect()
}

/// Continuous wavelet transform of the mean-removed track with zero-padded
/// borders.
pub fn cwt_ricker(
    t: &ProsodicTrack,
    num_scales: usize,
    scales_per_octave: usize,
    base_scale_frames: f64,
) -> Scalogram {
    assert!(num_scales >= 1 && scales_per_octave >= 1 && base_scale_frames > 0.0);
    let scales = wavelet_scales(num_scales, scales_per_octave, base_scale_frames);
    let n = t.len();
    let mean = if n > 0 {
        t.values.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let x: Vec<f64> = t.values.iter().map(|v| v - mean).collect();
    let mut coefficients = Array2::zeros((num_scales, n));
    for (j, &s) in scales.iter().enumerate() {
        let kernel = ricker_kernel(s, n.saturating_sub(1));
        let reach = kernel.len() - 1;
        let mut row = coefficients.row_mut(j);
        for i in 0..n {
            let lo = i.saturating_sub(reach);
            let hi = (i + reach).min(n - 1);
            row[i] = (lo..=hi).map(|k| kernel[i.abs_diff(k)] * x[k]).sum();
        }
    }
    let largest = *scales.last().unwrap();
    Scalogram {
        coefficients,
        large_scale_truncated: (n as f64) < 4.0 * largest,
        scales_frames: scales,
        frame_rate: t.frame_rate,
    }
}

/// Peak coefficient per character over the frames of its time span and the
/// scales of `band` (inclusive). Characters covering no frame get the
/// minimum finite score.
pub fn prominence_scores(
    sc: &Scalogram,
    utt: &Utterance,
    band: (usize, usize),
) -> Result<Vec<f64>, ProminenceError> {
    let (min, max) = band;
    if min > max || max >= sc.num_scales() {
        return Err(ProminenceError::BandOutOfRange {
            min,
            max,
            num_scales: sc.num_scales(),
        });
    }
    let frames = sc.num_frames();
    let mut scores: Vec<f64> = utt
        .char_times
        .iter()
        .map(|&(s, e)| {
            let lo = dsp::frame_at(s, sc.frame_rate).min(frames);
            let hi = dsp::frame_at(e, sc.frame_rate).min(frames);
            let mut best = f64::NEG_INFINITY;
            for j in min..=max {
                for k in lo..hi {
                    best = best.max(sc.coefficients[[j, k]]);
                }
            }
            best
        })
        .collect();
    let floor = scores
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 0.0 };
    for v in scores.iter_mut().filter(|v| !v.is_finite()) {
        *v = floor;
    }
    Ok(scores)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Binary labels from per-utterance z-scored prominence scores. Also returns
/// the threshold translated back to the raw score scale.
pub fn quantize_with_threshold(
    utterance_id: &str,
    scores: &[f64],
    threshold_sigma: f64,
) -> (EmphasisLabels, f64) {
    assert!(!scores.is_empty(), "quantize needs at least one score");
    let (mean, var) = mean_var(scores);
    let degenerate = var < DEGENERATE_VARIANCE;
    let z = standardize(scores);
    let labels: Vec<u8> = z
        .iter()
        .map(|&z| u8::from(!degenerate && z >= threshold_sigma))
        .collect();
    let confidences = z
        .iter()
        .map(|&z| logistic((z - threshold_sigma) * CONFIDENCE_SLOPE))
        .collect();
    // z is monotone in the raw score, so the smallest positive score (or a
    // value above every score) reproduces the labels exactly.
    let smallest_positive = scores
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .fold(f64::INFINITY, f64::min);
    let threshold_used = if degenerate {
        f64::INFINITY
    } else if smallest_positive.is_finite() {
        smallest_positive
    } else {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean + threshold_sigma * var.sqrt()).max(max.next_up())
    };
    (
        EmphasisLabels {
            utterance_id: utterance_id.to_string(),
            labels,
            confidences,
            source: LabelSource::Pseudo,
        },
        threshold_used,
    )
}

pub fn quantize(utterance_id: &str, scores: &[f64], threshold_sigma: f64) -> EmphasisLabels {
    quantize_with_threshold(utterance_id, scores, threshold_sigma).0
}

/// Intermediate signals of one labeling run, for inspection.
#[derive(Clone, Debug)]
pub struct ProminenceTrace {
    pub f0: ProsodicTrack,
    pub energy: ProsodicTrack,
    pub duration: ProsodicTrack,
    pub combined: ProsodicTrack,
    pub scalogram: Scalogram,
    pub result: ProminenceResult,
}

fn semitones(t: &ProsodicTrack) -> ProsodicTrack {
    ProsodicTrack::new(
        t.kind,
        t.frame_rate,
        t.values.iter().map(|f| 12.0 * f.log2()).collect(),
    )
}

pub fn trace_waveform(
    w: &Waveform,
    utt: &Utterance,
    cfg: &ProminenceConfig,
) -> Result<ProminenceTrace, ProminenceError> {
    cfg.weights.validate()?;
    if cfg.threshold_sigma.is_nan() {
        return Err(ProminenceError::InvalidConfig("threshold_sigma is NaN".into()));
    }
    let f0 = dsp::interpolate_unvoiced(&dsp::estimate_f0(w, &cfg.frame)?)?;
    let energy = dsp::frame_energy(w, &cfg.frame)?;
    let duration = dsp::duration_signal(utt, energy.frame_rate)?;
    let combined = combine(
        &zscore(&semitones(&f0)),
        &zscore(&energy),
        &zscore(&duration),
        &cfg.weights,
    )?;
    let wc = &cfg.wavelet;
    let scalogram = cwt_ricker(&combined, wc.num_scales, wc.scales_per_octave, wc.base_scale_frames);
    let scores = prominence_scores(&scalogram, utt, cfg.band)?;
    let (labels, threshold_used) = quantize_with_threshold(&utt.id, &scores, cfg.threshold_sigma);
    let result = ProminenceResult {
        utterance_id: utt.id.clone(),
        scores,
        labels,
        threshold_used,
    };
    Ok(ProminenceTrace {
        f0,
        energy,
        duration,
        combined,
        scalogram,
        result,
    })
}

pub fn label_waveform(
    w: &Waveform,
    utt: &Utterance,
    cfg: &ProminenceConfig,
) -> Result<ProminenceResult, ProminenceError> {
    trace_waveform(w, utt, cfg)
        .map(|t| t.result)
        .map_err(|e| ProminenceError::InUtterance {
            id: utt.id.clone(),
            source: Box::new(e),
        })
}

/// Reads the recording and produces pseudo labels for every character.
pub fn label_utterance(
    wav: &Path,
    utt: &Utterance,
    cfg: &ProminenceConfig,
) -> Result<ProminenceResult, ProminenceError> {
    let w = dsp::read_wav(wav).map_err(|e| ProminenceError::InUtterance {
        id: utt.id.clone(),
        source: Box::new(e.into()),
    })?;
    label_waveform(&w, utt, cfg)
}
