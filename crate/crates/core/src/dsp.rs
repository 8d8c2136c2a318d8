//! Frame-level pitch, energy and duration tracks.

use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Utterance;

/// Additive floor inside the RMS-to-dB conversion.
pub const ENERGY_EPS: f64 = 1e-10;
/// Additive floor inside the log-duration.
pub const DURATION_EPS: f64 = 1e-6;
/// Slack when mapping times onto frame indices.
const FRAME_TIME_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("malformed WAV file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("signal of {samples} samples is shorter than one {frame}-sample frame")]
    TooShort { samples: usize, frame: usize },
    #[error("invalid frame configuration: {0}")]
    InvalidConfig(String),
    #[error("track has no voiced frames")]
    AllUnvoiced,
    #[error("utterance {0}: alignment covers no frames")]
    EmptyAlignment(String),
}

/// Mono audio scaled to [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(!samples.is_empty() && sample_rate > 0);
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a PCM16 or float32 RIFF/WAVE file, averaging channels to mono.
pub fn read_wav(path: &Path) -> Result<Waveform, DspError> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (fmt, bits) => {
            return Err(DspError::UnsupportedEncoding(format!(
                "{fmt:?} with {bits} bits per sample"
            )))
        }
    };
    let samples: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(DspError::MalformedFile {
            path: path.to_path_buf(),
            reason: "no samples".into(),
        });
    }
    Ok(Waveform::new(samples, spec.sample_rate))
}

fn wav_error(path: &Path, e: hound::Error) -> DspError {
    match e {
        hound::Error::IoError(source) => DspError::Io {
            path: path.to_path_buf(),
            source,
        },
        hound::Error::Unsupported => DspError::UnsupportedEncoding("unsupported WAV format".into()),
        other => DspError::MalformedFile {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Writes mono PCM16, clipping to [-1, 1].
pub fn write_wav_pcm16(path: &Path, w: &Waveform) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackKind {
    F0Hz,
    EnergyDb,
    Duration,
    Combined,
    Zscore,
}

/// A uniformly sampled frame-level signal. Frame `k` starts at `k / frame_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProsodicTrack {
    pub kind: TrackKind,
    pub frame_rate: f64,
    pub values: Vec<f64>,
}

impl ProsodicTrack {
    pub fn new(kind: TrackKind, frame_rate: f64, values: Vec<f64>) -> Self {
        assert!(frame_rate > 0.0, "frame rate must be positive");
        ProsodicTrack {
            kind,
            frame_rate,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("track serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameConfig {
    pub frame_length_sec: f64,
    pub hop_sec: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            frame_length_sec: 0.046,
            hop_sec: 0.010,
            f0_min_hz: 60.0,
            f0_max_hz: 500.0,
            voicing_threshold: 0.6,
        }
    }
}

impl FrameConfig {
    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length_sec * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_sec * sample_rate as f64).round() as usize
    }

    pub fn frame_rate(&self, sample_rate: u32) -> f64 {
        sample_rate as f64 / self.hop_samples(sample_rate) as f64
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), DspError> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.hop_sec > 0.0 && self.hop_sec <= self.frame_length_sec) {
            return Err(DspError::InvalidConfig(
                "need 0 < hop_sec <= frame_length_sec".into(),
            ));
        }
        if self.hop_samples(sample_rate) == 0 {
            return Err(DspError::InvalidConfig("hop is shorter than one sample".into()));
        }
        if !(self.f0_min_hz > 0.0 && self.f0_min_hz < self.f0_max_hz && self.f0_max_hz < nyquist) {
            return Err(DspError::InvalidConfig(format!(
                "need 0 < f0_min_hz < f0_max_hz < {nyquist}"
            )));
        }
        Ok(())
    }

    /// Number of whole frames in a signal of `len` samples.
    pub fn num_frames(&self, len: usize, sample_rate: u32) -> Result<usize, DspError> {
        let frame = self.frame_samples(sample_rate);
        if len < frame || frame == 0 {
            return Err(DspError::TooShort {
                samples: len,
                frame,
            });
        }
        Ok((len - frame) / self.hop_samples(sample_rate) + 1)
    }
}

fn frames<'a>(
    w: &'a Waveform,
    cfg: &FrameConfig,
) -> Result<impl Iterator<Item = &'a [f64]> + 'a, DspError> {
    cfg.validate(w.sample_rate)?;
    let n = cfg.num_frames(w.samples.len(), w.sample_rate)?;
    let frame = cfg.frame_samples(w.sample_rate);
    let hop = cfg.hop_samples(w.sample_rate);
    Ok((0..n).map(move |k| &w.samples[k * hop..k * hop + frame]))
}

/// Per-frame RMS level in dB: `20·log10(rms + 1e-10)`.
pub fn frame_energy(w: &Waveform, cfg: &FrameConfig) -> Result<ProsodicTrack, DspError> {
    let values = frames(w, cfg)?
        .map(|f| {
            let rms = (f.iter().map(|x| x * x).sum::<f64>() / f.len() as f64).sqrt();
            20.0 * (rms + ENERGY_EPS).log10()
        })
        .collect();
    Ok(ProsodicTrack::new(
        TrackKind::EnergyDb,
        cfg.frame_rate(w.sample_rate),
        values,
    ))
}

/// Normalized autocorrelation pitch tracker.
///
/// For each mean-removed frame `x` of length `L`, the lag score is
/// `r(τ) = Σ x[n]x[n+τ] / sqrt(Σ_{n<L-τ} x[n]² · Σ_{n≥τ} x[n]²)`, computed
/// with one FFT per frame. The chosen lag is the shortest local maximum in
/// the search range scoring at least 90% of the range maximum, refined by
/// parabolic interpolation. Frames whose best score falls below the voicing
/// threshold report 0.
pub fn estimate_f0(w: &Waveform, cfg: &FrameConfig) -> Result<ProsodicTrack, DspError> {
    let sr = w.sample_rate as f64;
    let frame_len = cfg.frame_samples(w.sample_rate);
    let lag_min = ((sr / cfg.f0_max_hz).floor() as usize).max(2);
    let lag_max = ((sr / cfg.f0_min_hz).ceil() as usize).min(frame_len.saturating_sub(2));
    let frame_iter = frames(w, cfg)?;
    if lag_max <= lag_min {
        return Err(DspError::InvalidConfig(
            "frame too short for the F0 search range".into(),
        ));
    }

    let fft_len = (2 * frame_len).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
    let mut prefix = vec![0.0; frame_len + 1];
    let mut score = vec![0.0; lag_max + 2];

    let values = frame_iter
        .map(|f| {
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(if i < frame_len { f[i] - mean } else { 0.0 }, 0.0);
            }
            for i in 0..frame_len {
                let v = buf[i].re;
                prefix[i + 1] = prefix[i] + v * v;
            }
            let total = prefix[frame_len];
            if total <= 1e-20 * frame_len as f64 {
                return 0.0;
            }
            fwd.process(&mut buf);
            for v in buf.iter_mut() {
                *v = Complex::new(v.norm_sqr(), 0.0);
            }
            inv.process(&mut buf);
            let scale = 1.0 / fft_len as f64;
            for (tau, s) in score.iter_mut().enumerate().skip(lag_min - 1) {
                let head = prefix[frame_len - tau];
                let tail = total - prefix[tau];
                let denom = (head * tail).sqrt();
                *s = if denom > 0.0 {
                    buf[tau].re * scale / denom
                } else {
                    0.0
                };
            }
            pick_f0(&score, lag_min, lag_max, cfg.voicing_threshold, sr)
        })
        .collect();
    Ok(ProsodicTrack::new(
        TrackKind::F0Hz,
        cfg.frame_rate(w.sample_rate),
        values,
    ))
}

fn pick_f0(score: &[f64], lag_min: usize, lag_max: usize, threshold: f64, sr: f64) -> f64 {
    let best = score[lag_min..=lag_max]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if best < threshold {
        return 0.0;
    }
    let lag = (lag_min..=lag_max)
        .find(|&t| {
            score[t] >= 0.9 * best && score[t] >= score[t - 1] && score[t] >= score[t + 1]
        })
        .unwrap_or_else(|| {
            (lag_min..=lag_max)
                .max_by(|&a, &b| score[a].total_cmp(&score[b]))
                .unwrap()
        });
    let (a, b, c) = (score[lag - 1], score[lag], score[lag + 1]);
    let curvature = a - 2.0 * b + c;
    let delta = if curvature < 0.0 {
        (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    sr / (lag as f64 + delta)
}

/// Fills unvoiced (zero) frames by linear interpolation between voiced
/// neighbours, holding the nearest voiced value at the edges.
pub fn interpolate_unvoiced(t: &ProsodicTrack) -> Result<ProsodicTrack, DspError> {
    let voiced: Vec<usize> = (0..t.len()).filter(|&i| t.values[i] > 0.0).collect();
    let (&first, &last) = match (voiced.first(), voiced.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(DspError::AllUnvoiced),
    };
    let mut out = t.values.clone();
    for v in &mut out[..first] {
        *v = t.values[first];
    }
    for v in &mut out[last + 1..] {
        *v = t.values[last];
    }
    for pair in voiced.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (t.values[a], t.values[b]);
        for i in a + 1..b {
            let frac = (i - a) as f64 / (b - a) as f64;
            out[i] = va + (vb - va) * frac;
        }
    }
    Ok(ProsodicTrack::new(t.kind, t.frame_rate, out))
}

/// First frame index at or after time `t`.
pub(crate) fn frame_at(t: f64, frame_rate: f64) -> usize {
    (t * frame_rate - FRAME_TIME_SLACK).ceil().max(0.0) as usize
}

/// Piecewise-constant log-duration signal on the frame grid.
///
/// Frames inside character `i` take `ln(end_i - start_i + 1e-6)`; frames in
/// gaps hold the preceding value, and frames before the first covered one
/// take the first value. The track has `ceil(last_end · frame_rate)` frames.
pub fn duration_signal(utt: &Utterance, frame_rate: f64) -> Result<ProsodicTrack, DspError> {
    let last_end = utt.char_times.last().map(|&(_, e)| e).unwrap_or(0.0);
    let total = frame_at(last_end, frame_rate);
    let mut values: Vec<Option<f64>> = vec![None; total];
    for &(s, e) in &utt.char_times {
        let v = (e - s + DURATION_EPS).ln();
        for slot in &mut values[frame_at(s, frame_rate).min(total)..frame_at(e, frame_rate).min(total)] {
            *slot = Some(v);
        }
    }
    let first = values
        .iter()
        .flatten()
        .next()
        .copied()
        .ok_or_else(|| DspError::EmptyAlignment(utt.id.clone()))?;
    let mut prev = first;
    let values = values
        .into_iter()
        .map(|v| {
            if let Some(v) = v {
                prev = v;
            }
            prev
        })
        .collect();
    Ok(ProsodicTrack::new(TrackKind::Duration, frame_rate, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, amp: f64, secs: f64, sr: u32) -> Waveform {
        let n = (secs * sr as f64) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
    }

    fn utt_with_times(times: Vec<(f64, f64)>) -> Utterance {
        let n = times.len();
        Utterance::new(
            "t",
            (0..n).map(|i| format!("c{i}")).collect(),
            vec![(0, n)],
            vec![1; n],
            times,
        )
        .unwrap()
    }

    #[test]
    fn constant_signal_energy() {
        let w = Waveform::new(vec![0.5; 4800], 24000);
        let e = frame_energy(&w, &FrameConfig::default()).unwrap();
        for v in &e.values {
            assert!((v - 20.0 * (0.5f64 + ENERGY_EPS).log10()).abs() < 1e-12);
        }
        assert!((e.values[0] + 6.0206).abs() < 1e-3);
        assert_eq!(e.frame_rate, 100.0);
    }

    #[test]
    fn silence_energy_floor() {
        let w = Waveform::new(vec![0.0; 4800], 24000);
        let e = frame_energy(&w, &FrameConfig::default()).unwrap();
        assert!(e.values.iter().all(|&v| (v + 200.0).abs() < 1e-9));
    }

    #[test]
    fn sine_energy_matches_brute_force_rms() {
        let w = sine(200.0, 1.0, 0.5, 24000);
        let cfg = FrameConfig::default();
        let e = frame_energy(&w, &cfg).unwrap();
        // independent: 10 whole periods of the sine, summed directly
        let period = 120;
        let ms: f64 = (0..10 * period)
            .map(|i| (2.0 * PI * i as f64 / period as f64).sin().powi(2))
            .sum::<f64>()
            / (10 * period) as f64;
        let expect = 20.0 * ms.sqrt().log10();
        assert!((expect + 3.0103).abs() < 1e-3);
        for v in &e.values[1..e.len() - 1] {
            assert!((v - expect).abs() < 0.05, "{v} vs {expect}");
        }
    }

    #[test]
    fn too_short_signal() {
        let w = Waveform::new(vec![0.1; 100], 24000);
        assert!(matches!(
            frame_energy(&w, &FrameConfig::default()),
            Err(DspError::TooShort { .. })
        ));
        assert!(matches!(
            estimate_f0(&w, &FrameConfig::default()),
            Err(DspError::TooShort { .. })
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let w = Waveform::new(vec![0.1; 4800], 24000);
        let cfg = FrameConfig {
            f0_max_hz: 13000.0,
            ..FrameConfig::default()
        };
        assert!(matches!(estimate_f0(&w, &cfg), Err(DspError::InvalidConfig(_))));
        let cfg = FrameConfig {
            hop_sec: 0.1,
            ..FrameConfig::default()
        };
        assert!(matches!(frame_energy(&w, &cfg), Err(DspError::InvalidConfig(_))));
    }

    #[test]
    fn sine_pitch_200hz() {
        let w = sine(200.0, 0.8, 0.5, 24000);
        let f0 = estimate_f0(&w, &FrameConfig::default()).unwrap();
        for v in &f0.values[1..f0.len() - 1] {
            assert!((v - 200.0).abs() <= 2.0, "{v}");
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let w = Waveform::new(vec![0.0; 12000], 24000);
        let f0 = estimate_f0(&w, &FrameConfig::default()).unwrap();
        assert!(f0.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interpolation_examples() {
        let t = |v: Vec<f64>| ProsodicTrack::new(TrackKind::F0Hz, 100.0, v);
        assert_eq!(interpolate_unvoiced(&t(vec![100.0, 0.0, 200.0])).unwrap().values, vec![100.0, 150.0, 200.0]);
        assert_eq!(interpolate_unvoiced(&t(vec![0.0, 100.0, 0.0])).unwrap().values, vec![100.0; 3]);
        assert_eq!(interpolate_unvoiced(&t(vec![100.0, 100.0])).unwrap().values, vec![100.0; 2]);
        assert!(matches!(interpolate_unvoiced(&t(vec![0.0, 0.0])), Err(DspError::AllUnvoiced)));
    }

    #[test]
    fn duration_two_chars() {
        let d = duration_signal(&utt_with_times(vec![(0.0, 0.2), (0.2, 0.6)]), 100.0).unwrap();
        assert_eq!(d.len(), 60);
        assert!(d.values[..20].iter().all(|&v| v == (0.2 + DURATION_EPS).ln()));
        assert!(d.values[20..].iter().all(|&v| (v - (0.4 + DURATION_EPS).ln()).abs() < 1e-12));
    }

    #[test]
    fn duration_single_and_equal() {
        let d = duration_signal(&utt_with_times(vec![(0.0, 1.0)]), 100.0).unwrap();
        assert_eq!(d.len(), 100);
        assert!(d.values.iter().all(|&v| v.abs() < 1e-5));
        let d = duration_signal(&utt_with_times(vec![(0.0, 0.25), (0.25, 0.5), (0.5, 0.75)]), 100.0).unwrap();
        let first = d.values[0];
        assert!(d.values.iter().all(|&v| (v - first).abs() < 1e-12));
    }

    #[test]
    fn duration_gaps_and_leading_silence() {
        let d = duration_signal(&utt_with_times(vec![(0.1, 0.2), (0.3, 0.5)]), 100.0).unwrap();
        assert_eq!(d.len(), 50);
        let a = (0.1 + DURATION_EPS).ln();
        let b = (0.2 + DURATION_EPS).ln();
        assert!((d.values[0] - a).abs() < 1e-9);
        assert!((d.values[25] - a).abs() < 1e-9);
        assert!((d.values[35] - b).abs() < 1e-9);
    }

    #[test]
    fn duration_without_coverage() {
        let u = utt_with_times(vec![(0.0, 0.0)]);
        assert!(matches!(duration_signal(&u, 100.0), Err(DspError::EmptyAlignment(_))));
    }

    #[test]
    fn wav_round_trip_scaling_and_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("max.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 24000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&path, spec).unwrap();
        wr.write_sample(32767i16).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.finalize().unwrap();
        let w = read_wav(&path).unwrap();
        assert_eq!(w.samples[0], 32767.0 / 32768.0);

        let stereo = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 24000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut wr = hound::WavWriter::create(&stereo, spec).unwrap();
        for i in 0..100 {
            let x = (i as f32 * 0.1).sin();
            wr.write_sample(x).unwrap();
            wr.write_sample(-x).unwrap();
        }
        wr.finalize().unwrap();
        let w = read_wav(&stereo).unwrap();
        assert_eq!(w.samples.len(), 100);
        assert!(w.samples.iter().all(|&v| v == 0.0));

        let bad = dir.path().join("pcm24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&bad, spec).unwrap();
        wr.write_sample(1i32).unwrap();
        wr.finalize().unwrap();
        assert!(matches!(read_wav(&bad), Err(DspError::UnsupportedEncoding(_))));

        std::fs::write(dir.path().join("junk.wav"), b"not a wav").unwrap();
        assert!(read_wav(&dir.path().join("junk.wav")).is_err());
    }
}
