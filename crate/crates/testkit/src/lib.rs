//! Synthetic corpora with known ground truth.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use prosody_emph::corpus::{
    DepAnnotation, EmphasisLabels, LabelSource, Tagset, Utterance, ANN_SUFFIX, LAB_SUFFIX,
    TAGSET_FILE, UTT_SUFFIX,
};
use prosody_emph::dsp::{write_wav_pcm16, Waveform};
use rand::seq::SliceRandom;
use rand::Rng;

pub use rand_chacha::ChaCha8Rng;
pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const CHAR_POOL: &str = "天地人山水火木金土日月风云雨雪花草鸟鱼马牛羊猫狗红绿蓝白黑大小高低长短新旧好坏快慢冷热";

fn pool() -> Vec<String> {
    CHAR_POOL.chars().map(|c| c.to_string()).collect()
}

/// Builds an utterance from word lengths with contiguous character times.
pub fn utterance_from_words(
    rng: &mut impl Rng,
    id: &str,
    word_lens: &[usize],
    max_phones: u32,
) -> Utterance {
    let chars_pool = pool();
    let mut chars = Vec::new();
    let mut spans = Vec::new();
    for &len in word_lens {
        let s = chars.len();
        for _ in 0..len {
            chars.push(chars_pool.choose(rng).unwrap().clone());
        }
        spans.push((s, chars.len()));
    }
    let n = chars.len();
    let phones = (0..n).map(|_| rng.gen_range(1..=max_phones)).collect();
    let mut t = 0.0;
    let times = (0..n)
        .map(|_| {
            let d: f64 = rng.gen_range(0.1..0.3);
            let span = (t, t + d);
            t += d;
            span
        })
        .collect();
    Utterance::new(id, chars, spans, phones, times).expect("generated utterance is valid")
}

pub fn random_utterance(rng: &mut impl Rng, id: &str, num_words: usize, max_word_len: usize) -> Utterance {
    let lens: Vec<usize> = (0..num_words).map(|_| rng.gen_range(1..=max_word_len)).collect();
    utterance_from_words(rng, id, &lens, 3)
}

/// Non-root relation ids of the tagset.
pub fn plain_relations(t: &Tagset) -> Vec<usize> {
    let reserved = [t.root_id(), t.bos_id(), t.eos_id(), t.seq_id()];
    (0..t.num_rel()).filter(|r| !reserved.contains(r)).collect()
}

/// Random forest over `n` words. With `single_root` it is a tree.
pub fn random_forest(
    rng: &mut impl Rng,
    id: &str,
    n: usize,
    tagset: &Tagset,
    single_root: bool,
) -> DepAnnotation {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let rels = plain_relations(tagset);
    let mut heads = vec![None; n];
    let mut relations = vec![tagset.root_id(); n];
    for (k, &w) in order.iter().enumerate() {
        let root = k == 0 || (!single_root && rng.gen_bool(0.2));
        if !root {
            heads[w] = Some(order[rng.gen_range(0..k)]);
            relations[w] = *rels.choose(rng).unwrap();
        }
    }
    DepAnnotation {
        utterance_id: id.into(),
        pos_tags: (0..n).map(|_| rng.gen_range(0..tagset.num_pos())).collect(),
        heads,
        relations,
    }
}

pub fn random_labels(rng: &mut impl Rng, id: &str, n: usize, source: LabelSource) -> EmphasisLabels {
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.25))).collect();
    EmphasisLabels {
        utterance_id: id.into(),
        confidences: (0..n).map(|_| rng.gen_range(0.5..=1.0)).collect(),
        labels,
        source,
    }
}

pub fn human_labels(id: &str, labels: Vec<u8>) -> EmphasisLabels {
    EmphasisLabels {
        utterance_id: id.into(),
        confidences: vec![1.0; labels.len()],
        labels,
        source: LabelSource::Human,
    }
}

/// One labelled corpus item.
#[derive(Clone, Debug)]
pub struct Item {
    pub utt: Utterance,
    pub ann: DepAnnotation,
    pub labels: EmphasisLabels,
}

/// Learnable task: each utterance has exactly two adjective words, one
/// attached to the root and one attached elsewhere; gold emphasis marks the
/// characters of the root-attached adjective.
pub fn adjective_corpus(seed: u64, count: usize, tagset: &Tagset) -> Vec<Item> {
    let mut rng = rng(seed);
    let adj = tagset.pos_id("a").expect("tagset has an adjective tag");
    let other_pos: Vec<usize> = (0..tagset.num_pos()).filter(|&p| p != adj).collect();
    let rels = plain_relations(tagset);
    (0..count)
        .map(|i| {
            let id = format!("adj{i:04}");
            let n = rng.gen_range(3..=6);
            let lens: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=2)).collect();
            let utt = utterance_from_words(&mut rng, &id, &lens, 3);
            let mut words: Vec<usize> = (0..n).collect();
            words.shuffle(&mut rng);
            let (root, gold, distractor) = (words[0], words[1], words[2]);
            let rest = &words[3..];

            let mut heads = vec![None; n];
            let mut relations = vec![tagset.root_id(); n];
            let mut pos_tags = vec![0; n];
            pos_tags[root] = *other_pos.choose(&mut rng).unwrap();
            let mut attached = vec![root];
            for &w in rest {
                heads[w] = Some(*attached.choose(&mut rng).unwrap());
                relations[w] = *rels.choose(&mut rng).unwrap();
                pos_tags[w] = *other_pos.choose(&mut rng).unwrap();
                attached.push(w);
            }
            heads[gold] = Some(root);
            relations[gold] = *rels.choose(&mut rng).unwrap();
            pos_tags[gold] = adj;
            attached.push(gold);
            let non_root: Vec<usize> = attached.iter().copied().filter(|&w| w != root).collect();
            heads[distractor] = Some(*non_root.choose(&mut rng).unwrap());
            relations[distractor] = *rels.choose(&mut rng).unwrap();
            pos_tags[distractor] = adj;

            let (s, e) = utt.word_spans[gold];
            let labels = (0..utt.num_chars()).map(|c| u8::from(c >= s && c < e)).collect();
            Item {
                ann: DepAnnotation {
                    utterance_id: id.clone(),
                    pos_tags,
                    heads,
                    relations,
                },
                labels: human_labels(&id, labels),
                utt,
            }
        })
        .collect()
}

/// Per-character acoustic targets for the sine-carrier generator.
#[derive(Clone, Copy, Debug)]
pub struct CharProsody {
    pub duration_sec: f64,
    pub f0_hz: f64,
    pub amplitude: f64,
}

/// Phase-continuous harmonic carrier following the per-character targets,
/// with 5 ms linear ramps between segments to avoid clicks.
pub fn synth_waveform(segments: &[CharProsody], sample_rate: u32) -> Waveform {
    let sr = sample_rate as f64;
    let mut samples = Vec::new();
    let mut phase = 0.0f64;
    let ramp = (0.005 * sr) as usize;
    let mut prev: Option<CharProsody> = None;
    for seg in segments {
        let n = (seg.duration_sec * sr).round() as usize;
        for k in 0..n {
            let mix = match prev {
                Some(_) if k < ramp => k as f64 / ramp as f64,
                _ => 1.0,
            };
            let (f0, amp) = match prev {
                Some(p) => (
                    p.f0_hz + (seg.f0_hz - p.f0_hz) * mix,
                    p.amplitude + (seg.amplitude - p.amplitude) * mix,
                ),
                None => (seg.f0_hz, seg.amplitude),
            };
            phase += 2.0 * PI * f0 / sr;
            let v = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
            samples.push(amp * v / 1.75);
        }
        prev = Some(*seg);
    }
    Waveform::new(samples, sample_rate)
}

fn utterance_for_segments(id: &str, segments: &[CharProsody]) -> Utterance {
    let n = segments.len();
    let mut t = 0.0;
    let times = segments
        .iter()
        .map(|s| {
            let span = (t, t + s.duration_sec);
            t += s.duration_sec;
            span
        })
        .collect();
    let chars = pool().into_iter().take(n).collect();
    Utterance::new(id, chars, vec![(0, n)], vec![2; n], times).expect("valid utterance")
}

/// Injected prominence in semitones, decibels and duration ratio.
#[derive(Clone, Copy, Debug)]
pub struct Injection {
    pub semitones: f64,
    pub decibels: f64,
    pub duration_ratio: f64,
}

impl Default for Injection {
    fn default() -> Self {
        Injection {
            semitones: 4.0,
            decibels: 6.0,
            duration_ratio: 1.6,
        }
    }
}

/// A synthetic utterance with one prominent character.
pub struct ProminenceCase {
    pub utt: Utterance,
    pub wav: Waveform,
    pub injected: usize,
}

/// `num_chars` characters with mild random jitter (±0.5 semitone, ±1 dB,
/// ±10% duration); character `injected` receives the injection on top.
pub fn prominence_case(
    rng: &mut impl Rng,
    id: &str,
    num_chars: usize,
    injected: usize,
    inj: Injection,
    sample_rate: u32,
) -> ProminenceCase {
    let base_f0 = rng.gen_range(150.0..220.0);
    let segments: Vec<CharProsody> = (0..num_chars)
        .map(|i| {
            let mut st: f64 = rng.gen_range(-0.5..0.5);
            let mut db: f64 = rng.gen_range(-1.0..1.0);
            let mut dur: f64 = 0.2 * rng.gen_range(0.9..1.1);
            if i == injected {
                st += inj.semitones;
                db += inj.decibels;
                dur *= inj.duration_ratio;
            }
            CharProsody {
                duration_sec: dur,
                f0_hz: base_f0 * 2f64.powf(st / 12.0),
                amplitude: 0.2 * 10f64.powf(db / 20.0),
            }
        })
        .collect();
    ProminenceCase {
        utt: utterance_for_segments(id, &segments),
        wav: synth_waveform(&segments, sample_rate),
        injected,
    }
}

/// Characters with identical prosody: 200 Hz at 24 kHz, so every 10 ms hop
/// spans exactly two periods and all tracks are constant.
pub fn flat_case(id: &str, num_chars: usize) -> ProminenceCase {
    let segments = vec![
        CharProsody {
            duration_sec: 0.2,
            f0_hz: 200.0,
            amplitude: 0.3,
        };
        num_chars
    ];
    ProminenceCase {
        utt: utterance_for_segments(id, &segments),
        wav: synth_waveform(&segments, 24_000),
        injected: usize::MAX,
    }
}

/// Writes items as a corpus directory (plus `tagset.json`).
pub fn write_corpus(dir: &Path, items: &[Item], tagset: &Tagset, with_labels: bool) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(TAGSET_FILE), tagset.to_json()).unwrap();
    for it in items {
        let id = &it.utt.id;
        it.utt.save(&dir.join(format!("{id}{UTT_SUFFIX}"))).unwrap();
        it.ann.save(&dir.join(format!("{id}{ANN_SUFFIX}")), tagset).unwrap();
        if with_labels {
            it.labels.save(&dir.join(format!("{id}{LAB_SUFFIX}"))).unwrap();
        }
    }
}

/// Writes prominence cases as a corpus (trivial single-root annotations)
/// and a WAV directory.
pub fn write_prosody_corpus(corpus: &Path, wav_dir: &Path, cases: &[ProminenceCase], tagset: &Tagset) {
    fs::create_dir_all(corpus).unwrap();
    fs::create_dir_all(wav_dir).unwrap();
    fs::write(corpus.join(TAGSET_FILE), tagset.to_json()).unwrap();
    for c in cases {
        let id = &c.utt.id;
        c.utt.save(&corpus.join(format!("{id}{UTT_SUFFIX}"))).unwrap();
        let ann = DepAnnotation {
            utterance_id: id.clone(),
            pos_tags: vec![tagset.pos_id("n").unwrap()],
            heads: vec![None],
            relations: vec![tagset.root_id()],
        };
        ann.save(&corpus.join(format!("{id}{ANN_SUFFIX}")), tagset).unwrap();
        write_wav_pcm16(&wav_dir.join(format!("{id}.wav")), &c.wav).unwrap();
    }
}

pub mod gradcheck {
    use prosody_emph::corpus::{LabelSource, Tagset};
    use prosody_emph::embed::SemanticProvider;
    use prosody_emph::graph::GraphOptions;
    use prosody_emph::predictor::{batch_loss, loss_and_grads, Example, ModelConfig, PredictorModel};
    use rand::Rng;
    use rayon::prelude::*;

    use super::{random_forest, random_labels, random_utterance};

    /// Small model with every parameter drawn uniformly from ±`scale`.
    pub fn random_model(rng: &mut impl Rng, cfg: ModelConfig, tagset: &Tagset, scale: f64) -> PredictorModel {
        let mut m = PredictorModel::new(cfg, tagset, rng.gen());
        for (_, s) in m.params.slices_mut() {
            for v in s.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        m
    }

    /// Random labelled example with at most `max_chars` characters.
    pub fn random_example(
        rng: &mut impl Rng,
        id: &str,
        max_chars: usize,
        tagset: &Tagset,
        provider: &SemanticProvider,
    ) -> Example {
        loop {
            let words = rng.gen_range(1..=max_chars.min(3));
            let utt = random_utterance(rng, id, words, 2);
            if utt.num_chars() > max_chars {
                continue;
            }
            let ann = random_forest(rng, id, words, tagset, false);
            let labels = random_labels(rng, id, utt.num_chars(), LabelSource::Human);
            return Example::new(&utt, &ann, tagset, provider, GraphOptions::default(), Some(&labels))
                .expect("consistent example");
        }
    }

    #[derive(Debug, Clone)]
    pub struct Report {
        pub max_rel_error: f64,
        pub worst: String,
        pub checked: usize,
    }

    /// Compares analytic gradients with central differences for every
    /// parameter. Relative error is `|a - n| / max(|a|, |n|, floor)`; the
    /// floor keeps f64 cancellation noise on near-zero entries from dominating.
    pub fn check(model: &PredictorModel, batch: &[Example], pos_weight: f64, eps: f64, floor: f64) -> Report {
        let (_, grad) = loss_and_grads(model, batch, pos_weight).unwrap();
        let analytic: Vec<(String, Vec<f64>)> =
            grad.slices().into_iter().map(|(n, s)| (n, s.to_vec())).collect();
        let coords: Vec<(usize, usize)> = analytic
            .iter()
            .enumerate()
            .flat_map(|(t, (_, a))| (0..a.len()).map(move |i| (t, i)))
            .collect();
        let rel: Vec<(f64, f64)> = coords
            .par_iter()
            .map_init(
                || model.clone(),
                |probe, &(t, i)| {
                    let orig = probe.params.slices()[t].1[i];
                    probe.params.slices_mut()[t].1[i] = orig + eps;
                    let lp = batch_loss(probe, batch, pos_weight).unwrap();
                    probe.params.slices_mut()[t].1[i] = orig - eps;
                    let lm = batch_loss(probe, batch, pos_weight).unwrap();
                    probe.params.slices_mut()[t].1[i] = orig;
                    let num = (lp - lm) / (2.0 * eps);
                    let a = analytic[t].1[i];
                    ((a - num).abs() / a.abs().max(num.abs()).max(floor), num)
                },
            )
            .collect();
        let mut report = Report { max_rel_error: 0.0, worst: String::new(), checked: coords.len() };
        for (&(t, i), &(r, num)) in coords.iter().zip(&rel) {
            if r > report.max_rel_error {
                report.max_rel_error = r;
                report.worst = format!("{}[{i}]: analytic {} numeric {num}", analytic[t].0, analytic[t].1[i]);
            }
        }
        report
    }
}
