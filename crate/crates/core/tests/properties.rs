use std::path::Path;

use proptest::prelude::*;
use prosody_emph::corpus::{DepAnnotation, EmphasisLabels, LabelSource, Tagset, Utterance};
use prosody_emph::dsp::{frame_energy, interpolate_unvoiced, FrameConfig, ProsodicTrack, TrackKind, Waveform};
use prosody_emph::embed::EmbeddingTable;
use prosody_emph::graph::{build_char_graph, expand_char_to_phone, expand_word_to_char, graph2relation};
use prosody_emph::predictor::{evaluate, filter_by_confidence};
use prosody_emph::prominence::{cwt_ricker, prominence_scores, quantize, zscore};
use prosody_emph_testkit::{random_forest, random_utterance, rng};

fn arb_utterance() -> impl Strategy<Value = Utterance> {
    (any::<u64>(), 1usize..6, 1usize..4).prop_map(|(seed, words, len)| {
        random_utterance(&mut rng(seed), "u", words, len)
    })
}

fn track(values: Vec<f64>) -> ProsodicTrack {
    ProsodicTrack::new(TrackKind::Combined, 100.0, values)
}

/// True iff following heads from every word terminates at a root.
fn is_forest(heads: &[Option<usize>]) -> bool {
    (0..heads.len()).all(|start| {
        let mut w = start;
        for _ in 0..=heads.len() {
            match heads[w] {
                None => return true,
                Some(h) => w = h,
            }
        }
        false
    })
}

fn find(parent: &mut Vec<usize>, x: usize) -> usize {
    if parent[x] != x {
        let r = find(parent, parent[x]);
        parent[x] = r;
    }
    parent[x]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn frame_count_formula(len in 0usize..20_000, sr in prop::sample::select(vec![8000u32, 16000, 22050, 24000])) {
        let cfg = FrameConfig::default();
        let frame = cfg.frame_samples(sr);
        let hop = cfg.hop_samples(sr);
        let w = Waveform::new(vec![0.1; len], sr);
        match frame_energy(&w, &cfg) {
            Ok(t) => prop_assert_eq!(t.len(), (len - frame) / hop + 1),
            Err(_) => prop_assert!(len < frame),
        }
    }

    #[test]
    fn interpolation_is_idempotent(values in prop::collection::vec(prop_oneof![Just(0.0), 50.0f64..400.0], 1..60)) {
        let t = ProsodicTrack::new(TrackKind::F0Hz, 100.0, values.clone());
        match interpolate_unvoiced(&t) {
            Ok(once) => {
                let twice = interpolate_unvoiced(&once).unwrap();
                prop_assert_eq!(&once.values, &twice.values);
                prop_assert!(once.values.iter().all(|&v| v > 0.0));
            }
            Err(_) => prop_assert!(values.iter().all(|&v| v == 0.0)),
        }
    }

    #[test]
    fn cwt_is_linear(
        x in prop::collection::vec(-5.0f64..5.0, 40),
        y in prop::collection::vec(-5.0f64..5.0, 40),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let cx = cwt_ricker(&track(x), 12, 2, 4.0);
        let cy = cwt_ricker(&track(y), 12, 2, 4.0);
        let cm = cwt_ricker(&track(mix), 12, 2, 4.0);
        for ((m, p), q) in cm.coefficients.iter().zip(cx.coefficients.iter()).zip(cy.coefficients.iter()) {
            prop_assert!((m - (a * p + b * q)).abs() <= 1e-9);
        }
    }

    #[test]
    fn labels_survive_affine_rescaling(utt in arb_utterance(), seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let frames = (utt.char_times.last().unwrap().1 * 100.0).ceil() as usize + 1;
        let mut r = rng(seed);
        let v: Vec<f64> = (0..frames).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
        let scores = |vals: Vec<f64>| {
            let sc = cwt_ricker(&zscore(&track(vals)), 12, 2, 4.0);
            prominence_scores(&sc, &utt, (3, 10)).unwrap()
        };
        let (s1, s2) = (scores(v), scores(w));
        let (l1, l2) = (quantize("u", &s1, 1.0), quantize("u", &s2, 1.0));
        prop_assert_eq!(l1.labels.len(), utt.num_chars());
        // Characters whose standardized score sits on the threshold may flip
        // under rounding; every other label must agree.
        let z = zscore(&track(s1.clone()));
        for i in 0..s1.len() {
            prop_assert!((s1[i] - s2[i]).abs() <= 1e-9 * (1.0 + s1[i].abs()));
            if (z.values[i] - 1.0).abs() > 1e-9 {
                prop_assert_eq!(l1.labels[i], l2.labels[i]);
            }
        }
    }

    #[test]
    fn raising_threshold_never_adds_positives(scores in prop::collection::vec(-3.0f64..3.0, 1..12), t1 in -2.0f64..2.0, dt in 0.0f64..2.0) {
        let low = quantize("u", &scores, t1).positives().count();
        let high = quantize("u", &scores, t1 + dt).positives().count();
        prop_assert!(high <= low);
    }

    #[test]
    fn length_regulators_compose(utt in arb_utterance()) {
        let words: Vec<usize> = (0..utt.num_words()).collect();
        let chars = expand_word_to_char(&words, &utt).unwrap();
        let phones = expand_char_to_phone(&chars, &utt).unwrap();
        prop_assert_eq!(phones.len(), utt.num_phones());
        let mut direct = Vec::new();
        for (w, &(s, e)) in utt.word_spans.iter().enumerate() {
            let count: u32 = utt.phones_per_char[s..e].iter().sum();
            direct.extend(std::iter::repeat_n(w, count as usize));
        }
        prop_assert_eq!(phones, direct);
    }

    #[test]
    fn lookup_commutes_with_expansion(utt in arb_utterance(), seed in any::<u64>()) {
        let t = Tagset::default();
        let table = EmbeddingTable::seeded("p", t.num_pos(), 5, &mut rng(seed));
        let ids: Vec<usize> = (0..utt.num_words()).map(|w| (w * 7 + seed as usize) % t.num_pos()).collect();
        let looked = table.lookup(&ids).unwrap();
        let rows: Vec<Vec<f64>> = looked.rows().into_iter().map(|r| r.to_vec()).collect();
        let a = expand_word_to_char(&rows, &utt).unwrap();
        let b = table.lookup(&expand_word_to_char(&ids, &utt).unwrap()).unwrap();
        for (i, row) in a.iter().enumerate() {
            prop_assert_eq!(row, &b.row(i).to_vec());
        }
    }

    #[test]
    fn annotation_accepted_iff_forest(
        utt in arb_utterance().prop_filter("≤ 8 words", |u| u.num_words() <= 8),
        raw in prop::collection::vec(prop::option::of(0usize..8), 8),
        rel_seed in any::<u64>(),
    ) {
        let t = Tagset::default();
        let n = utt.num_words();
        let heads: Vec<Option<usize>> = raw[..n].iter().map(|h| h.map(|h| h % n)).collect();
        let plain = prosody_emph_testkit::plain_relations(&t);
        let relations = heads
            .iter()
            .enumerate()
            .map(|(i, h)| if h.is_some() { plain[(rel_seed as usize + i) % plain.len()] } else { t.root_id() })
            .collect();
        let ann = DepAnnotation { utterance_id: "u".into(), pos_tags: vec![0; n], heads: heads.clone(), relations };
        let parsed = DepAnnotation::from_json(Path::new("u.ann.json"), &ann.to_json(&t), &utt, &t);
        prop_assert_eq!(parsed.is_ok(), is_forest(&heads));
        if let Ok(p) = parsed {
            prop_assert_eq!(p, ann);
        }
    }

    #[test]
    fn char_graph_connectivity(utt in arb_utterance(), seed in any::<u64>(), single in any::<bool>()) {
        let t = Tagset::default();
        let ann = random_forest(&mut rng(seed), "u", utt.num_words(), &t, single);
        let g = build_char_graph(&utt, &ann, &t);
        let mut parent: Vec<usize> = (0..g.num_nodes).collect();
        for e in &g.edges {
            let (a, b) = (find(&mut parent, e.src), find(&mut parent, e.dst));
            parent[a] = b;
        }
        let components: std::collections::BTreeSet<usize> =
            (0..g.num_nodes).map(|v| find(&mut parent, v)).collect();
        // Each dependency tree is connected; BOS and EOS join the trees that
        // hold the first and last word.
        let roots = ann.roots().len();
        prop_assert!(components.len() <= roots);
        if roots == 1 {
            prop_assert_eq!(components.len(), 1);
        }
        let rels = graph2relation(&ann, &t);
        prop_assert_eq!(rels.len(), utt.num_words());
        for (w, &r) in rels.iter().enumerate() {
            prop_assert_eq!(r == t.root_id(), ann.heads[w].is_none());
        }
    }

    #[test]
    fn serialization_round_trips(utt in arb_utterance(), seed in any::<u64>()) {
        let t = Tagset::default();
        let back = Utterance::from_json(Path::new("u.utt.json"), &utt.to_json()).unwrap();
        prop_assert_eq!(&back, &utt);
        let ann = random_forest(&mut rng(seed), "u", utt.num_words(), &t, false);
        let back = DepAnnotation::from_json(Path::new("u.ann.json"), &ann.to_json(&t), &utt, &t).unwrap();
        prop_assert_eq!(back, ann);
        let labels = prosody_emph_testkit::random_labels(&mut rng(seed), "u", utt.num_chars(), LabelSource::Pseudo);
        let back = EmphasisLabels::from_tsv(Path::new("u.lab.tsv"), "u", &labels.to_tsv()).unwrap();
        prop_assert_eq!(back, labels);
    }

    #[test]
    fn filtering_is_monotone_in_tau(seed in any::<u64>(), t1 in 0.0f64..1.1, dt in 0.0f64..0.5) {
        let mut r = rng(seed);
        let pseudo = prosody_emph_testkit::random_labels(&mut r, "u", 6, LabelSource::Pseudo);
        let mut pred = prosody_emph_testkit::random_labels(&mut r, "u", 6, LabelSource::Predicted);
        if rand::Rng::gen_bool(&mut r, 0.5) {
            pred.labels = pseudo.labels.clone();
        }
        let lo = filter_by_confidence(&pseudo, &pred, t1).unwrap();
        let hi = filter_by_confidence(&pseudo, &pred, t1 + dt).unwrap();
        prop_assert!(!hi || lo);
    }

    #[test]
    fn f_score_lies_between_p_and_r(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let make = |r: &mut prosody_emph_testkit::ChaCha8Rng, src| {
            (0..n).map(|i| prosody_emph_testkit::random_labels(r, &format!("u{i}"), 5, src)).collect::<Vec<_>>()
        };
        let pred = make(&mut r, LabelSource::Predicted);
        let gold = make(&mut r, LabelSource::Human);
        let m = evaluate(&pred, &gold).unwrap();
        let mut rev = pred.clone();
        rev.reverse();
        prop_assert_eq!(evaluate(&rev, &gold).unwrap(), m);
        if m.precision > 0.0 && m.recall > 0.0 {
            prop_assert!(m.f_score >= m.precision.min(m.recall) - 1e-15);
            prop_assert!(m.f_score <= m.precision.max(m.recall) + 1e-15);
        }
    }
}
