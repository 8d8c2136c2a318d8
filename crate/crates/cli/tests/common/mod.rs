#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prosody_emph::corpus::Tagset;
use prosody_emph_testkit::{adjective_corpus, prominence_case, rng, write_corpus, write_prosody_corpus, Injection};
use rand::Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prosody-emph"))
}

/// Runs `prosody-emph <cmd> --corpus <corpus> --out <out> <extra...>`.
pub fn run(cmd: &str, corpus: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut c = bin();
    c.arg(cmd).arg("--corpus").arg(corpus).arg("--out").arg(out).args(extra);
    c.output().expect("binary runs")
}

pub fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstderr:\n{}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small, fast model configuration.
pub fn small_config(dir: &Path, epochs: usize) -> PathBuf {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "version": 1,
        "semantic": { "dim": 8 },
        "model": { "hidden_dim": 8, "head_hidden": 4 },
        "train": { "epochs": epochs, "learning_rate": 0.005, "batch_size": 8 },
        "conditioning": { "cond_dim": 8, "emph_dim": 4 }
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

pub fn labelled_corpus(dir: &Path, seed: u64, count: usize) -> PathBuf {
    let t = Tagset::default();
    let corpus = dir.join("corpus");
    write_corpus(&corpus, &adjective_corpus(seed, count, &t), &t, true);
    corpus
}

/// Corpus plus WAV directory of five-character utterances with one
/// injected prominent character each; returns the injected indices by id.
pub fn prosody_corpus(dir: &Path, seed: u64, count: usize) -> (PathBuf, PathBuf, BTreeMap<String, usize>) {
    let t = Tagset::default();
    let mut r = rng(seed);
    let cases: Vec<_> = (0..count)
        .map(|i| {
            let inj = r.gen_range(0..5);
            prominence_case(&mut r, &format!("p{i:04}"), 5, inj, Injection::default(), 16_000)
        })
        .collect();
    let corpus = dir.join("pcorpus");
    let wav = dir.join("wav");
    write_prosody_corpus(&corpus, &wav, &cases, &t);
    let truth = cases.iter().map(|c| (c.utt.id.clone(), c.injected)).collect();
    (corpus, wav, truth)
}

/// Relative path to bytes for every file under `dir` except the manifest,
/// which records wall time.
pub fn data_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        let name = e.file_name().into_string().unwrap();
        if e.file_type().unwrap().is_file() && name != "manifest.json" {
            out.insert(name, fs::read(e.path()).unwrap());
        }
    }
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}
