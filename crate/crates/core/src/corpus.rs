//! Corpus file formats: utterances, dependency annotations, label files and
//! the tag inventory, plus whole-directory validation.
//!
//! Layout of a corpus directory:
//!
//! ```text
//! <id>.utt.json   characters, word spans, phone counts, character times
//! <id>.ann.json   POS tags, dependency heads and relations (one per word)
//! <id>.lab.tsv    optional per-character emphasis labels
//! tagset.json     optional tag inventory (the built-in one is used otherwise)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::fnv1a64;

pub const UTT_SUFFIX: &str = ".utt.json";
pub const ANN_SUFFIX: &str = ".ann.json";
pub const LAB_SUFFIX: &str = ".lab.tsv";
pub const TAGSET_FILE: &str = "tagset.json";

/// Relation names with a fixed meaning in the inventory.
pub const REL_ROOT: &str = "ROOT";
pub const REL_BOS: &str = "BOS";
pub const REL_EOS: &str = "EOS";
/// Internal intra-word relation; not produced by any parser.
pub const REL_SEQ: &str = "SEQ";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("utterance {id}: inconsistent alignment: {invariant}")]
    InconsistentAlignment { id: String, invariant: String },
    #[error("utterance {id}: cyclic dependency through words {words:?}")]
    CyclicDependency { id: String, words: Vec<usize> },
    #[error("utterance {id}: annotation has {found} words, utterance has {expected}")]
    WordCountMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("utterance {id}: {reason}")]
    InvalidRelation { id: String, reason: String },
    #[error("unknown {kind} tag {tag:?}")]
    UnknownTag { kind: &'static str, tag: String },
}

impl CorpusError {
    fn malformed(path: &Path, reason: impl fmt::Display) -> Self {
        CorpusError::MalformedFile {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    /// Short machine-readable name of the failure kind.
    pub fn kind(&self) -> &'static str {
        match self {
            CorpusError::Io { .. } => "Io",
            CorpusError::MalformedFile { .. } => "MalformedFile",
            CorpusError::InconsistentAlignment { .. } => "InconsistentAlignment",
            CorpusError::CyclicDependency { .. } => "CyclicDependency",
            CorpusError::WordCountMismatch { .. } => "WordCountMismatch",
            CorpusError::InvalidRelation { .. } => "InvalidRelation",
            CorpusError::UnknownTag { .. } => "UnknownTag",
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_string(path: &Path, contents: &str) -> Result<(), CorpusError> {
    fs::write(path, contents).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One recorded sentence with its character/word/phone hierarchy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub chars: Vec<String>,
    /// Half-open character ranges, one per word.
    pub word_spans: Vec<(usize, usize)>,
    pub phones_per_char: Vec<u32>,
    /// `(start_sec, end_sec)` per character.
    pub char_times: Vec<(f64, f64)>,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        chars: Vec<String>,
        word_spans: Vec<(usize, usize)>,
        phones_per_char: Vec<u32>,
        char_times: Vec<(f64, f64)>,
    ) -> Result<Self, CorpusError> {
        let utt = Utterance {
            id: id.into(),
            chars,
            word_spans,
            phones_per_char,
            char_times,
        };
        utt.validate()?;
        Ok(utt)
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn num_words(&self) -> usize {
        self.word_spans.len()
    }

    pub fn num_phones(&self) -> usize {
        self.phones_per_char.iter().map(|&c| c as usize).sum()
    }

    /// Index of the word containing each character.
    pub fn char_to_word(&self) -> Vec<usize> {
        let mut out = vec![0; self.chars.len()];
        for (w, &(s, e)) in self.word_spans.iter().enumerate() {
            for slot in &mut out[s..e] {
                *slot = w;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |invariant: String| CorpusError::InconsistentAlignment {
            id: self.id.clone(),
            invariant,
        };
        let n = self.chars.len();
        if n == 0 {
            return Err(fail("utterance has no characters".into()));
        }
        let mut cursor = 0;
        for (w, &(s, e)) in self.word_spans.iter().enumerate() {
            if s < cursor {
                return Err(fail(format!("word_spans overlap at word {w}")));
            }
            if s > cursor {
                return Err(fail(format!("word_spans leave a gap before word {w}")));
            }
            if e <= s {
                return Err(fail(format!("word {w} has an empty span")));
            }
            cursor = e;
        }
        if cursor != n {
            return Err(fail(format!(
                "word_spans cover {cursor} characters, utterance has {n}"
            )));
        }
        if self.phones_per_char.len() != n {
            return Err(fail(format!(
                "phones_per_char has {} entries for {n} characters",
                self.phones_per_char.len()
            )));
        }
        if let Some(i) = self.phones_per_char.iter().position(|&c| c == 0) {
            return Err(fail(format!("character {i} has zero phones")));
        }
        if self.char_times.len() != n {
            return Err(fail(format!(
                "char_times has {} entries for {n} characters",
                self.char_times.len()
            )));
        }
        let mut prev_end = 0.0f64;
        for (i, &(s, e)) in self.char_times.iter().enumerate() {
            if !s.is_finite() || !e.is_finite() || s < 0.0 {
                return Err(fail(format!("character {i} has an invalid time span")));
            }
            if e < s {
                return Err(fail(format!("character {i} ends before it starts")));
            }
            if s < prev_end {
                return Err(fail(format!("character {i} overlaps its predecessor")));
            }
            prev_end = e;
        }
        Ok(())
    }

    pub fn from_json(path: &Path, text: &str) -> Result<Self, CorpusError> {
        let utt: Utterance =
            serde_json::from_str(text).map_err(|e| CorpusError::malformed(path, e))?;
        utt.validate()?;
        Ok(utt)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("utterance serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        write_string(path, &(self.to_json() + "\n"))
    }
}

pub fn load_utterance(path: &Path) -> Result<Utterance, CorpusError> {
    Utterance::from_json(path, &read_to_string(path)?)
}

/// Mapping from POS and relation tag strings to dense integer ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tagset {
    pub pos: BTreeMap<String, usize>,
    pub rel: BTreeMap<String, usize>,
}

/// POS tags of the 863 tagset used by common Mandarin analyzers.
const DEFAULT_POS: [&str; 29] = [
    "a", "b", "c", "d", "e", "g", "h", "i", "j", "k", "m", "n", "nd", "nh", "ni", "nl", "ns",
    "nt", "nz", "o", "p", "q", "r", "u", "v", "wp", "ws", "x", "z",
];

/// The fourteen non-root dependency relations.
const DEFAULT_REL: [&str; 14] = [
    "SBV", "VOB", "IOB", "FOB", "DBL", "ATT", "ADV", "CMP", "COO", "POB", "LAD", "RAD", "IS",
    "WP",
];

impl Default for Tagset {
    /// 29 POS tags; 14 relations plus ROOT, BOS, EOS (17 ids) and SEQ as id 17.
    fn default() -> Self {
        let pos = DEFAULT_POS
            .iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), i))
            .collect();
        let rel = DEFAULT_REL
            .iter()
            .chain([REL_ROOT, REL_BOS, REL_EOS, REL_SEQ].iter())
            .enumerate()
            .map(|(i, t)| (t.to_string(), i))
            .collect();
        Tagset { pos, rel }
    }
}

impl Tagset {
    pub fn new(
        pos: BTreeMap<String, usize>,
        rel: BTreeMap<String, usize>,
    ) -> Result<Self, CorpusError> {
        let t = Tagset { pos, rel };
        t.validate().map_err(|r| CorpusError::malformed(Path::new(TAGSET_FILE), r))?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), String> {
        for (kind, map) in [("pos", &self.pos), ("rel", &self.rel)] {
            let ids: BTreeSet<usize> = map.values().copied().collect();
            if ids.len() != map.len() || ids.iter().copied().ne(0..map.len()) {
                return Err(format!("{kind} ids must be dense and unique from 0"));
            }
        }
        if self.pos.is_empty() {
            return Err("pos inventory is empty".into());
        }
        for r in [REL_ROOT, REL_BOS, REL_EOS, REL_SEQ] {
            if !self.rel.contains_key(r) {
                return Err(format!("rel inventory lacks reserved tag {r}"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = read_to_string(path)?;
        let t: Tagset = serde_json::from_str(&text).map_err(|e| CorpusError::malformed(path, e))?;
        t.validate().map_err(|r| CorpusError::malformed(path, r))?;
        Ok(t)
    }

    /// Loads `tagset.json` from a corpus directory, or the default inventory.
    pub fn for_corpus(dir: &Path) -> Result<Self, CorpusError> {
        let path = dir.join(TAGSET_FILE);
        if path.exists() {
            Self::load(&path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tagset serializes")
    }

    /// FNV-1a over the canonical JSON form; stored in checkpoints.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.to_json().as_bytes())
    }

    pub fn num_pos(&self) -> usize {
        self.pos.len()
    }

    /// Size of the relation inventory, including the reserved ids.
    pub fn num_rel(&self) -> usize {
        self.rel.len()
    }

    pub fn pos_id(&self, tag: &str) -> Result<usize, CorpusError> {
        self.pos.get(tag).copied().ok_or_else(|| CorpusError::UnknownTag {
            kind: "pos",
            tag: tag.to_string(),
        })
    }

    pub fn rel_id(&self, tag: &str) -> Result<usize, CorpusError> {
        self.rel.get(tag).copied().ok_or_else(|| CorpusError::UnknownTag {
            kind: "rel",
            tag: tag.to_string(),
        })
    }

    pub fn root_id(&self) -> usize {
        self.rel[REL_ROOT]
    }

    pub fn bos_id(&self) -> usize {
        self.rel[REL_BOS]
    }

    pub fn eos_id(&self) -> usize {
        self.rel[REL_EOS]
    }

    pub fn seq_id(&self) -> usize {
        self.rel[REL_SEQ]
    }

    fn is_reserved_rel(&self, id: usize) -> bool {
        [self.root_id(), self.bos_id(), self.eos_id(), self.seq_id()].contains(&id)
    }

    pub fn pos_name(&self, id: usize) -> Option<&str> {
        self.pos.iter().find(|(_, &v)| v == id).map(|(k, _)| k.as_str())
    }

    pub fn rel_name(&self, id: usize) -> Option<&str> {
        self.rel.iter().find(|(_, &v)| v == id).map(|(k, _)| k.as_str())
    }
}

/// Word-level syntax of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct DepAnnotation {
    pub utterance_id: String,
    pub pos_tags: Vec<usize>,
    /// Head word of each word; `None` marks a root.
    pub heads: Vec<Option<usize>>,
    /// Relation of each word's out edge; roots carry the ROOT id.
    pub relations: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AnnFile {
    utterance_id: String,
    pos: Vec<String>,
    heads: Vec<Option<usize>>,
    rels: Vec<String>,
}

impl DepAnnotation {
    pub fn num_words(&self) -> usize {
        self.heads.len()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.heads.len())
            .filter(|&w| self.heads[w].is_none())
            .collect()
    }

    /// Checks the annotation against its utterance: word count, head range,
    /// acyclicity and root/relation consistency.
    pub fn validate(&self, utt: &Utterance, tagset: &Tagset) -> Result<(), CorpusError> {
        let id = || self.utterance_id.clone();
        let n = self.heads.len();
        if self.pos_tags.len() != n || self.relations.len() != n {
            return Err(CorpusError::InvalidRelation {
                id: id(),
                reason: format!(
                    "pos ({}), heads ({n}) and rels ({}) differ in length",
                    self.pos_tags.len(),
                    self.relations.len()
                ),
            });
        }
        if n != utt.num_words() {
            return Err(CorpusError::WordCountMismatch {
                id: id(),
                expected: utt.num_words(),
                found: n,
            });
        }
        if let Some(&p) = self.pos_tags.iter().find(|&&p| p >= tagset.num_pos()) {
            return Err(CorpusError::InvalidRelation {
                id: id(),
                reason: format!("pos id {p} outside the inventory"),
            });
        }
        for (w, &h) in self.heads.iter().enumerate() {
            let rel = self.relations[w];
            if rel >= tagset.num_rel() {
                return Err(CorpusError::InvalidRelation {
                    id: id(),
                    reason: format!("word {w} has relation id {rel} outside the inventory"),
                });
            }
            match h {
                Some(h) if h >= n => {
                    return Err(CorpusError::InvalidRelation {
                        id: id(),
                        reason: format!("word {w} has head {h} outside the sentence"),
                    })
                }
                Some(h) if h == w => {
                    return Err(CorpusError::CyclicDependency {
                        id: id(),
                        words: vec![w],
                    })
                }
                Some(_) if tagset.is_reserved_rel(rel) => {
                    return Err(CorpusError::InvalidRelation {
                        id: id(),
                        reason: format!("non-root word {w} carries a reserved relation"),
                    })
                }
                None if rel != tagset.root_id() => {
                    return Err(CorpusError::InvalidRelation {
                        id: id(),
                        reason: format!("root word {w} must carry {REL_ROOT}"),
                    })
                }
                _ => {}
            }
        }
        if let Some(words) = find_cycle(&self.heads) {
            return Err(CorpusError::CyclicDependency { id: id(), words });
        }
        Ok(())
    }

    pub fn from_json(
        path: &Path,
        text: &str,
        utt: &Utterance,
        tagset: &Tagset,
    ) -> Result<Self, CorpusError> {
        let file: AnnFile =
            serde_json::from_str(text).map_err(|e| CorpusError::malformed(path, e))?;
        if file.utterance_id != utt.id {
            return Err(CorpusError::malformed(
                path,
                format!(
                    "annotation references {:?}, expected {:?}",
                    file.utterance_id, utt.id
                ),
            ));
        }
        let pos_tags = file
            .pos
            .iter()
            .map(|t| tagset.pos_id(t))
            .collect::<Result<Vec<_>, _>>()?;
        let relations = file
            .rels
            .iter()
            .map(|t| tagset.rel_id(t))
            .collect::<Result<Vec<_>, _>>()?;
        let ann = DepAnnotation {
            utterance_id: file.utterance_id,
            pos_tags,
            heads: file.heads,
            relations,
        };
        ann.validate(utt, tagset)?;
        Ok(ann)
    }

    pub fn to_json(&self, tagset: &Tagset) -> String {
        let name = |id: usize, f: &dyn Fn(usize) -> Option<String>| {
            f(id).unwrap_or_else(|| id.to_string())
        };
        let file = AnnFile {
            utterance_id: self.utterance_id.clone(),
            pos: self
                .pos_tags
                .iter()
                .map(|&p| name(p, &|i| tagset.pos_name(i).map(str::to_string)))
                .collect(),
            heads: self.heads.clone(),
            rels: self
                .relations
                .iter()
                .map(|&r| name(r, &|i| tagset.rel_name(i).map(str::to_string)))
                .collect(),
        };
        serde_json::to_string(&file).expect("annotation serializes")
    }

    pub fn save(&self, path: &Path, tagset: &Tagset) -> Result<(), CorpusError> {
        write_string(path, &(self.to_json(tagset) + "\n"))
    }
}

/// Returns the words of some cycle in the head function, if one exists.
fn find_cycle(heads: &[Option<usize>]) -> Option<Vec<usize>> {
    // 0 = unvisited, 1 = on current path, 2 = known to reach a root
    let mut state = vec![0u8; heads.len()];
    for start in 0..heads.len() {
        let mut path = Vec::new();
        let mut w = start;
        loop {
            match state[w] {
                2 => break,
                1 => {
                    let pos = path.iter().position(|&p| p == w).unwrap_or(0);
                    let mut cycle = path[pos..].to_vec();
                    cycle.sort_unstable();
                    return Some(cycle);
                }
                _ => {}
            }
            state[w] = 1;
            path.push(w);
            match heads[w] {
                Some(h) => w = h,
                None => break,
            }
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

pub fn load_annotation(
    path: &Path,
    utt: &Utterance,
    tagset: &Tagset,
) -> Result<DepAnnotation, CorpusError> {
    DepAnnotation::from_json(path, &read_to_string(path)?, utt, tagset)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Human,
    Pseudo,
    Predicted,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Human => "human",
            LabelSource::Pseudo => "pseudo",
            LabelSource::Predicted => "predicted",
        }
    }
}

impl std::str::FromStr for LabelSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "human" => Ok(LabelSource::Human),
            "pseudo" => Ok(LabelSource::Pseudo),
            "predicted" => Ok(LabelSource::Predicted),
            other => Err(format!("unknown label source {other:?}")),
        }
    }
}

/// Per-character binary emphasis labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmphasisLabels {
    pub utterance_id: String,
    pub labels: Vec<u8>,
    pub confidences: Vec<f64>,
    pub source: LabelSource,
}

impl EmphasisLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 1)
            .map(|(i, _)| i)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#source={}\n", self.source.as_str());
        for (i, (l, c)) in self.labels.iter().zip(&self.confidences).enumerate() {
            out.push_str(&format!("{i}\t{l}\t{c}\n"));
        }
        out
    }

    pub fn from_tsv(path: &Path, utterance_id: &str, text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CorpusError::malformed(path, "empty label file"))?;
        let source = header
            .strip_prefix("#source=")
            .ok_or_else(|| CorpusError::malformed(path, "missing #source= header"))?
            .trim()
            .parse::<LabelSource>()
            .map_err(|e| CorpusError::malformed(path, e))?;
        let mut labels = Vec::new();
        let mut confidences = Vec::new();
        for (row, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(CorpusError::malformed(
                    path,
                    format!("row {row}: expected 3 tab-separated fields"),
                ));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|e| CorpusError::malformed(path, format!("row {row}: {e}")))?;
            if idx != labels.len() {
                return Err(CorpusError::malformed(
                    path,
                    format!("row {row}: char_index {idx} out of sequence"),
                ));
            }
            let label = match fields[1] {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(CorpusError::malformed(
                        path,
                        format!("row {row}: label {other:?} is not 0 or 1"),
                    ))
                }
            };
            let conf: f64 = fields[2]
                .parse()
                .map_err(|e| CorpusError::malformed(path, format!("row {row}: {e}")))?;
            if !(0.0..=1.0).contains(&conf) {
                return Err(CorpusError::malformed(
                    path,
                    format!("row {row}: confidence {conf} outside [0,1]"),
                ));
            }
            labels.push(label);
            confidences.push(conf);
        }
        Ok(EmphasisLabels {
            utterance_id: utterance_id.to_string(),
            labels,
            confidences,
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        write_string(path, &self.to_tsv())
    }
}

/// Reads `<id>.lab.tsv`; the utterance id is taken from the file name.
pub fn load_labels(path: &Path) -> Result<EmphasisLabels, CorpusError> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CorpusError::malformed(path, "label path has no file name"))?;
    let id = name.strip_suffix(LAB_SUFFIX).unwrap_or(name);
    EmphasisLabels::from_tsv(path, id, &read_to_string(path)?)
}

/// Loads labels and checks they cover exactly the utterance's characters.
pub fn load_labels_for(path: &Path, utt: &Utterance) -> Result<EmphasisLabels, CorpusError> {
    let labels = load_labels(path)?;
    if labels.len() != utt.num_chars() {
        return Err(CorpusError::InconsistentAlignment {
            id: utt.id.clone(),
            invariant: format!(
                "label file has {} rows for {} characters",
                labels.len(),
                utt.num_chars()
            ),
        });
    }
    Ok(labels)
}

/// Sorted ids of every `<id>.utt.json` in `dir`.
pub fn utterance_ids(dir: &Path) -> Result<Vec<String>, CorpusError> {
    ids_with_suffix(dir, UTT_SUFFIX)
}

pub fn ids_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<String>, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        if let Some(id) = entry.file_name().to_str().and_then(|n| n.strip_suffix(suffix)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// A fully loaded corpus item.
#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub utt: Utterance,
    pub ann: DepAnnotation,
    pub labels: Option<EmphasisLabels>,
}

/// Loads utterance, annotation and (when present) labels for one id.
pub fn load_entry(dir: &Path, id: &str, tagset: &Tagset) -> Result<CorpusEntry, CorpusError> {
    let utt = load_utterance(&dir.join(format!("{id}{UTT_SUFFIX}")))?;
    let ann = load_annotation(&dir.join(format!("{id}{ANN_SUFFIX}")), &utt, tagset)?;
    let lab_path = dir.join(format!("{id}{LAB_SUFFIX}"));
    let labels = if lab_path.exists() {
        Some(load_labels_for(&lab_path, &utt)?)
    } else {
        None
    };
    Ok(CorpusEntry { utt, ann, labels })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "detail")]
pub enum FileStatus {
    Pass,
    Fail(String),
    Missing,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationEntry {
    pub id: String,
    pub utterance: FileStatus,
    pub annotation: FileStatus,
    pub labels: FileStatus,
    /// First failing invariant, e.g. `MissingAnnotation` or `CyclicDependency: ...`.
    pub first_failure: Option<String>,
}

impl ValidationEntry {
    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<ValidationEntry>,
    pub passed: usize,
    pub failed: usize,
}

impl ValidationReport {
    pub fn success(&self) -> bool {
        self.failed == 0
    }
}

/// Validates every utterance in `dir`. Failures become report entries; the
/// only hard error is an unreadable directory or tag inventory.
pub fn validate_corpus(dir: &Path) -> Result<ValidationReport, CorpusError> {
    let tagset = Tagset::for_corpus(dir)?;
    let mut ids: BTreeSet<String> = utterance_ids(dir)?.into_iter().collect();
    ids.extend(ids_with_suffix(dir, ANN_SUFFIX)?);
    ids.extend(ids_with_suffix(dir, LAB_SUFFIX)?);

    let mut report = ValidationReport::default();
    for id in ids {
        let entry = validate_one(dir, &id, &tagset);
        if entry.passed() {
            report.passed += 1;
        } else {
            report.failed += 1;
        }
        report.entries.push(entry);
    }
    Ok(report)
}

fn validate_one(dir: &Path, id: &str, tagset: &Tagset) -> ValidationEntry {
    let utt_path = dir.join(format!("{id}{UTT_SUFFIX}"));
    let ann_path = dir.join(format!("{id}{ANN_SUFFIX}"));
    let lab_path = dir.join(format!("{id}{LAB_SUFFIX}"));
    let mut first_failure = None;
    let mut note = |msg: String| {
        if first_failure.is_none() {
            first_failure = Some(msg);
        }
    };
    let describe = |e: &CorpusError| format!("{}: {e}", e.kind());

    let (utterance, utt) = if !utt_path.exists() {
        note("MissingUtterance".into());
        (FileStatus::Missing, None)
    } else {
        match load_utterance(&utt_path) {
            Ok(u) => (FileStatus::Pass, Some(u)),
            Err(e) => {
                note(describe(&e));
                (FileStatus::Fail(e.to_string()), None)
            }
        }
    };

    let annotation = match (&utt, ann_path.exists()) {
        (_, false) => {
            note("MissingAnnotation".into());
            FileStatus::Missing
        }
        (None, true) => FileStatus::Skipped,
        (Some(u), true) => match load_annotation(&ann_path, u, tagset) {
            Ok(_) => FileStatus::Pass,
            Err(e) => {
                note(describe(&e));
                FileStatus::Fail(e.to_string())
            }
        },
    };

    let labels = match (&utt, lab_path.exists()) {
        (_, false) => FileStatus::Missing,
        (None, true) => FileStatus::Skipped,
        (Some(u), true) => match load_labels_for(&lab_path, u) {
            Ok(_) => FileStatus::Pass,
            Err(e) => {
                note(describe(&e));
                FileStatus::Fail(e.to_string())
            }
        },
    };

    ValidationEntry {
        id: id.to_string(),
        utterance,
        annotation,
        labels,
        first_failure,
    }
}
