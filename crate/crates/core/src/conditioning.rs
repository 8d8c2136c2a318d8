//! Phone-level conditioning tensors for an acoustic model.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DepAnnotation, EmphasisLabels, Tagset, Utterance};
use crate::embed::{ByteReader, EmbedError, EmbeddingTable, SemanticProvider};
use crate::graph::{expand_char_to_phone, expand_word_to_char, graph2relation, GraphError};

pub const PCND_MAGIC: &[u8; 4] = b"PCND";
pub const PCND_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConditioningError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("utterance {id}: {expected} labels expected, got {found}")]
    LengthMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("utterance {0} has no phones")]
    EmptyUtterance(String),
    #[error("malformed bundle {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditioningConfig {
    pub cond_dim: usize,
    pub emph_dim: usize,
    pub seed: u64,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        ConditioningConfig {
            cond_dim: 256,
            emph_dim: 16,
            seed: 0,
        }
    }
}

/// Lookup tables and projection shared by every utterance of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningTables {
    pub rel_table: EmbeddingTable,
    pub pos_table: EmbeddingTable,
    /// `[sem_dim × cond_dim]`; rows are right-multiplied by it.
    pub semantic_projection: Array2<f64>,
    pub emph_table: EmbeddingTable,
}

impl ConditioningTables {
    /// Uniform ±0.1 entries drawn from a ChaCha8 stream seeded by `cfg.seed`.
    pub fn seeded(cfg: &ConditioningConfig, tagset: &Tagset, semantic_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let rel_table = EmbeddingTable::seeded("rel", tagset.num_rel(), cfg.cond_dim, &mut rng);
        let pos_table = EmbeddingTable::seeded("pos", tagset.num_pos(), cfg.cond_dim, &mut rng);
        let semantic_projection = Array2::from_shape_fn((semantic_dim, cfg.cond_dim), |_| {
            rng.gen_range(-0.1f32..=0.1) as f64
        });
        let emph_table = EmbeddingTable::seeded("emph", 2, cfg.emph_dim, &mut rng);
        ConditioningTables {
            rel_table,
            pos_table,
            semantic_projection,
            emph_table,
        }
    }

    pub fn cond_dim(&self) -> usize {
        self.rel_table.dim()
    }
}

fn non_empty(utt: &Utterance) -> Result<(), ConditioningError> {
    if utt.num_phones() == 0 {
        return Err(ConditioningError::EmptyUtterance(utt.id.clone()));
    }
    Ok(())
}

/// Sum of the relation, POS and projected semantic components, each
/// expanded to phones.
pub fn build_linguistic(
    utt: &Utterance,
    ann: &DepAnnotation,
    tagset: &Tagset,
    provider: &SemanticProvider,
    rel_table: &EmbeddingTable,
    pos_table: &EmbeddingTable,
    semantic_projection: &Array2<f64>,
) -> Result<Array2<f64>, ConditioningError> {
    non_empty(utt)?;
    let d = rel_table.dim();
    for found in [pos_table.dim(), semantic_projection.ncols()] {
        if found != d {
            return Err(ConditioningError::DimMismatch { expected: d, found });
        }
    }
    if semantic_projection.nrows() != provider.dim() {
        return Err(ConditioningError::DimMismatch {
            expected: provider.dim(),
            found: semantic_projection.nrows(),
        });
    }
    let to_phone = |per_word: &[usize]| -> Result<Vec<usize>, GraphError> {
        expand_char_to_phone(&expand_word_to_char(per_word, utt)?, utt)
    };
    let rel = rel_table.lookup(&to_phone(&graph2relation(ann, tagset))?)?;
    let pos = pos_table.lookup(&to_phone(&ann.pos_tags)?)?;
    let sem_chars = provider.vectors(utt)?.dot(semantic_projection);
    let char_of_phone = expand_char_to_phone(&(0..utt.num_chars()).collect::<Vec<_>>(), utt)?;
    let mut out = rel + &pos;
    for (row, &c) in char_of_phone.iter().enumerate() {
        let mut dst = out.row_mut(row);
        dst += &sem_chars.row(c);
    }
    Ok(out)
}

/// One `emph_table` row per phone, picked by its character's label.
pub fn build_emphasis(
    labels: &EmphasisLabels,
    emph_table: &EmbeddingTable,
    utt: &Utterance,
) -> Result<Array2<f64>, ConditioningError> {
    non_empty(utt)?;
    if labels.len() != utt.num_chars() {
        return Err(ConditioningError::LengthMismatch {
            id: utt.id.clone(),
            expected: utt.num_chars(),
            found: labels.len(),
        });
    }
    let ids: Vec<usize> = labels.labels.iter().map(|&l| usize::from(l != 0)).collect();
    Ok(emph_table.lookup(&expand_char_to_phone(&ids, utt)?)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningBundle {
    pub utterance_id: String,
    pub linguistic: Array2<f64>,
    pub emphasis: Array2<f64>,
}

impl ConditioningBundle {
    pub fn build(
        utt: &Utterance,
        ann: &DepAnnotation,
        labels: &EmphasisLabels,
        tagset: &Tagset,
        provider: &SemanticProvider,
        tables: &ConditioningTables,
    ) -> Result<Self, ConditioningError> {
        Ok(ConditioningBundle {
            utterance_id: utt.id.clone(),
            linguistic: build_linguistic(
                utt,
                ann,
                tagset,
                provider,
                &tables.rel_table,
                &tables.pos_table,
                &tables.semantic_projection,
            )?,
            emphasis: build_emphasis(labels, &tables.emph_table, utt)?,
        })
    }

    pub fn num_phones(&self) -> usize {
        self.linguistic.nrows()
    }

    pub fn cond_dim(&self) -> usize {
        self.linguistic.ncols()
    }

    pub fn emph_dim(&self) -> usize {
        self.emphasis.ncols()
    }

    /// `"PCND" u32:version u32:cond_dim u32:emph_dim u32:num_phones
    /// u32:id_len id`, then both matrices as row-major f32, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(PCND_MAGIC);
        for v in [
            PCND_VERSION as usize,
            self.cond_dim(),
            self.emph_dim(),
            self.num_phones(),
            self.utterance_id.len(),
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(self.utterance_id.as_bytes());
        for v in self.linguistic.iter().chain(self.emphasis.iter()) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self, ConditioningError> {
        let bad = |reason: &str| ConditioningError::MalformedFile {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        let mut r = ByteReader::new(bytes);
        if r.take(4) != Some(PCND_MAGIC.as_slice()) {
            return Err(bad("bad magic"));
        }
        let mut header = [0usize; 4];
        for h in header.iter_mut() {
            *h = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        }
        let [version, cond_dim, emph_dim, num_phones] = header;
        if version != PCND_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let id = r.string().ok_or_else(|| bad("truncated id"))?;
        let mut block = |rows: usize, cols: usize| -> Result<Array2<f64>, ConditioningError> {
            let n = rows.checked_mul(cols).ok_or_else(|| bad("block too large"))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f32().ok_or_else(|| bad("truncated block"))? as f64);
            }
            Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches data"))
        };
        let linguistic = block(num_phones, cond_dim)?;
        let emphasis = block(num_phones, emph_dim)?;
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(ConditioningBundle {
            utterance_id: id,
            linguistic,
            emphasis,
        })
    }
}

pub fn export_bundle(bundle: &ConditioningBundle, path: &Path) -> Result<(), ConditioningError> {
    fs::write(path, bundle.to_bytes()).map_err(|source| ConditioningError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_bundle(path: &Path) -> Result<ConditioningBundle, ConditioningError> {
    let bytes = fs::read(path).map_err(|source| ConditioningError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ConditioningBundle::from_bytes(path, &bytes)
}
