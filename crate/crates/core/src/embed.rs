//! Character-level semantic vectors and learned lookup tables.
//!
//! Semantic vectors come either from an external container file (any
//! contextual encoder can produce one) or from a deterministic hash
//! embedding used when no encoder output is available.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Utterance;

pub const PEMB_MAGIC: &[u8; 4] = b"PEMB";
pub const PEMB_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed embedding container {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("no semantic vectors for utterance {0}")]
    UnknownUtterance(String),
    #[error("utterance {id}: {rows} semantic rows for {chars} characters")]
    RowCountMismatch { id: String, rows: usize, chars: usize },
    #[error("id {id} out of range for table {table} of size {size}")]
    IdOutOfRange {
        table: String,
        id: usize,
        size: usize,
    },
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn unit_f64(rng: &mut impl RngCore) -> f64 {
    // 53 high bits -> [0, 1)
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic unit-norm vector per character.
///
/// Row `i` is derived from `fnv1a64(seed.to_le_bytes() ++ utf8(chars[i]))`,
/// which seeds a ChaCha8 stream; `dim` Box-Muller normals are drawn from it
/// and the vector is scaled to unit length.
pub fn hash_embedding(chars: &[String], dim: usize, seed: u64) -> Array2<f64> {
    assert!(dim >= 1, "embedding dim must be positive");
    let mut out = Array2::zeros((chars.len(), dim));
    for (i, c) in chars.iter().enumerate() {
        let mut key = seed.to_le_bytes().to_vec();
        key.extend_from_slice(c.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&key));
        let mut row = Vec::with_capacity(dim);
        while row.len() < dim {
            let u1 = 1.0 - unit_f64(&mut rng); // (0, 1]
            let u2 = unit_f64(&mut rng);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            row.push(r * theta.cos());
            if row.len() < dim {
                row.push(r * theta.sin());
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v / norm;
        }
    }
    out
}

/// A learned `[vocab × dim]` lookup table.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub name: String,
    pub matrix: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(name: impl Into<String>, matrix: Array2<f64>) -> Self {
        assert!(matrix.nrows() >= 1 && matrix.ncols() >= 1);
        EmbeddingTable {
            name: name.into(),
            matrix,
        }
    }

    /// Uniform in [-0.1, 0.1], rounded to f32 precision.
    pub fn seeded(name: impl Into<String>, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let matrix = Array2::from_shape_fn((vocab, dim), |_| rng.gen_range(-0.1f32..=0.1) as f64);
        Self::new(name, matrix)
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn lookup(&self, ids: &[usize]) -> Result<Array2<f64>, EmbedError> {
        let mut out = Array2::zeros((ids.len(), self.dim()));
        for (row, &id) in ids.iter().enumerate() {
            if id >= self.vocab_size() {
                return Err(EmbedError::IdOutOfRange {
                    table: self.name.clone(),
                    id,
                    size: self.vocab_size(),
                });
            }
            out.row_mut(row).assign(&self.matrix.row(id));
        }
        Ok(out)
    }

    /// Gradient w.r.t. the table given gradients of looked-up rows.
    /// Repeated ids accumulate.
    pub fn backward(&self, ids: &[usize], grad_rows: ArrayView2<f64>) -> Array2<f64> {
        let mut g = Array2::zeros(self.matrix.raw_dim());
        for (row, &id) in ids.iter().enumerate() {
            let mut dst = g.row_mut(id);
            dst += &grad_rows.row(row);
        }
        g
    }
}

/// Source of character-level semantic vectors.
#[derive(Clone, Debug)]
pub enum SemanticProvider {
    FileBacked {
        dim: usize,
        store: HashMap<String, Array2<f64>>,
    },
    Hash {
        dim: usize,
        seed: u64,
    },
}

impl SemanticProvider {
    pub fn hash(dim: usize, seed: u64) -> Self {
        SemanticProvider::Hash { dim, seed }
    }

    pub fn dim(&self) -> usize {
        match self {
            SemanticProvider::FileBacked { dim, .. } | SemanticProvider::Hash { dim, .. } => *dim,
        }
    }

    /// The `[num_chars × dim]` semantic matrix of an utterance.
    pub fn vectors(&self, utt: &Utterance) -> Result<Array2<f64>, EmbedError> {
        match self {
            SemanticProvider::Hash { dim, seed } => Ok(hash_embedding(&utt.chars, *dim, *seed)),
            SemanticProvider::FileBacked { store, .. } => {
                let m = store
                    .get(&utt.id)
                    .ok_or_else(|| EmbedError::UnknownUtterance(utt.id.clone()))?;
                if m.nrows() != utt.num_chars() {
                    return Err(EmbedError::RowCountMismatch {
                        id: utt.id.clone(),
                        rows: m.nrows(),
                        chars: utt.num_chars(),
                    });
                }
                Ok(m.clone())
            }
        }
    }
}

/// Writes an embedding container. Records are written in sorted id order.
///
/// Layout (little-endian): `"PEMB" u32:version u32:dim u32:count`, then per
/// record `u32:id_len id_bytes u32:num_chars u32:dim f32[num_chars*dim]`.
pub fn write_semantic(
    path: &Path,
    dim: usize,
    store: &HashMap<String, Array2<f64>>,
) -> Result<(), EmbedError> {
    let mut ids: Vec<&String> = store.keys().collect();
    ids.sort();
    let mut buf = Vec::new();
    buf.extend_from_slice(PEMB_MAGIC);
    buf.extend_from_slice(&PEMB_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    for id in ids {
        let m = &store[id];
        if m.ncols() != dim {
            return Err(EmbedError::DimMismatch {
                expected: dim,
                found: m.ncols(),
            });
        }
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        buf.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for v in m.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(&buf).map_err(|source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_semantic(path: &Path) -> Result<SemanticProvider, EmbedError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| EmbedError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let malformed = |reason: &str| EmbedError::MalformedFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = ByteReader::new(&bytes);
    if r.take(4).ok_or_else(|| malformed("truncated header"))? != PEMB_MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = r.u32().ok_or_else(|| malformed("truncated header"))?;
    if version != PEMB_VERSION {
        return Err(malformed("unsupported version"));
    }
    let dim = r.u32().ok_or_else(|| malformed("truncated header"))? as usize;
    let count = r.u32().ok_or_else(|| malformed("truncated header"))? as usize;
    if dim == 0 {
        return Err(malformed("zero dimension"));
    }
    let mut store = HashMap::with_capacity(count);
    for _ in 0..count {
        let id_len = r.u32().ok_or_else(|| malformed("truncated record"))? as usize;
        let id = std::str::from_utf8(r.take(id_len).ok_or_else(|| malformed("truncated id"))?)
            .map_err(|_| malformed("id is not UTF-8"))?
            .to_string();
        let rows = r.u32().ok_or_else(|| malformed("truncated record"))? as usize;
        let cols = r.u32().ok_or_else(|| malformed("truncated record"))? as usize;
        if cols != dim {
            return Err(EmbedError::DimMismatch {
                expected: dim,
                found: cols,
            });
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f32().ok_or_else(|| malformed("truncated matrix"))? as f64);
        }
        let m = Array2::from_shape_vec((rows, cols), data).expect("shape matches data");
        if store.insert(id, m).is_some() {
            return Err(malformed("duplicate utterance id"));
        }
    }
    if !r.is_empty() {
        return Err(malformed("trailing bytes"));
    }
    Ok(SemanticProvider::FileBacked { dim, store })
}

/// Little-endian cursor over a byte slice.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn identical_chars_identical_rows() {
        let m = hash_embedding(&strs(&["你", "你", "好"]), 16, 7);
        assert_eq!(m.row(0), m.row(1));
        assert_ne!(m.row(0), m.row(2));
    }

    #[test]
    fn rows_are_unit_norm() {
        let m = hash_embedding(&strs(&["a", "b", "c", "中"]), 33, 1);
        for row in m.rows() {
            let n = row.dot(&row).sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seed_changes_vectors() {
        let c = strs(&["a", "b"]);
        let a = hash_embedding(&c, 8, 1);
        let b = hash_embedding(&c, 8, 2);
        assert_ne!(a.row(0), b.row(0));
        assert_ne!(a.row(1), b.row(1));
    }

    #[test]
    fn lookup_rows_and_range() {
        let t = EmbeddingTable::new("id", array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(t.lookup(&[1, 0]).unwrap(), array![[0.0, 1.0], [1.0, 0.0]]);
        let rep = t.lookup(&[0, 0]).unwrap();
        assert_eq!(rep.row(0), rep.row(1));
        assert!(matches!(t.lookup(&[2]), Err(EmbedError::IdOutOfRange { id: 2, .. })));
    }

    #[test]
    fn lookup_gradient_matches_finite_differences() {
        // scalar L = sum_i c_i . table[ids[i]]
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = EmbeddingTable::seeded("t", 4, 3, &mut rng);
        let ids = [2usize, 0, 2, 2];
        let c = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let loss = |t: &EmbeddingTable| (&t.lookup(&ids).unwrap() * &c).sum();
        let g = t.backward(&ids, c.view());
        let eps = 1e-5;
        for v in 0..4 {
            for d in 0..3 {
                let mut plus = t.clone();
                plus.matrix[[v, d]] += eps;
                let mut minus = t.clone();
                minus.matrix[[v, d]] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                assert!((fd - g[[v, d]]).abs() < 1e-8, "{v},{d}: {fd} vs {}", g[[v, d]]);
            }
        }
        // id 2 appears three times
        assert!((g[[2, 0]] - (c[[0, 0]] + c[[2, 0]] + c[[3, 0]])).abs() < 1e-12);
    }

    #[test]
    fn container_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sem.pemb");
        let m = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.25);
        let mut store = HashMap::new();
        store.insert("u1".to_string(), m.clone());
        write_semantic(&path, 4, &store).unwrap();
        let p = load_semantic(&path).unwrap();
        let utt = Utterance::new(
            "u1",
            strs(&["a", "b", "c"]),
            vec![(0, 3)],
            vec![1, 1, 1],
            vec![(0.0, 0.1), (0.1, 0.2), (0.2, 0.3)],
        )
        .unwrap();
        assert_eq!(p.vectors(&utt).unwrap(), m);
        let mut other = utt.clone();
        other.id = "u2".into();
        assert!(matches!(p.vectors(&other), Err(EmbedError::UnknownUtterance(_))));

        store.insert("u2".to_string(), Array2::zeros((2, 8)));
        assert!(matches!(
            write_semantic(&path, 4, &store),
            Err(EmbedError::DimMismatch { .. })
        ));

        // hand-build a container whose second record has dim 8
        let mut bytes = fs::read(dir.path().join("sem.pemb")).unwrap();
        bytes[12..16].copy_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(b"u2");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 32]);
        let mixed = dir.path().join("mixed.pemb");
        fs::write(&mixed, bytes).unwrap();
        assert!(matches!(load_semantic(&mixed), Err(EmbedError::DimMismatch { expected: 4, found: 8 })));

        fs::write(&mixed, b"XXXX").unwrap();
        assert!(matches!(load_semantic(&mixed), Err(EmbedError::MalformedFile { .. })));
    }
}
