//! `PEMO` checkpoint container.
//!
//! Little-endian layout: `"PEMO" u32:version u32:hidden_dim u32:num_relations
//! u32:semantic_dim u64:tagset_hash u64:seed u32:num_iterations
//! u32:num_tensors`, then per tensor `u32:name_len name u32:rows u32:cols
//! f32[rows*cols]` in row-major order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, Params, PredictorModel};
use crate::embed::ByteReader;

pub const PEMO_MAGIC: &[u8; 4] = b"PEMO";
pub const PEMO_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn checkpoint_bytes(model: &PredictorModel) -> Vec<u8> {
    let c = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(PEMO_MAGIC);
    put_u32(&mut buf, PEMO_VERSION as usize);
    put_u32(&mut buf, c.hidden_dim);
    put_u32(&mut buf, c.num_relations);
    put_u32(&mut buf, c.semantic_dim);
    buf.extend_from_slice(&model.tagset_hash.to_le_bytes());
    buf.extend_from_slice(&model.seed.to_le_bytes());
    put_u32(&mut buf, c.num_iterations);
    let tensors = model.params.named_tensors();
    put_u32(&mut buf, tensors.len());
    for (name, (rows, cols), data) in tensors {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, rows);
        put_u32(&mut buf, cols);
        for v in data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint(model: &PredictorModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, checkpoint_bytes(model)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<PredictorModel, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<PredictorModel, ModelError> {
    let bad = |why: &str| ModelError::Checkpoint(why.to_string());
    let mut r = ByteReader::new(bytes);
    if r.take(4) != Some(PEMO_MAGIC.as_slice()) {
        return Err(bad("bad magic"));
    }
    let trunc = || bad("truncated header");
    if r.u32().ok_or_else(trunc)? != PEMO_VERSION {
        return Err(bad("unsupported version"));
    }
    let hidden_dim = r.u32().ok_or_else(trunc)? as usize;
    let num_relations = r.u32().ok_or_else(trunc)? as usize;
    let semantic_dim = r.u32().ok_or_else(trunc)? as usize;
    let tagset_hash = r.u64().ok_or_else(trunc)?;
    let seed = r.u64().ok_or_else(trunc)?;
    let num_iterations = r.u32().ok_or_else(trunc)? as usize;
    let count = r.u32().ok_or_else(trunc)? as usize;

    let mut tensors: HashMap<String, (usize, usize, Vec<f64>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name = r.string().ok_or_else(|| bad("truncated tensor name"))?;
        let rows = r.u32().ok_or_else(|| bad("truncated tensor shape"))? as usize;
        let cols = r.u32().ok_or_else(|| bad("truncated tensor shape"))? as usize;
        let len = rows.checked_mul(cols).ok_or_else(|| bad("tensor too large"))?;
        let raw = r
            .take(len.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)
            .ok_or_else(|| bad("truncated tensor data"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if tensors.insert(name.clone(), (rows, cols, data)).is_some() {
            return Err(ModelError::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes"));
    }

    let shape = |name: &str| {
        tensors
            .get(name)
            .map(|t| (t.0, t.1))
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))
    };
    let (num_pos, pos_dim) = shape("pos_table")?;
    let (head_hidden, _) = shape("head.l1.weight")?;
    let config = ModelConfig {
        hidden_dim,
        num_iterations,
        head_hidden,
        pos_dim,
        semantic_dim,
        num_relations,
        num_pos,
    };
    if hidden_dim == 0 || num_relations == 0 || semantic_dim == 0 || num_pos == 0 || pos_dim == 0 {
        return Err(bad("zero dimension"));
    }
    let mut params = Params::init(&config, &mut ChaCha8Rng::seed_from_u64(0));
    let expected = params.named_tensors().len();
    if expected != tensors.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {expected} tensors, found {}",
            tensors.len()
        )));
    }
    let shapes: Vec<(usize, usize)> = params.named_tensors().iter().map(|t| t.1).collect();
    for ((name, dst), want) in params.slices_mut().into_iter().zip(shapes) {
        let (rows, cols, data) = tensors
            .remove(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
        if (rows, cols) != want {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name} has shape {rows}x{cols}, expected {}x{}",
                want.0, want.1
            )));
        }
        dst.copy_from_slice(&data);
    }
    Ok(PredictorModel {
        config,
        params,
        tagset_hash,
        seed,
    })
}
