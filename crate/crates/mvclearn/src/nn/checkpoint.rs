//! Checkpoint format: 8-byte magic, u32 version, u64 header length, JSON
//! header (config, epoch, seed, named-tensor index), then raw little-endian
//! float32 payloads in index order. Parameters train at f32, so a save/load
//! round trip is bitwise.

use std::collections::HashMap;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{ModelConfig, ModelState};
use crate::nn::tensor::Tensor;
use crate::nn::Scalar;

const MAGIC: [u8; 8] = *b"MVCLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

fn collect_named<E: Scalar>(state: &ModelState<E>) -> Vec<(String, Tensor<E>)> {
    let mut out: Vec<(String, Tensor<E>)> = Vec::new();
    state.visit_params(&mut |name, t| out.push((name.to_string(), t.clone())));
    state.visit_buffers(&mut |name, t| out.push((name.to_string(), t.clone())));
    let mut vel_names = Vec::new();
    state.visit_params(&mut |name, _| vel_names.push(format!("optimizer.{name}.velocity")));
    for (name, v) in vel_names.into_iter().zip(&state.velocities) {
        out.push((name, v.clone()));
    }
    out
}

pub fn checkpoint_save<E: Scalar>(state: &ModelState<E>, path: &Path) -> Result<()> {
    let named = collect_named(state);
    let header = Header {
        config: state.config.clone(),
        epoch: state.epoch,
        seed: state.seed,
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in &named {
        for v in t.data() {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)
        .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    f.write_all(&bytes)
        .map_err(|e| Error::io(format!("write {}", path.display()), e))?;
    Ok(())
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CheckpointCorrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn checkpoint_load<E: Scalar>(path: &Path) -> Result<ModelState<E>> {
    let mut f =
        fs::File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)
        .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    if bytes.len() < 20 || bytes[..8] != MAGIC {
        return Err(corrupt(path, "missing or wrong magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() < 20 + header_len {
        return Err(corrupt(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[20..20 + header_len])
        .map_err(|e| corrupt(path, format!("bad header JSON: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| corrupt(path, format!("invalid config: {e}")))?;

    let payload = &bytes[20 + header_len..];
    let total: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if payload.len() != total * 4 {
        return Err(corrupt(
            path,
            format!("payload has {} bytes, expected {}", payload.len(), total * 4),
        ));
    }
    let mut tensors: HashMap<String, Tensor<E>> = HashMap::with_capacity(header.tensors.len());
    let mut offset = 0;
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let o = offset + i * 4;
            let v = f32::from_le_bytes(payload[o..o + 4].try_into().unwrap());
            data.push(E::of(v as f64));
        }
        offset += n * 4;
        if tensors
            .insert(entry.name.clone(), Tensor::from_vec(&entry.shape, data)?)
            .is_some()
        {
            return Err(corrupt(path, format!("duplicate tensor {}", entry.name)));
        }
    }

    let mut state = ModelState::<E>::init(header.config, header.seed)?;
    state.epoch = header.epoch;
    let mut missing: Vec<String> = Vec::new();
    state.visit_params_mut(&mut |name, p, _| match tensors.remove(name) {
        Some(t) if t.shape() == p.shape() => *p = t,
        Some(_) => missing.push(format!("{name} (shape mismatch)")),
        None => missing.push(name.to_string()),
    });
    state.visit_buffers_mut(&mut |name, b| match tensors.remove(name) {
        Some(t) if t.shape() == b.shape() => *b = t,
        Some(_) => missing.push(format!("{name} (shape mismatch)")),
        None => missing.push(name.to_string()),
    });
    let mut vel_names = Vec::new();
    state.visit_params(&mut |name, _| vel_names.push(format!("optimizer.{name}.velocity")));
    for (i, name) in vel_names.iter().enumerate() {
        match tensors.remove(name) {
            Some(t) if t.shape() == state.velocities[i].shape() => state.velocities[i] = t,
            Some(_) => missing.push(format!("{name} (shape mismatch)")),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(corrupt(path, format!("missing tensors: {missing:?}")));
    }
    if !tensors.is_empty() {
        let extra: Vec<_> = tensors.keys().cloned().collect();
        return Err(corrupt(path, format!("unexpected tensors: {extra:?}")));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::reduced_model_config;

    #[test]
    fn roundtrip_is_bitwise_for_f32() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = reduced_model_config(vec![1, 3], 8);
        let state = ModelState::<f32>::init(cfg, 17).unwrap();
        let p = dir.path().join("model.ckpt");
        checkpoint_save(&state, &p).unwrap();
        let back = checkpoint_load::<f32>(&p).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = reduced_model_config(vec![1, 2], 8);
        let state = ModelState::<f32>::init(cfg, 1).unwrap();
        let p = dir.path().join("model.ckpt");
        checkpoint_save(&state, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            checkpoint_load::<f32>(&p),
            Err(Error::CheckpointCorrupt { .. })
        ));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = reduced_model_config(vec![1, 2], 8);
        let state = ModelState::<f32>::init(cfg, 1).unwrap();
        let p = dir.path().join("model.ckpt");
        checkpoint_save(&state, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[8] = 99;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            checkpoint_load::<f32>(&p),
            Err(Error::CheckpointVersion { found: 99, .. })
        ));
    }
}
