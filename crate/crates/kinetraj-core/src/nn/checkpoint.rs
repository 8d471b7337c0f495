//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, little-endian u32 header length, JSON header
//! (version, payload dtype, parameter names/shapes, optimizer presence, and
//! an opaque config fingerprint), then the contiguous little-endian float
//! payload: parameters in declaration order, followed by the optimizer's
//! first and second moments when present. Loading rejects fingerprint
//! mismatches at the call site via [`verify_fingerprint`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{ParamStore, Tensor};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"KTCKPT01";
const VERSION: u32 = 1;

/// Adam moment vectors aligned with the parameter store's order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            step: 0,
            first_moment: store.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect(),
            second_moment: store.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect(),
        }
    }
}

pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub optimizer: Option<OptimizerState<T>>,
    pub fingerprint: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    fingerprint: serde_json::Value,
    params: Vec<ParamMeta>,
    optimizer_step: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

fn dtype_of<T: Scalar>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

pub fn save<T: Scalar>(
    path: &Path,
    params: &ParamStore<T>,
    optimizer: Option<&OptimizerState<T>>,
    fingerprint: &serde_json::Value,
) -> Result<()> {
    let display = path.display().to_string();
    let header = Header {
        version: VERSION,
        dtype: dtype_of::<T>().to_string(),
        fingerprint: fingerprint.clone(),
        params: params
            .iter()
            .map(|(name, t)| ParamMeta { name: name.to_string(), shape: t.shape.clone() })
            .collect(),
        optimizer_step: optimizer.map(|o| o.step),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::CheckpointFormat { message: e.to_string() })?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);

    let write_values = |out: &mut Vec<u8>, values: &[T]| {
        for &v in values {
            if dtype_of::<T>() == "f32" {
                out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_f64().to_le_bytes());
            }
        }
    };
    for (_, t) in params.iter() {
        write_values(&mut out, &t.values);
    }
    if let Some(opt) = optimizer {
        for m in &opt.first_moment {
            write_values(&mut out, m);
        }
        for v in &opt.second_moment {
            write_values(&mut out, v);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(display, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let display = path.display().to_string();
    let data = std::fs::read(path).map_err(|e| Error::io(&display, e))?;
    if data.len() < 12 || &data[..8] != MAGIC {
        return Err(Error::CheckpointFormat { message: format!("{display}: bad magic") });
    }
    let header_len = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
    if data.len() < 12 + header_len {
        return Err(Error::CheckpointFormat { message: format!("{display}: truncated header") });
    }
    let header: Header = serde_json::from_slice(&data[12..12 + header_len])
        .map_err(|e| Error::CheckpointFormat { message: format!("{display}: {e}") })?;
    if header.version != VERSION {
        return Err(Error::CheckpointFormat {
            message: format!("{display}: unsupported version {}", header.version),
        });
    }
    let elem = match header.dtype.as_str() {
        "f32" => 4usize,
        "f64" => 8usize,
        other => {
            return Err(Error::CheckpointFormat { message: format!("{display}: dtype {other}") })
        }
    };

    let payload = &data[12 + header_len..];
    let total: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let blocks = if header.optimizer_step.is_some() { 3 } else { 1 };
    if payload.len() != total * elem * blocks {
        return Err(Error::CheckpointFormat {
            message: format!(
                "{display}: payload {} bytes, expected {}",
                payload.len(),
                total * elem * blocks
            ),
        });
    }

    let mut cursor = 0usize;
    let mut read_values = |len: usize| -> Vec<T> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let v = if elem == 4 {
                f32::from_le_bytes(payload[cursor..cursor + 4].try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(payload[cursor..cursor + 8].try_into().unwrap())
            };
            cursor += elem;
            out.push(T::from_f64(v));
        }
        out
    };

    let mut params = ParamStore::new();
    for meta in &header.params {
        let len: usize = meta.shape.iter().product();
        let values = read_values(len);
        params.push_raw(&meta.name, Tensor { values, shape: meta.shape.clone() });
    }
    let optimizer = if let Some(step) = header.optimizer_step {
        let first: Vec<Vec<T>> = header
            .params
            .iter()
            .map(|m| read_values(m.shape.iter().product()))
            .collect();
        let second: Vec<Vec<T>> = header
            .params
            .iter()
            .map(|m| read_values(m.shape.iter().product()))
            .collect();
        Some(OptimizerState { step, first_moment: first, second_moment: second })
    } else {
        None
    };

    Ok(Checkpoint { params, optimizer, fingerprint: header.fingerprint })
}

/// Rejects a checkpoint whose fingerprint differs from the expected one.
pub fn verify_fingerprint(stored: &serde_json::Value, expected: &serde_json::Value) -> Result<()> {
    if stored == expected {
        Ok(())
    } else {
        Err(Error::FingerprintMismatch {
            message: format!("stored {stored} vs expected {expected}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{Model, ModelConfig};
    use crate::nn::params::ParamStore;

    #[test]
    fn save_load_round_trip_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = Model::<f32>::new(ModelConfig { hidden_width: 8, encoder_blocks: 1, merger_blocks: 1, heads: 2, ff_width: 16, conv_channels: vec![2], map_size: 8, decoder_embed: 4, ..ModelConfig::default() }, 3);
        let fp = serde_json::json!({"note": "round-trip", "seed": 3});
        save(&path, &model.params, None, &fp).unwrap();
        let loaded: Checkpoint<f32> = load(&path).unwrap();
        assert_eq!(loaded.fingerprint, fp);
        for ((n1, t1), (n2, t2)) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape, t2.shape);
            assert_eq!(t1.values, t2.values);
        }
    }

    #[test]
    fn forward_reproduces_after_round_trip() {
        use crate::autodiff::Tape;
        use crate::nn::model::tests::{tiny_config, tiny_input};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = Model::<f64>::new(tiny_config(), 17);
        save(&path, &model.params, None, &serde_json::json!({})).unwrap();
        let restored = Model::<f64>::from_parts(tiny_config(), load::<f64>(&path).unwrap().params);

        let input = tiny_input(2, 5);
        let run = |m: &Model<f64>| {
            let tape = Tape::new();
            let out = m.forward(&tape, &input).unwrap();
            out.agents
                .iter()
                .flat_map(|a| a.positions.iter().map(|p| (tape.scalar(p[0]), tape.scalar(p[1]))))
                .collect::<Vec<_>>()
        };
        let (a, b) = (run(&model), run(&restored));
        for ((x1, y1), (x2, y2)) in a.iter().zip(&b) {
            assert!((x1 - x2).abs() < 1e-12 && (y1 - y2).abs() < 1e-12);
        }
    }

    #[test]
    fn optimizer_moments_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("opt.ckpt");
        let mut store = ParamStore::<f64>::new();
        store.push_raw("w", Tensor { values: vec![1.0, -2.0, 3.5], shape: vec![3] });
        let mut opt = OptimizerState::zeros_like(&store);
        opt.step = 7;
        opt.first_moment[0] = vec![0.1, 0.2, 0.3];
        opt.second_moment[0] = vec![0.01, 0.02, 0.03];
        save(&path, &store, Some(&opt), &serde_json::json!(null)).unwrap();
        let loaded: Checkpoint<f64> = load(&path).unwrap();
        let restored = loaded.optimizer.unwrap();
        assert_eq!(restored.step, 7);
        assert_eq!(restored.first_moment[0], opt.first_moment[0]);
        assert_eq!(restored.second_moment[0], opt.second_moment[0]);
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let a = serde_json::json!({"motion": "ctra"});
        let b = serde_json::json!({"motion": "cv"});
        assert!(verify_fingerprint(&a, &a).is_ok());
        assert!(verify_fingerprint(&a, &b).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"KTCKPT01xx").unwrap();
        assert!(load::<f32>(&path).is_err());
    }

    #[test]
    fn dtype_upcast_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.ckpt");
        let mut store = ParamStore::<f32>::new();
        store.push_raw("w", Tensor { values: vec![0.1f32, -2.25, 3.625], shape: vec![3] });
        save(&path, &store, None, &serde_json::json!({})).unwrap();
        let as_f64: Checkpoint<f64> = load(&path).unwrap();
        for (orig, up) in store.get("w").values.iter().zip(&as_f64.params.get("w").values) {
            assert_eq!(*orig as f64, *up);
        }
    }
}
