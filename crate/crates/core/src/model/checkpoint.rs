//! `SIFNCKPT` binary checkpoints: magic, version, configuration echo, then
//! named parameter blobs with shapes and frozen rows, trailing CRC32.

use std::path::Path;

use super::{Model, ModelConfig, ModelError, Variant};
use crate::autograd::{ParamStore, Tensor};
use crate::binio::{verify_crc, write_atomic, ByteReader, ByteWriter};
use crate::embeddings::BackendKind;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SIFNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn backend_code(b: BackendKind) -> u8 {
    match b {
        BackendKind::StaticTable => 0,
        BackendKind::TrainableTable => 1,
        BackendKind::ContextualStore => 2,
    }
}

fn backend_from(code: u8) -> Result<BackendKind, String> {
    Ok(match code {
        0 => BackendKind::StaticTable,
        1 => BackendKind::TrainableTable,
        2 => BackendKind::ContextualStore,
        other => return Err(format!("unknown backend code {other}")),
    })
}

pub(crate) fn encode(model: &Model) -> Vec<u8> {
    let c = &model.config;
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(c.k as u32);
    w.u32(c.m as u32);
    w.u32(c.l as u32);
    w.str(c.variant.name());
    w.f64(c.lambda);
    w.u64(c.seed);
    w.f64(c.dropout);
    w.u8(backend_code(c.backend));
    w.u32(c.native_width as u32);
    w.u32(c.vocab_size as u32);
    w.u32(c.n_users as u32);
    w.u32(c.n_items as u32);
    w.u32(model.params.len() as u32);
    for p in model.params.iter() {
        w.str(&p.name);
        w.u32(p.value.shape().len() as u32);
        for &d in p.value.shape() {
            w.u32(d as u32);
        }
        w.u32(p.frozen_rows.len() as u32);
        for &r in &p.frozen_rows {
            w.u32(r as u32);
        }
        for &x in p.value.data() {
            w.f64(x);
        }
    }
    w.finish_with_crc()
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Model, String> {
    let payload = verify_crc(bytes)?;
    let mut r = ByteReader::new(payload);
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let k = r.u32()? as usize;
    let m = r.u32()? as usize;
    let l = r.u32()? as usize;
    let variant: Variant = r.str()?.parse().map_err(|e: ModelError| e.to_string())?;
    let config = ModelConfig {
        k,
        m,
        l,
        variant,
        lambda: r.f64()?,
        seed: r.u64()?,
        dropout: r.f64()?,
        backend: backend_from(r.u8()?)?,
        native_width: r.u32()? as usize,
        vocab_size: r.u32()? as usize,
        n_users: r.u32()? as usize,
        n_items: r.u32()? as usize,
    };
    config.validate().map_err(|e| e.to_string())?;
    let n = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name = r.str()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n_frozen = r.u32()? as usize;
        let frozen = (0..n_frozen).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let value = Tensor::new(shape, data).map_err(|e| format!("parameter {name}: {e}"))?;
        params.insert_frozen(&name, value, frozen);
    }
    if r.remaining() != 0 {
        return Err(format!("{} trailing bytes", r.remaining()));
    }
    let expected = super::param_names(&config);
    if params.names() != expected {
        return Err(format!("parameter set {:?} does not match variant {}", params.names(), variant));
    }
    Ok(Model { config, params })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    write_atomic(path, &encode(model)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
}
