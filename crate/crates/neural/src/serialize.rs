//! Binary model format.
//!
//! Layout (little-endian): magic `CLOC`, format version `u32`, layer count
//! `u32`, input rank `u32` and dims `u64`; per layer a kind tag `u8`, hyper
//! count `u32` and `f64` hypers, tensor count `u32`, and for each tensor its
//! rank `u32`, dims `u64` and `f64` values; finally a metadata count `u32`
//! followed by length-prefixed UTF-8 key/value pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NeuralError, Result};
use crate::layer::{LayerKind, LayerRegistry};
use crate::model::Sequential;

pub const MAGIC: &[u8; 4] = b"CLOC";
pub const FORMAT_VERSION: u32 = 1;

const MAX_DIM: u64 = 1 << 32;
const MAX_ELEMS: usize = 1 << 28;

pub fn write_model<W: Write>(model: &Sequential, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, model.layers().len() as u32)?;
    put_dims(w, model.input_shape())?;
    for layer in model.layers() {
        w.write_all(&[layer.kind().tag()])?;
        let hyper = layer.hyper();
        put_u32(w, hyper.len() as u32)?;
        for h in hyper {
            w.write_all(&h.to_le_bytes())?;
        }
        let params = layer.params();
        put_u32(w, params.len() as u32)?;
        for p in params {
            put_dims(w, &p.shape)?;
            for v in &p.value {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    put_u32(w, model.metadata.len() as u32)?;
    for (k, v) in &model.metadata {
        put_str(w, k)?;
        put_str(w, v)?;
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<Sequential> {
    read_model_with(&LayerRegistry::default(), r)
}

pub fn read_model_with<R: Read>(registry: &LayerRegistry, r: &mut R) -> Result<Sequential> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(NeuralError::Format("not a model file (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(NeuralError::Format(format!("unsupported model version {version}")));
    }
    let n_layers = get_u32(r)? as usize;
    let input_shape = get_dims(r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let tag = get_u8(r)?;
        let kind = LayerKind::from_tag(tag).ok_or_else(|| NeuralError::Format(format!("unknown layer tag {tag}")))?;
        let n_hyper = get_u32(r)? as usize;
        if n_hyper > 64 {
            return Err(NeuralError::Format("implausible hyper-parameter count".into()));
        }
        let hyper = (0..n_hyper).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
        let mut layer = registry.build(kind, &hyper, &mut rng)?;
        let n_params = get_u32(r)? as usize;
        let mut params = layer.params_mut();
        if params.len() != n_params {
            return Err(NeuralError::Format(format!(
                "{kind} layer expects {} tensors, file has {n_params}",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            let dims = get_dims(r)?;
            if dims != p.shape {
                return Err(NeuralError::Format(format!(
                    "{kind}.{} shape {dims:?} does not match {:?}",
                    p.name, p.shape
                )));
            }
            for v in p.value.iter_mut() {
                *v = get_f64(r)?;
            }
        }
        layers.push(layer);
    }
    let mut model = Sequential::from_layers(input_shape, layers, 0)?;
    let n_meta = get_u32(r)? as usize;
    for _ in 0..n_meta {
        let k = get_str(r)?;
        let v = get_str(r)?;
        model.metadata.insert(k, v);
    }
    Ok(model)
}

pub fn save_model(model: &Sequential, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Sequential> {
    let mut r = BufReader::new(File::open(path)?);
    read_model(&mut r)
}

fn truncated(e: std::io::Error) -> NeuralError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        NeuralError::Format("truncated model file".into())
    } else {
        NeuralError::Io(e)
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_dims<W: Write>(w: &mut W, dims: &[usize]) -> Result<()> {
    put_u32(w, dims.len() as u32)?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    Ok(w.write_all(s.as_bytes())?)
}

fn get_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b[0])
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn get_dims<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let rank = get_u32(r)? as usize;
    if rank > 8 {
        return Err(NeuralError::Format(format!("implausible tensor rank {rank}")));
    }
    let dims = (0..rank)
        .map(|_| {
            let d = get_u64(r)?;
            if d >= MAX_DIM {
                return Err(NeuralError::Format(format!("implausible dimension {d}")));
            }
            Ok(d as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    if dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).is_none_or(|n| n > MAX_ELEMS) {
        return Err(NeuralError::Format("tensor too large".into()));
    }
    Ok(dims)
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(NeuralError::Format("implausible string length".into()));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| NeuralError::Format("metadata is not UTF-8".into()))
}
