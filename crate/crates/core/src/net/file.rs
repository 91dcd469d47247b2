//! Flat model file: magic, version, architecture header, then every
//! parameter tensor in declaration order as little-endian `f32`.

use std::io::{Read, Write};

use ndarray::Array2;

use super::{KnollingModel, ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MODEL_MAGIC: &[u8; 8] = b"KNOLLMDL";
pub const MODEL_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::ModelFormat(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn save_model<T: Real>(model: &KnollingModel<T>, w: &mut impl Write) -> Result<()> {
    let c = &model.config;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&[c.kind.code()])?;
    for v in [
        c.d_model,
        c.num_heads,
        c.num_encoder_layers,
        c.num_decoder_layers,
        c.feedforward_dim,
        c.num_mixtures,
        c.max_objects,
    ] {
        put_u32(w, v)?;
    }
    put_u32(w, model.params.len())?;
    for (name, value) in model.params.names.iter().zip(&model.params.values) {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| Error::ModelFormat(format!("name `{name}` too long")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        put_u32(w, value.nrows())?;
        put_u32(w, value.ncols())?;
        let mut buf = Vec::with_capacity(value.len() * 4);
        for x in value.iter() {
            buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn load_model<T: Real>(r: &mut impl Read) -> Result<KnollingModel<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb)?;
    let version = u32::from_le_bytes(vb);
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let mut kb = [0u8; 1];
    r.read_exact(&mut kb)?;
    let kind = ModelKind::from_code(kb[0]).ok_or_else(|| Error::ModelFormat(format!("unknown kind {}", kb[0])))?;
    let mut f = [0usize; 7];
    for v in f.iter_mut() {
        *v = get_u32(r)?;
    }
    let config = ModelConfig {
        kind,
        d_model: f[0],
        num_heads: f[1],
        num_encoder_layers: f[2],
        num_decoder_layers: f[3],
        feedforward_dim: f[4],
        num_mixtures: f[5],
        max_objects: f[6],
    };
    let mut model = KnollingModel::<T>::new(config, 0)?;
    let count = get_u32(r)?;
    if count != model.params.len() {
        return Err(Error::ModelFormat(format!(
            "{count} tensors in file, architecture declares {}",
            model.params.len()
        )));
    }
    for i in 0..count {
        let mut lb = [0u8; 2];
        r.read_exact(&mut lb)?;
        let mut name = vec![0u8; u16::from_le_bytes(lb) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::ModelFormat("non-utf8 tensor name".into()))?;
        let rows = get_u32(r)?;
        let cols = get_u32(r)?;
        let expected = &model.params.values[i];
        if name != model.params.names[i] || (rows, cols) != expected.dim() {
            return Err(Error::ModelFormat(format!(
                "tensor {i}: found `{name}` {rows}x{cols}, expected `{}` {:?}",
                model.params.names[i],
                expected.dim()
            )));
        }
        let mut buf = vec![0u8; rows * cols * 4];
        r.read_exact(&mut buf)?;
        let data: Vec<T> = buf
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        model.params.values[i] = Array2::from_shape_vec((rows, cols), data).expect("shape checked");
    }
    Ok(model)
}
