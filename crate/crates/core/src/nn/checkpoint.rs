//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "DCTAUGCK"
//! version      u32      = 1
//! config_len   u32      length of the network config JSON
//! config       bytes    NetworkConfig as JSON
//! meta_len     u32      length of the free-form metadata JSON
//! meta         bytes    run provenance (resolved config, seed, ...)
//! dtype        u8       0 = f32, 1 = f64
//! count        u32      number of tensors
//! per tensor:
//!   ndim       u32
//!   dims       ndim x u32
//!   data       prod(dims) values of `dtype`, little-endian
//! ```
//!
//! Tensors appear in layer order as `weight, bias` pairs. Loading converts the
//! stored dtype to the requested scalar type.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::{ModelParams, NetworkConfig, ParamSet, Tensor};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 8] = b"DCTAUGCK";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(model: &ModelParams<T>, metadata: &str, out: &mut W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(&model.config)?;
    write_block(out, &config)?;
    write_block(out, metadata.as_bytes())?;
    out.write_all(&[T::DTYPE.tag()])?;
    write_u32(out, model.params.tensors.len())?;
    for t in &model.params.tensors {
        write_u32(out, t.shape.len())?;
        for &d in &t.shape {
            write_u32(out, d)?;
        }
        out.write_all(&T::to_le_bytes_vec(&t.data))?;
    }
    Ok(())
}

pub fn to_bytes<T: Scalar>(model: &ModelParams<T>, metadata: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(model, metadata, &mut buf)?;
    Ok(buf)
}

/// Reads a checkpoint, returning the model and its metadata string.
pub fn read_checkpoint<T: Scalar, R: Read>(input: &mut R) -> Result<(ModelParams<T>, String)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dctaug checkpoint (bad magic)".into()));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config: NetworkConfig = serde_json::from_slice(&read_block(input)?)?;
    let metadata =
        String::from_utf8(read_block(input)?).map_err(|_| Error::Format("checkpoint metadata is not UTF-8".into()))?;
    let mut tag = [0u8; 1];
    input.read_exact(&mut tag)?;
    let dtype = DType::from_tag(tag[0]).ok_or_else(|| Error::Format(format!("unknown dtype tag {}", tag[0])))?;
    let count = read_u32(input)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let ndim = read_u32(input)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u32(input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * dtype.size()];
        input.read_exact(&mut raw)?;
        let data = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_chunk(c).into()))
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_chunk(c)))
                .collect(),
        };
        tensors.push(Tensor { shape, data });
    }
    let expected = ModelParams::<T>::zeros(config.clone())?;
    let params = ParamSet { tensors };
    if !expected.params.same_layout(&params) {
        return Err(Error::Format(
            "checkpoint tensors do not match the stored network config".into(),
        ));
    }
    Ok((ModelParams { config, params }, metadata))
}

fn write_u32<W: Write>(out: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_block<W: Write>(out: &mut W, bytes: &[u8]) -> Result<()> {
    write_u32(out, bytes.len())?;
    out.write_all(bytes)?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_block<R: Read>(input: &mut R) -> Result<Vec<u8>> {
    let len = read_u32(input)? as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams<f32> {
        ModelParams::init(NetworkConfig::desk_scale(3, 8, 8, 4), 5).unwrap()
    }

    #[test]
    fn roundtrip_preserves_params_and_metadata() {
        let m = model();
        let bytes = to_bytes(&m, "{\"seed\":5}").unwrap();
        let (back, meta) = read_checkpoint::<f32, _>(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta, "{\"seed\":5}");
        // Widening to f64 is exact.
        let (wide, _) = read_checkpoint::<f64, _>(&mut bytes.as_slice()).unwrap();
        assert_eq!(wide.params.tensors[0].data[3], f64::from(m.params.tensors[0].data[3]));
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&model(), "").unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = to_bytes(&model(), "").unwrap();
        assert!(read_checkpoint::<f32, _>(&mut &bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            read_checkpoint::<f32, _>(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
