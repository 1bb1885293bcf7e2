//! Model checkpoint file.
//!
//! Layout (little-endian): `"FHRF"`, `u32` version, the model configuration
//! (`u32` patch size, signal length, d_model, ffn width, encoder layers,
//! decoder layers, heads; `f64` dropout, mask ratio), `u32` parameter count,
//! then per parameter: `u32` name length, UTF-8 name, `u32` rank, `u32`
//! dims, row-major `f32` values.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use fhrformer_core::numerics::{NamedTensor, Tensor};
use fhrformer_core::{FhrFormer, ModelConfig};

use crate::binio::*;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"FHRF";
pub const VERSION: u32 = 1;
const MAX_NAME: u64 = 1 << 10;
const MAX_ELEMS: u64 = 1 << 28;

fn as_u32(v: usize) -> io::Result<u32> {
    u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "value exceeds u32"))
}

pub fn write_model(w: &mut impl Write, model: &FhrFormer<f32>) -> io::Result<()> {
    let c = model.config();
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    for v in [c.patch_size, c.signal_length, c.d_model, c.ffn_dim, c.encoder_layers, c.decoder_layers, c.heads] {
        put_u32(w, as_u32(v)?)?;
    }
    put_f64(w, c.dropout)?;
    put_f64(w, c.mask_ratio)?;
    put_u32(w, as_u32(model.params().len())?)?;
    for p in model.params() {
        put_u32(w, as_u32(p.name.len())?)?;
        w.write_all(p.name.as_bytes())?;
        put_u32(w, as_u32(p.tensor.shape().len())?)?;
        for &d in p.tensor.shape() {
            put_u32(w, as_u32(d)?)?;
        }
        put_f32s(w, p.tensor.data())?;
    }
    Ok(())
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Reads configuration and parameters; shape validation is left to the caller.
pub fn read_raw(r: &mut impl Read) -> io::Result<(ModelConfig, Vec<NamedTensor<f32>>)> {
    if &get_array::<4>(r)? != MAGIC {
        return Err(invalid("not a checkpoint (bad magic)"));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(invalid(format!("unsupported checkpoint version {version}")));
    }
    let mut u = [0usize; 7];
    for v in &mut u {
        *v = get_u32(r)? as usize;
    }
    let config = ModelConfig {
        patch_size: u[0],
        signal_length: u[1],
        d_model: u[2],
        ffn_dim: u[3],
        encoder_layers: u[4],
        decoder_layers: u[5],
        heads: u[6],
        dropout: get_f64(r)?,
        mask_ratio: get_f64(r)?,
    };
    let count = bounded(get_u32(r)? as u64, 1 << 16)?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let len = bounded(get_u32(r)? as u64, MAX_NAME)?;
        let name = String::from_utf8(get_bytes(r, len)?).map_err(|_| invalid("parameter name is not UTF-8"))?;
        let rank = bounded(get_u32(r)? as u64, 8)?;
        let mut shape = Vec::with_capacity(rank);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let d = get_u32(r)? as u64;
            elems = elems.saturating_mul(d);
            shape.push(d as usize);
        }
        let n = bounded(elems, MAX_ELEMS)?;
        let data = get_f32s(r, n)?;
        let tensor = Tensor::new(&shape, data).map_err(|e| invalid(e.to_string()))?;
        params.push(NamedTensor { name, tensor });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(invalid("trailing bytes after last parameter"));
    }
    Ok((config, params))
}

pub fn save(path: &Path, model: &FhrFormer<f32>) -> Result<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_model(&mut w, model).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<FhrFormer<f32>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let (config, params) = read_raw(&mut BufReader::new(f)).map_err(|e| CliError::format(path, e.to_string()))?;
    Ok(FhrFormer::from_params(config, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let m = FhrFormer::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        let (c, p) = read_raw(&mut buf.as_slice()).unwrap();
        assert_eq!(c, *m.config());
        let back = FhrFormer::from_params(c, p).unwrap();
        for (a, b) in back.params().iter().zip(m.params()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
        let mut again = Vec::new();
        write_model(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let m = FhrFormer::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert!(read_raw(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_raw(&mut bad.as_slice()).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_raw(&mut long.as_slice()).is_err());
    }
}
