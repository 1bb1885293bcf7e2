//! Dataset container file.
//!
//! Layout (little-endian): `"FHRD"`, `u32` version, `u32` signal length
//! `L`, `u32` record count, `u8` split tag (0 train, 1 validation, 2 test,
//! 3 unsplit), then fixed-size records of `L` `f32` values, `L` mask bytes
//! and a `u64` episode id.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use fhrformer_core::apps::{DatasetContainer, SplitTag};
use fhrformer_core::prep::PreparedSignal;

use crate::binio::*;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"FHRD";

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_container(w: &mut impl Write, c: &DatasetContainer) -> io::Result<()> {
    let u32_of = |v: usize| u32::try_from(v).map_err(|_| invalid("value exceeds u32"));
    w.write_all(MAGIC)?;
    put_u32(w, c.version)?;
    put_u32(w, u32_of(c.length)?)?;
    put_u32(w, u32_of(c.records.len())?)?;
    w.write_all(&[c.split as u8])?;
    for r in &c.records {
        if r.values.len() != c.length || r.missing_mask.len() != c.length {
            return Err(invalid(format!("episode {} does not have length {}", r.episode_id, c.length)));
        }
        put_f32s(w, &r.values)?;
        w.write_all(&r.missing_mask)?;
        put_u64(w, r.episode_id)?;
    }
    Ok(())
}

pub fn read_container(r: &mut impl Read) -> io::Result<DatasetContainer> {
    if &get_array::<4>(r)? != MAGIC {
        return Err(invalid("not a dataset container (bad magic)"));
    }
    let version = get_u32(r)?;
    if version != fhrformer_core::apps::dataset::CONTAINER_VERSION {
        return Err(invalid(format!("unsupported container version {version}")));
    }
    let length = bounded(get_u32(r)? as u64, 1 << 24)?;
    let count = get_u32(r)? as usize;
    let split = SplitTag::from_u8(get_u8(r)?).ok_or_else(|| invalid("unknown split tag"))?;
    let mut records = Vec::new();
    for _ in 0..count {
        let values = get_f32s(r, length)?;
        let missing_mask = get_bytes(r, length)?;
        if missing_mask.iter().any(|&m| m > 1) {
            return Err(invalid("mask byte other than 0 or 1"));
        }
        let episode_id = get_u64(r)?;
        records.push(PreparedSignal { episode_id, values, missing_mask });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(invalid("trailing bytes after last record"));
    }
    Ok(DatasetContainer { version, length, split, records })
}

pub fn save(path: &Path, c: &DatasetContainer) -> Result<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_container(&mut w, c).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<DatasetContainer> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_container(&mut BufReader::new(f)).map_err(|e| CliError::format(path, e.to_string()))
}
