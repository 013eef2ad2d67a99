//! Flat binary parameter snapshots.
//!
//! Layout: magic, format version, a JSON config echo, then each named tensor
//! as (name, shape, little-endian f64 payload). Round-trips are bit-exact.

use super::{EncoderConfig, EncoderError, Parameters};
use crate::tensor::{TensorMap, TensorValue};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LNSRSNAP";
const VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(mut w: W, params: &Parameters) -> Result<(), EncoderError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let header = serde_json::to_vec(params.config())
        .map_err(|e| EncoderError::SnapshotFormat(format!("config encode: {e}")))?;
    w.write_u64::<LittleEndian>(header.len() as u64)?;
    w.write_all(&header)?;
    w.write_u64::<LittleEndian>(params.tensors().len() as u64)?;
    for (name, t) in params.tensors() {
        w.write_u64::<LittleEndian>(name.len() as u64)?;
        w.write_all(name.as_bytes())?;
        w.write_u64::<LittleEndian>(t.rank() as u64)?;
        for &d in t.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in t.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Parameters, EncoderError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EncoderError::SnapshotFormat("bad magic".to_string()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(EncoderError::SnapshotFormat(format!(
            "unsupported version {version}"
        )));
    }
    let header_len = r.read_u64::<LittleEndian>()? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let config: EncoderConfig = serde_json::from_slice(&header)
        .map_err(|e| EncoderError::SnapshotFormat(format!("config decode: {e}")))?;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut tensors = TensorMap::new();
    for _ in 0..count {
        let name_len = r.read_u64::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| EncoderError::SnapshotFormat(format!("tensor name: {e}")))?;
        let rank = r.read_u64::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        let t = TensorValue::new(shape, data)
            .map_err(|e| EncoderError::SnapshotFormat(format!("tensor {name}: {e}")))?;
        tensors.insert(name, t);
    }
    Ok(Parameters::from_parts(config, tensors))
}

pub fn save(params: &Parameters, path: &Path) -> Result<(), EncoderError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_snapshot(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Parameters, EncoderError> {
    let file = std::fs::File::open(path)?;
    read_snapshot(std::io::BufReader::new(file))
}

/// The snapshot byte image of a parameter set, for hashing or in-memory
/// round-trip checks.
pub fn to_bytes(params: &Parameters) -> Vec<u8> {
    let mut buf = Vec::new();
    write_snapshot(&mut buf, params).expect("in-memory snapshot write cannot fail");
    buf
}
