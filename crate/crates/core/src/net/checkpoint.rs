//! Self-describing binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "VSEGCKPT"
//! version          u32      currently 1
//! config length    u32      followed by that many bytes of network
//!                           config JSON
//! tensor count     u32
//! per tensor:
//!   name length    u16      followed by UTF-8 name
//!   rank           u8       followed by rank × u32 dims
//!   value count    u64      followed by count × f64 values
//! ```
//!
//! The loader rebuilds the network from the embedded config and then
//! overwrites every named parameter tensor, so a checkpoint is complete
//! on its own and survives refactorings that keep tensor names stable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use super::model::{NetworkConfig, SegNet};
use super::ops::NetError;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"VSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 8]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("checkpoint I/O: {0}")]
    Io(String),
}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e.to_string())
    }
}

pub fn write_checkpoint<W: Write>(model: &SegNet, w: &mut W) -> Result<(), CheckpointError> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;

    let config = serde_json::to_vec(&model.config)
        .map_err(|e| CheckpointError::Corrupt(format!("config serialization: {e}")))?;
    w.write_u32::<LittleEndian>(config.len() as u32)?;
    w.write_all(&config)?;

    let tensors = model.parameter_tensors();
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name)?;
        w.write_u8(t.dims.len() as u8)?;
        for &d in &t.dims {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        w.write_u64::<LittleEndian>(t.len as u64)?;
        let values = model
            .tensor_values(model.parameters(), &t.name)
            .expect("own tensor name resolves");
        for &v in values {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<SegNet, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }

    let config_len = r.read_u32::<LittleEndian>()? as usize;
    if config_len > 1 << 20 {
        return Err(CheckpointError::Corrupt(format!(
            "implausible config length {config_len}"
        )));
    }
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config: NetworkConfig = serde_json::from_slice(&config_bytes)
        .map_err(|e| CheckpointError::Corrupt(format!("config JSON: {e}")))?;

    let mut model = SegNet::new(config, 0)?;
    let tensor_count = r.read_u32::<LittleEndian>()? as usize;
    if tensor_count != model.parameter_tensors().len() {
        return Err(CheckpointError::Corrupt(format!(
            "expected {} tensors for this config, found {tensor_count}",
            model.parameter_tensors().len()
        )));
    }

    for _ in 0..tensor_count {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;

        let rank = r.read_u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let count = r.read_u64::<LittleEndian>()? as usize;
        if count != dims.iter().product::<usize>() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor `{name}`: {count} values for dims {dims:?}"
            )));
        }
        let expected = model
            .parameter_tensors()
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::Corrupt(format!("unknown tensor `{name}`")))?;
        if expected.dims != dims {
            return Err(CheckpointError::Corrupt(format!(
                "tensor `{name}`: dims {dims:?} do not match the config's {:?}",
                expected.dims
            )));
        }

        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(r.read_f64::<LittleEndian>()?);
        }
        model.set_tensor_values(&name, &values)?;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &SegNet, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SegNet, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}
