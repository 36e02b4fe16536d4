//! Reading and writing NIfTI-1 volumes, with transparent gzip.
//!
//! Compression is detected from the stream contents (the 0x1F 0x8B gzip
//! prefix), never from the file name, so `.nii` files that are secretly
//! gzipped still load. Readers accept both byte orders and all five
//! supported datatypes; the writer always produces the canonical form:
//! little-endian, data at offset 352, no intensity scaling.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder as _, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::header::{
    encode_header, parse_header, ByteOrder, Datatype, NiftiError, NiftiHeader, HEADER_SIZE,
};
use crate::volume::{LabelVolume, Volume};

/// Labels may be stored as floats by upstream tools; values this close to
/// an integer are snapped, anything further out is rejected.
pub const LABEL_SNAP_TOLERANCE: f64 = 1e-3;

/// Undecoded voxel payload: raw bytes plus the element type and byte order
/// needed to interpret them. Constructed only with a length that matches
/// the element count, so decoding can never run off the end.
#[derive(Debug)]
pub struct RawVoxelBlock<'a> {
    pub datatype: Datatype,
    pub byte_order: ByteOrder,
    pub bytes: &'a [u8],
}

impl<'a> RawVoxelBlock<'a> {
    pub fn new(
        datatype: Datatype,
        byte_order: ByteOrder,
        bytes: &'a [u8],
    ) -> Result<Self, NiftiError> {
        if bytes.len() % datatype.byte_size() != 0 {
            return Err(NiftiError::CorruptHeader(format!(
                "voxel block of {} bytes is not a multiple of element size {}",
                bytes.len(),
                datatype.byte_size()
            )));
        }
        Ok(Self { datatype, byte_order, bytes })
    }

    pub fn len(&self) -> usize {
        self.bytes.len() / self.datatype.byte_size()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Decode every element to f64 in storage order.
    pub fn decode(&self) -> Vec<f64> {
        match self.byte_order {
            ByteOrder::Little => self.decode_with::<LittleEndian>(),
            ByteOrder::Big => self.decode_with::<BigEndian>(),
        }
    }

    fn decode_with<E: byteorder::ByteOrder>(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n);
        match self.datatype {
            Datatype::Uint8 => out.extend(self.bytes.iter().map(|&b| b as f64)),
            Datatype::Int16 => {
                out.extend(self.bytes.chunks_exact(2).map(|c| E::read_i16(c) as f64))
            }
            Datatype::Int32 => {
                out.extend(self.bytes.chunks_exact(4).map(|c| E::read_i32(c) as f64))
            }
            Datatype::Float32 => {
                out.extend(self.bytes.chunks_exact(4).map(|c| E::read_f32(c) as f64))
            }
            Datatype::Float64 => {
                out.extend(self.bytes.chunks_exact(8).map(|c| E::read_f64(c)))
            }
        }
        out
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B
}

/// Inflate if the stream carries the gzip prefix, otherwise pass through.
fn maybe_decompress(bytes: &[u8]) -> Result<Vec<u8>, NiftiError> {
    if is_gzip(bytes) {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

/// Header + scaled f64 voxels from a (possibly gzipped) single-file
/// NIfTI-1 stream. Intensity scaling `slope * raw + inter` is applied in
/// double precision; a zero slope means no scaling, per the format.
pub fn read_image_bytes(bytes: &[u8]) -> Result<(NiftiHeader, Volume), NiftiError> {
    let (header, data) = read_scaled(bytes)?;
    let volume = Volume::new(header.shape(), header.spacing(), data)
        .map_err(|e| NiftiError::CorruptHeader(e.to_string()))?
        .with_affine(header.affine());
    Ok((header, volume))
}

/// Like [`read_image_bytes`] but snaps voxels to the label alphabet
/// {0, 1, 2}, rejecting anything fractional or out of range.
pub fn read_label_bytes(bytes: &[u8]) -> Result<(NiftiHeader, LabelVolume), NiftiError> {
    let (header, data) = read_scaled(bytes)?;
    let mut labels = Vec::with_capacity(data.len());
    for value in data {
        let snapped = value.round();
        if (value - snapped).abs() > LABEL_SNAP_TOLERANCE
            || !(0.0..=2.0).contains(&snapped)
        {
            return Err(NiftiError::NonIntegerLabel { value });
        }
        labels.push(snapped as u8);
    }
    let volume = LabelVolume::new(header.shape(), header.spacing(), labels)
        .map_err(|e| NiftiError::CorruptHeader(e.to_string()))?;
    Ok((header, volume))
}

fn read_scaled(bytes: &[u8]) -> Result<(NiftiHeader, Vec<f64>), NiftiError> {
    let raw = maybe_decompress(bytes)?;
    if raw.len() < HEADER_SIZE {
        return Err(NiftiError::CorruptHeader(format!(
            "stream holds {} bytes, shorter than the 348-byte header",
            raw.len()
        )));
    }
    let mut head = [0u8; HEADER_SIZE];
    head.copy_from_slice(&raw[..HEADER_SIZE]);
    let header = parse_header(&head)?;

    let offset = header.vox_offset as usize;
    let need = header.data_byte_len();
    if raw.len() < offset || raw.len() - offset < need {
        return Err(NiftiError::TruncatedData {
            expected: offset + need,
            got: raw.len(),
        });
    }
    let block = RawVoxelBlock::new(
        header.datatype,
        header.byte_order,
        &raw[offset..offset + need],
    )?;
    let mut data = block.decode();
    if header.scl_slope != 0.0 {
        let s = header.scl_slope as f64;
        let b = header.scl_inter as f64;
        for v in &mut data {
            *v = s * *v + b;
        }
    }
    Ok((header, data))
}

pub fn read_image_file(path: &Path) -> Result<(NiftiHeader, Volume), NiftiError> {
    read_image_bytes(&std::fs::read(path)?)
}

pub fn read_label_file(path: &Path) -> Result<(NiftiHeader, LabelVolume), NiftiError> {
    read_label_bytes(&std::fs::read(path)?)
}

/// Serialize a volume in canonical form. Voxels are cast to `datatype`;
/// pick one wide enough for the data (the cast saturates, it never wraps).
pub fn write_image_bytes(
    volume: &Volume,
    datatype: Datatype,
    gzip: bool,
) -> Result<Vec<u8>, NiftiError> {
    let mut header = NiftiHeader::canonical(volume.shape, volume.spacing, datatype);
    if let Some(a) = volume.affine {
        header.sform_code = 1;
        for r in 0..3 {
            for c in 0..4 {
                header.srow[r][c] = a[r][c] as f32;
            }
        }
    }
    let payload = encode_voxels(&volume.data, datatype);
    assemble(&header, &payload, gzip)
}

/// Serialize a label volume. Only integer datatypes can represent the
/// label alphabet exactly; float types are refused rather than risking a
/// read-back that fails the snap check.
pub fn write_label_bytes(
    labels: &LabelVolume,
    datatype: Datatype,
    gzip: bool,
) -> Result<Vec<u8>, NiftiError> {
    if !datatype.is_integer() {
        return Err(NiftiError::LossyDatatype(datatype));
    }
    let header = NiftiHeader::canonical(labels.shape, labels.spacing, datatype);
    let data: Vec<f64> = labels.data.iter().map(|&v| v as f64).collect();
    let payload = encode_voxels(&data, datatype);
    assemble(&header, &payload, gzip)
}

pub fn write_image_file(
    path: &Path,
    volume: &Volume,
    datatype: Datatype,
    gzip: bool,
) -> Result<(), NiftiError> {
    let bytes = write_image_bytes(volume, datatype, gzip)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn write_label_file(
    path: &Path,
    labels: &LabelVolume,
    datatype: Datatype,
    gzip: bool,
) -> Result<(), NiftiError> {
    let bytes = write_label_bytes(labels, datatype, gzip)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

fn encode_voxels(data: &[f64], datatype: Datatype) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * datatype.byte_size());
    match datatype {
        Datatype::Uint8 => {
            for &v in data {
                out.push(v.clamp(0.0, u8::MAX as f64) as u8);
            }
        }
        Datatype::Int16 => {
            let mut buf = [0u8; 2];
            for &v in data {
                LittleEndian::write_i16(&mut buf, v as i16);
                out.extend_from_slice(&buf);
            }
        }
        Datatype::Int32 => {
            let mut buf = [0u8; 4];
            for &v in data {
                LittleEndian::write_i32(&mut buf, v as i32);
                out.extend_from_slice(&buf);
            }
        }
        Datatype::Float32 => {
            let mut buf = [0u8; 4];
            for &v in data {
                LittleEndian::write_f32(&mut buf, v as f32);
                out.extend_from_slice(&buf);
            }
        }
        Datatype::Float64 => {
            let mut buf = [0u8; 8];
            for &v in data {
                LittleEndian::write_f64(&mut buf, v);
                out.extend_from_slice(&buf);
            }
        }
    }
    out
}

fn assemble(header: &NiftiHeader, payload: &[u8], gzip: bool) -> Result<Vec<u8>, NiftiError> {
    let mut plain = Vec::with_capacity(HEADER_SIZE + 4 + payload.len());
    plain.extend_from_slice(&encode_header(header));
    // 4-byte extension flag: no extensions
    plain.extend_from_slice(&[0u8; 4]);
    plain.extend_from_slice(payload);
    if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&plain)?;
        Ok(enc.finish()?)
    } else {
        Ok(plain)
    }
}
