//! NIfTI-1 header parsing and encoding.
//!
//! Single-file NIfTI-1 only (magic `n+1\0`, 348-byte header, voxel data in
//! the same stream at `vox_offset`). Byte order is detected from the
//! `sizeof_hdr` field, which reads 348 under exactly one ordering for a
//! well-formed file. The two-file variant (`ni1\0`) and NIfTI-2 are
//! rejected with typed errors, never silently mishandled.

use byteorder::{BigEndian, ByteOrder as _, LittleEndian};
use thiserror::Error;

/// Header size in bytes; also the value of `sizeof_hdr`.
pub const HEADER_SIZE: usize = 348;
/// Canonical voxel data offset for single-file volumes (header + the
/// 4-byte extension flag).
pub const CANONICAL_VOX_OFFSET: u32 = 352;

pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
pub const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

#[derive(Debug, Error, PartialEq)]
pub enum NiftiError {
    #[error("bad magic {0:?}: not a NIfTI-1 stream")]
    BadMagic([u8; 4]),
    #[error("two-file NIfTI (magic \"ni1\\0\") is not supported")]
    UnsupportedTwoFile,
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated voxel data: expected {expected} bytes, got {got}")]
    TruncatedData { expected: usize, got: usize },
    #[error("label voxel {value} is not an integer in {{0, 1, 2}}")]
    NonIntegerLabel { value: f64 },
    #[error("datatype {0:?} cannot store label values losslessly")]
    LossyDatatype(Datatype),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for NiftiError {
    fn from(e: std::io::Error) -> Self {
        NiftiError::Io(e.to_string())
    }
}

/// Supported voxel element types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i16)]
pub enum Datatype {
    Uint8 = 2,
    Int16 = 4,
    Int32 = 8,
    Float32 = 16,
    Float64 = 64,
}

impl Datatype {
    pub fn from_code(code: i16) -> Result<Self, NiftiError> {
        match code {
            2 => Ok(Self::Uint8),
            4 => Ok(Self::Int16),
            8 => Ok(Self::Int32),
            16 => Ok(Self::Float32),
            64 => Ok(Self::Float64),
            other => Err(NiftiError::UnsupportedDatatype(other)),
        }
    }

    pub const fn code(self) -> i16 {
        self as i16
    }

    pub const fn byte_size(self) -> usize {
        match self {
            Self::Uint8 => 1,
            Self::Int16 => 2,
            Self::Int32 | Self::Float32 => 4,
            Self::Float64 => 8,
        }
    }

    pub const fn bitpix(self) -> i16 {
        (self.byte_size() * 8) as i16
    }

    pub const fn is_integer(self) -> bool {
        matches!(self, Self::Uint8 | Self::Int16 | Self::Int32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

/// Field offsets into the 348-byte header.
mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

/// Parsed NIfTI-1 header. Field layout mirrors the on-disk record; raw
/// `dim`/`pixdim` arrays are kept whole so writes and diagnostics can see
/// exactly what the file said.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    /// dim[0] = rank, dim[1..=rank] = extents.
    pub dim: [i16; 8],
    pub datatype: Datatype,
    pub bitpix: i16,
    /// pixdim[0] = qfac, pixdim[1..4] = voxel spacing (mm).
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
    pub byte_order: ByteOrder,
}

impl NiftiHeader {
    /// Canonical header for a volume of the given geometry: little-endian,
    /// `vox_offset` 352, no intensity scaling, unused dims set to 1.
    pub fn canonical(shape: [usize; 3], spacing: [f64; 3], datatype: Datatype) -> Self {
        let mut dim = [1i16; 8];
        dim[0] = 3;
        for i in 0..3 {
            dim[i + 1] = shape[i] as i16;
        }
        let mut pixdim = [0.0f32; 8];
        pixdim[0] = 1.0;
        for i in 0..3 {
            pixdim[i + 1] = spacing[i] as f32;
        }
        Self {
            dim,
            datatype,
            bitpix: datatype.bitpix(),
            pixdim,
            vox_offset: CANONICAL_VOX_OFFSET as f32,
            scl_slope: 0.0,
            scl_inter: 0.0,
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[0.0; 4]; 3],
            magic: MAGIC_SINGLE,
            byte_order: ByteOrder::Little,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.dim[1] as usize, self.dim[2] as usize, self.dim[3] as usize]
    }

    pub fn spacing(&self) -> [f64; 3] {
        [
            self.pixdim[1] as f64,
            self.pixdim[2] as f64,
            self.pixdim[3] as f64,
        ]
    }

    pub fn voxel_count(&self) -> usize {
        let s = self.shape();
        s[0] * s[1] * s[2]
    }

    pub fn data_byte_len(&self) -> usize {
        self.voxel_count() * self.datatype.byte_size()
    }

    /// Spatial affine: the sform rows when `sform_code > 0`, else the
    /// qform quaternion expanded to a matrix when `qform_code > 0`, else
    /// none. Carried through the pipeline but never consumed by it.
    pub fn affine(&self) -> Option<[[f64; 4]; 4]> {
        if self.sform_code > 0 {
            let r = |i: usize| {
                [
                    self.srow[i][0] as f64,
                    self.srow[i][1] as f64,
                    self.srow[i][2] as f64,
                    self.srow[i][3] as f64,
                ]
            };
            Some([r(0), r(1), r(2), [0.0, 0.0, 0.0, 1.0]])
        } else if self.qform_code > 0 {
            Some(self.qform_affine())
        } else {
            None
        }
    }

    fn qform_affine(&self) -> [[f64; 4]; 4] {
        let b = self.quatern[0] as f64;
        let c = self.quatern[1] as f64;
        let d = self.quatern[2] as f64;
        let a = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let sx = self.pixdim[1] as f64;
        let sy = self.pixdim[2] as f64;
        let sz = self.pixdim[3] as f64 * qfac;
        [
            [
                (a * a + b * b - c * c - d * d) * sx,
                2.0 * (b * c - a * d) * sy,
                2.0 * (b * d + a * c) * sz,
                self.qoffset[0] as f64,
            ],
            [
                2.0 * (b * c + a * d) * sx,
                (a * a - b * b + c * c - d * d) * sy,
                2.0 * (c * d - a * b) * sz,
                self.qoffset[1] as f64,
            ],
            [
                2.0 * (b * d - a * c) * sx,
                2.0 * (c * d + a * b) * sy,
                (a * a - b * b - c * c + d * d) * sz,
                self.qoffset[2] as f64,
            ],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// Decode a 348-byte header block. Byte order is inferred from
/// `sizeof_hdr`; every invariant violation maps to a typed error and no
/// input can cause an out-of-bounds read.
pub fn parse_header(bytes: &[u8; HEADER_SIZE]) -> Result<NiftiHeader, NiftiError> {
    let le = LittleEndian::read_i32(&bytes[offset::SIZEOF_HDR..]);
    let byte_order = if le == HEADER_SIZE as i32 {
        ByteOrder::Little
    } else if BigEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        ByteOrder::Big
    } else {
        return Err(NiftiError::CorruptHeader(format!(
            "sizeof_hdr is not 348 under either byte order (reads {le} natively)"
        )));
    };
    match byte_order {
        ByteOrder::Little => parse_fields::<LittleEndian>(bytes, byte_order),
        ByteOrder::Big => parse_fields::<BigEndian>(bytes, byte_order),
    }
}

fn parse_fields<E: byteorder::ByteOrder>(
    bytes: &[u8; HEADER_SIZE],
    byte_order: ByteOrder,
) -> Result<NiftiHeader, NiftiError> {
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[offset::MAGIC..offset::MAGIC + 4]);
    if magic == MAGIC_PAIR {
        return Err(NiftiError::UnsupportedTwoFile);
    }
    if magic != MAGIC_SINGLE {
        return Err(NiftiError::BadMagic(magic));
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = E::read_i16(&bytes[offset::DIM + 2 * i..]);
    }
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(NiftiError::CorruptHeader(format!(
            "dim[0] (rank) must be in 1..=7, got {rank}"
        )));
    }
    if rank < 3 {
        return Err(NiftiError::CorruptHeader(format!(
            "expected a 3D volume, got rank {rank}"
        )));
    }
    for i in 1..=3 {
        if dim[i] < 1 {
            return Err(NiftiError::CorruptHeader(format!(
                "dim[{i}] must be >= 1, got {}",
                dim[i]
            )));
        }
    }
    // rank > 3 is tolerated only when the trailing dims are degenerate
    for i in 4..=(rank as usize) {
        if dim[i] > 1 {
            return Err(NiftiError::CorruptHeader(format!(
                "only 3D volumes are supported; dim[{i}] = {}",
                dim[i]
            )));
        }
    }

    let datatype = Datatype::from_code(E::read_i16(&bytes[offset::DATATYPE..]))?;
    let bitpix = E::read_i16(&bytes[offset::BITPIX..]);
    if bitpix != datatype.bitpix() {
        return Err(NiftiError::CorruptHeader(format!(
            "bitpix {bitpix} inconsistent with datatype code {} (expected {})",
            datatype.code(),
            datatype.bitpix()
        )));
    }

    let mut pixdim = [0.0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&bytes[offset::PIXDIM + 4 * i..]);
    }
    for i in 1..=3 {
        if !pixdim[i].is_finite() || pixdim[i] <= 0.0 {
            return Err(NiftiError::CorruptHeader(format!(
                "pixdim[{i}] must be finite and > 0, got {}",
                pixdim[i]
            )));
        }
    }

    let vox_offset = E::read_f32(&bytes[offset::VOX_OFFSET..]);
    if !vox_offset.is_finite() || vox_offset < CANONICAL_VOX_OFFSET as f32 {
        return Err(NiftiError::CorruptHeader(format!(
            "vox_offset must be >= 352 for single-file volumes, got {vox_offset}"
        )));
    }

    // guard the voxel-count product before anyone multiplies extents
    let mut voxels: usize = 1;
    for i in 1..=3 {
        voxels = voxels
            .checked_mul(dim[i] as usize)
            .ok_or_else(|| NiftiError::CorruptHeader("voxel count overflows".into()))?;
    }
    voxels
        .checked_mul(datatype.byte_size())
        .ok_or_else(|| NiftiError::CorruptHeader("data byte length overflows".into()))?;

    let scl_slope = E::read_f32(&bytes[offset::SCL_SLOPE..]);
    let scl_inter = E::read_f32(&bytes[offset::SCL_INTER..]);
    if scl_slope != 0.0 && (!scl_slope.is_finite() || !scl_inter.is_finite()) {
        return Err(NiftiError::CorruptHeader(format!(
            "non-finite intensity scaling (slope {scl_slope}, inter {scl_inter})"
        )));
    }

    Ok(NiftiHeader {
        dim,
        datatype,
        bitpix,
        pixdim,
        vox_offset,
        scl_slope,
        scl_inter,
        qform_code: E::read_i16(&bytes[offset::QFORM_CODE..]),
        sform_code: E::read_i16(&bytes[offset::SFORM_CODE..]),
        quatern: [
            E::read_f32(&bytes[offset::QUATERN_B..]),
            E::read_f32(&bytes[offset::QUATERN_B + 4..]),
            E::read_f32(&bytes[offset::QUATERN_B + 8..]),
        ],
        qoffset: [
            E::read_f32(&bytes[offset::QOFFSET_X..]),
            E::read_f32(&bytes[offset::QOFFSET_X + 4..]),
            E::read_f32(&bytes[offset::QOFFSET_X + 8..]),
        ],
        srow: [
            read_row::<E>(bytes, offset::SROW_X),
            read_row::<E>(bytes, offset::SROW_X + 16),
            read_row::<E>(bytes, offset::SROW_X + 32),
        ],
        magic,
        byte_order,
    })
}

fn read_row<E: byteorder::ByteOrder>(bytes: &[u8; HEADER_SIZE], at: usize) -> [f32; 4] {
    [
        E::read_f32(&bytes[at..]),
        E::read_f32(&bytes[at + 4..]),
        E::read_f32(&bytes[at + 8..]),
        E::read_f32(&bytes[at + 12..]),
    ]
}

/// Encode a header as 348 little-endian bytes. The writer always emits the
/// canonical little-endian form regardless of `byte_order`.
pub fn encode_header(h: &NiftiHeader) -> [u8; HEADER_SIZE] {
    let mut buf = [0u8; HEADER_SIZE];
    LittleEndian::write_i32(&mut buf[offset::SIZEOF_HDR..], HEADER_SIZE as i32);
    // `regular` byte, conventionally 'r'
    buf[38] = b'r';
    for i in 0..8 {
        LittleEndian::write_i16(&mut buf[offset::DIM + 2 * i..], h.dim[i]);
    }
    LittleEndian::write_i16(&mut buf[offset::DATATYPE..], h.datatype.code());
    LittleEndian::write_i16(&mut buf[offset::BITPIX..], h.datatype.bitpix());
    for i in 0..8 {
        LittleEndian::write_f32(&mut buf[offset::PIXDIM + 4 * i..], h.pixdim[i]);
    }
    LittleEndian::write_f32(&mut buf[offset::VOX_OFFSET..], h.vox_offset);
    LittleEndian::write_f32(&mut buf[offset::SCL_SLOPE..], h.scl_slope);
    LittleEndian::write_f32(&mut buf[offset::SCL_INTER..], h.scl_inter);
    LittleEndian::write_i16(&mut buf[offset::QFORM_CODE..], h.qform_code);
    LittleEndian::write_i16(&mut buf[offset::SFORM_CODE..], h.sform_code);
    for i in 0..3 {
        LittleEndian::write_f32(&mut buf[offset::QUATERN_B + 4 * i..], h.quatern[i]);
        LittleEndian::write_f32(&mut buf[offset::QOFFSET_X + 4 * i..], h.qoffset[i]);
    }
    for r in 0..3 {
        for c in 0..4 {
            LittleEndian::write_f32(&mut buf[offset::SROW_X + 16 * r + 4 * c..], h.srow[r][c]);
        }
    }
    buf[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(&h.magic);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid_bytes() -> [u8; HEADER_SIZE] {
        encode_header(&NiftiHeader::canonical(
            [4, 4, 2],
            [1.0, 1.0, 1.0],
            Datatype::Float32,
        ))
    }

    #[test]
    fn parses_hand_built_fixture() {
        let h = parse_header(&valid_bytes()).unwrap();
        assert_eq!(h.shape(), [4, 4, 2]);
        assert_eq!(h.datatype, Datatype::Float32);
        assert_eq!(h.bitpix, 32);
        assert_eq!(h.byte_order, ByteOrder::Little);
        assert_eq!(h.dim[0], 3);
    }

    #[test]
    fn two_file_magic_is_rejected() {
        let mut b = valid_bytes();
        b[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(&MAGIC_PAIR);
        assert_eq!(parse_header(&b), Err(NiftiError::UnsupportedTwoFile));
    }

    #[test]
    fn unknown_magic_is_rejected() {
        let mut b = valid_bytes();
        b[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(b"n+2\0");
        assert!(matches!(parse_header(&b), Err(NiftiError::BadMagic(_))));
    }

    #[test]
    fn unsupported_datatype_is_rejected() {
        let mut b = valid_bytes();
        // datatype 128 = RGB, unsupported
        b[offset::DATATYPE] = 128;
        b[offset::DATATYPE + 1] = 0;
        assert_eq!(parse_header(&b), Err(NiftiError::UnsupportedDatatype(128)));
    }

    #[test]
    fn bitpix_mismatch_is_rejected() {
        let mut b = valid_bytes();
        b[offset::BITPIX] = 16;
        assert!(matches!(
            parse_header(&b),
            Err(NiftiError::CorruptHeader(_))
        ));
    }

    #[test]
    fn bad_sizeof_hdr_is_rejected_under_both_orders() {
        let mut b = valid_bytes();
        b[0] = 0x5D;
        assert!(matches!(
            parse_header(&b),
            Err(NiftiError::CorruptHeader(_))
        ));
    }

    // Big-endian fixture assembled field by field, independent of
    // encode_header, then re-read.
    #[test]
    fn byte_swapped_header_parses_to_equal_fields() {
        let le = parse_header(&valid_bytes()).unwrap();

        let mut b = [0u8; HEADER_SIZE];
        BigEndian::write_i32(&mut b[0..], 348);
        let dim: [i16; 8] = [3, 4, 4, 2, 1, 1, 1, 1];
        for i in 0..8 {
            BigEndian::write_i16(&mut b[offset::DIM + 2 * i..], dim[i]);
        }
        BigEndian::write_i16(&mut b[offset::DATATYPE..], 16);
        BigEndian::write_i16(&mut b[offset::BITPIX..], 32);
        let pixdim: [f32; 8] = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for i in 0..8 {
            BigEndian::write_f32(&mut b[offset::PIXDIM + 4 * i..], pixdim[i]);
        }
        BigEndian::write_f32(&mut b[offset::VOX_OFFSET..], 352.0);
        b[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(&MAGIC_SINGLE);

        let be = parse_header(&b).unwrap();
        assert_eq!(be.byte_order, ByteOrder::Big);
        assert_eq!(be.dim, le.dim);
        assert_eq!(be.datatype, le.datatype);
        assert_eq!(be.pixdim, le.pixdim);
        assert_eq!(be.vox_offset, le.vox_offset);
        assert_eq!(be.shape(), le.shape());
    }

    #[test]
    fn sform_affine_preferred_over_qform() {
        let mut h = NiftiHeader::canonical([2, 2, 2], [1.0; 3], Datatype::Uint8);
        h.sform_code = 1;
        h.qform_code = 1;
        h.srow = [[2.0, 0.0, 0.0, 5.0], [0.0, 2.0, 0.0, 6.0], [0.0, 0.0, 2.0, 7.0]];
        let a = h.affine().unwrap();
        assert_eq!(a[0], [2.0, 0.0, 0.0, 5.0]);
        assert_eq!(a[3], [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn identity_quaternion_gives_spacing_diagonal() {
        let mut h = NiftiHeader::canonical([2, 2, 2], [1.5, 2.0, 3.0], Datatype::Uint8);
        h.qform_code = 1;
        let a = h.affine().unwrap();
        assert!((a[0][0] - 1.5).abs() < 1e-6);
        assert!((a[1][1] - 2.0).abs() < 1e-6);
        assert!((a[2][2] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn no_transform_codes_means_no_affine() {
        let h = NiftiHeader::canonical([2, 2, 2], [1.0; 3], Datatype::Uint8);
        assert_eq!(h.affine(), None);
    }

    #[test]
    fn rank_below_three_is_rejected() {
        let mut h = NiftiHeader::canonical([4, 4, 2], [1.0; 3], Datatype::Float32);
        h.dim[0] = 2;
        let b = encode_header(&h);
        assert!(matches!(parse_header(&b), Err(NiftiError::CorruptHeader(_))));
    }

    #[test]
    fn four_d_with_degenerate_tail_is_accepted() {
        let mut h = NiftiHeader::canonical([4, 4, 2], [1.0; 3], Datatype::Float32);
        h.dim[0] = 4;
        h.dim[4] = 1;
        let b = encode_header(&h);
        assert_eq!(parse_header(&b).unwrap().shape(), [4, 4, 2]);

        h.dim[4] = 3;
        let b = encode_header(&h);
        assert!(matches!(parse_header(&b), Err(NiftiError::CorruptHeader(_))));
    }
}
