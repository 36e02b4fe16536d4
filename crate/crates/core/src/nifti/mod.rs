//! NIfTI-1 single-file volume I/O.

mod header;
mod io;

pub use header::{
    encode_header, parse_header, ByteOrder, Datatype, NiftiError, NiftiHeader,
    CANONICAL_VOX_OFFSET, HEADER_SIZE, MAGIC_PAIR, MAGIC_SINGLE,
};
pub use io::{
    read_image_bytes, read_image_file, read_label_bytes, read_label_file, write_image_bytes,
    write_image_file, write_label_bytes, write_label_file, RawVoxelBlock, LABEL_SNAP_TOLERANCE,
};
