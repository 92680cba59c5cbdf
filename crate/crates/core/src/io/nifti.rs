//! Minimal NIfTI-1 single-file (`n+1`) reader and writer.
//!
//! Only the fields needed for a scalar 3D grid are honoured: `dim`,
//! `datatype`/`bitpix`, `pixdim[1..=3]`, `vox_offset` and
//! `scl_slope`/`scl_inter`. The intensity unit round-trips through the
//! `descrip` field as `unit=<name>`.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::volume::{Geometry, IntensityUnit, Volume3D};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const REGULAR: usize = 38;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i16)]
pub enum DataType {
    UInt8 = 2,
    Int16 = 4,
    Float32 = 16,
}

impl DataType {
    fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(DataType::UInt8),
            4 => Some(DataType::Int16),
            16 => Some(DataType::Float32),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            DataType::UInt8 => 1,
            DataType::Int16 => 2,
            DataType::Float32 => 4,
        }
    }
}

/// Parsed subset of the header.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub datatype: DataType,
    pub vox_offset: usize,
    pub scl_slope: f64,
    pub scl_inter: f64,
    pub unit: IntensityUnit,
}

pub fn parse_header(buf: &[u8]) -> Result<Header> {
    if buf.len() < HEADER_SIZE {
        return Err(Error::format(
            "sizeof_hdr",
            format!("file is {} bytes, shorter than a NIfTI-1 header", buf.len()),
        ));
    }
    let sizeof_hdr = LittleEndian::read_i32(&buf[offsets::SIZEOF_HDR..]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        let msg = if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            "big-endian files are not supported".to_string()
        } else {
            format!("expected 348, found {sizeof_hdr}")
        };
        return Err(Error::format("sizeof_hdr", msg));
    }
    if &buf[offsets::MAGIC..offsets::MAGIC + 4] != MAGIC {
        return Err(Error::format(
            "magic",
            format!(
                "expected \"n+1\", found {:?}",
                &buf[offsets::MAGIC..offsets::MAGIC + 4]
            ),
        ));
    }

    let dim = |i: usize| LittleEndian::read_i16(&buf[offsets::DIM + 2 * i..]);
    let ndim = dim(0);
    if !(3..=7).contains(&ndim) {
        return Err(Error::format(
            "dim[0]",
            format!("expected 3..=7 dimensions, found {ndim}"),
        ));
    }
    let mut dims = [0usize; 3];
    for axis in 0..3 {
        let n = dim(axis + 1);
        if n <= 0 {
            return Err(Error::format(
                format!("dim[{}]", axis + 1),
                format!("must be positive, found {n}"),
            ));
        }
        dims[axis] = n as usize;
    }
    for k in 4..=ndim as usize {
        if dim(k) > 1 {
            return Err(Error::format(
                format!("dim[{k}]"),
                "only single-frame 3D volumes are supported",
            ));
        }
    }

    let code = LittleEndian::read_i16(&buf[offsets::DATATYPE..]);
    let datatype = DataType::from_code(code)
        .ok_or_else(|| Error::format("datatype", format!("unsupported datatype code {code}")))?;
    let bitpix = LittleEndian::read_i16(&buf[offsets::BITPIX..]);
    if bitpix as usize != datatype.bytes() * 8 {
        return Err(Error::format(
            "bitpix",
            format!("{bitpix} does not match datatype {code}"),
        ));
    }

    let mut spacing = [0f64; 3];
    for axis in 0..3 {
        let s = LittleEndian::read_f32(&buf[offsets::PIXDIM + 4 * (axis + 1)..]) as f64;
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::format(
                format!("pixdim[{}]", axis + 1),
                format!("must be > 0, found {s}"),
            ));
        }
        spacing[axis] = s;
    }

    let vox_offset = LittleEndian::read_f32(&buf[offsets::VOX_OFFSET..]);
    if !(vox_offset.is_finite() && vox_offset >= DATA_OFFSET as f32 && vox_offset.fract() == 0.0) {
        return Err(Error::format(
            "vox_offset",
            format!("must be an integer >= {DATA_OFFSET}, found {vox_offset}"),
        ));
    }

    let mut scl_slope = LittleEndian::read_f32(&buf[offsets::SCL_SLOPE..]) as f64;
    if scl_slope == 0.0 || !scl_slope.is_finite() {
        scl_slope = 1.0;
    }
    let mut scl_inter = LittleEndian::read_f32(&buf[offsets::SCL_INTER..]) as f64;
    if !scl_inter.is_finite() {
        scl_inter = 0.0;
    }

    Ok(Header {
        dims,
        spacing,
        datatype,
        vox_offset: vox_offset as usize,
        scl_slope,
        scl_inter,
        unit: unit_from_descrip(&buf[offsets::DESCRIP..offsets::DESCRIP + 80]),
    })
}

fn unit_from_descrip(raw: &[u8]) -> IntensityUnit {
    let end = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
    let text = String::from_utf8_lossy(&raw[..end]);
    text.split_whitespace()
        .find_map(|tok| tok.strip_prefix("unit="))
        .and_then(IntensityUnit::parse)
        .unwrap_or(IntensityUnit::Arbitrary)
}

pub fn decode(buf: &[u8]) -> Result<Volume3D> {
    let h = parse_header(buf)?;
    let n = h.dims[0] * h.dims[1] * h.dims[2];
    let need = h.vox_offset + n * h.datatype.bytes();
    if buf.len() < need {
        return Err(Error::format(
            "dim",
            format!(
                "header declares {n} voxels ({need} bytes) but file has {} bytes",
                buf.len()
            ),
        ));
    }
    let data = &buf[h.vox_offset..need];
    let raw: Vec<f64> = match h.datatype {
        DataType::UInt8 => data.iter().map(|&b| b as f64).collect(),
        DataType::Int16 => data
            .chunks_exact(2)
            .map(|c| LittleEndian::read_i16(c) as f64)
            .collect(),
        DataType::Float32 => data
            .chunks_exact(4)
            .map(|c| LittleEndian::read_f32(c) as f64)
            .collect(),
    };
    let identity = h.scl_slope == 1.0 && h.scl_inter == 0.0;
    let mut values = raw;
    for (index, v) in values.iter_mut().enumerate() {
        if !identity {
            *v = *v * h.scl_slope + h.scl_inter;
        }
        if !v.is_finite() {
            return Err(Error::Data {
                index,
                message: format!("non-finite value {v} after scaling"),
            });
        }
    }
    Volume3D::new(Geometry::new(h.dims, h.spacing)?, values, h.unit)
}

pub fn read(path: &Path) -> Result<Volume3D> {
    decode(&fsutil::read(path)?)
}

pub fn encode(vol: &Volume3D, datatype: DataType) -> Result<Vec<u8>> {
    let [nx, ny, nz] = vol.dims();
    for (axis, &n) in vol.dims().iter().enumerate() {
        if n > i16::MAX as usize {
            return Err(Error::format(
                format!("dim[{}]", axis + 1),
                format!("{n} exceeds NIfTI-1 limit"),
            ));
        }
    }
    let mut buf = vec![0u8; DATA_OFFSET + vol.values().len() * datatype.bytes()];
    LittleEndian::write_i32(&mut buf[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
    buf[offsets::REGULAR] = b'r';
    let dims = [3i16, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        LittleEndian::write_i16(&mut buf[offsets::DIM + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut buf[offsets::DATATYPE..], datatype as i16);
    LittleEndian::write_i16(&mut buf[offsets::BITPIX..], (datatype.bytes() * 8) as i16);
    let sp = vol.spacing();
    let pixdim = [
        1.0f32,
        sp[0] as f32,
        sp[1] as f32,
        sp[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut buf[offsets::PIXDIM + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut buf[offsets::VOX_OFFSET..], DATA_OFFSET as f32);
    LittleEndian::write_f32(&mut buf[offsets::SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut buf[offsets::SCL_INTER..], 0.0);
    // millimetres
    buf[offsets::XYZT_UNITS] = 2;
    let descrip = format!("petquant unit={}", vol.unit().as_str());
    buf[offsets::DESCRIP..offsets::DESCRIP + descrip.len()].copy_from_slice(descrip.as_bytes());
    LittleEndian::write_i16(&mut buf[offsets::QFORM_CODE..], 0);
    buf[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(MAGIC);

    let data = &mut buf[DATA_OFFSET..];
    for (index, &v) in vol.values().iter().enumerate() {
        match datatype {
            DataType::Float32 => {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(Error::Data {
                        index,
                        message: format!("{v} is not representable as a finite f32"),
                    });
                }
                LittleEndian::write_f32(&mut data[4 * index..], f);
            }
            DataType::Int16 => {
                if v.fract() != 0.0 || v < i16::MIN as f64 || v > i16::MAX as f64 {
                    return Err(Error::Data {
                        index,
                        message: format!("{v} is not an int16 value"),
                    });
                }
                LittleEndian::write_i16(&mut data[2 * index..], v as i16);
            }
            DataType::UInt8 => {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(Error::Data {
                        index,
                        message: format!("{v} is not a uint8 value"),
                    });
                }
                data[index] = v as u8;
            }
        }
    }
    Ok(buf)
}

pub fn write(vol: &Volume3D, path: &Path, datatype: DataType) -> Result<()> {
    fsutil::write_atomic(path, &encode(vol, datatype)?)
}
