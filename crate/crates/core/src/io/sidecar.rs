//! JSON sidecar plus raw little-endian `f32` data.
//!
//! `{"dims": [nx, ny, nz], "spacing_mm": [sx, sy, sz], "unit": "SUV", "data": "scan.raw"}`
//!
//! `data` is resolved relative to the sidecar's directory.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::volume::{Geometry, IntensityUnit, Volume3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub unit: String,
    pub data: String,
}

pub fn read(path: &Path) -> Result<Volume3D> {
    let text = fsutil::read(path)?;
    let meta: Sidecar = serde_json::from_slice(&text)
        .map_err(|e| Error::format("sidecar", format!("{}: {e}", path.display())))?;
    let unit = IntensityUnit::parse(&meta.unit)
        .ok_or_else(|| Error::format("unit", format!("unknown unit {:?}", meta.unit)))?;
    for (axis, &n) in meta.dims.iter().enumerate() {
        if n == 0 {
            return Err(Error::format(format!("dims[{axis}]"), "must be positive"));
        }
    }
    for (axis, &s) in meta.spacing_mm.iter().enumerate() {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::format(
                format!("spacing_mm[{axis}]"),
                format!("must be > 0, found {s}"),
            ));
        }
    }
    let geometry = Geometry::new(meta.dims, meta.spacing_mm)?;
    let raw_path = path.parent().unwrap_or(Path::new(".")).join(&meta.data);
    let bytes = fsutil::read(&raw_path)?;
    if bytes.len() != geometry.len() * 4 {
        return Err(Error::format(
            "data",
            format!(
                "{} holds {} bytes, expected {}",
                raw_path.display(),
                bytes.len(),
                geometry.len() * 4
            ),
        ));
    }
    let mut values = Vec::with_capacity(geometry.len());
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = LittleEndian::read_f32(chunk) as f64;
        if !v.is_finite() {
            return Err(Error::Data {
                index,
                message: format!("non-finite value {v}"),
            });
        }
        values.push(v);
    }
    Volume3D::new(geometry, values, unit)
}

pub fn write(vol: &Volume3D, path: &Path) -> Result<()> {
    let mut data = vec![0u8; vol.values().len() * 4];
    for (index, &v) in vol.values().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Data {
                index,
                message: format!("{v} is not representable as a finite f32"),
            });
        }
        LittleEndian::write_f32(&mut data[4 * index..], f);
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".into());
    let raw_name = format!("{stem}.raw");
    let meta = Sidecar {
        dims: vol.dims(),
        spacing_mm: vol.spacing(),
        unit: vol.unit().as_str().to_string(),
        data: raw_name.clone(),
    };
    let raw_path = path.parent().unwrap_or(Path::new(".")).join(&raw_name);
    fsutil::write_atomic(&raw_path, &data)?;
    let json = serde_json::to_vec_pretty(&meta).expect("sidecar serializes");
    fsutil::write_atomic(path, &json)
}
