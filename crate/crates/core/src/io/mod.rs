//! Volume file formats.
//!
//! Two formats are supported, chosen by file extension:
//!
//! * `.nii`: single-file NIfTI-1 (348-byte header, little-endian data).
//! * `.json`: a sidecar describing geometry and unit, pointing at a raw
//!   little-endian `f32` file.

pub mod nifti;
pub mod sidecar;

use std::path::Path;

use crate::error::Result;
use crate::mask::BinaryMask;
use crate::volume::Volume3D;

fn is_sidecar(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    if is_sidecar(path) {
        sidecar::read(path)
    } else {
        nifti::read(path)
    }
}

/// Writes `vol` as 32-bit float data.
pub fn write_volume(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_sidecar(path) {
        sidecar::write(vol, path)
    } else {
        nifti::write(vol, path, nifti::DataType::Float32)
    }
}

/// Non-zero voxels become foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    read_volume(path).map(|v| BinaryMask::from_volume(&v))
}

/// Masks are stored as 0/1 8-bit volumes (float for the sidecar format).
pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let vol = mask.to_volume();
    if is_sidecar(path) {
        sidecar::write(&vol, path)
    } else {
        nifti::write(&vol, path, nifti::DataType::UInt8)
    }
}
