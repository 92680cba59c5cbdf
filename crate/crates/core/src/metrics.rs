//! Overlap and boundary-distance metrics between two masks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::{boundary_voxels, BinaryMask};
use crate::numeric;

fn same_geometry(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    a.geometry().ensure_same(b.geometry(), "mask pair")
}

/// `2|A∩B| / (|A|+|B|)`; 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    same_geometry(a, b)?;
    let (na, nb) = (a.voxel_count(), b.voxel_count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * a.intersection_count(b) as f64 / (na + nb) as f64)
}

/// `|A∩B| / |A∪B|`; 1 when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    same_geometry(a, b)?;
    let inter = a.intersection_count(b);
    let union = a.voxel_count() + b.voxel_count() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// True-positive rate `|GT∩Pred| / |GT|`.
pub fn sensitivity(gt: &BinaryMask, pred: &BinaryMask) -> Result<f64> {
    same_geometry(gt, pred)?;
    let n = gt.voxel_count();
    if n == 0 {
        return Err(Error::EmptyRegion(
            "sensitivity needs a non-empty ground truth".into(),
        ));
    }
    Ok(gt.intersection_count(pred) as f64 / n as f64)
}

#[inline]
fn dist2(p: [usize; 3], q: [usize; 3], s: [f64; 3]) -> f64 {
    let dx = (p[0] as f64 - q[0] as f64) * s[0];
    let dy = (p[1] as f64 - q[1] as f64) * s[1];
    let dz = (p[2] as f64 - q[2] as f64) * s[2];
    dx * dx + dy * dy + dz * dz
}

/// Directed squared Hausdorff distance with early break.
///
/// Points of `from` are visited in a fixed pseudo-random order; the inner scan
/// stops as soon as a point closer than the running maximum is found, since
/// that source point can no longer raise the maximum.
fn directed_sq(from: &[[usize; 3]], to: &[[usize; 3]], s: [f64; 3]) -> f64 {
    let mut order: Vec<usize> = (0..from.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    order.shuffle(&mut rng);
    let mut to_sorted = to.to_vec();
    to_sorted.shuffle(&mut rng);
    let mut cmax = 0.0f64;
    for &i in &order {
        let p = from[i];
        let mut cmin = f64::INFINITY;
        for &q in &to_sorted {
            let d = dist2(p, q, s);
            if d < cmin {
                cmin = d;
                if cmin <= cmax {
                    break;
                }
            }
        }
        if cmin > cmax {
            cmax = cmin;
        }
    }
    cmax
}

/// Symmetric Hausdorff distance in millimetres between boundary voxel centres.
pub fn hausdorff_mm(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    same_geometry(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyRegion(
            "Hausdorff distance needs two non-empty masks".into(),
        ));
    }
    let s = a.geometry().spacing;
    let ba = boundary_voxels(a);
    let bb = boundary_voxels(b);
    if ba == bb {
        return Ok(0.0);
    }
    Ok(directed_sq(&ba, &bb, s)
        .max(directed_sq(&bb, &ba, s))
        .sqrt())
}

/// The four overlap metrics, as emitted by `compare`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    #[serde(serialize_with = "numeric::ser_g17")]
    pub dsc: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub iou: f64,
    #[serde(serialize_with = "numeric::ser_g17_opt")]
    pub sensitivity: Option<f64>,
    #[serde(serialize_with = "numeric::ser_g17_opt")]
    pub hd_mm: Option<f64>,
    pub warnings: Vec<String>,
}

/// All metrics for `(gt, pred)`. Degenerate cases are reported as warnings
/// and `null` values rather than errors.
pub fn compare(gt: &BinaryMask, pred: &BinaryMask) -> Result<Comparison> {
    let mut warnings = Vec::new();
    if gt.is_empty() && pred.is_empty() {
        warnings.push("both masks empty: dsc and iou defined as 1".to_string());
    }
    let sens = match sensitivity(gt, pred) {
        Ok(v) => Some(v),
        Err(Error::EmptyRegion(_)) => {
            warnings.push("ground truth empty: sensitivity undefined".to_string());
            None
        }
        Err(e) => return Err(e),
    };
    let hd = match hausdorff_mm(gt, pred) {
        Ok(v) => Some(v),
        Err(Error::EmptyRegion(_)) => {
            warnings.push("empty mask: Hausdorff distance undefined".to_string());
            None
        }
        Err(e) => return Err(e),
    };
    Ok(Comparison {
        dsc: dice(gt, pred)?,
        iou: iou(gt, pred)?,
        sensitivity: sens,
        hd_mm: hd,
        warnings,
    })
}
