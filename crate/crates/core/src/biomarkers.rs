//! Lesion biomarkers from an SUV volume and a mask, and their change between scans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::numeric;
use crate::volume::{IntensityUnit, Volume3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerSet {
    #[serde(serialize_with = "numeric::ser_g17")]
    pub suv_max: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub suv_mean: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub mtv_cm3: f64,
    /// SUV·cm³.
    #[serde(serialize_with = "numeric::ser_g17")]
    pub tlg: f64,
    pub voxel_count: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl BiomarkerSet {
    /// Assembles a set from its primitives; TLG is always `suv_mean * mtv_cm3`.
    pub fn from_parts(
        suv_max: f64,
        suv_mean: f64,
        voxel_count: usize,
        voxel_volume_cm3: f64,
    ) -> Self {
        let mtv_cm3 = voxel_count as f64 * voxel_volume_cm3;
        BiomarkerSet {
            suv_max,
            suv_mean,
            mtv_cm3,
            tlg: suv_mean * mtv_cm3,
            voxel_count,
            warnings: Vec::new(),
        }
    }

    fn empty() -> Self {
        BiomarkerSet {
            suv_max: 0.0,
            suv_mean: 0.0,
            mtv_cm3: 0.0,
            tlg: 0.0,
            voxel_count: 0,
            warnings: vec!["empty mask: all biomarkers set to zero".into()],
        }
    }
}

pub fn extract(vol: &Volume3D, mask: &BinaryMask) -> Result<BiomarkerSet> {
    vol.geometry()
        .ensure_same(mask.geometry(), "volume vs mask")?;
    if vol.unit() != IntensityUnit::Suv {
        return Err(Error::Unit {
            expected: IntensityUnit::Suv.to_string(),
            found: vol.unit().to_string(),
        });
    }
    let values = vol.values();
    let masked: Vec<f64> = mask.indices().map(|i| values[i]).collect();
    if masked.is_empty() {
        return Ok(BiomarkerSet::empty());
    }
    let suv_max = masked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let suv_mean = numeric::mean(&masked);
    Ok(BiomarkerSet::from_parts(
        suv_max,
        suv_mean,
        masked.len(),
        vol.voxel_volume_cm3(),
    ))
}

/// Change from baseline to follow-up.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaSet {
    #[serde(serialize_with = "numeric::ser_g17")]
    pub d_suv_max: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub d_mtv_cm3: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub d_tlg: f64,
    /// `None` when the baseline SUVmax is zero.
    #[serde(serialize_with = "numeric::ser_g17_opt")]
    pub pct_d_suv_max: Option<f64>,
    /// Follow-up / baseline MTV; `None` when the baseline MTV is zero.
    #[serde(serialize_with = "numeric::ser_g17_opt")]
    pub mtv_ratio: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn delta(baseline: &BiomarkerSet, followup: &BiomarkerSet) -> DeltaSet {
    let mut warnings = Vec::new();
    let pct_d_suv_max = if baseline.suv_max == 0.0 {
        warnings.push("baseline SUVmax is zero: percentage change undefined".into());
        None
    } else {
        Some(100.0 * (followup.suv_max - baseline.suv_max) / baseline.suv_max)
    };
    let mtv_ratio = if baseline.mtv_cm3 == 0.0 {
        warnings.push("baseline MTV is zero: MTV ratio undefined".into());
        None
    } else {
        Some(followup.mtv_cm3 / baseline.mtv_cm3)
    };
    DeltaSet {
        d_suv_max: followup.suv_max - baseline.suv_max,
        d_mtv_cm3: followup.mtv_cm3 - baseline.mtv_cm3,
        d_tlg: followup.tlg - baseline.tlg,
        pct_d_suv_max,
        mtv_ratio,
        warnings,
    }
}

/// One scan's biomarkers as written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub patient_id: String,
    pub timepoint: Timepoint,
    #[serde(flatten)]
    pub biomarkers: BiomarkerSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timepoint {
    Baseline,
    Followup,
}
