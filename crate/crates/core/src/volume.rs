//! Scalar 3D volumes and the intensity pre-processing steps applied before
//! segmentation: SUV conversion, z-score normalization and resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// Grid size and physical voxel spacing shared by volumes and masks.
///
/// Voxels are stored x-fastest: `index = x + nx * (y + ny * z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        for (axis, &n) in dims.iter().enumerate() {
            if n == 0 {
                return Err(Error::param(format!("dims[{axis}]"), "must be positive"));
            }
        }
        for (axis, &s) in spacing.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::param(
                    format!("spacing[{axis}]"),
                    format!("must be finite and > 0, got {s}"),
                ));
            }
        }
        Ok(Geometry { dims, spacing })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Voxel volume in cm³ (mm³ / 1000).
    pub fn voxel_volume_cm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2] / 1000.0
    }

    pub fn same_grid(&self, other: &Geometry) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn ensure_same(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.dims != other.dims || self.spacing != other.spacing {
            return Err(Error::Shape(format!(
                "{what}: {:?}@{:?} vs {:?}@{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )));
        }
        Ok(())
    }
}

/// What the voxel values of a volume mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntensityUnit {
    /// Activity concentration in kBq/mL.
    #[serde(rename = "kBq/mL")]
    ActivityConcentration,
    #[serde(rename = "SUV")]
    Suv,
    #[serde(rename = "arbitrary")]
    Arbitrary,
}

impl IntensityUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            IntensityUnit::ActivityConcentration => "kBq/mL",
            IntensityUnit::Suv => "SUV",
            IntensityUnit::Arbitrary => "arbitrary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kBq/mL" | "kBq_per_mL" | "activity" => Some(IntensityUnit::ActivityConcentration),
            "SUV" | "suv" => Some(IntensityUnit::Suv),
            "arbitrary" | "" => Some(IntensityUnit::Arbitrary),
            _ => None,
        }
    }
}

impl std::fmt::Display for IntensityUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Injection parameters needed for body-weight SUV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionInfo {
    pub injected_dose_mbq: f64,
    pub body_weight_kg: f64,
    /// Emission data already decay-corrected to injection time.
    pub decay_corrected: bool,
}

impl AcquisitionInfo {
    pub fn new(injected_dose_mbq: f64, body_weight_kg: f64) -> Self {
        AcquisitionInfo {
            injected_dose_mbq,
            body_weight_kg,
            decay_corrected: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.injected_dose_mbq.is_finite() && self.injected_dose_mbq > 0.0) {
            return Err(Error::param("injected_dose_mbq", "must be > 0"));
        }
        if !(self.body_weight_kg.is_finite() && self.body_weight_kg > 0.0) {
            return Err(Error::param("body_weight_kg", "must be > 0"));
        }
        if !self.decay_corrected {
            return Err(Error::param(
                "decay_corrected",
                "activity must be decay-corrected before SUV conversion",
            ));
        }
        Ok(())
    }

    /// Multiplier mapping kBq/mL to body-weight SUV.
    ///
    /// kBq/mL · (kg · 1000 g/kg) / (MBq · 1000 kBq/MBq) with 1 mL tissue = 1 g.
    pub fn suv_factor(&self) -> f64 {
        self.body_weight_kg / self.injected_dose_mbq
    }
}

/// Immutable scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    geometry: Geometry,
    values: Vec<f64>,
    unit: IntensityUnit,
}

impl Volume3D {
    pub fn new(geometry: Geometry, values: Vec<f64>, unit: IntensityUnit) -> Result<Self> {
        let geometry = Geometry::new(geometry.dims, geometry.spacing)?;
        if values.len() != geometry.len() {
            return Err(Error::Shape(format!(
                "{} values for dims {:?} ({} voxels)",
                values.len(),
                geometry.dims,
                geometry.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                index,
                message: format!("non-finite value {}", values[index]),
            });
        }
        Ok(Volume3D {
            geometry,
            values,
            unit,
        })
    }

    pub fn filled(geometry: Geometry, value: f64, unit: IntensityUnit) -> Result<Self> {
        Self::new(geometry, vec![value; geometry.len()], unit)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn unit(&self) -> IntensityUnit {
        self.unit
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.geometry.index(x, y, z)]
    }

    pub fn voxel_volume_cm3(&self) -> f64 {
        self.geometry.voxel_volume_cm3()
    }

    /// Same geometry, new values. Values are re-validated.
    pub fn with_values(&self, values: Vec<f64>, unit: IntensityUnit) -> Result<Self> {
        Self::new(self.geometry, values, unit)
    }

    /// Reinterprets the voxel values under another unit without touching them.
    pub fn relabel(mut self, unit: IntensityUnit) -> Self {
        self.unit = unit;
        self
    }

    /// Element-wise scaling by a constant, unit preserved.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|v| v * factor).collect(), self.unit)
    }
}

/// Converts an activity-concentration volume to body-weight SUV.
pub fn to_suv(vol: &Volume3D, acq: &AcquisitionInfo) -> Result<Volume3D> {
    if vol.unit != IntensityUnit::ActivityConcentration {
        return Err(Error::Unit {
            expected: IntensityUnit::ActivityConcentration.to_string(),
            found: vol.unit.to_string(),
        });
    }
    acq.validate()?;
    let factor = acq.suv_factor();
    let values = vol.values.iter().map(|v| v * factor).collect();
    vol.with_values(values, IntensityUnit::Suv)
}

/// Whole-volume z-score: subtract the mean, divide by the population standard deviation.
pub fn normalize_zscore(vol: &Volume3D) -> Result<Volume3D> {
    let n = vol.values.len();
    if n < 2 {
        return Err(Error::Degenerate("z-score needs at least 2 voxels".into()));
    }
    let mean = numeric::mean(&vol.values);
    let var = numeric::sum(vol.values.iter().map(|v| (v - mean) * (v - mean))) / n as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) || vol.values.iter().all(|&v| v == vol.values[0]) {
        return Err(Error::Degenerate(
            "constant volume has zero standard deviation".into(),
        ));
    }
    let values = vol.values.iter().map(|v| (v - mean) / sd).collect();
    vol.with_values(values, IntensityUnit::Arbitrary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Trilinear,
}

/// Output dimension along one axis: `ceil(extent / target)`, ignoring
/// sub-1e-9 relative rounding noise in the quotient.
pub(crate) fn resampled_len(n: usize, spacing: f64, target: f64) -> usize {
    let q = n as f64 * spacing / target;
    let rounded = q.round();
    let len = if (q - rounded).abs() <= 1e-9 * q.max(1.0) {
        rounded
    } else {
        q.ceil()
    };
    (len as usize).max(1)
}

/// Continuous source index for output voxel `j` (voxel-centre convention).
#[inline]
pub(crate) fn source_coord(j: usize, target: f64, spacing: f64) -> f64 {
    (j as f64 + 0.5) * target / spacing - 0.5
}

#[inline]
pub(crate) fn nearest_index(u: f64, n: usize) -> usize {
    let r = u.round();
    if r <= 0.0 {
        0
    } else {
        (r as usize).min(n - 1)
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + t * (b - a);
    v.clamp(a.min(b), a.max(b))
}

/// Resamples onto a grid of `target_spacing` covering the same physical extent.
pub fn resample(vol: &Volume3D, target_spacing: [f64; 3], mode: Interpolation) -> Result<Volume3D> {
    for (axis, &t) in target_spacing.iter().enumerate() {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::param(
                format!("target_spacing[{axis}]"),
                format!("must be finite and > 0, got {t}"),
            ));
        }
    }
    let src = vol.geometry;
    let dims = [
        resampled_len(src.dims[0], src.spacing[0], target_spacing[0]),
        resampled_len(src.dims[1], src.spacing[1], target_spacing[1]),
        resampled_len(src.dims[2], src.spacing[2], target_spacing[2]),
    ];
    let out_geom = Geometry::new(dims, target_spacing)?;
    let mut out = Vec::with_capacity(out_geom.len());

    let axis_coords = |axis: usize| -> Vec<f64> {
        (0..dims[axis])
            .map(|j| source_coord(j, target_spacing[axis], src.spacing[axis]))
            .collect()
    };
    let (ux, uy, uz) = (axis_coords(0), axis_coords(1), axis_coords(2));

    match mode {
        Interpolation::Nearest => {
            let ix: Vec<usize> = ux.iter().map(|&u| nearest_index(u, src.dims[0])).collect();
            let iy: Vec<usize> = uy.iter().map(|&u| nearest_index(u, src.dims[1])).collect();
            let iz: Vec<usize> = uz.iter().map(|&u| nearest_index(u, src.dims[2])).collect();
            for &z in &iz {
                for &y in &iy {
                    for &x in &ix {
                        out.push(vol.get(x, y, z));
                    }
                }
            }
        }
        Interpolation::Trilinear => {
            let split = |u: f64, n: usize| -> (usize, usize, f64) {
                let u = u.clamp(0.0, (n - 1) as f64);
                let i0 = u.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, u - i0 as f64)
            };
            let sx: Vec<_> = ux.iter().map(|&u| split(u, src.dims[0])).collect();
            let sy: Vec<_> = uy.iter().map(|&u| split(u, src.dims[1])).collect();
            let sz: Vec<_> = uz.iter().map(|&u| split(u, src.dims[2])).collect();
            for &(z0, z1, fz) in &sz {
                for &(y0, y1, fy) in &sy {
                    for &(x0, x1, fx) in &sx {
                        let c00 = lerp(vol.get(x0, y0, z0), vol.get(x1, y0, z0), fx);
                        let c10 = lerp(vol.get(x0, y1, z0), vol.get(x1, y1, z0), fx);
                        let c01 = lerp(vol.get(x0, y0, z1), vol.get(x1, y0, z1), fx);
                        let c11 = lerp(vol.get(x0, y1, z1), vol.get(x1, y1, z1), fx);
                        let c0 = lerp(c00, c10, fy);
                        let c1 = lerp(c01, c11, fy);
                        out.push(lerp(c0, c1, fz));
                    }
                }
            }
        }
    }
    Volume3D::new(out_geom, out, vol.unit)
}
