//! Synthetic PET phantoms with analytically known biomarkers.
//!
//! Noise is additive Gaussian in SUV units. This is not a physical PET noise
//! model; it only exercises the noise-robustness of downstream code.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::biomarkers::BiomarkerSet;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::io;
use crate::manifest::{Manifest, ManifestRow};
use crate::mask::{BinaryMask, Quadrant};
use crate::numeric::{self, G17};
use crate::parallel;
use crate::volume::{AcquisitionInfo, Geometry, IntensityUnit, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Uniform,
    /// Peak at the centre, falling to half contrast at `radius_mm`.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionSpec {
    /// Voxel coordinates, may be fractional.
    pub center: [f64; 3],
    pub radius_mm: f64,
    pub peak_suv: f64,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    #[serde(default = "default_background")]
    pub background_suv: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_profile() -> Profile {
    Profile::Uniform
}

fn default_background() -> f64 {
    1.0
}

fn spec_err(msg: impl Into<String>) -> Error {
    Error::Spec(msg.into())
}

fn finite_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(spec_err(format!("{name} must be finite and >= 0, got {v}")))
    }
}

impl LesionSpec {
    pub fn validate(&self, geometry: &Geometry) -> Result<()> {
        if !(self.radius_mm.is_finite() && self.radius_mm > 0.0) {
            return Err(spec_err(format!(
                "radius_mm must be > 0, got {}",
                self.radius_mm
            )));
        }
        finite_nonneg("background_suv", self.background_suv)?;
        finite_nonneg("noise_sd", self.noise_sd)?;
        if !(self.peak_suv.is_finite() && self.peak_suv > self.background_suv) {
            return Err(spec_err(format!(
                "peak_suv ({}) must exceed background_suv ({})",
                self.peak_suv, self.background_suv
            )));
        }
        for a in 0..3 {
            let r = self.radius_mm / geometry.spacing[a];
            let c = self.center[a];
            if !c.is_finite() || c - r < 0.0 || c + r > (geometry.dims[a] - 1) as f64 {
                return Err(spec_err(format!(
                    "lesion out of bounds on axis {a}: centre {c}, radius {r} voxels, size {}",
                    geometry.dims[a]
                )));
            }
        }
        Ok(())
    }

    fn sigma_mm(&self) -> f64 {
        self.radius_mm / (2.0 * std::f64::consts::LN_2).sqrt()
    }

    fn dist2_mm(&self, geometry: &Geometry, p: [usize; 3]) -> f64 {
        (0..3)
            .map(|a| {
                let d = (p[a] as f64 - self.center[a]) * geometry.spacing[a];
                d * d
            })
            .sum()
    }

    /// Noiseless SUV at a voxel.
    fn value_at(&self, geometry: &Geometry, p: [usize; 3]) -> f64 {
        let d2 = self.dist2_mm(geometry, p);
        match self.profile {
            Profile::Uniform => {
                if d2 <= self.radius_mm * self.radius_mm {
                    self.peak_suv
                } else {
                    self.background_suv
                }
            }
            Profile::Gaussian => {
                let s = self.sigma_mm();
                self.background_suv
                    + (self.peak_suv - self.background_suv) * (-d2 / (2.0 * s * s)).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: Volume3D,
    pub mask: BinaryMask,
    /// Computed from the noiseless construction.
    pub truth: BiomarkerSet,
}

/// Renders one lesion. The mask holds the voxels whose centres lie within
/// `radius_mm`, which for both profiles is where the noiseless value reaches
/// half the lesion contrast.
pub fn generate(spec: &LesionSpec, dims: [usize; 3], spacing: [f64; 3]) -> Result<Phantom> {
    let geometry = Geometry::new(dims, spacing)?;
    spec.validate(&geometry)?;
    let r2 = spec.radius_mm * spec.radius_mm;
    let n = geometry.len();
    let mut values = Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n);
    for i in 0..n {
        let p = geometry.coords(i);
        values.push(spec.value_at(&geometry, p));
        bits.push(spec.dist2_mm(&geometry, p) <= r2);
    }
    let mask = BinaryMask::new(geometry, bits)?;
    let inside: Vec<f64> = mask.indices().map(|i| values[i]).collect();
    let suv_max = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let truth = BiomarkerSet::from_parts(
        suv_max,
        numeric::mean(&inside),
        inside.len(),
        geometry.voxel_volume_cm3(),
    );
    if spec.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sd).map_err(|e| spec_err(e.to_string()))?;
        for v in &mut values {
            *v += normal.sample(&mut rng);
        }
    }
    let volume = Volume3D::new(geometry, values, IntensityUnit::Suv)?;
    Ok(Phantom {
        volume,
        mask,
        truth,
    })
}

/// Indices of the `count` voxels nearest to `center`, ties broken by index.
pub fn ball_indices(geometry: &Geometry, center: [usize; 3], count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > geometry.len() {
        return Err(spec_err(format!(
            "ball size {count} outside 1..={}",
            geometry.len()
        )));
    }
    let r_mm = ball_radius_mm(geometry, count)
        + 2.0 * geometry.spacing.iter().copied().fold(0.0, f64::max);
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let r = (r_mm / geometry.spacing[a]).ceil() as usize;
        lo[a] = center[a].saturating_sub(r);
        hi[a] = (center[a] + r).min(geometry.dims[a] - 1);
    }
    let mut cand: Vec<(f64, usize)> = Vec::new();
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let d2: f64 = [x, y, z]
                    .iter()
                    .zip(center)
                    .zip(geometry.spacing)
                    .map(|((&p, c), s)| {
                        let d = (p as f64 - c as f64) * s;
                        d * d
                    })
                    .sum();
                cand.push((d2, geometry.index(x, y, z)));
            }
        }
    }
    if cand.len() < count {
        return Err(spec_err(format!(
            "ball of {count} voxels does not fit around {center:?}"
        )));
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = cand[..count].iter().map(|c| c.1).collect();
    out.sort_unstable();
    Ok(out)
}

/// Radius of a physical sphere holding `count` voxels.
fn ball_radius_mm(geometry: &Geometry, count: usize) -> f64 {
    let vox_mm3 = geometry.spacing.iter().product::<f64>();
    (3.0 * count as f64 * vox_mm3 / (4.0 * std::f64::consts::PI)).cbrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseModel {
    /// Mean follow-up / baseline MTV ratio of the non-outlier patients.
    pub ratio_mean: f64,
    #[serde(default)]
    pub ratio_sd: f64,
    #[serde(default)]
    pub outlier_fraction: f64,
    #[serde(default = "default_outlier_ratio_min")]
    pub outlier_ratio_min: f64,
}

fn default_outlier_ratio_min() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub n: usize,
    pub response: ResponseModel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dims")]
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing: [f64; 3],
    #[serde(default = "default_mtv_mean")]
    pub baseline_mtv_mean: f64,
    #[serde(default = "default_mtv_sd")]
    pub baseline_mtv_sd: f64,
    #[serde(default = "default_mtv_range")]
    pub baseline_mtv_range: [f64; 2],
    #[serde(default = "default_peak_mean")]
    pub peak_suv_mean: f64,
    #[serde(default = "default_peak_sd")]
    pub peak_suv_sd: f64,
    /// Follow-up peak = baseline peak × this factor.
    #[serde(default = "default_followup_factor")]
    pub followup_peak_factor: f64,
    #[serde(default = "default_background")]
    pub background_suv: f64,
    #[serde(default)]
    pub noise_sd: f64,
    /// Injected dose per kg body weight.
    #[serde(default = "default_dose_per_kg")]
    pub dose_mbq_per_kg: f64,
    #[serde(default = "default_weight_range")]
    pub weight_range_kg: [f64; 2],
}

fn default_dims() -> [usize; 3] {
    [144, 144, 66]
}
fn default_spacing() -> [f64; 3] {
    [4.0; 3]
}
fn default_mtv_mean() -> f64 {
    27.21
}
fn default_mtv_sd() -> f64 {
    15.0
}
fn default_mtv_range() -> [f64; 2] {
    [5.0, 120.0]
}
fn default_peak_mean() -> f64 {
    14.36
}
fn default_peak_sd() -> f64 {
    2.0
}
fn default_followup_factor() -> f64 {
    9.14 / 14.36
}
fn default_dose_per_kg() -> f64 {
    3.0
}
fn default_weight_range() -> [f64; 2] {
    [50.0, 90.0]
}

impl CohortSpec {
    pub fn new(n: usize, response: ResponseModel, seed: u64) -> Self {
        CohortSpec {
            n,
            response,
            seed,
            dims: default_dims(),
            spacing: default_spacing(),
            baseline_mtv_mean: default_mtv_mean(),
            baseline_mtv_sd: default_mtv_sd(),
            baseline_mtv_range: default_mtv_range(),
            peak_suv_mean: default_peak_mean(),
            peak_suv_sd: default_peak_sd(),
            followup_peak_factor: default_followup_factor(),
            background_suv: default_background(),
            noise_sd: 0.0,
            dose_mbq_per_kg: default_dose_per_kg(),
            weight_range_kg: default_weight_range(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(spec_err("n must be >= 1"));
        }
        let r = &self.response;
        if !(r.ratio_mean.is_finite() && r.ratio_mean > 0.0) {
            return Err(spec_err("response.ratio_mean must be > 0"));
        }
        finite_nonneg("response.ratio_sd", r.ratio_sd)?;
        if !(0.0..=1.0).contains(&r.outlier_fraction) {
            return Err(spec_err("response.outlier_fraction must be in [0, 1]"));
        }
        if !(r.outlier_ratio_min.is_finite() && r.outlier_ratio_min > 0.0) {
            return Err(spec_err("response.outlier_ratio_min must be > 0"));
        }
        let [lo, hi] = self.baseline_mtv_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(spec_err("baseline_mtv_range must satisfy 0 < min <= max"));
        }
        if !(self.baseline_mtv_mean > 0.0 && self.baseline_mtv_mean.is_finite()) {
            return Err(spec_err("baseline_mtv_mean must be > 0"));
        }
        finite_nonneg("baseline_mtv_sd", self.baseline_mtv_sd)?;
        finite_nonneg("peak_suv_sd", self.peak_suv_sd)?;
        finite_nonneg("background_suv", self.background_suv)?;
        finite_nonneg("noise_sd", self.noise_sd)?;
        if !(self.followup_peak_factor > 0.0 && self.followup_peak_factor.is_finite()) {
            return Err(spec_err("followup_peak_factor must be > 0"));
        }
        if !(self.peak_suv_mean * self.followup_peak_factor.min(1.0) > self.background_suv) {
            return Err(spec_err("lesion peaks must exceed the background"));
        }
        if !(self.dose_mbq_per_kg > 0.0 && self.dose_mbq_per_kg.is_finite()) {
            return Err(spec_err("dose_mbq_per_kg must be > 0"));
        }
        let [wl, wh] = self.weight_range_kg;
        if !(wl > 0.0 && wl <= wh && wh.is_finite()) {
            return Err(spec_err("weight_range_kg must satisfy 0 < min <= max"));
        }
        Geometry::new(self.dims, self.spacing)?;
        if self.dims[0] < 2 || self.dims[1] < 2 {
            return Err(spec_err("dims must be at least 2 in x and y"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub outlier: bool,
    pub quadrant: Quadrant,
    pub center: [usize; 3],
    #[serde(serialize_with = "numeric::ser_g17")]
    pub mtv_ratio: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub dose_mbq: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub weight_kg: f64,
    pub baseline: BiomarkerSet,
    pub followup: BiomarkerSet,
}

/// A planned patient: everything needed to render both scans.
#[derive(Debug, Clone)]
struct Plan {
    truth: PatientTruth,
    bl_peak: f64,
    fu_peak: f64,
    bl_count: usize,
    fu_count: usize,
    seed: u64,
}

fn patient_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn lognormal(mean: f64, sd: f64) -> Result<Option<LogNormal<f64>>> {
    if sd == 0.0 {
        return Ok(None);
    }
    let s2 = (1.0 + (sd * sd) / (mean * mean)).ln();
    LogNormal::new(mean.ln() - s2 / 2.0, s2.sqrt())
        .map(Some)
        .map_err(|e| spec_err(e.to_string()))
}

fn draw(d: &Option<LogNormal<f64>>, mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    d.as_ref().map_or(mean, |d| d.sample(rng))
}

/// Largest half-width (voxels) a lesion of `count` voxels needs around its centre,
/// plus room for the segmentation's background shell.
fn lesion_margin(geometry: &Geometry, count: usize, axis: usize) -> usize {
    const SHELL: usize = 4;
    (ball_radius_mm(geometry, count) / geometry.spacing[axis]).ceil() as usize + 1 + SHELL
}

fn place_center(
    geometry: &Geometry,
    quadrant: Quadrant,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<[usize; 3]> {
    let [nx, ny, nz] = geometry.dims;
    let (hx, hy) = (nx / 2, ny / 2);
    let (x_range, y_range) = match quadrant {
        Quadrant::Q1 => ((0, hx), (0, hy)),
        Quadrant::Q2 => ((hx, nx), (0, hy)),
        Quadrant::Q3 => ((hx, nx), (hy, ny)),
        Quadrant::Q4 => ((0, hx), (hy, ny)),
    };
    let mut c = [0usize; 3];
    for (a, (lo, hi)) in [x_range, y_range, (0, nz)].into_iter().enumerate() {
        let m = lesion_margin(geometry, count, a);
        if lo + m + m >= hi {
            return Err(spec_err(format!(
                "a lesion of {count} voxels does not fit inside a quadrant of {:?}",
                geometry.dims
            )));
        }
        c[a] = rng.random_range(lo + m..hi - m);
    }
    Ok(c)
}

fn plan_cohort(spec: &CohortSpec) -> Result<Vec<Plan>> {
    spec.validate()?;
    let geometry = Geometry::new(spec.dims, spec.spacing)?;
    let vox_cm3 = geometry.voxel_volume_cm3();
    let n = spec.n;
    let r = &spec.response;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut patient_rng(spec.seed, u64::MAX));
    let n_out = (n as f64 * r.outlier_fraction).round() as usize;
    let mut is_outlier = vec![false; n];
    for &i in &order[..n_out] {
        is_outlier[i] = true;
    }

    let mtv_dist = lognormal(spec.baseline_mtv_mean, spec.baseline_mtv_sd)?;
    let ratio_dist = lognormal(r.ratio_mean, r.ratio_sd)?;
    let peak_dist = if spec.peak_suv_sd > 0.0 {
        Some(
            Normal::new(spec.peak_suv_mean, spec.peak_suv_sd)
                .map_err(|e| spec_err(e.to_string()))?,
        )
    } else {
        None
    };
    let peak_floor = spec.background_suv / spec.followup_peak_factor.min(1.0) + 1.0;
    let width = n.to_string().len().max(3);

    struct Draw {
        mtv: f64,
        ratio: f64,
        peak: f64,
        weight: f64,
        quadrant: Quadrant,
        rng: ChaCha8Rng,
    }
    let mut draws: Vec<Draw> = (0..n)
        .map(|i| {
            let mut rng = patient_rng(spec.seed, i as u64);
            let [lo, hi] = spec.baseline_mtv_range;
            let mtv = draw(&mtv_dist, spec.baseline_mtv_mean, &mut rng).clamp(lo, hi);
            let ratio = if is_outlier[i] {
                r.outlier_ratio_min * (1.0 + rng.random_range(0.0..0.5))
            } else {
                draw(&ratio_dist, r.ratio_mean, &mut rng)
            };
            let peak = peak_dist
                .map_or(spec.peak_suv_mean, |d| d.sample(&mut rng))
                .max(peak_floor);
            let [wl, wh] = spec.weight_range_kg;
            let weight = if wl < wh {
                rng.random_range(wl..wh)
            } else {
                wl
            };
            let quadrant = [Quadrant::Q1, Quadrant::Q2, Quadrant::Q3, Quadrant::Q4]
                [rng.random_range(0..4usize)];
            Draw {
                mtv,
                ratio,
                peak,
                weight,
                quadrant,
                rng,
            }
        })
        .collect();

    // Rescale the regular ratios to hit the requested mean exactly.
    let regular: Vec<f64> = draws
        .iter()
        .zip(&is_outlier)
        .filter(|(_, o)| !**o)
        .map(|(d, _)| d.ratio)
        .collect();
    if !regular.is_empty() {
        let k = r.ratio_mean / numeric::mean(&regular);
        for (d, o) in draws.iter_mut().zip(&is_outlier) {
            if !*o {
                d.ratio *= k;
            }
        }
    }

    draws
        .into_iter()
        .enumerate()
        .map(|(i, mut d)| {
            let outlier = is_outlier[i];
            let mut bl_count = ((d.mtv / vox_cm3).round() as usize).max(1);
            let limit = max_lesion_voxels(&geometry);
            if outlier {
                bl_count = bl_count.min(((limit as f64 / d.ratio).floor() as usize).max(1));
            }
            let fu_count = if outlier {
                (d.ratio * bl_count as f64).ceil() as usize
            } else {
                ((d.ratio * bl_count as f64).round() as usize).max(1)
            };
            let fu_count = fu_count.min(limit);
            let center = place_center(&geometry, d.quadrant, bl_count.max(fu_count), &mut d.rng)?;
            let fu_peak = d.peak * spec.followup_peak_factor;
            let dose = spec.dose_mbq_per_kg * d.weight;
            let truth = PatientTruth {
                patient_id: format!("P{:0width$}", i + 1),
                outlier,
                quadrant: d.quadrant,
                center,
                mtv_ratio: fu_count as f64 / bl_count as f64,
                dose_mbq: dose,
                weight_kg: d.weight,
                baseline: BiomarkerSet::from_parts(d.peak, d.peak, bl_count, vox_cm3),
                followup: BiomarkerSet::from_parts(fu_peak, fu_peak, fu_count, vox_cm3),
            };
            Ok(Plan {
                truth,
                bl_peak: d.peak,
                fu_peak,
                bl_count,
                fu_count,
                seed: d.rng.random(),
            })
        })
        .collect()
}

/// Largest ball that fits inside one quadrant with its margins.
fn max_lesion_voxels(geometry: &Geometry) -> usize {
    let [nx, ny, nz] = geometry.dims;
    let half_extent = [nx / 2, ny / 2, nz];
    let r_mm = (0..3)
        .map(|a| ((half_extent[a] as f64 - 1.0) / 2.0 - 6.0).max(0.0) * geometry.spacing[a])
        .fold(f64::INFINITY, f64::min);
    let vox_mm3 = geometry.spacing.iter().product::<f64>();
    ((4.0 / 3.0 * std::f64::consts::PI * r_mm.powi(3) / vox_mm3) * 0.9)
        .floor()
        .max(1.0) as usize
}

fn render(
    geometry: Geometry,
    center: [usize; 3],
    count: usize,
    peak: f64,
    spec: &CohortSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(Volume3D, BinaryMask)> {
    let mask = BinaryMask::from_indices(geometry, ball_indices(&geometry, center, count)?)?;
    let mut values: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { peak } else { spec.background_suv })
        .collect();
    if spec.noise_sd > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sd).map_err(|e| spec_err(e.to_string()))?;
        for v in &mut values {
            *v += normal.sample(rng);
        }
    }
    Ok((Volume3D::new(geometry, values, IntensityUnit::Suv)?, mask))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortTruth {
    pub n: usize,
    pub seed: u64,
    pub n_outliers: usize,
    /// Mean of the realised MTV ratios.
    #[serde(serialize_with = "numeric::ser_g17")]
    pub mean_mtv_ratio: f64,
    pub patients: Vec<PatientTruth>,
}

/// In-memory cohort for library use: (truth, baseline SUV, baseline mask, follow-up SUV, follow-up mask).
pub struct PatientScans {
    pub truth: PatientTruth,
    pub baseline: (Volume3D, BinaryMask),
    pub followup: (Volume3D, BinaryMask),
}

fn render_patient(plan: &Plan, spec: &CohortSpec) -> Result<PatientScans> {
    let geometry = Geometry::new(spec.dims, spec.spacing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let c = plan.truth.center;
    let baseline = render(geometry, c, plan.bl_count, plan.bl_peak, spec, &mut rng)?;
    let followup = render(geometry, c, plan.fu_count, plan.fu_peak, spec, &mut rng)?;
    Ok(PatientScans {
        truth: plan.truth.clone(),
        baseline,
        followup,
    })
}

/// Ground truth without rendering any voxels.
pub fn plan_truth(spec: &CohortSpec) -> Result<CohortTruth> {
    let patients: Vec<PatientTruth> = plan_cohort(spec)?.into_iter().map(|p| p.truth).collect();
    Ok(summarize(spec, patients))
}

fn summarize(spec: &CohortSpec, patients: Vec<PatientTruth>) -> CohortTruth {
    let ratios: Vec<f64> = patients.iter().map(|p| p.mtv_ratio).collect();
    CohortTruth {
        n: spec.n,
        seed: spec.seed,
        n_outliers: patients.iter().filter(|p| p.outlier).count(),
        mean_mtv_ratio: numeric::mean(&ratios),
        patients,
    }
}

/// Renders patient `index` (0-based) in memory.
pub fn render_one(spec: &CohortSpec, index: usize) -> Result<PatientScans> {
    let plans = plan_cohort(spec)?;
    let plan = plans
        .get(index)
        .ok_or_else(|| spec_err(format!("patient index {index} out of range")))?;
    render_patient(plan, spec)
}

/// Writes activity-concentration volumes, ground-truth masks, `manifest.csv`
/// and `ground_truth.json` into `out_dir`.
pub fn write_cohort(spec: &CohortSpec, out_dir: &Path, threads: usize) -> Result<CohortTruth> {
    let plans = plan_cohort(spec)?;
    fsutil::create_dir_all(out_dir)?;
    let rows = parallel::try_map(threads, &plans, |plan| {
        let scans = render_patient(plan, spec)?;
        let id = &plan.truth.patient_id;
        let acq = AcquisitionInfo::new(plan.truth.dose_mbq, plan.truth.weight_kg);
        let paths: Vec<PathBuf> = ["bl", "bl_mask", "fu", "fu_mask"]
            .iter()
            .map(|s| out_dir.join(format!("{id}_{s}.nii")))
            .collect();
        for ((vol, mask), (vp, mp)) in [&scans.baseline, &scans.followup]
            .into_iter()
            .zip([(&paths[0], &paths[1]), (&paths[2], &paths[3])])
        {
            let activity = vol
                .scaled(1.0 / acq.suv_factor())?
                .relabel(IntensityUnit::ActivityConcentration);
            io::write_volume(&activity, vp)?;
            io::write_mask(mask, mp)?;
        }
        Ok(ManifestRow {
            patient_id: id.clone(),
            bl_volume: paths[0].clone(),
            bl_mask: paths[1].clone(),
            fu_volume: paths[2].clone(),
            fu_mask: paths[3].clone(),
            dose_mbq: plan.truth.dose_mbq,
            weight_kg: plan.truth.weight_kg,
        })
    })?;
    Manifest { rows }.write(&out_dir.join("manifest.csv"))?;
    let truth = summarize(spec, plans.into_iter().map(|p| p.truth).collect());
    let json = serde_json::to_vec_pretty(&truth).expect("truth serializes");
    fsutil::write_atomic(&out_dir.join("ground_truth.json"), &json)?;
    Ok(truth)
}

/// Single-lesion phantom as read from a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleSpec {
    pub lesion: LesionSpec,
    #[serde(default = "default_single_dims")]
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing: [f64; 3],
    /// When both are given the volume is written as activity concentration.
    #[serde(default)]
    pub dose_mbq: Option<f64>,
    #[serde(default)]
    pub weight_kg: Option<f64>,
}

fn default_single_dims() -> [usize; 3] {
    [32, 32, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PhantomSpec {
    Single(SingleSpec),
    Cohort(CohortSpec),
}

#[derive(Serialize)]
struct SingleTruth<'a> {
    volume: &'a str,
    mask: &'a str,
    unit: IntensityUnit,
    dose_mbq: Option<G17>,
    weight_kg: Option<G17>,
    #[serde(flatten)]
    biomarkers: &'a BiomarkerSet,
}

/// Writes `volume.nii`, `mask.nii` and `ground_truth.json`.
pub fn write_single(spec: &SingleSpec, out_dir: &Path) -> Result<BiomarkerSet> {
    let ph = generate(&spec.lesion, spec.dims, spec.spacing)?;
    fsutil::create_dir_all(out_dir)?;
    let volume = match (spec.dose_mbq, spec.weight_kg) {
        (Some(d), Some(w)) => {
            let acq = AcquisitionInfo::new(d, w);
            if !(d > 0.0 && w > 0.0 && d.is_finite() && w.is_finite()) {
                return Err(spec_err("dose_mbq and weight_kg must be > 0"));
            }
            ph.volume
                .scaled(1.0 / acq.suv_factor())?
                .relabel(IntensityUnit::ActivityConcentration)
        }
        (None, None) => ph.volume.clone(),
        _ => return Err(spec_err("dose_mbq and weight_kg must be given together")),
    };
    io::write_volume(&volume, out_dir.join("volume.nii"))?;
    io::write_mask(&ph.mask, out_dir.join("mask.nii"))?;
    let truth = SingleTruth {
        volume: "volume.nii",
        mask: "mask.nii",
        unit: volume.unit(),
        dose_mbq: spec.dose_mbq.map(G17),
        weight_kg: spec.weight_kg.map(G17),
        biomarkers: &ph.truth,
    };
    let json = serde_json::to_vec_pretty(&truth).expect("truth serializes");
    fsutil::write_atomic(&out_dir.join("ground_truth.json"), &json)?;
    Ok(ph.truth)
}

pub fn write_phantom(spec: &PhantomSpec, out_dir: &Path, threads: usize) -> Result<()> {
    match spec {
        PhantomSpec::Single(s) => write_single(s, out_dir).map(|_| ()),
        PhantomSpec::Cohort(c) => write_cohort(c, out_dir, threads).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biomarkers::extract;

    fn sphere(profile: Profile, noise_sd: f64) -> LesionSpec {
        LesionSpec {
            center: [10.0, 10.0, 10.0],
            radius_mm: 8.0,
            peak_suv: 10.0,
            profile,
            background_suv: 1.0,
            noise_sd,
            seed: 42,
        }
    }

    #[test]
    fn uniform_sphere_oracle() {
        let ph = generate(&sphere(Profile::Uniform, 0.0), [21, 21, 21], [4.0; 3]).unwrap();
        let got = extract(&ph.volume, &ph.mask).unwrap();
        assert_eq!(got.suv_max, 10.0);
        assert_eq!(got, ph.truth);
        // Brute force: voxel centres within 2 voxels (8 mm / 4 mm) of the centre.
        let mut count = 0;
        for z in 0..21i64 {
            for y in 0..21i64 {
                for x in 0..21i64 {
                    if (x - 10).pow(2) + (y - 10).pow(2) + (z - 10).pow(2) <= 4 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 33);
        assert_eq!(ph.mask.voxel_count(), count);
        assert_eq!(ph.truth.mtv_cm3, count as f64 * 0.064);
    }

    #[test]
    fn gaussian_half_contrast_at_radius() {
        let spec = sphere(Profile::Gaussian, 0.0);
        let g = Geometry::new([21, 21, 21], [4.0; 3]).unwrap();
        let at_r = spec.value_at(&g, [12, 10, 10]);
        assert!((at_r - 5.5).abs() < 1e-12);
        let ph = generate(&spec, [21, 21, 21], [4.0; 3]).unwrap();
        assert_eq!(extract(&ph.volume, &ph.mask).unwrap(), ph.truth);
        assert_eq!(ph.truth.suv_max, 10.0);
    }

    #[test]
    fn noise_is_seeded_and_bounded() {
        let a = generate(&sphere(Profile::Uniform, 0.5), [21, 21, 21], [4.0; 3]).unwrap();
        let b = generate(&sphere(Profile::Uniform, 0.5), [21, 21, 21], [4.0; 3]).unwrap();
        assert_eq!(a.volume, b.volume);
        let got = extract(&a.volume, &a.mask).unwrap();
        let tol = 3.0 * 0.5 / (a.mask.voxel_count() as f64).sqrt();
        assert!((got.suv_mean - a.truth.suv_mean).abs() < tol);
        let mut other = sphere(Profile::Uniform, 0.5);
        other.seed = 43;
        assert_ne!(
            generate(&other, [21, 21, 21], [4.0; 3]).unwrap().volume,
            a.volume
        );
    }

    #[test]
    fn spec_errors() {
        let mut s = sphere(Profile::Uniform, 0.0);
        s.center = [1.0, 10.0, 10.0];
        assert!(matches!(
            generate(&s, [21, 21, 21], [4.0; 3]),
            Err(Error::Spec(_))
        ));
        let mut s = sphere(Profile::Uniform, 0.0);
        s.peak_suv = 0.5;
        assert!(matches!(
            generate(&s, [21, 21, 21], [4.0; 3]),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn ball_is_nearest_set() {
        let g = Geometry::new([20, 20, 20], [4.0, 4.0, 2.0]).unwrap();
        let idx = ball_indices(&g, [10, 10, 10], 57).unwrap();
        assert_eq!(idx.len(), 57);
        let d2 = |i: usize| {
            let p = g.coords(i);
            (0..3)
                .map(|a| ((p[a] as f64 - 10.0) * g.spacing[a]).powi(2))
                .sum::<f64>()
        };
        let inner = idx.iter().map(|&i| d2(i)).fold(0.0, f64::max);
        let outside = (0..g.len())
            .filter(|i| !idx.contains(i))
            .map(d2)
            .fold(f64::INFINITY, f64::min);
        assert!(inner <= outside);
    }

    fn small_cohort(n: usize, response: ResponseModel) -> CohortSpec {
        let mut c = CohortSpec::new(n, response, 7);
        c.dims = [48, 48, 24];
        c.baseline_mtv_mean = 3.0;
        c.baseline_mtv_sd = 1.0;
        c.baseline_mtv_range = [1.0, 6.0];
        c
    }

    #[test]
    fn cohort_response_and_outliers() {
        let spec = small_cohort(
            20,
            ResponseModel {
                ratio_mean: 0.5,
                ratio_sd: 0.1,
                outlier_fraction: 0.25,
                outlier_ratio_min: 10.0,
            },
        );
        let truth = plan_truth(&spec).unwrap();
        assert_eq!(truth.n_outliers, 5);
        for p in &truth.patients {
            assert_eq!(p.outlier, p.mtv_ratio >= 10.0, "{}", p.patient_id);
            assert!(p.mtv_ratio > 0.0);
        }
        assert_eq!(plan_truth(&spec).unwrap(), truth);
    }

    #[test]
    fn cohort_mean_ratio_near_target() {
        let mut spec = CohortSpec::new(
            180,
            ResponseModel {
                ratio_mean: 0.1406,
                ratio_sd: 0.05,
                outlier_fraction: 0.0,
                outlier_ratio_min: 10.0,
            },
            11,
        );
        spec.seed = 11;
        let truth = plan_truth(&spec).unwrap();
        let ratios: Vec<f64> = truth.patients.iter().map(|p| p.mtv_ratio).collect();
        let m = numeric::mean(&ratios);
        let sd = (ratios.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64)
            .sqrt();
        assert!((m - 0.1406).abs() < 2.0 * sd / (ratios.len() as f64).sqrt());
    }

    #[test]
    fn rendered_patient_matches_truth() {
        let spec = small_cohort(
            3,
            ResponseModel {
                ratio_mean: 0.6,
                ratio_sd: 0.1,
                outlier_fraction: 0.0,
                outlier_ratio_min: 10.0,
            },
        );
        for i in 0..3 {
            let s = render_one(&spec, i).unwrap();
            assert_eq!(
                extract(&s.baseline.0, &s.baseline.1).unwrap(),
                s.truth.baseline
            );
            assert_eq!(
                extract(&s.followup.0, &s.followup.1).unwrap(),
                s.truth.followup
            );
            let q = crate::mask::centroid(&s.followup.1).unwrap().quadrant;
            assert_eq!(q, s.truth.quadrant);
        }
    }

    #[test]
    fn cohort_files_are_thread_independent() {
        let spec = small_cohort(
            4,
            ResponseModel {
                ratio_mean: 0.6,
                ratio_sd: 0.1,
                outlier_fraction: 0.25,
                outlier_ratio_min: 10.0,
            },
        );
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_cohort(&spec, a.path(), 1).unwrap();
        write_cohort(&spec, b.path(), 4).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 4 * 4 + 2);
        for name in names {
            assert_eq!(
                std::fs::read(a.path().join(&name)).unwrap(),
                std::fs::read(b.path().join(&name)).unwrap(),
                "{name:?}"
            );
        }
        let m = Manifest::read(&a.path().join("manifest.csv")).unwrap();
        assert_eq!(m.rows.len(), 4);
        assert_eq!(m.rows[0].patient_id, "P001");
    }

    #[test]
    fn single_patient_cohort() {
        let spec = small_cohort(
            1,
            ResponseModel {
                ratio_mean: 0.5,
                ratio_sd: 0.0,
                outlier_fraction: 0.0,
                outlier_ratio_min: 10.0,
            },
        );
        let truth = plan_truth(&spec).unwrap();
        assert_eq!(truth.patients.len(), 1);
    }

    #[test]
    fn spec_json_defaults() {
        let s: PhantomSpec =
            serde_json::from_str(r#"{"kind":"cohort","n":2,"response":{"ratio_mean":0.5}}"#)
                .unwrap();
        match s {
            PhantomSpec::Cohort(c) => assert_eq!((c.dims, c.spacing), ([144, 144, 66], [4.0; 3])),
            _ => panic!("expected cohort"),
        }
        let bad = serde_json::from_str::<PhantomSpec>(
            r#"{"kind":"cohort","n":2,"response":{"ratio_mean":0.5},"typo":1}"#,
        );
        assert!(bad.is_err());
    }
}
