//! C ABI over `petquant`.
//!
//! Conventions:
//! * Every fallible function returns a [`PqStatus`]; `PQ_STATUS_OK` is zero.
//! * On failure, [`pq_last_error_message`] returns a description valid until the
//!   next call on the same thread.
//! * Objects are opaque handles created by `*_read`/`*_new` functions and released
//!   with the matching `*_free`. Freeing a null handle is a no-op.
//! * Panics never cross the boundary; they are reported as `PQ_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use petquant::biomarkers::{self, BiomarkerSet};
use petquant::error::Error;
use petquant::loss::{self, LossParams, ProbMap};
use petquant::segment::{self, Method, SegmentConfig};
use petquant::{io, metrics, qc, stats, volume};
use petquant::{AcquisitionInfo, BinaryMask, Geometry, IntensityUnit, Volume3D};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Data = 5,
    Unit = 6,
    Parameter = 7,
    Degenerate = 8,
    Shape = 9,
    EmptyRegion = 10,
    Spec = 11,
    Manifest = 12,
    Derivation = 13,
    Panic = 99,
}

impl From<&Error> for PqStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => PqStatus::Io,
            Error::Format { .. } => PqStatus::Format,
            Error::Data { .. } => PqStatus::Data,
            Error::Unit { .. } => PqStatus::Unit,
            Error::Parameter { .. } => PqStatus::Parameter,
            Error::Degenerate(_) => PqStatus::Degenerate,
            Error::Shape(_) => PqStatus::Shape,
            Error::EmptyRegion(_) => PqStatus::EmptyRegion,
            Error::Spec(_) => PqStatus::Spec,
            Error::Manifest(_) => PqStatus::Manifest,
            Error::Derivation(_) => PqStatus::Derivation,
        }
    }
}

/// Opaque scalar volume.
pub struct PqVolume(Volume3D);

/// Opaque binary mask.
pub struct PqMask(BinaryMask);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqUnit {
    ActivityConcentration = 0,
    Suv = 1,
    Arbitrary = 2,
}

impl From<PqUnit> for IntensityUnit {
    fn from(u: PqUnit) -> Self {
        match u {
            PqUnit::ActivityConcentration => IntensityUnit::ActivityConcentration,
            PqUnit::Suv => IntensityUnit::Suv,
            PqUnit::Arbitrary => IntensityUnit::Arbitrary,
        }
    }
}

impl From<IntensityUnit> for PqUnit {
    fn from(u: IntensityUnit) -> Self {
        match u {
            IntensityUnit::ActivityConcentration => PqUnit::ActivityConcentration,
            IntensityUnit::Suv => PqUnit::Suv,
            IntensityUnit::Arbitrary => PqUnit::Arbitrary,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqSegmentMethod {
    /// Fixed fraction of the ROI maximum.
    Pct = 0,
    /// Iterative contrast-based threshold.
    Contrast = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PqBiomarkers {
    pub suv_max: f64,
    pub suv_mean: f64,
    pub mtv_cm3: f64,
    pub tlg: f64,
    pub voxel_count: usize,
}

impl From<&BiomarkerSet> for PqBiomarkers {
    fn from(b: &BiomarkerSet) -> Self {
        PqBiomarkers {
            suv_max: b.suv_max,
            suv_mean: b.suv_mean,
            mtv_cm3: b.mtv_cm3,
            tlg: b.tlg,
            voxel_count: b.voxel_count,
        }
    }
}

impl PqBiomarkers {
    fn to_set(self) -> BiomarkerSet {
        BiomarkerSet {
            suv_max: self.suv_max,
            suv_mean: self.suv_mean,
            mtv_cm3: self.mtv_cm3,
            tlg: self.tlg,
            voxel_count: self.voxel_count,
            warnings: Vec::new(),
        }
    }
}

/// Undefined ratios are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PqDelta {
    pub d_suv_max: f64,
    pub d_mtv_cm3: f64,
    pub d_tlg: f64,
    pub pct_d_suv_max: f64,
    pub mtv_ratio: f64,
}

/// Undefined metrics are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PqComparison {
    pub dsc: f64,
    pub iou: f64,
    pub sensitivity: f64,
    pub hd_mm: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqLossParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub smooth: f64,
}

impl From<PqLossParams> for LossParams {
    fn from(p: PqLossParams) -> Self {
        LossParams {
            alpha: p.alpha,
            beta: p.beta,
            gamma: p.gamma,
            epsilon: p.epsilon,
            smooth: p.smooth,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PqTTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
    pub sd: f64,
    pub sem: f64,
    pub significant: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Null(&'static str),
    Utf8,
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

type FfiResult = Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> PqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PqStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            PqStatus::NullPointer
        }
        Ok(Err(Fail::Utf8)) => {
            set_error("path is not valid UTF-8");
            PqStatus::InvalidUtf8
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            PqStatus::from(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            PqStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail::Utf8)
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message for the most recent failure on this thread; empty after a success.
#[no_mangle]
pub extern "C" fn pq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a volume from `len = dims[0]*dims[1]*dims[2]` values in x-fastest order.
#[no_mangle]
pub unsafe extern "C" fn pq_volume_new(
    dims: *const usize,
    spacing: *const f64,
    values: *const f64,
    len: usize,
    unit: PqUnit,
    out_volume: *mut *mut PqVolume,
) -> PqStatus {
    guard(|| {
        let d = slice(dims, 3, "dims")?;
        let s = slice(spacing, 3, "spacing")?;
        let geometry = Geometry::new([d[0], d[1], d[2]], [s[0], s[1], s[2]])?;
        let v = slice(values, len, "values")?;
        let vol = Volume3D::new(geometry, v.to_vec(), unit.into())?;
        *out(out_volume, "out_volume")? = boxed(PqVolume(vol));
        Ok(())
    })
}

/// Reads a `.nii` or `.json` sidecar volume.
#[no_mangle]
pub unsafe extern "C" fn pq_volume_read(
    path: *const c_char,
    out_volume: *mut *mut PqVolume,
) -> PqStatus {
    guard(|| {
        let vol = io::read_volume(path_arg(path)?)?;
        *out(out_volume, "out_volume")? = boxed(PqVolume(vol));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pq_volume_write(volume: *const PqVolume, path: *const c_char) -> PqStatus {
    guard(|| {
        let v = obj(volume, "volume")?;
        io::write_volume(&v.0, path_arg(path)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pq_volume_free(volume: *mut PqVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Writes 3 dims and 3 spacings (mm).
#[no_mangle]
pub unsafe extern "C" fn pq_volume_geometry(
    volume: *const PqVolume,
    out_dims: *mut usize,
    out_spacing: *mut f64,
) -> PqStatus {
    guard(|| {
        let v = obj(volume, "volume")?;
        if out_dims.is_null() {
            return Err(Fail::Null("out_dims"));
        }
        if out_spacing.is_null() {
            return Err(Fail::Null("out_spacing"));
        }
        let d = std::slice::from_raw_parts_mut(out_dims, 3);
        let s = std::slice::from_raw_parts_mut(out_spacing, 3);
        d.copy_from_slice(&v.0.dims());
        s.copy_from_slice(&v.0.spacing());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pq_volume_unit(
    volume: *const PqVolume,
    out_unit: *mut PqUnit,
) -> PqStatus {
    guard(|| {
        *out(out_unit, "out_unit")? = obj(volume, "volume")?.0.unit().into();
        Ok(())
    })
}

/// Borrowed pointer to the voxel values, valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn pq_volume_data(
    volume: *const PqVolume,
    out_data: *mut *const f64,
    out_len: *mut usize,
) -> PqStatus {
    guard(|| {
        let v = obj(volume, "volume")?;
        *out(out_data, "out_data")? = v.0.values().as_ptr();
        *out(out_len, "out_len")? = v.0.values().len();
        Ok(())
    })
}

/// Converts an activity-concentration volume to body-weight SUV.
#[no_mangle]
pub unsafe extern "C" fn pq_volume_to_suv(
    volume: *const PqVolume,
    dose_mbq: f64,
    weight_kg: f64,
    out_volume: *mut *mut PqVolume,
) -> PqStatus {
    guard(|| {
        let v = obj(volume, "volume")?;
        let suv = volume::to_suv(&v.0, &AcquisitionInfo::new(dose_mbq, weight_kg))?;
        *out(out_volume, "out_volume")? = boxed(PqVolume(suv));
        Ok(())
    })
}

/// Creates a mask; any non-zero byte is foreground.
#[no_mangle]
pub unsafe extern "C" fn pq_mask_new(
    dims: *const usize,
    spacing: *const f64,
    bits: *const u8,
    len: usize,
    out_mask: *mut *mut PqMask,
) -> PqStatus {
    guard(|| {
        let d = slice(dims, 3, "dims")?;
        let s = slice(spacing, 3, "spacing")?;
        let geometry = Geometry::new([d[0], d[1], d[2]], [s[0], s[1], s[2]])?;
        let b = slice(bits, len, "bits")?;
        let m = BinaryMask::new(geometry, b.iter().map(|&x| x != 0).collect())?;
        *out(out_mask, "out_mask")? = boxed(PqMask(m));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pq_mask_read(path: *const c_char, out_mask: *mut *mut PqMask) -> PqStatus {
    guard(|| {
        let m = io::read_mask(path_arg(path)?)?;
        *out(out_mask, "out_mask")? = boxed(PqMask(m));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pq_mask_write(mask: *const PqMask, path: *const c_char) -> PqStatus {
    guard(|| {
        io::write_mask(&obj(mask, "mask")?.0, path_arg(path)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pq_mask_free(mask: *mut PqMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

#[no_mangle]
pub unsafe extern "C" fn pq_mask_voxel_count(
    mask: *const PqMask,
    out_count: *mut usize,
) -> PqStatus {
    guard(|| {
        *out(out_count, "out_count")? = obj(mask, "mask")?.0.voxel_count();
        Ok(())
    })
}

/// Segments with default settings for the chosen method. `pct` is only used by
/// `PQ_SEGMENT_METHOD_PCT`; pass a non-positive value for the default.
#[no_mangle]
pub unsafe extern "C" fn pq_segment(
    volume: *const PqVolume,
    method: PqSegmentMethod,
    pct: f64,
    out_mask: *mut *mut PqMask,
) -> PqStatus {
    guard(|| {
        let v = obj(volume, "volume")?;
        let mut cfg = SegmentConfig {
            method: match method {
                PqSegmentMethod::Pct => Method::Pct,
                PqSegmentMethod::Contrast => Method::Contrast,
            },
            ..SegmentConfig::default()
        };
        if pct > 0.0 {
            cfg.pct = pct;
        }
        let o = segment::segment(&v.0, &cfg)?;
        *out(out_mask, "out_mask")? = boxed(PqMask(o.mask));
        Ok(())
    })
}

/// Biomarkers of an SUV volume under a mask.
#[no_mangle]
pub unsafe extern "C" fn pq_biomarkers_extract(
    volume: *const PqVolume,
    mask: *const PqMask,
    out_set: *mut PqBiomarkers,
) -> PqStatus {
    guard(|| {
        let b = biomarkers::extract(&obj(volume, "volume")?.0, &obj(mask, "mask")?.0)?;
        *out(out_set, "out_set")? = PqBiomarkers::from(&b);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pq_biomarkers_delta(
    baseline: *const PqBiomarkers,
    followup: *const PqBiomarkers,
    out_delta: *mut PqDelta,
) -> PqStatus {
    guard(|| {
        let bl = obj(baseline, "baseline")?.to_set();
        let fu = obj(followup, "followup")?.to_set();
        let d = biomarkers::delta(&bl, &fu);
        *out(out_delta, "out_delta")? = PqDelta {
            d_suv_max: d.d_suv_max,
            d_mtv_cm3: d.d_mtv_cm3,
            d_tlg: d.d_tlg,
            pct_d_suv_max: d.pct_d_suv_max.unwrap_or(f64::NAN),
            mtv_ratio: d.mtv_ratio.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pq_compare(
    gt: *const PqMask,
    pred: *const PqMask,
    out_cmp: *mut PqComparison,
) -> PqStatus {
    guard(|| {
        let c = metrics::compare(&obj(gt, "gt")?.0, &obj(pred, "pred")?.0)?;
        *out(out_cmp, "out_cmp")? = PqComparison {
            dsc: c.dsc,
            iou: c.iou,
            sensitivity: c.sensitivity.unwrap_or(f64::NAN),
            hd_mm: c.hd_mm.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Defaults: alpha 0.7, beta 0.3, gamma 1.5, epsilon 0.7, smooth 1e-6.
#[no_mangle]
pub extern "C" fn pq_loss_params_default() -> PqLossParams {
    let p = LossParams::default();
    PqLossParams {
        alpha: p.alpha,
        beta: p.beta,
        gamma: p.gamma,
        epsilon: p.epsilon,
        smooth: p.smooth,
    }
}

unsafe fn prob_pair(
    y: *const f64,
    yhat: *const f64,
    len: usize,
) -> Result<(ProbMap, ProbMap), Fail> {
    let a = ProbMap::new([len, 1, 1], slice(y, len, "y")?.to_vec())?;
    let b = ProbMap::new([len, 1, 1], slice(yhat, len, "yhat")?.to_vec())?;
    Ok((a, b))
}

/// Weighted focal-Tversky + BCE loss over flat arrays of `len` probabilities.
#[no_mangle]
pub unsafe extern "C" fn pq_loss_combined(
    y: *const f64,
    yhat: *const f64,
    len: usize,
    params: PqLossParams,
    out_loss: *mut f64,
) -> PqStatus {
    guard(|| {
        let (a, b) = prob_pair(y, yhat, len)?;
        *out(out_loss, "out_loss")? = loss::combined_loss(&a, &b, &params.into())?;
        Ok(())
    })
}

/// Gradient of [`pq_loss_combined`] with respect to `yhat`, written to `out_grad[0..len]`.
#[no_mangle]
pub unsafe extern "C" fn pq_loss_grad(
    y: *const f64,
    yhat: *const f64,
    len: usize,
    params: PqLossParams,
    out_grad: *mut f64,
) -> PqStatus {
    guard(|| {
        let (a, b) = prob_pair(y, yhat, len)?;
        let g = loss::combined_loss_grad(&a, &b, &params.into())?;
        if len > 0 && out_grad.is_null() {
            return Err(Fail::Null("out_grad"));
        }
        if len > 0 {
            std::slice::from_raw_parts_mut(out_grad, len).copy_from_slice(&g);
        }
        Ok(())
    })
}

/// `1 / mean(ratios)`.
#[no_mangle]
pub unsafe extern "C" fn pq_qc_derive_threshold(
    ratios: *const f64,
    len: usize,
    out_threshold: *mut f64,
) -> PqStatus {
    guard(|| {
        let t = qc::derive_threshold(slice(ratios, len, "ratios")?)?;
        *out(out_threshold, "out_threshold")? = t.value;
        Ok(())
    })
}

/// Paired t-test on `after - before`.
#[no_mangle]
pub unsafe extern "C" fn pq_paired_ttest(
    before: *const f64,
    after: *const f64,
    len: usize,
    out_test: *mut PqTTest,
) -> PqStatus {
    guard(|| {
        let t = stats::paired_ttest(slice(before, len, "before")?, slice(after, len, "after")?)?;
        *out(out_test, "out_test")? = PqTTest {
            t: t.t,
            p: t.p,
            df: t.df,
            mean_diff: t.mean_diff,
            sd: t.sd,
            sem: t.sem,
            significant: t.significant,
        };
        Ok(())
    })
}
