//! Two-step longitudinal quality control.
//!
//! 1. The baseline and follow-up lesion centroids must fall in the same axial quadrant.
//! 2. The follow-up / baseline MTV ratio must not exceed a threshold, by default
//!    the reciprocal of the cohort's mean ratio.
//!
//! Records failing step 2 are ranked by how far they exceed the threshold and the
//! most extreme ones are exported for manual annotation.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::biomarkers::BiomarkerSet;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::io;
use crate::manifest::Manifest;
use crate::mask::{centroid, BinaryMask, Quadrant};
use crate::numeric;

/// Threshold reported for the 180-scan clinical cohort. Kept for parity runs;
/// new cohorts should derive their own.
pub const REFERENCE_THRESHOLD: f64 = 7.11;
pub const REFERENCE_COHORT_SIZE: usize = 180;

/// Number of extreme outliers sent for expert annotation in the reference workflow.
pub const REFERENCE_EXTREME_COUNT: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivation {
    Fixed,
    ReciprocalMeanRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QcThreshold {
    #[serde(serialize_with = "numeric::ser_g17")]
    pub value: f64,
    pub derivation: Derivation,
    pub cohort_size: usize,
}

impl QcThreshold {
    pub fn fixed(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::param(
                "threshold",
                format!("must be > 0, got {value}"),
            ));
        }
        Ok(QcThreshold {
            value,
            derivation: Derivation::Fixed,
            cohort_size: 0,
        })
    }

    pub fn reference() -> Self {
        QcThreshold {
            value: REFERENCE_THRESHOLD,
            derivation: Derivation::Fixed,
            cohort_size: REFERENCE_COHORT_SIZE,
        }
    }
}

/// `1 / mean(ratios)`.
pub fn derive_threshold(ratios: &[f64]) -> Result<QcThreshold> {
    if ratios.is_empty() {
        return Err(Error::Derivation("no MTV ratios to average".into()));
    }
    if let Some(bad) = ratios.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::Derivation(format!("invalid MTV ratio {bad}")));
    }
    let mean = numeric::mean(ratios);
    if mean <= 0.0 {
        return Err(Error::Derivation("mean MTV ratio is zero".into()));
    }
    Ok(QcThreshold {
        value: 1.0 / mean,
        derivation: Derivation::ReciprocalMeanRatio,
        cohort_size: ratios.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QcReason {
    QuadrantMismatch,
    RatioAboveThreshold,
    ZeroBaselineMtv,
}

impl QcReason {
    pub fn as_str(self) -> &'static str {
        match self {
            QcReason::QuadrantMismatch => "quadrant_mismatch",
            QcReason::RatioAboveThreshold => "ratio_above_threshold",
            QcReason::ZeroBaselineMtv => "zero_baseline_mtv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QcRecord {
    pub patient_id: String,
    pub baseline_quadrant: Quadrant,
    pub followup_quadrant: Quadrant,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub baseline_mtv_cm3: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub followup_mtv_cm3: f64,
    /// Follow-up / baseline MTV; infinite when the baseline MTV is zero.
    #[serde(serialize_with = "numeric::ser_g17")]
    pub mtv_ratio: f64,
    pub quadrant_ok: bool,
    pub ratio_ok: bool,
    /// `max(0, mtv_ratio - threshold)`.
    #[serde(serialize_with = "numeric::ser_g17")]
    pub outlier_score: f64,
    pub reasons: Vec<QcReason>,
}

impl QcRecord {
    pub fn validated(&self) -> bool {
        self.quadrant_ok && self.ratio_ok
    }
}

/// Builds a record from already-computed quadrants.
pub fn record_from_quadrants(
    patient_id: &str,
    baseline_quadrant: Quadrant,
    followup_quadrant: Quadrant,
    bl_bio: &BiomarkerSet,
    fu_bio: &BiomarkerSet,
    thr: &QcThreshold,
) -> QcRecord {
    let mut reasons = Vec::new();
    let quadrant_ok = baseline_quadrant == followup_quadrant;
    if !quadrant_ok {
        reasons.push(QcReason::QuadrantMismatch);
    }
    let (mtv_ratio, ratio_ok) = if bl_bio.mtv_cm3 > 0.0 {
        let r = fu_bio.mtv_cm3 / bl_bio.mtv_cm3;
        (r, r <= thr.value)
    } else {
        reasons.push(QcReason::ZeroBaselineMtv);
        (f64::INFINITY, false)
    };
    if !ratio_ok && mtv_ratio.is_finite() {
        reasons.push(QcReason::RatioAboveThreshold);
    }
    let outlier_score = if ratio_ok {
        0.0
    } else {
        (mtv_ratio - thr.value).max(0.0)
    };
    QcRecord {
        patient_id: patient_id.to_string(),
        baseline_quadrant,
        followup_quadrant,
        baseline_mtv_cm3: bl_bio.mtv_cm3,
        followup_mtv_cm3: fu_bio.mtv_cm3,
        mtv_ratio,
        quadrant_ok,
        ratio_ok,
        outlier_score,
        reasons,
    }
}

/// Follow-up quadrant on the baseline grid: the follow-up mask is resampled
/// (nearest) onto the baseline geometry when the matrix sizes differ.
pub fn followup_quadrant(bl_mask: &BinaryMask, fu_mask: &BinaryMask) -> Result<Quadrant> {
    if bl_mask.dims() == fu_mask.dims() {
        return Ok(centroid(fu_mask)?.quadrant);
    }
    let resampled = fu_mask.resample_to(*bl_mask.geometry());
    Ok(centroid(&resampled)?.quadrant)
}

pub fn check_pair(
    patient_id: &str,
    bl_mask: &BinaryMask,
    fu_mask: &BinaryMask,
    bl_bio: &BiomarkerSet,
    fu_bio: &BiomarkerSet,
    thr: &QcThreshold,
) -> Result<QcRecord> {
    if bl_mask.is_empty() {
        return Err(Error::EmptyRegion(format!(
            "{patient_id}: baseline mask is empty"
        )));
    }
    if fu_mask.is_empty() {
        return Err(Error::EmptyRegion(format!(
            "{patient_id}: follow-up mask is empty"
        )));
    }
    let bq = centroid(bl_mask)?.quadrant;
    let fq = followup_quadrant(bl_mask, fu_mask)?;
    Ok(record_from_quadrants(
        patient_id, bq, fq, bl_bio, fu_bio, thr,
    ))
}

/// The `k` largest positive outlier scores, ties broken by patient id ascending.
pub fn select_extreme_outliers(records: &[QcRecord], k: usize) -> Vec<String> {
    let mut outliers: Vec<&QcRecord> = records.iter().filter(|r| r.outlier_score > 0.0).collect();
    outliers.sort_by(|a, b| {
        b.outlier_score
            .partial_cmp(&a.outlier_score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.patient_id.cmp(&b.patient_id))
    });
    outliers
        .into_iter()
        .take(k)
        .map(|r| r.patient_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationTask {
    pub patient_id: String,
    /// Paths relative to the batch directory.
    pub volume: PathBuf,
    pub mask_template: PathBuf,
}

/// Copies each follow-up volume plus an all-zero mask template into `out_dir`
/// and writes `tasks.json` listing them.
pub fn export_annotation_batch(
    ids: &[String],
    manifest: &Manifest,
    out_dir: &Path,
) -> Result<Vec<AnnotationTask>> {
    let rows = ids
        .iter()
        .map(|id| {
            manifest
                .get(id)
                .ok_or_else(|| Error::Manifest(format!("patient_id {id:?} not in manifest")))
        })
        .collect::<Result<Vec<_>>>()?;
    fsutil::create_dir_all(out_dir)?;
    let mut tasks = Vec::with_capacity(rows.len());
    for row in rows {
        let vol = io::read_volume(&row.fu_volume)?;
        let volume = PathBuf::from(format!("{}_followup.nii", row.patient_id));
        let mask_template = PathBuf::from(format!("{}_followup_mask_template.nii", row.patient_id));
        io::write_volume(&vol, out_dir.join(&volume))?;
        io::write_mask(
            &BinaryMask::empty(*vol.geometry()),
            out_dir.join(&mask_template),
        )?;
        tasks.push(AnnotationTask {
            patient_id: row.patient_id.clone(),
            volume,
            mask_template,
        });
    }
    let json = serde_json::to_vec_pretty(&tasks).expect("tasks serialize");
    fsutil::write_atomic(&out_dir.join("tasks.json"), &json)?;
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;
    use proptest::prelude::*;

    fn bio(mtv: f64) -> BiomarkerSet {
        BiomarkerSet::from_parts(5.0, 4.0, 1, 1.0).tap_mtv(mtv)
    }

    trait TapMtv {
        fn tap_mtv(self, mtv: f64) -> Self;
    }

    impl TapMtv for BiomarkerSet {
        fn tap_mtv(mut self, mtv: f64) -> Self {
            self.mtv_cm3 = mtv;
            self.tlg = self.suv_mean * mtv;
            self
        }
    }

    fn blob(dims: [usize; 3], at: [usize; 3]) -> BinaryMask {
        let g = Geometry::new(dims, [4.0; 3]).unwrap();
        BinaryMask::from_indices(g, [g.index(at[0], at[1], at[2])]).unwrap()
    }

    #[test]
    fn threshold_derivation() {
        assert_eq!(derive_threshold(&[0.25; 4]).unwrap().value, 4.0);
        let t = derive_threshold(&[1.0]).unwrap();
        assert_eq!(
            (t.value, t.cohort_size, t.derivation),
            (1.0, 1, Derivation::ReciprocalMeanRatio)
        );
        assert!(matches!(derive_threshold(&[]), Err(Error::Derivation(_))));
        assert!(matches!(
            derive_threshold(&[0.0, 0.0]),
            Err(Error::Derivation(_))
        ));
        assert!(matches!(
            derive_threshold(&[1.0, f64::INFINITY]),
            Err(Error::Derivation(_))
        ));
        assert_eq!(QcThreshold::reference().value, 7.11);
    }

    #[test]
    fn worked_examples() {
        let thr = QcThreshold::reference();
        let a = blob([144, 144, 66], [100, 100, 30]);
        let b = blob([144, 144, 66], [90, 110, 31]);
        let ok = check_pair("p1", &a, &b, &bio(5.0), &bio(6.0), &thr).unwrap();
        assert!(ok.validated());
        let out = check_pair("p2", &a, &b, &bio(1.0), &bio(27.0), &thr).unwrap();
        assert!(out.quadrant_ok && !out.ratio_ok && !out.validated());
        assert!((out.outlier_score - (27.0 - 7.11)).abs() < 1e-12);
        assert_eq!(out.reasons, vec![QcReason::RatioAboveThreshold]);
        let far = blob([144, 144, 66], [10, 100, 30]);
        let moved = check_pair("p3", &a, &far, &bio(2.0), &bio(2.0), &thr).unwrap();
        assert!(!moved.quadrant_ok && moved.ratio_ok);
        assert_eq!(moved.reasons, vec![QcReason::QuadrantMismatch]);
    }

    #[test]
    fn equality_passes_and_zero_baseline_flags() {
        let thr = QcThreshold::fixed(2.0).unwrap();
        let a = blob([8, 8, 8], [1, 1, 1]);
        let r = check_pair("p", &a, &a, &bio(1.0), &bio(2.0), &thr).unwrap();
        assert!(r.ratio_ok);
        assert_eq!(r.outlier_score, 0.0);
        let z = check_pair("z", &a, &a, &bio(0.0), &bio(2.0), &thr).unwrap();
        assert!(!z.ratio_ok);
        assert!(z.reasons.contains(&QcReason::ZeroBaselineMtv));
        let empty = BinaryMask::empty(*a.geometry());
        assert!(matches!(
            check_pair("e", &empty, &a, &bio(1.0), &bio(1.0), &thr),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn followup_on_different_grid_is_resampled() {
        let bl = blob([144, 144, 66], [100, 100, 30]);
        let g = Geometry::new([72, 72, 33], [8.0; 3]).unwrap();
        let fu = BinaryMask::from_indices(g, [g.index(50, 50, 15)]).unwrap();
        assert_eq!(followup_quadrant(&bl, &fu).unwrap(), Quadrant::Q3);
    }

    fn rec(id: &str, score: f64) -> QcRecord {
        QcRecord {
            patient_id: id.into(),
            baseline_quadrant: Quadrant::Q1,
            followup_quadrant: Quadrant::Q1,
            baseline_mtv_cm3: 1.0,
            followup_mtv_cm3: 1.0,
            mtv_ratio: 1.0 + score,
            quadrant_ok: true,
            ratio_ok: score == 0.0,
            outlier_score: score,
            reasons: vec![],
        }
    }

    #[test]
    fn extreme_selection_examples() {
        let rs = vec![rec("a", 0.0), rec("b", 2.5), rec("c", 9.1), rec("d", 0.3)];
        assert_eq!(select_extreme_outliers(&rs, 2), vec!["c", "b"]);
        assert_eq!(select_extreme_outliers(&rs, 0), Vec::<String>::new());
        assert_eq!(select_extreme_outliers(&rs, 15), vec!["c", "b", "d"]);
        let calm: Vec<QcRecord> = (0..5).map(|i| rec(&format!("p{i}"), 0.0)).collect();
        assert!(select_extreme_outliers(&calm, 15).is_empty());
    }

    #[test]
    fn export_batch_writes_pairs_and_tasks() {
        use crate::manifest::ManifestRow;
        use crate::volume::{IntensityUnit, Volume3D};
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([4, 4, 4], [4.0; 3]).unwrap();
        let v = Volume3D::filled(g, 2.0, IntensityUnit::ActivityConcentration).unwrap();
        let fu = dir.path().join("fu.nii");
        io::write_volume(&v, &fu).unwrap();
        let row = ManifestRow {
            patient_id: "p7".into(),
            bl_volume: fu.clone(),
            bl_mask: fu.clone(),
            fu_volume: fu.clone(),
            fu_mask: fu.clone(),
            dose_mbq: 180.0,
            weight_kg: 60.0,
        };
        let m = Manifest { rows: vec![row] };
        let out = dir.path().join("batch");
        let tasks = export_annotation_batch(&["p7".into()], &m, &out).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(io::read_volume(out.join(&tasks[0].volume)).unwrap(), v);
        assert!(io::read_mask(out.join(&tasks[0].mask_template))
            .unwrap()
            .is_empty());

        let empty_out = dir.path().join("none");
        export_annotation_batch(&[], &m, &empty_out).unwrap();
        assert_eq!(
            std::fs::read_to_string(empty_out.join("tasks.json")).unwrap(),
            "[]"
        );

        let err = export_annotation_batch(&["ghost".into()], &m, &out).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    /// Full-sort oracle: sort every record by (score desc, id asc), keep positives.
    fn oracle(records: &[QcRecord], k: usize) -> Vec<String> {
        let mut all: Vec<(f64, String)> = records
            .iter()
            .map(|r| (r.outlier_score, r.patient_id.clone()))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        all.into_iter()
            .filter(|(s, _)| *s > 0.0)
            .take(k)
            .map(|(_, id)| id)
            .collect()
    }

    proptest! {
        #[test]
        fn threshold_scales_inversely(ratios in proptest::collection::vec(0.01f64..5.0, 1..50), c in 0.1f64..10.0) {
            let a = derive_threshold(&ratios).unwrap().value;
            let scaled: Vec<f64> = ratios.iter().map(|r| r * c).collect();
            let b = derive_threshold(&scaled).unwrap().value;
            prop_assert!((b - a / c).abs() <= 1e-12 * a / c);
        }

        #[test]
        fn flags_are_consistent(bl in 0.0f64..50.0, fu in 0.0f64..400.0, t in 0.1f64..10.0) {
            let thr = QcThreshold::fixed(t).unwrap();
            let r = record_from_quadrants("p", Quadrant::Q1, Quadrant::Q1, &bio(bl), &bio(fu), &thr);
            prop_assert_eq!(r.ratio_ok, r.mtv_ratio <= thr.value);
            prop_assert_eq!(r.outlier_score > 0.0, !r.ratio_ok);
        }

        #[test]
        fn selection_matches_sort_oracle(scores in proptest::collection::vec(prop_oneof![Just(0.0), Just(1.5), 0.0f64..5.0], 0..40),
                                         k in 0usize..20) {
            let rs: Vec<QcRecord> = scores.iter().enumerate().map(|(i, &s)| rec(&format!("p{:03}", (i * 7) % 41), s)).collect();
            prop_assert_eq!(select_extreme_outliers(&rs, k), oracle(&rs, k));
        }
    }
}
