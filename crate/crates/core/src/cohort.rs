//! Manifest-driven batch processing: segmentation, quantification and QC per patient.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::biomarkers::{self, BiomarkerSet};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::io;
use crate::manifest::{Manifest, ManifestRow};
use crate::mask::{self, BinaryMask, Centroid};
use crate::parallel;
use crate::qc::{self, QcRecord, QcThreshold};
use crate::segment::{self, SegmentConfig};
use crate::volume::{self, AcquisitionInfo, IntensityUnit, Volume3D};

/// Brings a volume to SUV. Volumes without a declared unit are treated as activity.
pub fn as_suv(vol: Volume3D, acq: Option<&AcquisitionInfo>) -> Result<Volume3D> {
    match (vol.unit(), acq) {
        (IntensityUnit::Suv, _) => Ok(vol),
        (IntensityUnit::ActivityConcentration, Some(a)) => volume::to_suv(&vol, a),
        (IntensityUnit::Arbitrary, Some(a)) => {
            volume::to_suv(&vol.relabel(IntensityUnit::ActivityConcentration), a)
        }
        (unit, None) => Err(Error::Unit {
            expected: IntensityUnit::Suv.to_string(),
            found: format!("{unit} (pass dose and weight to convert)"),
        }),
    }
}

fn with_patient<T>(id: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::EmptyRegion(m) => Error::EmptyRegion(format!("{id}: {m}")),
        Error::Degenerate(m) => Error::Degenerate(format!("{id}: {m}")),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanEval {
    pub biomarkers: BiomarkerSet,
    #[serde(skip)]
    pub centroid: Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientEval {
    pub patient_id: String,
    pub baseline: ScanEval,
    pub followup: ScanEval,
    /// Follow-up quadrant measured on the baseline grid.
    #[serde(skip)]
    pub followup_quadrant: mask::Quadrant,
}

fn eval_scan(
    vol_path: &Path,
    mask_path: &Path,
    acq: &AcquisitionInfo,
) -> Result<(ScanEval, BinaryMask)> {
    let vol = as_suv(io::read_volume(vol_path)?, Some(acq))?;
    let m = io::read_mask(mask_path)?;
    let biomarkers = biomarkers::extract(&vol, &m)?;
    let centroid = mask::centroid(&m)?;
    Ok((
        ScanEval {
            biomarkers,
            centroid,
        },
        m,
    ))
}

/// Biomarkers and centroids for both scans of one patient.
pub fn evaluate_row(row: &ManifestRow) -> Result<PatientEval> {
    let acq = row.acquisition();
    let id = &row.patient_id;
    let (baseline, bl_mask) = with_patient(id, eval_scan(&row.bl_volume, &row.bl_mask, &acq))?;
    let (followup, fu_mask) = with_patient(id, eval_scan(&row.fu_volume, &row.fu_mask, &acq))?;
    let followup_quadrant = with_patient(id, qc::followup_quadrant(&bl_mask, &fu_mask))?;
    Ok(PatientEval {
        patient_id: id.clone(),
        baseline,
        followup,
        followup_quadrant,
    })
}

pub fn evaluate(manifest: &Manifest, threads: usize) -> Result<Vec<PatientEval>> {
    parallel::try_map(threads, &manifest.rows, evaluate_row)
}

pub fn qc_records(evals: &[PatientEval], thr: &QcThreshold) -> Vec<QcRecord> {
    evals
        .iter()
        .map(|e| {
            qc::record_from_quadrants(
                &e.patient_id,
                e.baseline.centroid.quadrant,
                e.followup_quadrant,
                &e.baseline.biomarkers,
                &e.followup.biomarkers,
                thr,
            )
        })
        .collect()
}

/// MTV ratios used for threshold derivation; patients with a zero baseline MTV are skipped.
pub fn mtv_ratios(evals: &[PatientEval]) -> Vec<f64> {
    evals
        .iter()
        .filter(|e| e.baseline.biomarkers.mtv_cm3 > 0.0)
        .map(|e| e.followup.biomarkers.mtv_cm3 / e.baseline.biomarkers.mtv_cm3)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdChoice {
    Reference,
    Fixed(f64),
    Derive,
}

pub fn resolve_threshold(choice: ThresholdChoice, evals: &[PatientEval]) -> Result<QcThreshold> {
    match choice {
        ThresholdChoice::Reference => Ok(QcThreshold::reference()),
        ThresholdChoice::Fixed(v) => QcThreshold::fixed(v),
        ThresholdChoice::Derive => qc::derive_threshold(&mtv_ratios(evals)),
    }
}

/// Segments both scans of every patient, writes `<id>_bl_seg.nii`/`<id>_fu_seg.nii`
/// into `out_dir`, and returns a manifest pointing at the new masks.
pub fn segment_manifest(
    manifest: &Manifest,
    config: &SegmentConfig,
    out_dir: &Path,
    threads: usize,
) -> Result<Manifest> {
    fsutil::create_dir_all(out_dir)?;
    let rows = parallel::try_map(threads, &manifest.rows, |row| {
        let acq = row.acquisition();
        let id = &row.patient_id;
        let mut out = row.clone();
        for (vol_path, mask_slot, tag) in [
            (&row.bl_volume, &mut out.bl_mask, "bl"),
            (&row.fu_volume, &mut out.fu_mask, "fu"),
        ] {
            let vol = as_suv(io::read_volume(vol_path)?, Some(&acq))?;
            let seg = with_patient(id, segment::segment(&vol, config))?;
            let path: PathBuf = out_dir.join(format!("{id}_{tag}_seg.nii"));
            io::write_mask(&seg.mask, &path)?;
            *mask_slot = path;
        }
        Ok(out)
    })?;
    Ok(Manifest { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{self, CohortSpec, ResponseModel};

    fn cohort(dir: &Path, n: usize) -> (Manifest, phantom::CohortTruth) {
        let mut spec = CohortSpec::new(
            n,
            ResponseModel {
                ratio_mean: 0.5,
                ratio_sd: 0.1,
                outlier_fraction: 0.25,
                outlier_ratio_min: 10.0,
            },
            3,
        );
        spec.dims = [48, 48, 24];
        spec.baseline_mtv_mean = 3.0;
        spec.baseline_mtv_sd = 1.0;
        spec.baseline_mtv_range = [1.0, 6.0];
        let truth = phantom::write_cohort(&spec, dir, 2).unwrap();
        (Manifest::read(&dir.join("manifest.csv")).unwrap(), truth)
    }

    #[test]
    fn evaluation_recovers_truth() {
        let dir = tempfile::tempdir().unwrap();
        let (m, truth) = cohort(dir.path(), 8);
        let evals = evaluate(&m, 3).unwrap();
        for (e, t) in evals.iter().zip(&truth.patients) {
            assert_eq!(e.patient_id, t.patient_id);
            assert_eq!(e.baseline.biomarkers.voxel_count, t.baseline.voxel_count);
            assert_eq!(e.followup.biomarkers.mtv_cm3, t.followup.mtv_cm3);
            assert!(
                (e.baseline.biomarkers.suv_max - t.baseline.suv_max).abs()
                    < 1e-5 * t.baseline.suv_max
            );
            assert_eq!(e.baseline.centroid.quadrant, t.quadrant);
            assert_eq!(e.followup_quadrant, t.quadrant);
        }
        let recs = qc_records(&evals, &QcThreshold::reference());
        let flagged: Vec<bool> = recs.iter().map(|r| !r.ratio_ok).collect();
        let expected: Vec<bool> = truth.patients.iter().map(|p| p.outlier).collect();
        assert_eq!(flagged, expected);
    }

    #[test]
    fn segmentation_reproduces_ground_truth_masks() {
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = cohort(dir.path(), 4);
        let seg =
            segment_manifest(&m, &SegmentConfig::default(), &dir.path().join("seg"), 2).unwrap();
        for (a, b) in m.rows.iter().zip(&seg.rows) {
            assert_eq!(
                io::read_mask(&a.bl_mask).unwrap(),
                io::read_mask(&b.bl_mask).unwrap()
            );
            assert_eq!(
                io::read_mask(&a.fu_mask).unwrap(),
                io::read_mask(&b.fu_mask).unwrap()
            );
        }
    }

    #[test]
    fn unit_handling() {
        let g = crate::volume::Geometry::new([2, 2, 2], [4.0; 3]).unwrap();
        let v = Volume3D::filled(g, 3.0, IntensityUnit::ActivityConcentration).unwrap();
        let acq = AcquisitionInfo::new(180.0, 60.0);
        assert_eq!(as_suv(v.clone(), Some(&acq)).unwrap().values()[0], 1.0);
        assert!(matches!(as_suv(v, None), Err(Error::Unit { .. })));
        let s = Volume3D::filled(g, 3.0, IntensityUnit::Suv).unwrap();
        assert_eq!(as_suv(s.clone(), None).unwrap(), s);
    }
}
