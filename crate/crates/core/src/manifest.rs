//! Cohort manifest: one CSV row per patient pairing baseline and follow-up scans.
//!
//! Columns: `patient_id,bl_volume,bl_mask,fu_volume,fu_mask,dose_MBq,weight_kg`.
//! Relative paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::numeric;
use crate::volume::AcquisitionInfo;

pub const COLUMNS: [&str; 7] = [
    "patient_id",
    "bl_volume",
    "bl_mask",
    "fu_volume",
    "fu_mask",
    "dose_MBq",
    "weight_kg",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub patient_id: String,
    pub bl_volume: PathBuf,
    pub bl_mask: PathBuf,
    pub fu_volume: PathBuf,
    pub fu_mask: PathBuf,
    #[serde(rename = "dose_MBq")]
    pub dose_mbq: f64,
    pub weight_kg: f64,
}

impl ManifestRow {
    pub fn acquisition(&self) -> AcquisitionInfo {
        AcquisitionInfo::new(self.dose_mbq, self.weight_kg)
    }
}

/// Rows with paths already resolved to usable locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let bytes = fsutil::read(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(bytes.as_slice());
        let mut rows = Vec::new();
        for (line, rec) in reader.deserialize::<ManifestRow>().enumerate() {
            let mut row = rec.map_err(|e| {
                Error::format(
                    "manifest",
                    format!("{}: row {}: {e}", path.display(), line + 1),
                )
            })?;
            for p in [
                &mut row.bl_volume,
                &mut row.bl_mask,
                &mut row.fu_volume,
                &mut row.fu_mask,
            ] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            rows.push(row);
        }
        let mut ids: Vec<&str> = rows.iter().map(|r| r.patient_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Manifest(format!("duplicate patient_id {:?}", w[0])));
        }
        Ok(Manifest { rows })
    }

    /// Writes the manifest with paths relative to its own directory.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut writer = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::format("manifest", e.to_string());
        writer.write_record(COLUMNS).map_err(csv_err)?;
        for row in &self.rows {
            let rel = |p: &Path| fsutil::relative_to(p, base).to_string_lossy().into_owned();
            writer
                .write_record([
                    row.patient_id.clone(),
                    rel(&row.bl_volume),
                    rel(&row.bl_mask),
                    rel(&row.fu_volume),
                    rel(&row.fu_mask),
                    numeric::fmt_g17(row.dose_mbq),
                    numeric::fmt_g17(row.weight_kg),
                ])
                .map_err(csv_err)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::format("manifest", e.to_string()))?;
        fsutil::write_atomic(path, &bytes)
    }

    pub fn get(&self, patient_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.patient_id == patient_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.csv");
        let row = |id: &str| ManifestRow {
            patient_id: id.into(),
            bl_volume: dir.path().join(format!("{id}_bl.nii")),
            bl_mask: dir.path().join(format!("{id}_bl_mask.nii")),
            fu_volume: dir.path().join(format!("{id}_fu.nii")),
            fu_mask: dir.path().join(format!("{id}_fu_mask.nii")),
            dose_mbq: 180.0,
            weight_kg: 60.0,
        };
        let m = Manifest {
            rows: vec![row("p000"), row("p001")],
        };
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(
            text.starts_with("patient_id,bl_volume,bl_mask,fu_volume,fu_mask,dose_MBq,weight_kg\n")
        );
        assert!(text.contains("p000,p000_bl.nii,"));
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[1].fu_mask, dir.path().join("p001_fu_mask.nii"));
        assert_eq!(
            back.get("p001").unwrap().acquisition().suv_factor(),
            60.0 / 180.0
        );
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "patient_id,bl_volume,bl_mask,fu_volume,fu_mask,dose_MBq,weight_kg\na,1,2,3,4,180,60\na,1,2,3,4,180,60\n").unwrap();
        assert!(matches!(Manifest::read(&path), Err(Error::Manifest(_))));
        std::fs::write(&path, "patient_id,bl_volume\na,1\n").unwrap();
        assert!(matches!(Manifest::read(&path), Err(Error::Format { .. })));
    }
}
