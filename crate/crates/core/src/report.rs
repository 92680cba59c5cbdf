//! Cohort report files: biomarker tables, deltas, box plots, QC scatter and statistics.

use std::path::Path;

use serde::Serialize;

use crate::biomarkers::{self, BiomarkerSet};
use crate::cohort::PatientEval;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::numeric::{self, fmt_g17};
use crate::qc::{QcRecord, QcThreshold};
use crate::stats::{self, BoxPlot, RegressionLine, TTest};

pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::format("csv", e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r.into_iter().collect::<Vec<_>>())
            .map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| Error::format("csv", e.to_string()))
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_g17).unwrap_or_default()
}

pub fn biomarker_table(evals: &[PatientEval]) -> Result<Vec<u8>> {
    let header = [
        "patient_id",
        "bl_suv_max",
        "bl_suv_mean",
        "bl_mtv_cm3",
        "bl_tlg",
        "bl_voxels",
        "fu_suv_max",
        "fu_suv_mean",
        "fu_mtv_cm3",
        "fu_tlg",
        "fu_voxels",
    ];
    csv_bytes(
        &header,
        evals.iter().map(|e| {
            let b = &e.baseline.biomarkers;
            let f = &e.followup.biomarkers;
            vec![
                e.patient_id.clone(),
                fmt_g17(b.suv_max),
                fmt_g17(b.suv_mean),
                fmt_g17(b.mtv_cm3),
                fmt_g17(b.tlg),
                b.voxel_count.to_string(),
                fmt_g17(f.suv_max),
                fmt_g17(f.suv_mean),
                fmt_g17(f.mtv_cm3),
                fmt_g17(f.tlg),
                f.voxel_count.to_string(),
            ]
        }),
    )
}

pub fn deltas_table(evals: &[PatientEval]) -> Result<Vec<u8>> {
    let header = [
        "patient_id",
        "d_suv_max",
        "d_mtv_cm3",
        "d_tlg",
        "pct_d_suv_max",
        "mtv_ratio",
    ];
    csv_bytes(
        &header,
        evals.iter().map(|e| {
            let d = biomarkers::delta(&e.baseline.biomarkers, &e.followup.biomarkers);
            vec![
                e.patient_id.clone(),
                fmt_g17(d.d_suv_max),
                fmt_g17(d.d_mtv_cm3),
                fmt_g17(d.d_tlg),
                opt(d.pct_d_suv_max),
                opt(d.mtv_ratio),
            ]
        }),
    )
}

/// One row per patient: baseline MTV, MTV ratio, and whether the ratio check failed.
pub fn qc_scatter(records: &[QcRecord]) -> Result<Vec<u8>> {
    csv_bytes(
        &["patient_id", "bl_mtv", "mtv_ratio", "flagged"],
        records.iter().map(|r| {
            vec![
                r.patient_id.clone(),
                fmt_g17(r.baseline_mtv_cm3),
                fmt_g17(r.mtv_ratio),
                (!r.ratio_ok).to_string(),
            ]
        }),
    )
}

/// Full per-patient QC table.
pub fn qc_report(records: &[QcRecord]) -> Result<Vec<u8>> {
    let header = [
        "patient_id",
        "baseline_quadrant",
        "followup_quadrant",
        "bl_mtv",
        "fu_mtv",
        "mtv_ratio",
        "quadrant_ok",
        "ratio_ok",
        "validated",
        "outlier_score",
        "reasons",
    ];
    csv_bytes(
        &header,
        records.iter().map(|r| {
            vec![
                r.patient_id.clone(),
                r.baseline_quadrant.to_string(),
                r.followup_quadrant.to_string(),
                fmt_g17(r.baseline_mtv_cm3),
                fmt_g17(r.followup_mtv_cm3),
                fmt_g17(r.mtv_ratio),
                r.quadrant_ok.to_string(),
                r.ratio_ok.to_string(),
                r.validated().to_string(),
                fmt_g17(r.outlier_score),
                r.reasons
                    .iter()
                    .map(|x| x.as_str())
                    .collect::<Vec<_>>()
                    .join(";"),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QcSummary {
    pub threshold: QcThreshold,
    pub n_records: usize,
    pub n_outliers: usize,
    pub n_quadrant_mismatch: usize,
    pub n_validated: usize,
    pub extreme_ids: Vec<String>,
}

pub fn qc_summary(records: &[QcRecord], thr: &QcThreshold, extreme_ids: Vec<String>) -> QcSummary {
    QcSummary {
        threshold: *thr,
        n_records: records.len(),
        n_outliers: records.iter().filter(|r| !r.ratio_ok).count(),
        n_quadrant_mismatch: records.iter().filter(|r| !r.quadrant_ok).count(),
        n_validated: records.iter().filter(|r| r.validated()).count(),
        extreme_ids,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Panel {
    pub baseline: BoxPlot,
    pub followup: BoxPlot,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxPlots {
    pub suv_max: Panel,
    pub mtv_cm3: Panel,
    pub tlg: Panel,
}

type Field = fn(&BiomarkerSet) -> f64;

const FIELDS: [(&str, Field); 3] = [
    ("suv_max", |b| b.suv_max),
    ("mtv_cm3", |b| b.mtv_cm3),
    ("tlg", |b| b.tlg),
];

fn column(evals: &[PatientEval], f: Field, followup: bool) -> Vec<f64> {
    evals
        .iter()
        .map(|e| {
            f(if followup {
                &e.followup.biomarkers
            } else {
                &e.baseline.biomarkers
            })
        })
        .collect()
}

pub fn boxplots(evals: &[PatientEval]) -> Result<BoxPlots> {
    let panel = |f: Field| -> Result<Panel> {
        Ok(Panel {
            baseline: stats::boxplot_summary(&column(evals, f, false))?,
            followup: stats::boxplot_summary(&column(evals, f, true))?,
        })
    };
    Ok(BoxPlots {
        suv_max: panel(FIELDS[0].1)?,
        mtv_cm3: panel(FIELDS[1].1)?,
        tlg: panel(FIELDS[2].1)?,
    })
}

/// Per-biomarker cohort means and paired comparison of follow-up against baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaStats {
    #[serde(serialize_with = "numeric::ser_g17")]
    pub baseline_mean: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub followup_mean: f64,
    /// Mean of per-patient differences (follow-up minus baseline).
    #[serde(serialize_with = "numeric::ser_g17")]
    pub mean: f64,
    /// Sample SD of the differences; `null` for a single patient.
    #[serde(serialize_with = "numeric::ser_g17_opt")]
    pub sd: Option<f64>,
    #[serde(serialize_with = "numeric::ser_g17_opt")]
    pub sem: Option<f64>,
    #[serde(serialize_with = "numeric::ser_g17_opt")]
    pub t: Option<f64>,
    #[serde(serialize_with = "numeric::ser_g17_opt")]
    pub p: Option<f64>,
    pub df: Option<usize>,
    pub significant: Option<bool>,
    /// Pearson r between baseline and follow-up values, when defined.
    #[serde(serialize_with = "numeric::ser_g17_opt")]
    pub r_baseline_followup: Option<f64>,
    pub warnings: Vec<String>,
}

fn delta_stats(bl: &[f64], fu: &[f64]) -> DeltaStats {
    let diffs: Vec<f64> = bl.iter().zip(fu).map(|(b, f)| f - b).collect();
    let mut warnings = Vec::new();
    let test: Option<TTest> = match stats::paired_ttest(bl, fu) {
        Ok(t) => Some(t),
        Err(e) => {
            warnings.push(format!("paired t-test unavailable: {e}"));
            None
        }
    };
    let r = stats::pearson(bl, fu).ok();
    DeltaStats {
        baseline_mean: numeric::mean(bl),
        followup_mean: numeric::mean(fu),
        mean: numeric::mean(&diffs),
        sd: test.map(|t| t.sd),
        sem: test.map(|t| t.sem),
        t: test.map(|t| t.t),
        p: test.map(|t| t.p),
        df: test.map(|t| t.df),
        significant: test.map(|t| t.significant),
        r_baseline_followup: r,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaBlock {
    pub suv_max: DeltaStats,
    pub mtv_cm3: DeltaStats,
    pub tlg: DeltaStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortStats {
    pub n: usize,
    pub delta: DeltaBlock,
    /// MTV ratio against baseline MTV, as in the QC scatter.
    pub qc_regression: Option<RegressionLine>,
    pub qc: QcSummary,
}

pub fn cohort_stats(evals: &[PatientEval], records: &[QcRecord], qc: QcSummary) -> CohortStats {
    let ds = |f: Field| delta_stats(&column(evals, f, false), &column(evals, f, true));
    let finite: Vec<&QcRecord> = records.iter().filter(|r| r.mtv_ratio.is_finite()).collect();
    let x: Vec<f64> = finite.iter().map(|r| r.baseline_mtv_cm3).collect();
    let y: Vec<f64> = finite.iter().map(|r| r.mtv_ratio).collect();
    CohortStats {
        n: evals.len(),
        delta: DeltaBlock {
            suv_max: ds(FIELDS[0].1),
            mtv_cm3: ds(FIELDS[1].1),
            tlg: ds(FIELDS[2].1),
        },
        qc_regression: stats::regression_line(&x, &y).ok(),
        qc,
    }
}

fn json(v: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report serializes");
    out.push(b'\n');
    out
}

/// Writes the five report files into `out_dir`.
pub fn write_report(
    out_dir: &Path,
    evals: &[PatientEval],
    records: &[QcRecord],
    thr: &QcThreshold,
) -> Result<()> {
    if evals.is_empty() {
        return Err(Error::EmptyRegion(
            "report needs at least one patient".into(),
        ));
    }
    fsutil::create_dir_all(out_dir)?;
    let summary = qc_summary(records, thr, Vec::new());
    fsutil::write_atomic(
        &out_dir.join("biomarker_table.csv"),
        &biomarker_table(evals)?,
    )?;
    fsutil::write_atomic(&out_dir.join("deltas.csv"), &deltas_table(evals)?)?;
    fsutil::write_atomic(&out_dir.join("boxplot.json"), &json(&boxplots(evals)?))?;
    fsutil::write_atomic(&out_dir.join("qc_scatter.csv"), &qc_scatter(records)?)?;
    fsutil::write_atomic(
        &out_dir.join("stats.json"),
        &json(&cohort_stats(evals, records, summary)),
    )?;
    Ok(())
}

pub(crate) fn to_json(v: &impl Serialize) -> Vec<u8> {
    json(v)
}
