//! Command-line front end. `run` returns the process exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::biomarkers::{self, BiomarkerSet, ScanRecord, Timepoint};
use crate::cohort::{self, ThresholdChoice};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::io;
use crate::loss::{self, LossParams, ProbMap};
use crate::manifest::Manifest;
use crate::metrics;
use crate::numeric::fmt_g17;
use crate::parallel;
use crate::phantom::{self, PhantomSpec};
use crate::qc;
use crate::report;
use crate::segment::{self, Method, RoiSpec, SegmentConfig};
use crate::volume::AcquisitionInfo;

#[derive(Debug, Parser)]
#[command(
    name = "petquant",
    version,
    about = "PET lesion segmentation, biomarkers and longitudinal QC"
)]
struct Cli {
    /// Worker threads for patient-level parallelism.
    #[arg(long, global = true, env = "PETQUANT_THREADS")]
    threads: Option<usize>,
    /// Print errors as one JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    /// JSON config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classical lesion segmentation of one volume or a manifest.
    Segment(SegmentArgs),
    /// SUVmax, SUVmean, MTV and TLG for a volume/mask pair or a manifest.
    Quantify(QuantifyArgs),
    /// Overlap metrics between a ground-truth and a predicted mask.
    Compare(CompareArgs),
    /// Change between two biomarker JSON files.
    Delta(DeltaArgs),
    /// Quadrant and MTV-ratio quality control over a manifest.
    Qc(QcArgs),
    /// Cohort report tables and statistics.
    Report(ReportArgs),
    /// Synthetic phantoms with known biomarkers.
    Phantom(PhantomArgs),
    /// Loss values and a finite-difference gradient check.
    LossCheck(LossArgs),
}

#[derive(Debug, Args)]
struct AcqArgs {
    /// Injected dose in MBq.
    #[arg(long)]
    dose: Option<f64>,
    /// Body weight in kg.
    #[arg(long)]
    weight: Option<f64>,
}

impl AcqArgs {
    fn acquisition(&self) -> Result<Option<AcquisitionInfo>> {
        match (self.dose, self.weight) {
            (Some(d), Some(w)) => Ok(Some(AcquisitionInfo::new(d, w))),
            (None, None) => Ok(None),
            _ => Err(Error::param(
                "dose/weight",
                "--dose and --weight must be given together",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Pct,
    Contrast,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    /// Input volume (.nii or .json sidecar).
    volume: Option<PathBuf>,
    /// Segment every scan in this manifest.
    #[arg(long, conflicts_with = "volume")]
    manifest: Option<PathBuf>,
    /// Output mask file, or output directory with --manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    method: Option<MethodArg>,
    /// Fraction of the ROI maximum for the pct method.
    #[arg(long)]
    pct: Option<f64>,
    /// Inclusive ROI box as x0,y0,z0,x1,y1,z1.
    #[arg(long, value_delimiter = ',', num_args = 6)]
    roi_box: Option<Vec<usize>>,
    /// Skip largest-component selection and hole filling.
    #[arg(long)]
    no_postprocess: bool,
    #[command(flatten)]
    acq: AcqArgs,
}

#[derive(Debug, Args)]
struct QuantifyArgs {
    volume: Option<PathBuf>,
    mask: Option<PathBuf>,
    /// Quantify both scans of every patient in this manifest.
    #[arg(long, conflicts_with_all = ["volume", "mask"])]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    acq: AcqArgs,
    #[arg(long)]
    patient_id: Option<String>,
    #[arg(long, value_enum)]
    timepoint: Option<TimepointArg>,
    /// Output file (JSON for one scan, CSV for a manifest). Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TimepointArg {
    Baseline,
    Followup,
}

#[derive(Debug, Args)]
struct CompareArgs {
    gt: Option<PathBuf>,
    pred: Option<PathBuf>,
    /// CSV with columns gt,pred (and optionally id) for batch comparison.
    #[arg(long, conflicts_with_all = ["gt", "pred"])]
    pairs: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DeltaArgs {
    baseline: PathBuf,
    followup: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// Use 1 / mean(MTV ratio) of the cohort.
    #[arg(long, conflicts_with = "threshold")]
    derive_threshold: bool,
    /// Fixed MTV-ratio threshold (default: the 7.11 reference value).
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct QcArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    thr: ThresholdArgs,
    /// Export the K most extreme outliers for annotation.
    #[arg(long, value_name = "K")]
    select_extreme: Option<usize>,
    #[arg(long, default_value = "qc")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    thr: ThresholdArgs,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PhantomArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LossArgs {
    /// Ground-truth map with values in [0, 1].
    y: PathBuf,
    /// Predicted map with values in [0, 1].
    yhat: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    smooth: Option<f64>,
    /// Central-difference step; 0 skips the gradient check.
    #[arg(long, default_value_t = 1e-6)]
    fd_step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Config file contents. Every section is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    threads: Option<usize>,
    segment: Option<SegmentConfig>,
    loss: Option<LossParams>,
    qc: QcConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct QcConfig {
    threshold: Option<f64>,
    derive_threshold: bool,
    select_extreme: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let bytes = fsutil::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format("config", format!("{}: {e}", path.display())))
}

struct Ctx {
    threads: usize,
    config: Config,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fsutil::write_atomic(p, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    report::to_json(v)
}

fn need<'a>(v: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    v.as_ref()
        .ok_or_else(|| Error::param(what, format!("missing <{what}> (or use the batch flag)")))
}

fn segment_config(args: &SegmentArgs, ctx: &Ctx) -> Result<SegmentConfig> {
    let mut cfg = ctx.config.segment.clone().unwrap_or_default();
    if let Some(m) = args.method {
        cfg.method = match m {
            MethodArg::Pct => Method::Pct,
            MethodArg::Contrast => Method::Contrast,
        };
    }
    if let Some(p) = args.pct {
        cfg.pct = p;
    }
    if let Some(b) = &args.roi_box {
        cfg.roi = RoiSpec::Box {
            min: [b[0], b[1], b[2]],
            max: [b[3], b[4], b[5]],
        };
    }
    if args.no_postprocess {
        cfg.postprocess = false;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct SegmentSummary {
    mask: PathBuf,
    threshold: crate::numeric::G17,
    iterations: usize,
    converged: bool,
    voxel_count: usize,
    roi: crate::mask::BoundingBox,
}

fn cmd_segment(args: &SegmentArgs, ctx: &Ctx) -> Result<()> {
    let cfg = segment_config(args, ctx)?;
    if let Some(m) = &args.manifest {
        let manifest = Manifest::read(m)?;
        let out = cohort::segment_manifest(&manifest, &cfg, &args.out, ctx.threads)?;
        return out.write(&args.out.join("manifest.csv"));
    }
    let vol = io::read_volume(need(&args.volume, "volume")?)?;
    let vol = match args.acq.acquisition()? {
        Some(a) => cohort::as_suv(vol, Some(&a))?,
        None => vol,
    };
    let o = segment::segment(&vol, &cfg)?;
    io::write_mask(&o.mask, &args.out)?;
    let summary = SegmentSummary {
        mask: args.out.clone(),
        threshold: crate::numeric::G17(o.threshold),
        iterations: o.iterations,
        converged: o.converged,
        voxel_count: o.mask.voxel_count(),
        roi: o.roi,
    };
    emit(None, &json_bytes(&summary))
}

fn quantify_table(evals: &[cohort::PatientEval]) -> Result<Vec<u8>> {
    let header = [
        "patient_id",
        "timepoint",
        "suv_max",
        "suv_mean",
        "mtv_cm3",
        "tlg",
        "voxel_count",
        "centroid_x",
        "centroid_y",
        "centroid_z",
        "quadrant",
    ];
    let rows = evals.iter().flat_map(|e| {
        [("baseline", &e.baseline), ("followup", &e.followup)].map(|(tp, s)| {
            let b = &s.biomarkers;
            let c = s.centroid.position;
            vec![
                e.patient_id.clone(),
                tp.to_string(),
                fmt_g17(b.suv_max),
                fmt_g17(b.suv_mean),
                fmt_g17(b.mtv_cm3),
                fmt_g17(b.tlg),
                b.voxel_count.to_string(),
                fmt_g17(c[0]),
                fmt_g17(c[1]),
                fmt_g17(c[2]),
                s.centroid.quadrant.to_string(),
            ]
        })
    });
    report::csv_bytes(&header, rows)
}

fn cmd_quantify(args: &QuantifyArgs, ctx: &Ctx) -> Result<()> {
    if let Some(m) = &args.manifest {
        let manifest = Manifest::read(m)?;
        let evals = cohort::evaluate(&manifest, ctx.threads)?;
        return emit(args.out.as_deref(), &quantify_table(&evals)?);
    }
    let vol = io::read_volume(need(&args.volume, "volume")?)?;
    let mask = io::read_mask(need(&args.mask, "mask")?)?;
    let acq = args.acq.acquisition()?;
    let vol = cohort::as_suv(vol, acq.as_ref())?;
    let b = biomarkers::extract(&vol, &mask)?;
    let bytes = match (&args.patient_id, args.timepoint) {
        (Some(id), tp) => json_bytes(&ScanRecord {
            patient_id: id.clone(),
            timepoint: match tp {
                Some(TimepointArg::Followup) => Timepoint::Followup,
                _ => Timepoint::Baseline,
            },
            biomarkers: b,
        }),
        (None, _) => json_bytes(&b),
    };
    emit(args.out.as_deref(), &bytes)
}

#[derive(Deserialize)]
struct PairRow {
    #[serde(default)]
    id: Option<String>,
    gt: PathBuf,
    pred: PathBuf,
}

fn opt_g17(x: Option<f64>) -> String {
    x.map(fmt_g17).unwrap_or_default()
}

fn cmd_compare(args: &CompareArgs, ctx: &Ctx) -> Result<()> {
    if let Some(p) = &args.pairs {
        let bytes = fsutil::read(p)?;
        let base = p.parent().unwrap_or(Path::new(""));
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(bytes.as_slice());
        let rows: Vec<PairRow> = rdr
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("pairs", e.to_string()))?;
        let results = parallel::try_map(ctx.threads, &rows, |r| {
            let gt = io::read_mask(base.join(&r.gt))?;
            let pred = io::read_mask(base.join(&r.pred))?;
            metrics::compare(&gt, &pred)
        })?;
        let table = report::csv_bytes(
            &["id", "gt", "pred", "dsc", "iou", "sensitivity", "hd_mm"],
            rows.iter().zip(&results).enumerate().map(|(i, (r, c))| {
                vec![
                    r.id.clone().unwrap_or_else(|| (i + 1).to_string()),
                    r.gt.display().to_string(),
                    r.pred.display().to_string(),
                    fmt_g17(c.dsc),
                    fmt_g17(c.iou),
                    opt_g17(c.sensitivity),
                    opt_g17(c.hd_mm),
                ]
            }),
        )?;
        return emit(args.out.as_deref(), &table);
    }
    let gt = io::read_mask(need(&args.gt, "gt")?)?;
    let pred = io::read_mask(need(&args.pred, "pred")?)?;
    emit(
        args.out.as_deref(),
        &json_bytes(&metrics::compare(&gt, &pred)?),
    )
}

fn read_biomarkers(path: &Path) -> Result<BiomarkerSet> {
    let bytes = fsutil::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format("biomarkers", format!("{}: {e}", path.display())))
}

fn cmd_delta(args: &DeltaArgs) -> Result<()> {
    let bl = read_biomarkers(&args.baseline)?;
    let fu = read_biomarkers(&args.followup)?;
    emit(
        args.out.as_deref(),
        &json_bytes(&biomarkers::delta(&bl, &fu)),
    )
}

fn threshold_choice(args: &ThresholdArgs, cfg: &QcConfig) -> ThresholdChoice {
    if args.derive_threshold {
        ThresholdChoice::Derive
    } else if let Some(t) = args.threshold {
        ThresholdChoice::Fixed(t)
    } else if cfg.derive_threshold {
        ThresholdChoice::Derive
    } else if let Some(t) = cfg.threshold {
        ThresholdChoice::Fixed(t)
    } else {
        ThresholdChoice::Reference
    }
}

fn cmd_qc(args: &QcArgs, ctx: &Ctx) -> Result<()> {
    let manifest = Manifest::read(&args.manifest)?;
    let evals = cohort::evaluate(&manifest, ctx.threads)?;
    let thr = cohort::resolve_threshold(threshold_choice(&args.thr, &ctx.config.qc), &evals)?;
    let records = cohort::qc_records(&evals, &thr);
    let k = args.select_extreme.or(ctx.config.qc.select_extreme);
    let extreme = k
        .map(|k| qc::select_extreme_outliers(&records, k))
        .unwrap_or_default();
    fsutil::create_dir_all(&args.out)?;
    fsutil::write_atomic(
        &args.out.join("qc_report.csv"),
        &report::qc_report(&records)?,
    )?;
    if k.is_some() {
        qc::export_annotation_batch(&extreme, &manifest, &args.out.join("annotation_batch"))?;
    }
    let summary = report::qc_summary(&records, &thr, extreme);
    fsutil::write_atomic(&args.out.join("qc_summary.json"), &json_bytes(&summary))
}

fn cmd_report(args: &ReportArgs, ctx: &Ctx) -> Result<()> {
    let manifest = Manifest::read(&args.manifest)?;
    let evals = cohort::evaluate(&manifest, ctx.threads)?;
    let thr = cohort::resolve_threshold(threshold_choice(&args.thr, &ctx.config.qc), &evals)?;
    let records = cohort::qc_records(&evals, &thr);
    report::write_report(&args.out, &evals, &records, &thr)
}

fn cmd_phantom(args: &PhantomArgs, ctx: &Ctx) -> Result<()> {
    let bytes = fsutil::read(&args.spec)?;
    let spec: PhantomSpec = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Spec(format!("{}: {e}", args.spec.display())))?;
    phantom::write_phantom(&spec, &args.out, ctx.threads)
}

#[derive(Serialize)]
struct LossReport {
    params: LossParams,
    loss: loss::LossBreakdown,
    gradient_check: Option<loss::GradientCheck>,
}

fn prob_map(path: &Path) -> Result<ProbMap> {
    let v = io::read_volume(path)?;
    ProbMap::new(v.dims(), v.into_values())
}

fn cmd_loss(args: &LossArgs, ctx: &Ctx) -> Result<()> {
    let mut p = ctx.config.loss.unwrap_or_default();
    for (slot, v) in [
        (&mut p.alpha, args.alpha),
        (&mut p.beta, args.beta),
        (&mut p.gamma, args.gamma),
        (&mut p.epsilon, args.epsilon),
        (&mut p.smooth, args.smooth),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    let y = prob_map(&args.y)?;
    let yhat = prob_map(&args.yhat)?;
    let breakdown = loss::loss_breakdown(&y, &yhat, &p)?;
    let gradient_check = if args.fd_step > 0.0 {
        Some(loss::finite_difference_check(&y, &yhat, &p, args.fd_step)?)
    } else {
        None
    };
    let r = LossReport {
        params: p,
        loss: breakdown,
        gradient_check,
    };
    emit(args.out.as_deref(), &json_bytes(&r))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    let threads = cli
        .threads
        .or(config.threads)
        .unwrap_or_else(default_threads);
    if threads == 0 {
        return Err(Error::param("threads", "must be >= 1"));
    }
    let ctx = Ctx { threads, config };
    match &cli.command {
        Command::Segment(a) => cmd_segment(a, &ctx),
        Command::Quantify(a) => cmd_quantify(a, &ctx),
        Command::Compare(a) => cmd_compare(a, &ctx),
        Command::Delta(a) => cmd_delta(a),
        Command::Qc(a) => cmd_qc(a, &ctx),
        Command::Report(a) => cmd_report(a, &ctx),
        Command::Phantom(a) => cmd_phantom(a, &ctx),
        Command::LossCheck(a) => cmd_loss(a, &ctx),
    }
}

fn report_error(json: bool, kind: &str, message: &str, code: i32) {
    let mut stderr = std::io::stderr().lock();
    if json {
        let line = serde_json::json!({ "error": kind, "message": message, "exit_code": code });
        let _ = writeln!(stderr, "{line}");
    } else {
        let _ = writeln!(stderr, "error: {message}");
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let json = argv.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            if json {
                report_error(true, "usage", e.to_string().trim_end(), 1);
            } else {
                let _ = e.print();
            }
            return 1;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            report_error(cli.json_errors, e.kind(), &e.to_string(), code);
            code
        }
    }
}
