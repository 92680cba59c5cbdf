//! PET lesion quantification: volume I/O, classical segmentation, loss kernels,
//! overlap metrics, biomarkers, longitudinal QC, cohort statistics and phantoms.

pub mod biomarkers;
pub mod cli;
pub mod cohort;
pub mod error;
pub mod fsutil;
pub mod io;
pub mod loss;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub mod numeric;
pub mod parallel;
pub mod phantom;
pub mod qc;
pub mod report;
pub mod segment;
pub mod stats;
pub mod volume;

pub use biomarkers::{BiomarkerSet, DeltaSet};
pub use error::{Error, Result};
pub use loss::{LossParams, ProbMap};
pub use mask::{BinaryMask, Connectivity, Quadrant};
pub use qc::{QcRecord, QcThreshold};
pub use volume::{AcquisitionInfo, Geometry, IntensityUnit, Volume3D};
