//! Segmentation loss kernels over probability maps: Tversky index, focal
//! Tversky loss, binary cross-entropy, their weighted sum, and the analytic
//! gradient of the weighted sum with respect to the predictions.
//!
//! Counts are soft (`TP = Σ y·ŷ`, `FN = Σ y·(1-ŷ)`, `FP = Σ (1-y)·ŷ`) and
//! reduced over the whole map; crisp inputs give the usual integer counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::numeric;

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the log terms.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    /// Penalty on false negatives.
    pub alpha: f64,
    /// Penalty on false positives.
    pub beta: f64,
    /// Focusing exponent.
    pub gamma: f64,
    /// Weight of the focal Tversky term; `1 - epsilon` goes to BCE.
    pub epsilon: f64,
    /// Added to numerator and denominator of the Tversky index.
    pub smooth: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            alpha: 0.7,
            beta: 0.3,
            gamma: 1.5,
            epsilon: 0.7,
            smooth: 1e-6,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.gamma, self.epsilon, self.smooth]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("loss", "parameters must be finite"));
        }
        if self.alpha < 0.0 {
            return Err(Error::param("alpha", "must be >= 0"));
        }
        if self.beta < 0.0 {
            return Err(Error::param("beta", "must be >= 0"));
        }
        if self.gamma <= 0.0 {
            return Err(Error::param("gamma", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::param("epsilon", "must lie in [0, 1]"));
        }
        if self.smooth <= 0.0 {
            return Err(Error::param("smooth", "must be > 0"));
        }
        Ok(())
    }
}

/// Flat map of values in `[0, 1]` with a grid shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    dims: [usize; 3],
    values: Vec<f64>,
}

impl ProbMap {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if values.len() != dims[0] * dims[1] * dims[2] || values.is_empty() {
            return Err(Error::Shape(format!(
                "{} values for dims {dims:?}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data {
                index,
                message: format!("probability {} outside [0, 1]", values[index]),
            });
        }
        Ok(ProbMap { dims, values })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        ProbMap {
            dims: mask.dims(),
            values: mask
                .bits()
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Soft confusion counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftCounts {
    pub tp: f64,
    pub fn_: f64,
    pub fp: f64,
}

fn check(y: &ProbMap, yhat: &ProbMap, p: &LossParams) -> Result<()> {
    if y.dims != yhat.dims {
        return Err(Error::Shape(format!(
            "target {:?} vs prediction {:?}",
            y.dims, yhat.dims
        )));
    }
    if !y.is_binary() {
        return Err(Error::param("y", "targets must be binary"));
    }
    p.validate()
}

pub fn soft_counts(y: &ProbMap, yhat: &ProbMap) -> SoftCounts {
    let pairs = || y.values.iter().zip(&yhat.values);
    SoftCounts {
        tp: numeric::sum(pairs().map(|(t, q)| t * q)),
        fn_: numeric::sum(pairs().map(|(t, q)| t * (1.0 - q))),
        fp: numeric::sum(pairs().map(|(t, q)| (1.0 - t) * q)),
    }
}

fn index_from_counts(c: SoftCounts, p: &LossParams) -> f64 {
    (c.tp + p.smooth) / (c.tp + p.alpha * c.fn_ + p.beta * c.fp + p.smooth)
}

pub fn tversky_index(y: &ProbMap, yhat: &ProbMap, p: &LossParams) -> Result<f64> {
    check(y, yhat, p)?;
    Ok(index_from_counts(soft_counts(y, yhat), p))
}

/// `(1 - ti)^gamma`.
pub fn focal_tversky_from_index(ti: f64, gamma: f64) -> f64 {
    (1.0 - ti).max(0.0).powf(gamma)
}

pub fn focal_tversky_loss(y: &ProbMap, yhat: &ProbMap, p: &LossParams) -> Result<f64> {
    Ok(focal_tversky_from_index(
        tversky_index(y, yhat, p)?,
        p.gamma,
    ))
}

#[inline]
fn clamp_prob(q: f64) -> f64 {
    q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

pub fn bce_loss(y: &ProbMap, yhat: &ProbMap, p: &LossParams) -> Result<f64> {
    check(y, yhat, p)?;
    Ok(bce_unchecked(y, yhat))
}

fn bce_unchecked(y: &ProbMap, yhat: &ProbMap) -> f64 {
    let terms = y.values.iter().zip(&yhat.values).map(|(&t, &q)| {
        let q = clamp_prob(q);
        -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
    });
    numeric::sum(terms) / y.len() as f64
}

/// Per-term values of the weighted loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    #[serde(serialize_with = "numeric::ser_g17")]
    pub tversky_index: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub focal_tversky: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub bce: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub combined: f64,
}

pub fn loss_breakdown(y: &ProbMap, yhat: &ProbMap, p: &LossParams) -> Result<LossBreakdown> {
    check(y, yhat, p)?;
    let ti = index_from_counts(soft_counts(y, yhat), p);
    let ftl = focal_tversky_from_index(ti, p.gamma);
    let bce = bce_unchecked(y, yhat);
    Ok(LossBreakdown {
        tversky_index: ti,
        focal_tversky: ftl,
        bce,
        combined: weighted(p.epsilon, ftl, bce),
    })
}

/// `epsilon * ftl + (1 - epsilon) * bce`, exact at both endpoints.
#[inline]
pub fn weighted(epsilon: f64, ftl: f64, bce: f64) -> f64 {
    if epsilon == 0.0 {
        bce
    } else if epsilon == 1.0 {
        ftl
    } else {
        epsilon * ftl + (1.0 - epsilon) * bce
    }
}

pub fn combined_loss(y: &ProbMap, yhat: &ProbMap, p: &LossParams) -> Result<f64> {
    loss_breakdown(y, yhat, p).map(|b| b.combined)
}

/// Analytic `∂ combined_loss / ∂ ŷ_i` for every voxel.
///
/// Voxels whose prediction sits at or beyond the BCE clamp get a zero BCE
/// derivative (the clamped term is locally constant).
pub fn combined_loss_grad(y: &ProbMap, yhat: &ProbMap, p: &LossParams) -> Result<Vec<f64>> {
    check(y, yhat, p)?;
    let c = soft_counts(y, yhat);
    let num = c.tp + p.smooth;
    let den = c.tp + p.alpha * c.fn_ + p.beta * c.fp + p.smooth;
    let ti = num / den;
    let one_minus = (1.0 - ti).max(0.0);
    // d FTL / d TI
    let dftl_dti = if p.gamma == 1.0 {
        -1.0
    } else if one_minus == 0.0 {
        if p.gamma > 1.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        -p.gamma * one_minus.powf(p.gamma - 1.0)
    };
    let n = y.len() as f64;
    let grad = y
        .values
        .iter()
        .zip(&yhat.values)
        .map(|(&t, &q)| {
            // dN = t, dD = t - alpha t + beta (1 - t)
            let d_den = t - p.alpha * t + p.beta * (1.0 - t);
            let d_ti = (t * den - num * d_den) / (den * den);
            let d_ftl = dftl_dti * d_ti;
            let d_bce = if q > BCE_CLAMP && q < 1.0 - BCE_CLAMP {
                (-t / q + (1.0 - t) / (1.0 - q)) / n
            } else {
                0.0
            };
            let mut g = 0.0;
            if p.epsilon != 0.0 {
                g += p.epsilon * d_ftl;
            }
            if p.epsilon != 1.0 {
                g += (1.0 - p.epsilon) * d_bce;
            }
            g
        })
        .collect();
    Ok(grad)
}

/// Result of comparing the analytic gradient against central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    #[serde(serialize_with = "numeric::ser_g17")]
    pub max_relative_error: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub max_absolute_error: f64,
    pub voxels: usize,
}

/// Central finite differences with step `h` on every voxel.
pub fn finite_difference_check(
    y: &ProbMap,
    yhat: &ProbMap,
    p: &LossParams,
    h: f64,
) -> Result<GradientCheck> {
    let analytic = combined_loss_grad(y, yhat, p)?;
    let mut probe = yhat.clone();
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for i in 0..probe.values.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let up = combined_loss(y, &probe, p)?;
        probe.values[i] = orig - h;
        let down = combined_loss(y, &probe, p)?;
        probe.values[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[i] - fd).abs();
        let scale = analytic[i].abs().max(fd.abs());
        max_abs = max_abs.max(err);
        if scale > 0.0 {
            max_rel = max_rel.max(err / scale);
        }
    }
    Ok(GradientCheck {
        max_relative_error: max_rel,
        max_absolute_error: max_abs,
        voxels: analytic.len(),
    })
}
