//! Cohort statistics: correlation, paired t-test, box-plot summaries.

use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::numeric::{self, mean, sum};

/// p-values below this are reported as significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

fn check_pair_lengths(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min {
        return Err(Error::param(
            "n",
            format!("need at least {min} pairs, got {}", x.len()),
        ));
    }
    Ok(())
}

struct Moments {
    sxx: f64,
    syy: f64,
    sxy: f64,
    mx: f64,
    my: f64,
}

fn moments(x: &[f64], y: &[f64]) -> Result<Moments> {
    check_pair_lengths(x, y, 3)?;
    let mx = mean(x);
    let my = mean(y);
    let sxx = sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let syy = sum(y.iter().map(|b| (b - my) * (b - my)));
    let sxy = sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    if sxx == 0.0 {
        return Err(Error::Degenerate("x is constant".into()));
    }
    if syy == 0.0 {
        return Err(Error::Degenerate("y is constant".into()));
    }
    Ok(Moments {
        sxx,
        syy,
        sxy,
        mx,
        my,
    })
}

fn r_from(m: &Moments) -> f64 {
    (m.sxy / (m.sxx.sqrt() * m.syy.sqrt())).clamp(-1.0, 1.0)
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(r_from(&moments(x, y)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionLine {
    #[serde(serialize_with = "numeric::ser_g17")]
    pub slope: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub intercept: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub r: f64,
}

/// Ordinary least squares fit of `y` on `x`.
pub fn regression_line(x: &[f64], y: &[f64]) -> Result<RegressionLine> {
    let m = moments(x, y)?;
    let slope = m.sxy / m.sxx;
    Ok(RegressionLine {
        slope,
        intercept: m.my - slope * m.mx,
        r: r_from(&m),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    #[serde(serialize_with = "numeric::ser_g17")]
    pub t: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub p: f64,
    pub df: usize,
    /// Mean of `after - before`.
    #[serde(serialize_with = "numeric::ser_g17")]
    pub mean_diff: f64,
    /// Sample standard deviation of the differences.
    #[serde(serialize_with = "numeric::ser_g17")]
    pub sd: f64,
    /// Standard error of the mean difference.
    #[serde(serialize_with = "numeric::ser_g17")]
    pub sem: f64,
    pub significant: bool,
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Paired t-test on `d = after - before`.
pub fn paired_ttest(before: &[f64], after: &[f64]) -> Result<TTest> {
    check_pair_lengths(before, after, 2)?;
    let d: Vec<f64> = before.iter().zip(after).map(|(b, a)| a - b).collect();
    one_sample_ttest(&d)
}

/// t-test of `mean(d) = 0`.
pub fn one_sample_ttest(d: &[f64]) -> Result<TTest> {
    let n = d.len();
    if n < 2 {
        return Err(Error::param(
            "n",
            format!("need at least 2 differences, got {n}"),
        ));
    }
    let m = mean(d);
    let ss = sum(d.iter().map(|v| (v - m) * (v - m)));
    if ss == 0.0 || d.iter().all(|v| *v == d[0]) {
        return Err(Error::Degenerate("differences have zero variance".into()));
    }
    let df = n - 1;
    let sd = (ss / df as f64).sqrt();
    let sem = sd / (n as f64).sqrt();
    let t = m / sem;
    let p = student_t_two_sided(t, df as f64);
    Ok(TTest {
        t,
        p,
        df,
        mean_diff: m,
        sd,
        sem,
        significant: p < SIGNIFICANCE_LEVEL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxPlot {
    #[serde(serialize_with = "numeric::ser_g17")]
    pub min: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub q1: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub median: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub q3: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub max: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub whisker_low: f64,
    #[serde(serialize_with = "numeric::ser_g17")]
    pub whisker_high: f64,
    #[serde(serialize_with = "numeric::ser_g17_vec")]
    pub outliers: Vec<f64>,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Tukey hinges (the median is included in both halves for odd n) and 1.5·IQR whiskers.
pub fn boxplot_summary(values: &[f64]) -> Result<BoxPlot> {
    if values.is_empty() {
        return Err(Error::EmptyRegion("box plot of an empty list".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::param("values", format!("non-finite value {bad}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let half = n.div_ceil(2);
    let q1 = median_sorted(&v[..half]);
    let q3 = median_sorted(&v[n - half..]);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_low = *v
        .iter()
        .find(|x| **x >= lo_fence)
        .expect("q1 is within its fence");
    let whisker_high = *v
        .iter()
        .rev()
        .find(|x| **x <= hi_fence)
        .expect("q3 is within its fence");
    let outliers = v
        .iter()
        .copied()
        .filter(|x| *x < whisker_low || *x > whisker_high)
        .collect();
    Ok(BoxPlot {
        min: v[0],
        q1,
        median: median_sorted(&v),
        q3,
        max: v[n - 1],
        whisker_low,
        whisker_high,
        outliers,
    })
}
