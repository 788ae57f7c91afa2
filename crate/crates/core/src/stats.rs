//! Small numerical helpers shared across modules: compensated summation,
//! type-7 quantiles and ordinary least squares.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Neumaier-compensated sum. The result does not depend on how large the
/// partial sums grow, which keeps long reductions stable.
pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = total + v;
        if total.abs() >= v.abs() {
            comp += (total - t) + v;
        } else {
            comp += (v - t) + total;
        }
        total = t;
    }
    total + comp
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sum(values.iter().copied()) / values.len() as f64
}

/// Population variance (denominator n).
pub fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    sum(values.iter().map(|v| (v - m) * (v - m))) / values.len() as f64
}

/// Type-7 quantile of an already sorted sample: linear interpolation between
/// order statistics at position `(n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sorts a copy of `values` (NaN-free) in ascending order.
pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Result of a simple linear regression `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// Half-width of the two-sided 95% confidence interval of the slope.
    pub ci95_half_width: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn ci95(&self) -> (f64, f64) {
        (
            self.slope - self.ci95_half_width,
            self.slope + self.ci95_half_width,
        )
    }

    pub fn ci_contains(&self, value: f64) -> bool {
        let (lo, hi) = self.ci95();
        value >= lo && value <= hi
    }
}

/// Ordinary least squares with a Student-t confidence interval on the slope.
pub fn ols(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "regression inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            found: n,
        });
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx = sum(x.iter().map(|v| (v - mx) * (v - mx)));
    if sxx == 0.0 {
        return Err(Error::InvalidData("constant time axis".into()));
    }
    let sxy = sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = sum(x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2)));
    let dof = (n - 2) as f64;
    let slope_stderr = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Numerical(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(OlsFit {
        slope,
        intercept,
        slope_stderr,
        ci95_half_width: t * slope_stderr,
        n,
    })
}
