use super::Calendar;
use crate::error::{Error, Result};
use crate::grid::{weighted_global_mean, FieldStack, LatWeights};
use crate::stats::{self, OlsFit};

/// Annual means of a daily series: `(years, means)`.
pub fn annual_means(times: &[i64], values: &[f64], cal: Calendar) -> Result<(Vec<f64>, Vec<f64>)> {
    if times.len() != values.len() {
        return Err(Error::Shape("times and values differ in length".into()));
    }
    let blocks = cal.year_blocks(times);
    Ok(blocks
        .into_iter()
        .map(|(y, r)| (y as f64, stats::mean(&values[r])))
        .unzip())
}

/// OLS slope in units per year; needs at least three annual points.
pub fn trend_series(years: &[f64], annual: &[f64]) -> Result<OlsFit> {
    stats::ols(years, annual)
}

/// Latitude-weighted global mean, averaged per year.
pub fn global_annual_means(
    f: &FieldStack,
    w: &LatWeights,
    cal: Calendar,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = weighted_global_mean(f, w)?;
    annual_means(f.times(), &g, cal)
}

pub fn global_trend(f: &FieldStack, w: &LatWeights, cal: Calendar) -> Result<OlsFit> {
    let (years, means) = global_annual_means(f, w, cal)?;
    trend_series(&years, &means)
}

/// Per-pixel OLS slope of annual means.
pub fn trend_map(f: &FieldStack, cal: Calendar) -> Result<Vec<f64>> {
    let blocks = cal.year_blocks(f.times());
    if blocks.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            found: blocks.len(),
        });
    }
    let years: Vec<f64> = blocks.iter().map(|(y, _)| *y as f64).collect();
    (0..f.grid().len())
        .map(|p| {
            let annual: Vec<f64> = blocks
                .iter()
                .map(|(_, r)| stats::mean(&r.clone().map(|t| f.slice(t)[p]).collect::<Vec<_>>()))
                .collect();
            Ok(stats::ols(&years, &annual)?.slope)
        })
        .collect()
}
