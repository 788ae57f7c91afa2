use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Calendar;
use crate::error::{Error, Result};
use crate::grid::{expect_units, FieldStack, Units};
use crate::stats;

pub const DEFAULT_WET_THRESHOLD: f64 = 1.0;
/// Pixels with fewer base-period wet days get flagged for R95p.
pub const MIN_BASE_WET_DAYS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremeKind {
    R95p,
    Cwd,
    Cdd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeIndexResult {
    pub kind: ExtremeKind,
    pub wet_threshold: f64,
    pub years: Vec<i64>,
    /// Row-major `[year][pixel]`.
    pub annual: Vec<f64>,
    /// Mean over years per pixel.
    pub map: Vec<f64>,
    /// Pixels whose base period was too dry for a stable percentile (R95p only).
    pub flagged: Vec<bool>,
}

impl ExtremeIndexResult {
    pub fn n_pixels(&self) -> usize {
        self.map.len()
    }

    pub fn year_values(&self, y: usize) -> &[f64] {
        let n = self.n_pixels();
        &self.annual[y * n..(y + 1) * n]
    }
}

/// Type-7 95th percentile of the wet days in `base`, or `None` if there are
/// fewer than [`MIN_BASE_WET_DAYS`] of them.
pub fn r95p_series(base: &[f64], wet_threshold: f64) -> Option<f64> {
    let wet: Vec<f64> = base
        .iter()
        .copied()
        .filter(|&v| v >= wet_threshold)
        .collect();
    if wet.len() < MIN_BASE_WET_DAYS {
        return None;
    }
    Some(stats::quantile_sorted(&stats::sorted_copy(&wet), 0.95))
}

/// Longest run of consecutive elements satisfying `pred`.
pub fn max_run(values: &[f64], pred: impl Fn(f64) -> bool) -> usize {
    let (mut best, mut cur) = (0, 0);
    for &v in values {
        if pred(v) {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

fn check(f: &FieldStack, wet_threshold: f64) -> Result<()> {
    expect_units(f.units(), Units::MmPerDay)?;
    if !(wet_threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "wet threshold must be positive, got {wet_threshold}"
        )));
    }
    Ok(())
}

fn per_year<F>(
    f: &FieldStack,
    cal: Calendar,
    kind: ExtremeKind,
    wet: f64,
    flagged: Vec<bool>,
    index: F,
) -> ExtremeIndexResult
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    let np = f.grid().len();
    let blocks = cal.year_blocks(f.times());
    // pixel-major evaluation keeps each series contiguous
    let per_pixel: Vec<Vec<f64>> = (0..np)
        .into_par_iter()
        .map(|p| {
            let series: Vec<f64> = f.slices().map(|s| s[p]).collect();
            blocks
                .iter()
                .map(|(_, r)| index(p, &series[r.clone()]))
                .collect()
        })
        .collect();
    let ny = blocks.len();
    let mut annual = vec![0.0; ny * np];
    for (p, vals) in per_pixel.iter().enumerate() {
        for (y, v) in vals.iter().enumerate() {
            annual[y * np + p] = *v;
        }
    }
    let map = per_pixel
        .iter()
        .map(|v| if v.is_empty() { 0.0 } else { stats::mean(v) })
        .collect();
    ExtremeIndexResult {
        kind,
        wet_threshold: wet,
        years: blocks.iter().map(|(y, _)| *y).collect(),
        annual,
        map,
        flagged,
    }
}

/// Annual total of days strictly above the base-period wet-day 95th
/// percentile. Flagged pixels report 0.
pub fn r95p(
    f: &FieldStack,
    base: &FieldStack,
    wet_threshold: f64,
    cal: Calendar,
) -> Result<ExtremeIndexResult> {
    check(f, wet_threshold)?;
    check(base, wet_threshold)?;
    f.grid().ensure_matches(base.grid())?;
    if base.n_time() == 0 {
        return Err(Error::InsufficientSamples {
            needed: 1,
            found: 0,
        });
    }
    let thresholds: Vec<Option<f64>> = (0..base.grid().len())
        .into_par_iter()
        .map(|p| {
            let s: Vec<f64> = base.slices().map(|sl| sl[p]).collect();
            r95p_series(&s, wet_threshold)
        })
        .collect();
    let flagged = thresholds.iter().map(|t| t.is_none()).collect();
    Ok(per_year(
        f,
        cal,
        ExtremeKind::R95p,
        wet_threshold,
        flagged,
        |p, days| match thresholds[p] {
            Some(th) => stats::sum(days.iter().copied().filter(|&v| v > th)),
            None => 0.0,
        },
    ))
}

/// Annual maximum run of wet days (value >= threshold).
pub fn cwd(f: &FieldStack, wet_threshold: f64, cal: Calendar) -> Result<ExtremeIndexResult> {
    check(f, wet_threshold)?;
    let flagged = vec![false; f.grid().len()];
    Ok(per_year(
        f,
        cal,
        ExtremeKind::Cwd,
        wet_threshold,
        flagged,
        |_, d| max_run(d, |v| v >= wet_threshold) as f64,
    ))
}

/// Annual maximum run of dry days (value < threshold).
pub fn cdd(f: &FieldStack, wet_threshold: f64, cal: Calendar) -> Result<ExtremeIndexResult> {
    check(f, wet_threshold)?;
    let flagged = vec![false; f.grid().len()];
    Ok(per_year(
        f,
        cal,
        ExtremeKind::Cdd,
        wet_threshold,
        flagged,
        |_, d| max_run(d, |v| v < wet_threshold) as f64,
    ))
}
