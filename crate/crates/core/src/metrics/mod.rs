//! Verification diagnostics: spectra, distributions, profiles, climatology
//! bias, extreme indices, ensemble scores and trends.

mod distribution;
mod ensemble;
mod extremes;
mod fields;
mod psd;
mod trend;

use serde::{Deserialize, Serialize};

pub use distribution::{default_log_edges, histogram, ks_distance, Histogram};
pub use ensemble::{
    crps_ensemble, crps_sample, spread_skill, spread_skill_cases, CrpsResult, SpreadSkillCurve,
};
pub use extremes::{
    cdd, cwd, max_run, r95p, r95p_series, ExtremeIndexResult, ExtremeKind, DEFAULT_WET_THRESHOLD,
    MIN_BASE_WET_DAYS,
};
pub use fields::{
    climatology_mab, lat_profile, lon_profile, relative_change, ClimatologyBias,
    RELATIVE_CHANGE_FLOOR,
};
pub use psd::{mean_psd, Spectrum, EQUATOR_KM};
pub use trend::{annual_means, global_annual_means, global_trend, trend_map, trend_series};

/// Maps day indices onto years. The synthetic suite may use short years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub days_per_year: u32,
}

impl Default for Calendar {
    fn default() -> Self {
        Self { days_per_year: 365 }
    }
}

impl Calendar {
    pub fn new(days_per_year: u32) -> crate::Result<Self> {
        if days_per_year == 0 {
            return Err(crate::Error::InvalidArgument(
                "days_per_year must be positive".into(),
            ));
        }
        Ok(Self { days_per_year })
    }

    pub fn year(&self, day: i64) -> i64 {
        day.div_euclid(self.days_per_year as i64)
    }

    /// Contiguous index ranges of `times` sharing a year, with that year.
    pub fn year_blocks(&self, times: &[i64]) -> Vec<(i64, std::ops::Range<usize>)> {
        let mut out: Vec<(i64, std::ops::Range<usize>)> = Vec::new();
        for (k, &t) in times.iter().enumerate() {
            let y = self.year(t);
            match out.last_mut() {
                Some((last, r)) if *last == y => r.end = k + 1,
                _ => out.push((y, k..k + 1)),
            }
        }
        out
    }
}
