use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{average_pool, expect_units, pooled_grid, FieldStack, GridSpec, Units};
use crate::metrics::Calendar;
use crate::spectral::{RealFft2Scratch, SpectralFilter};

/// Distortions that turn pooled truth into a pseudo-ESM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    /// Additive mm/d pattern on the low-resolution grid.
    pub mean_bias_pattern: Vec<f64>,
    /// Radial wavenumbers above this are removed.
    pub blur_cutoff_k: f64,
    /// Linear drift in mm/d per year, measured from the first time step.
    pub trend_per_year: f64,
    pub calendar: Calendar,
}

impl BiasSpec {
    /// No bias, no trend, and a cutoff above every resolved wavenumber.
    pub fn none(lr: &GridSpec) -> Self {
        Self {
            mean_bias_pattern: vec![0.0; lr.len()],
            blur_cutoff_k: f64::INFINITY,
            trend_per_year: 0.0,
            calendar: Calendar::default(),
        }
    }

    pub fn validate(&self, lr: &GridSpec) -> Result<()> {
        if self.mean_bias_pattern.len() != lr.len() {
            return Err(Error::Shape(format!(
                "bias pattern has {} cells, low-resolution grid {lr} has {}",
                self.mean_bias_pattern.len(),
                lr.len()
            )));
        }
        if !(self.blur_cutoff_k >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "blur cutoff must be at least 1 (got {})",
                self.blur_cutoff_k
            )));
        }
        if !self.trend_per_year.is_finite() || self.mean_bias_pattern.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument("bias values must be finite".into()));
        }
        Ok(())
    }
}

/// Gaussian band in latitude, `amplitude * exp(-(lat - center)^2 / (2 width^2))`.
pub fn band_pattern(grid: &GridSpec, amplitude: f64, center_lat: f64, width: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.n_lat {
        let d = (grid.lat(i) - center_lat) / width;
        let v = amplitude * (-0.5 * d * d).exp();
        out.extend(std::iter::repeat(v).take(grid.n_lon));
    }
    out
}

/// Pools `truth_hr` by `factor`, adds the bias pattern, removes wavenumbers
/// above the cutoff, adds the trend and clips at 0 mm/d.
pub fn make_biased_esm(
    truth_hr: &FieldStack,
    factor: usize,
    bias: &BiasSpec,
) -> Result<FieldStack> {
    expect_units(truth_hr.units(), Units::MmPerDay)?;
    let lr = pooled_grid(truth_hr.grid(), factor)?;
    bias.validate(&lr)?;
    let pooled = average_pool(truth_hr, factor)?;
    let filter = (bias.blur_cutoff_k.is_finite())
        .then(|| SpectralFilter::radial(&lr, |k| if k > bias.blur_cutoff_k { 0.0 } else { 1.0 }));
    let t0 = pooled.times().first().copied().unwrap_or(0);
    let dpy = bias.calendar.days_per_year as f64;
    let mut scratch = RealFft2Scratch::default();
    let mut values = Vec::with_capacity(pooled.values().len());
    for (slice, &t) in pooled.slices().zip(pooled.times()) {
        let biased: Vec<f64> = slice
            .iter()
            .zip(&bias.mean_bias_pattern)
            .map(|(x, b)| x + b)
            .collect();
        let blurred = match &filter {
            Some(f) => f.apply(&biased, &mut scratch),
            None => biased,
        };
        let drift = bias.trend_per_year * (t - t0) as f64 / dpy;
        values.extend(blurred.into_iter().map(|v| (v + drift).max(0.0)));
    }
    let mut out = FieldStack::new(lr, pooled.times().to_vec(), values, Units::MmPerDay)?;
    out.set_variable(truth_hr.variable());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cos_lat_weights;
    use crate::metrics::mean_psd;
    use crate::synth::{sample_grf, GrfSpec};

    fn truth(n_time: usize) -> FieldStack {
        let spec = GrfSpec {
            grid: GridSpec::global(32, 64).unwrap(),
            spectral_slope_beta: 2.0,
            variance: 0.3,
            seed: 4,
        };
        sample_grf(&spec, n_time).unwrap()
    }

    #[test]
    fn zero_bias_is_pooled_truth() {
        let t = truth(4);
        let lr = pooled_grid(t.grid(), 4).unwrap();
        let esm = make_biased_esm(&t, 4, &BiasSpec::none(&lr)).unwrap();
        assert_eq!(esm, average_pool(&t, 4).unwrap());
    }

    #[test]
    fn band_bias_shows_in_climatology_difference() {
        let t = truth(200);
        let lr = pooled_grid(t.grid(), 2).unwrap();
        let mut bias = BiasSpec::none(&lr);
        bias.mean_bias_pattern = band_pattern(&lr, 2.0, 0.0, 6.0);
        let esm = make_biased_esm(&t, 2, &bias).unwrap();
        let diff: Vec<f64> = esm
            .time_mean()
            .iter()
            .zip(average_pool(&t, 2).unwrap().time_mean())
            .map(|(a, b)| a - b)
            .collect();
        for (d, b) in diff.iter().zip(&bias.mean_bias_pattern) {
            // clipping at 0 can only add, and only where the field was near dry
            assert!((d - b).abs() < 0.05, "difference {d} vs band {b}");
        }
    }

    #[test]
    fn blur_removes_small_scales() {
        let spec = GrfSpec {
            grid: GridSpec::global(64, 128).unwrap(),
            spectral_slope_beta: 1.0,
            variance: 0.3,
            seed: 8,
        };
        let t = sample_grf(&spec, 20).unwrap();
        let lr = pooled_grid(t.grid(), 1).unwrap();
        let mut bias = BiasSpec::none(&lr);
        bias.blur_cutoff_k = 20.0;
        let esm = make_biased_esm(&t, 1, &bias).unwrap();
        let w = cos_lat_weights(&lr).unwrap();
        let before = mean_psd(&t, &w).unwrap();
        let after = mean_psd(&esm, &w).unwrap();
        for k in 21..before.len() {
            assert!(
                after.power[k] <= 0.01 * before.power[k],
                "k={k}: {} vs {}",
                after.power[k],
                before.power[k]
            );
        }
    }

    #[test]
    fn trend_is_linear_in_years() {
        let g = GridSpec::global(4, 8).unwrap();
        let t = FieldStack::filled(g, (0..20).collect(), 1.0, Units::MmPerDay).unwrap();
        let mut bias = BiasSpec::none(&g);
        bias.trend_per_year = 0.5;
        bias.calendar = Calendar::new(10).unwrap();
        let esm = make_biased_esm(&t, 1, &bias).unwrap();
        assert!((esm.get(10, 0, 0) - 1.5).abs() < 1e-12);
        assert!((esm.get(15, 2, 3) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        let t = truth(1);
        let lr = pooled_grid(t.grid(), 4).unwrap();
        let mut bias = BiasSpec::none(&lr);
        bias.blur_cutoff_k = 0.5;
        assert!(make_biased_esm(&t, 4, &bias).is_err());
        let bias = BiasSpec::none(t.grid());
        assert!(make_biased_esm(&t, 4, &bias).is_err());
    }
}
