use serde::{Deserialize, Serialize};

use super::{
    band_pattern, derive_atmos_predictors, make_biased_esm, AtmosStacks, BiasSpec, GrfSpec,
    PredictorNoise,
};
use crate::error::{Error, Result};
use crate::grid::{
    average_pool, cos_lat_weights, pooled_grid, weighted_mean_2d, FieldStack, GridSpec, Units,
};
use crate::metrics::Calendar;
use crate::preprocess::TransformParams;
use crate::rng::{fill_standard_normal, stream, Purpose, StreamId};
use crate::spectral::{RealFft2Scratch, SpectralFilter};

/// Time-mean truth in model space: a base level, an equatorial rain band,
/// dry subtropics and a fixed small-scale "orographic" pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClimatologySpec {
    pub base: f64,
    pub itcz_amplitude: f64,
    pub itcz_lat: f64,
    pub itcz_width: f64,
    pub subtropic_amplitude: f64,
    pub subtropic_lat: f64,
    pub subtropic_width: f64,
    /// Standard deviation of the orographic pattern.
    pub orography_amplitude: f64,
    pub orography_beta: f64,
}

impl Default for ClimatologySpec {
    fn default() -> Self {
        Self {
            base: 0.0,
            itcz_amplitude: 0.3,
            itcz_lat: 6.0,
            itcz_width: 8.0,
            subtropic_amplitude: 0.2,
            subtropic_lat: 25.0,
            subtropic_width: 8.0,
            orography_amplitude: 0.12,
            orography_beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_lat: usize,
    pub n_lon: usize,
    /// High-to-low resolution pooling factor.
    pub factor: usize,
    pub days_per_year: u32,
    pub years: usize,
    /// Leading years used for fitting the predictor, QDM and denoiser.
    pub train_years: usize,
    pub spectral_slope_beta: f64,
    pub anomaly_variance: f64,
    /// Standard deviation of a per-year global shift in model space.
    pub interannual_sd: f64,
    pub climatology: ClimatologySpec,
    /// Maps the model-space truth to mm/d.
    pub transform: TransformParams,
    pub predictor_noise: PredictorNoise,
    pub esm_bias_amplitude: f64,
    pub esm_bias_lat: f64,
    pub esm_bias_width: f64,
    pub esm_blur_cutoff_k: f64,
    pub esm_trend_per_year: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_lat: 180,
            n_lon: 360,
            factor: 4,
            days_per_year: 4,
            years: 80,
            train_years: 20,
            spectral_slope_beta: 2.0,
            anomaly_variance: 0.3,
            interannual_sd: 0.02,
            climatology: ClimatologySpec::default(),
            transform: super::default_truth_transform(),
            predictor_noise: PredictorNoise::default(),
            esm_bias_amplitude: 2.0,
            esm_bias_lat: -8.0,
            esm_bias_width: 5.0,
            esm_blur_cutoff_k: 8.0,
            esm_trend_per_year: 0.01,
        }
    }
}

impl WorldConfig {
    pub fn hr_grid(&self) -> Result<GridSpec> {
        GridSpec::global(self.n_lat, self.n_lon)
    }

    pub fn lr_grid(&self) -> Result<GridSpec> {
        pooled_grid(&self.hr_grid()?, self.factor)
    }

    pub fn calendar(&self) -> Result<Calendar> {
        Calendar::new(self.days_per_year)
    }

    pub fn n_days(&self) -> usize {
        self.years * self.days_per_year as usize
    }

    pub fn n_train_days(&self) -> usize {
        self.train_years * self.days_per_year as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.lr_grid()?;
        self.calendar()?;
        self.transform.validate()?;
        self.predictor_noise.validate()?;
        if self.train_years == 0 || self.train_years > self.years {
            return Err(Error::Config(format!(
                "train_years must be in 1..={} (got {})",
                self.years, self.train_years
            )));
        }
        if !(self.interannual_sd >= 0.0) || !(self.esm_blur_cutoff_k >= 1.0) {
            return Err(Error::Config(
                "interannual_sd must be >= 0 and the ESM blur cutoff >= 1".into(),
            ));
        }
        GrfSpec {
            grid: self.hr_grid()?,
            spectral_slope_beta: self.spectral_slope_beta,
            variance: self.anomaly_variance,
            seed: self.seed,
        }
        .validate()
    }

    pub fn bias_spec(&self) -> Result<BiasSpec> {
        let lr = self.lr_grid()?;
        Ok(BiasSpec {
            mean_bias_pattern: band_pattern(
                &lr,
                self.esm_bias_amplitude,
                self.esm_bias_lat,
                self.esm_bias_width,
            ),
            blur_cutoff_k: self.esm_blur_cutoff_k,
            trend_per_year: self.esm_trend_per_year,
            calendar: self.calendar()?,
        })
    }
}

/// Everything the pipeline and the acceptance checks draw on.
#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub config: WorldConfig,
    /// Model-space time-mean of the truth on the high-resolution grid.
    pub climatology: Vec<f64>,
    pub truth_hr: FieldStack,
    /// Block mean of `truth_hr`.
    pub truth_lr: FieldStack,
    pub esm: FieldStack,
    /// Predictors derived from the truth.
    pub atmos: AtmosStacks,
    /// Predictors of the ESM world, which carries the ESM trend.
    pub esm_atmos: AtmosStacks,
}

fn climatology(cfg: &WorldConfig, grid: &GridSpec) -> Result<Vec<f64>> {
    let c = &cfg.climatology;
    let itcz = band_pattern(grid, c.itcz_amplitude, c.itcz_lat, c.itcz_width);
    let north = band_pattern(
        grid,
        c.subtropic_amplitude,
        c.subtropic_lat,
        c.subtropic_width,
    );
    let south = band_pattern(
        grid,
        c.subtropic_amplitude,
        -c.subtropic_lat,
        c.subtropic_width,
    );
    let mut oro = vec![0.0; grid.len()];
    if c.orography_amplitude > 0.0 {
        let spec = GrfSpec {
            grid: *grid,
            spectral_slope_beta: c.orography_beta,
            variance: 1.0,
            seed: cfg.seed,
        };
        let mut rng = stream(cfg.seed, StreamId::new(Purpose::Climatology, 0, 0));
        fill_standard_normal(&mut rng, &mut oro);
        oro = SpectralFilter::coloring(&spec.spectrum()?)
            .apply(&oro, &mut RealFft2Scratch::default());
    }
    Ok((0..grid.len())
        .map(|k| c.base + itcz[k] - north[k] - south[k] + c.orography_amplitude * oro[k])
        .collect())
}

impl SyntheticSuite {
    pub fn generate(cfg: &WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let hr = cfg.hr_grid()?;
        let cal = cfg.calendar()?;
        let clim = climatology(cfg, &hr)?;
        let anomalies = super::sample_gaussian_field(
            &GrfSpec {
                grid: hr,
                spectral_slope_beta: cfg.spectral_slope_beta,
                variance: cfg.anomaly_variance,
                seed: cfg.seed,
            },
            cfg.n_days(),
        )?;
        let mut shifts = vec![0.0; cfg.years];
        fill_standard_normal(
            &mut stream(cfg.seed, StreamId::new(Purpose::Climatology, 1, 0)),
            &mut shifts,
        );
        let n = hr.len();
        let values: Vec<f64> = anomalies
            .values()
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let year = cal.year((k / n) as i64) as usize;
                cfg.transform
                    .inverse(clim[k % n] + a + cfg.interannual_sd * shifts[year])
            })
            .collect();
        let truth_hr = FieldStack::daily(hr, 0, values, Units::MmPerDay)?;
        let truth_lr = average_pool(&truth_hr, cfg.factor)?;
        let esm = make_biased_esm(&truth_hr, cfg.factor, &cfg.bias_spec()?)?;
        let atmos = derive_atmos_predictors(&truth_hr, cfg.factor, &cfg.predictor_noise, cfg.seed)?;
        // The model world rains more everywhere in proportion to local
        // rainfall, scaled so its global-mean trend matches the ESM's.
        let w = cos_lat_weights(&hr)?;
        let global_mean = weighted_mean_2d(&truth_hr.time_mean(), &hr, &w).max(f64::EPSILON);
        let rate = cfg.esm_trend_per_year / global_mean / cfg.days_per_year as f64;
        let trended: Vec<f64> = truth_hr
            .values()
            .iter()
            .enumerate()
            .map(|(k, x)| x * (1.0 + rate * (k / n) as f64))
            .collect();
        let esm_world = FieldStack::daily(hr, 0, trended, Units::MmPerDay)?;
        let esm_atmos = derive_atmos_predictors(
            &esm_world,
            cfg.factor,
            &cfg.predictor_noise,
            cfg.seed.wrapping_add(1),
        )?;
        Ok(Self {
            config: cfg.clone(),
            climatology: clim,
            truth_hr,
            truth_lr,
            esm,
            atmos,
            esm_atmos,
        })
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.config.n_train_days()
    }

    /// Days after the training years.
    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.config.n_train_days()..self.config.n_days()
    }
}

/// Restricts all four predictor stacks to a time range.
pub fn atmos_range(atmos: &AtmosStacks, range: std::ops::Range<usize>) -> Result<AtmosStacks> {
    let v: Vec<FieldStack> = atmos
        .iter()
        .map(|a| a.time_range(range.clone()))
        .collect::<Result<_>>()?;
    Ok(v.try_into().expect("four stacks"))
}
