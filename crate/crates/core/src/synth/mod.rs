//! Synthetic desk-scale data: Gaussian-random-field truth, a biased
//! pseudo-ESM, surrogate atmospheric predictors and a ridge predictor.

mod esm;
mod predictors;
mod world;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldStack, GridSpec, Units};
use crate::preprocess::{inverse_transform, TransformParams};
use crate::rng::{fill_standard_normal, stream, Purpose, StreamId};
use crate::spectral::{RealFft2Scratch, SpectralFilter, Spectrum2d};

pub use esm::{band_pattern, make_biased_esm, BiasSpec};
pub use predictors::{
    derive_atmos_predictors, fit_linear_predictor, fit_linear_predictor_with, predict, AtmosStacks,
    LinearPredictor, PredictorNoise, ATMOS_VARIABLES,
};
pub use world::{atmos_range, ClimatologySpec, SyntheticSuite, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub grid: GridSpec,
    /// Power falls off as `k^-beta`.
    pub spectral_slope_beta: f64,
    pub variance: f64,
    pub seed: u64,
}

impl GrfSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.spectral_slope_beta >= 0.0)
            || !(self.variance > 0.0)
            || !self.variance.is_finite()
        {
            return Err(Error::InvalidArgument(format!(
                "GRF needs beta >= 0 and variance > 0 (got {}, {})",
                self.spectral_slope_beta, self.variance
            )));
        }
        Ok(())
    }

    pub fn spectrum(&self) -> Result<Spectrum2d> {
        self.validate()?;
        Spectrum2d::power_law(&self.grid, self.spectral_slope_beta, self.variance)
    }
}

/// Zero-mean Gaussian fields with the spectrum of `spec`, in model space.
///
/// Slice `t` colors white noise from stream `(Truth, 0, t)`; the real FFT of
/// real white noise gives Hermitian, i.i.d. complex modes, so the output is
/// real by construction.
pub fn sample_gaussian_field(spec: &GrfSpec, n_time: usize) -> Result<FieldStack> {
    let filter = SpectralFilter::coloring(&spec.spectrum()?);
    let n = spec.grid.len();
    let slices: Vec<Vec<f64>> = (0..n_time)
        .into_par_iter()
        .map_init(RealFft2Scratch::default, |scratch, t| {
            let mut rng = stream(spec.seed, StreamId::new(Purpose::Truth, 0, t as u64));
            let mut white = vec![0.0; n];
            fill_standard_normal(&mut rng, &mut white);
            filter.apply(&white, scratch)
        })
        .collect();
    FieldStack::daily(spec.grid, 0, slices.concat(), Units::Transformed)
}

/// Default generator transform: `log10(x + 1) = 0.35 + 0.8 y`, so `y = 0` is
/// about 1.2 mm/d and `y < -0.44` is dry.
pub fn default_truth_transform() -> TransformParams {
    TransformParams::precipitation(0.35, 0.2, -4.0, 4.0).expect("valid constants")
}

/// Precipitation-like GRF in mm/d: the Gaussian field pushed through the
/// inverse of `default_truth_transform`, zero where it falls below the dry floor.
pub fn sample_grf(spec: &GrfSpec, n_time: usize) -> Result<FieldStack> {
    inverse_transform(
        &sample_gaussian_field(spec, n_time)?,
        &default_truth_transform(),
    )
}
