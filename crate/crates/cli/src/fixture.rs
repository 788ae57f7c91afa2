use precipgen::diffusion::NoiseSchedule;
use precipgen::metrics::Spectrum;
use precipgen::spectral::{RealFft2Scratch, SpectralFilter};
use precipgen::synth::{sample_gaussian_field, GrfSpec};
use precipgen::{FieldStack, GridSpec, Result};

pub const FIXTURE_CUTOFF: usize = 32;

/// Reference GRF and a copy with every zonal harmonic >= 32 removed, so its
/// zonal spectrum is zero from k = 32 on.
pub fn calibration_fixture() -> Result<(FieldStack, FieldStack)> {
    let grid = GridSpec::global(64, 128)?;
    let reference = sample_gaussian_field(
        &GrfSpec {
            grid,
            spectral_slope_beta: 3.0,
            variance: 0.3,
            seed: 32,
        },
        16,
    )?;
    let cut = SpectralFilter::zonal(&grid, |k| if k < FIXTURE_CUTOFF as f64 { 1.0 } else { 0.0 });
    let mut scratch = RealFft2Scratch::default();
    let values: Vec<f64> = reference.slices().flat_map(|s| cut.apply(s, &mut scratch)).collect();
    let prediction = FieldStack::new(grid, reference.times().to_vec(), values, reference.units())?;
    Ok((reference, prediction))
}

/// Exhaustive scan: the first index whose white-noise floor covers the
/// reference power at `k`.
pub fn scan_tau(reference: &Spectrum, k: usize, sched: &NoiseSchedule) -> Option<usize> {
    (0..=sched.n_steps).find(|&t| reference.white_noise_floor(k, 1.0 - sched.alpha_bar[t]) >= reference.power[k])
}
