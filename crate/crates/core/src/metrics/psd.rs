use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_weights, FieldStack, LatWeights};

/// Equatorial circumference in km, used only to label wavenumbers.
pub const EQUATOR_KM: f64 = 40_075.0;

/// Zonal power spectrum on wavenumbers `0..=n_lon/2`.
///
/// One-sided and normalized so that the powers sum to the mean square of a
/// row: `P(0) = |F_0|^2/n^2`, `P(k) = 2|F_k|^2/n^2` for interior `k` and
/// `P(n/2) = |F_{n/2}|^2/n^2` when `n` is even.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub n_lon: usize,
    pub wavenumbers: Vec<usize>,
    pub power: Vec<f64>,
    pub meta: String,
}

impl Spectrum {
    pub fn new(n_lon: usize, power: Vec<f64>, meta: impl Into<String>) -> Result<Self> {
        if power.len() != n_lon / 2 + 1 {
            return Err(Error::Shape(format!(
                "{} spectral values for a {n_lon}-cell row",
                power.len()
            )));
        }
        if power.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidData(
                "spectral power must be nonnegative".into(),
            ));
        }
        Ok(Self {
            n_lon,
            wavenumbers: (0..power.len()).collect(),
            power,
            meta: meta.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn total(&self) -> f64 {
        crate::stats::sum(self.power.iter().copied())
    }

    /// Number of DFT coefficients folded into bin `k`.
    pub fn multiplicity(&self, k: usize) -> f64 {
        if k == 0 || (self.n_lon % 2 == 0 && k == self.n_lon / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// Expected power at `k` of white noise with the given variance.
    pub fn white_noise_floor(&self, k: usize, variance: f64) -> f64 {
        self.multiplicity(k) * variance / self.n_lon as f64
    }

    pub fn ensure_same_axis(&self, other: &Spectrum) -> Result<()> {
        if self.n_lon != other.n_lon || self.wavenumbers != other.wavenumbers {
            return Err(Error::GridMismatch(format!(
                "spectra on {}-cell and {}-cell rows",
                self.n_lon, other.n_lon
            )));
        }
        Ok(())
    }

    /// Equatorial wavelength in km for axis labels; infinite at k = 0.
    pub fn wavelength_km(k: usize) -> f64 {
        EQUATOR_KM / k as f64
    }
}

/// Row-wise zonal PSD averaged over rows with `w` and over time.
pub fn mean_psd(f: &FieldStack, w: &LatWeights) -> Result<Spectrum> {
    let g = f.grid();
    check_weights(g, w)?;
    let n = g.n_lon;
    if n < 4 {
        return Err(Error::Shape(format!(
            "rows of {n} cells are too short for a PSD"
        )));
    }
    if f.n_time() == 0 {
        return Err(Error::InsufficientSamples {
            needed: 1,
            found: 0,
        });
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let half = n / 2 + 1;
    let norm = 1.0 / (n as f64 * n as f64);
    let per_time: Vec<Vec<f64>> = f
        .slices()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|slice| {
            let mut acc = vec![0.0; half];
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            for (row, wi) in slice.chunks_exact(n).zip(w.as_slice()) {
                for (b, &v) in buf.iter_mut().zip(row) {
                    *b = Complex::new(v, 0.0);
                }
                fft.process(&mut buf);
                for (k, a) in acc.iter_mut().enumerate() {
                    let m = if k == 0 || (n % 2 == 0 && k == n / 2) {
                        1.0
                    } else {
                        2.0
                    };
                    *a += wi * m * buf[k].norm_sqr() * norm;
                }
            }
            acc
        })
        .collect();
    let mut power = vec![0.0; half];
    for p in &per_time {
        for (a, v) in power.iter_mut().zip(p) {
            *a += v;
        }
    }
    let nt = per_time.len() as f64;
    power.iter_mut().for_each(|p| *p /= nt);
    Spectrum::new(
        n,
        power,
        format!(
            "zonal rows, lat-weighted, {} time slices averaged after transform",
            per_time.len()
        ),
    )
}
