//! Two-dimensional spectral machinery on the doubly periodic grid.
//!
//! Fields are treated as periodic in both directions. Wavenumbers are
//! expressed as cycles per 360 degrees of arc along each axis, so a mode's
//! radial wavenumber is isotropic in degrees and comparable with the zonal
//! wavenumbers used by the row-wise PSD.
//!
//! Power convention: for a real field `x` with unnormalized DFT `X`, the
//! per-mode power is `|X_k|^2 / N`. White noise of unit variance has
//! expected power 1 on every mode, and a field synthesized from a spectrum
//! `S` has per-mode expected power `S_k` and variance `mean_k S_k`.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub type C64 = Complex<f64>;

/// Forward and inverse 2-D complex FFT plans for an `n_lat` x `n_lon` layout.
#[derive(Clone)]
pub struct Fft2 {
    n_lat: usize,
    n_lon: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.n_lat, self.n_lon)
    }
}

/// Reusable buffers for [`Fft2`] transforms.
#[derive(Debug, Default)]
pub struct Fft2Scratch {
    transposed: Vec<C64>,
    fft: Vec<C64>,
}

impl Fft2 {
    pub fn new(n_lat: usize, n_lon: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_lat,
            n_lon,
            row_fwd: planner.plan_fft_forward(n_lon),
            row_inv: planner.plan_fft_inverse(n_lon),
            col_fwd: planner.plan_fft_forward(n_lat),
            col_inv: planner.plan_fft_inverse(n_lat),
        }
    }

    pub fn len(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(
        &self,
        data: &mut [C64],
        row: &Arc<dyn Fft<f64>>,
        col: &Arc<dyn Fft<f64>>,
        scratch: &mut Fft2Scratch,
    ) {
        assert_eq!(data.len(), self.len());
        let need = row
            .get_inplace_scratch_len()
            .max(col.get_inplace_scratch_len());
        if scratch.fft.len() < need {
            scratch.fft.resize(need, C64::default());
        }
        row.process_with_scratch(data, &mut scratch.fft[..row.get_inplace_scratch_len()]);
        if self.n_lat == 1 {
            return;
        }
        let (ny, nx) = (self.n_lat, self.n_lon);
        scratch.transposed.resize(self.len(), C64::default());
        transpose(data, &mut scratch.transposed, ny, nx);
        col.process_with_scratch(
            &mut scratch.transposed,
            &mut scratch.fft[..col.get_inplace_scratch_len()],
        );
        transpose(&scratch.transposed, data, nx, ny);
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [C64], scratch: &mut Fft2Scratch) {
        self.run(data, &self.row_fwd, &self.col_fwd, scratch);
    }

    /// Inverse transform in place, including the `1/N` normalization.
    pub fn inverse(&self, data: &mut [C64], scratch: &mut Fft2Scratch) {
        self.run(data, &self.row_inv, &self.col_inv, scratch);
        let scale = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }
}

/// Real-input 2-D FFT. The half spectrum is stored transposed,
/// `spec[q * n_lat + p]` for zonal index `q in 0..=n_lon/2` and meridional
/// index `p`, which saves the transpose back on both passes.
#[derive(Clone)]
pub struct RealFft2 {
    n_lat: usize,
    n_lon: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealFft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RealFft2({}x{})", self.n_lat, self.n_lon)
    }
}

/// Reusable buffers for [`RealFft2`].
#[derive(Debug, Default)]
pub struct RealFft2Scratch {
    rows: Vec<C64>,
    real: Vec<f64>,
    fft: Vec<C64>,
}

impl RealFft2 {
    pub fn new(n_lat: usize, n_lon: usize) -> Self {
        let mut rp = RealFftPlanner::new();
        let mut cp = FftPlanner::new();
        Self {
            n_lat,
            n_lon,
            r2c: rp.plan_fft_forward(n_lon),
            c2r: rp.plan_fft_inverse(n_lon),
            col_fwd: cp.plan_fft_forward(n_lat),
            col_inv: cp.plan_fft_inverse(n_lat),
        }
    }

    pub fn n_half(&self) -> usize {
        self.n_lon / 2 + 1
    }

    pub fn spectrum_len(&self) -> usize {
        self.n_half() * self.n_lat
    }

    /// Flat index in the full `n_lat x n_lon` layout of half-spectrum entry `h`.
    pub fn full_index(&self, h: usize) -> usize {
        let (q, p) = (h / self.n_lat, h % self.n_lat);
        p * self.n_lon + q
    }

    /// Unnormalized forward transform of a real field.
    pub fn forward(&self, input: &[f64], spec: &mut [C64], scratch: &mut RealFft2Scratch) {
        let (ny, nx, nh) = (self.n_lat, self.n_lon, self.n_half());
        assert_eq!(input.len(), ny * nx);
        assert_eq!(spec.len(), ny * nh);
        scratch.real.clear();
        scratch.real.extend_from_slice(input);
        scratch.rows.resize(ny * nh, C64::default());
        let need = self
            .r2c
            .get_scratch_len()
            .max(self.col_fwd.get_inplace_scratch_len());
        scratch.fft.resize(need, C64::default());
        for (row_in, row_out) in scratch
            .real
            .chunks_exact_mut(nx)
            .zip(scratch.rows.chunks_exact_mut(nh))
        {
            self.r2c
                .process_with_scratch(
                    row_in,
                    row_out,
                    &mut scratch.fft[..self.r2c.get_scratch_len()],
                )
                .expect("row lengths match the plan");
        }
        transpose(&scratch.rows, spec, ny, nh);
        if ny > 1 {
            self.col_fwd.process_with_scratch(
                spec,
                &mut scratch.fft[..self.col_fwd.get_inplace_scratch_len()],
            );
        }
    }

    /// Inverse transform including `1/N`; `spec` is used as workspace.
    pub fn inverse(&self, spec: &mut [C64], out: &mut [f64], scratch: &mut RealFft2Scratch) {
        let (ny, nx, nh) = (self.n_lat, self.n_lon, self.n_half());
        assert_eq!(out.len(), ny * nx);
        assert_eq!(spec.len(), ny * nh);
        let need = self
            .c2r
            .get_scratch_len()
            .max(self.col_inv.get_inplace_scratch_len());
        scratch.fft.resize(need, C64::default());
        if ny > 1 {
            self.col_inv.process_with_scratch(
                spec,
                &mut scratch.fft[..self.col_inv.get_inplace_scratch_len()],
            );
        }
        scratch.rows.resize(ny * nh, C64::default());
        transpose(spec, &mut scratch.rows, nh, ny);
        let scale = 1.0 / (ny * nx) as f64;
        for (row_in, row_out) in scratch
            .rows
            .chunks_exact_mut(nh)
            .zip(out.chunks_exact_mut(nx))
        {
            // rounding leaves tiny imaginary parts on the self-conjugate bins
            row_in[0].im = 0.0;
            if nx % 2 == 0 {
                row_in[nh - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(
                    row_in,
                    row_out,
                    &mut scratch.fft[..self.c2r.get_scratch_len()],
                )
                .expect("row lengths match the plan");
        }
        out.iter_mut().for_each(|v| *v *= scale);
    }
}

fn transpose(src: &[C64], dst: &mut [C64], rows: usize, cols: usize) {
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

fn signed_index(p: usize, n: usize) -> f64 {
    if p <= n / 2 {
        p as f64
    } else {
        p as f64 - n as f64
    }
}

/// Radial wavenumber of every 2-D mode, in cycles per 360 degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeGeometry {
    pub n_lat: usize,
    pub n_lon: usize,
    pub k_radial: Vec<f64>,
}

impl ModeGeometry {
    pub fn new(grid: &GridSpec) -> Self {
        let sx = 360.0 / grid.lon_extent();
        let sy = 360.0 / grid.lat_extent();
        let mut k_radial = Vec::with_capacity(grid.len());
        for p in 0..grid.n_lat {
            let ky = signed_index(p, grid.n_lat) * sy;
            for q in 0..grid.n_lon {
                let kx = signed_index(q, grid.n_lon) * sx;
                k_radial.push((kx * kx + ky * ky).sqrt());
            }
        }
        Self {
            n_lat: grid.n_lat,
            n_lon: grid.n_lon,
            k_radial,
        }
    }

    pub fn len(&self) -> usize {
        self.k_radial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_radial.is_empty()
    }

    /// Integer radial bin of each mode (nearest integer wavenumber).
    pub fn bin(&self, mode: usize) -> usize {
        self.k_radial[mode].round() as usize
    }

    pub fn n_bins(&self) -> usize {
        self.k_radial
            .iter()
            .map(|k| k.round() as usize)
            .max()
            .unwrap_or(0)
            + 1
    }

    /// Averages a per-mode quantity into integer radial bins; empty bins are NaN.
    pub fn radial_average(&self, per_mode: &[f64]) -> Vec<f64> {
        let n = self.n_bins();
        let mut acc = vec![0.0; n];
        let mut cnt = vec![0usize; n];
        for (m, &v) in per_mode.iter().enumerate() {
            let b = self.bin(m);
            acc[b] += v;
            cnt[b] += 1;
        }
        acc.iter()
            .zip(&cnt)
            .map(|(&a, &c)| if c == 0 { f64::NAN } else { a / c as f64 })
            .collect()
    }

    /// Radial bin of every entry of a [`RealFft2`] half spectrum.
    pub fn half_spectrum_bins(&self, fft: &RealFft2) -> Vec<usize> {
        (0..fft.spectrum_len())
            .map(|h| self.bin(fft.full_index(h)))
            .collect()
    }

    pub fn bin_counts(&self) -> Vec<usize> {
        let mut cnt = vec![0usize; self.n_bins()];
        for m in 0..self.len() {
            cnt[self.bin(m)] += 1;
        }
        cnt
    }
}

/// Prescribed per-mode power spectrum of a zero-mean Gaussian field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum2d {
    pub geometry: ModeGeometry,
    pub power: Vec<f64>,
}

impl Spectrum2d {
    /// Power law `S(k) ∝ max(k, 1)^-beta`, scaled so the field variance is `variance`.
    pub fn power_law(grid: &GridSpec, beta: f64, variance: f64) -> Result<Self> {
        if beta < 0.0 || !(variance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "power law needs beta >= 0 and variance > 0 (got {beta}, {variance})"
            )));
        }
        let geometry = ModeGeometry::new(grid);
        let raw: Vec<f64> = geometry
            .k_radial
            .iter()
            .map(|&k| k.max(1.0).powf(-beta))
            .collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let power = raw.into_iter().map(|s| s * variance / mean).collect();
        Ok(Self { geometry, power })
    }

    /// Expands a radially binned spectrum onto every mode.
    pub fn from_radial(grid: &GridSpec, radial: &[f64]) -> Result<Self> {
        let geometry = ModeGeometry::new(grid);
        if radial.len() < geometry.n_bins() {
            return Err(Error::Shape(format!(
                "radial spectrum has {} bins, grid needs {}",
                radial.len(),
                geometry.n_bins()
            )));
        }
        let power = (0..geometry.len())
            .map(|m| radial[geometry.bin(m)])
            .collect();
        Ok(Self { geometry, power })
    }

    pub fn variance(&self) -> f64 {
        self.power.iter().sum::<f64>() / self.power.len() as f64
    }

    pub fn ensure_positive(&self) -> Result<()> {
        match self.power.iter().find(|&&p| !(p > 0.0) || !p.is_finite()) {
            Some(p) => Err(Error::InvalidArgument(format!(
                "spectrum must be positive on every mode (found {p})"
            ))),
            None => Ok(()),
        }
    }

    /// Radial average of the prescribed power.
    pub fn radial(&self) -> Vec<f64> {
        self.geometry.radial_average(&self.power)
    }
}

/// Per-mode power `|X_k|^2 / N` of one real 2-D field.
pub fn mode_power(fft: &Fft2, field: &[f64], scratch: &mut Fft2Scratch) -> Vec<f64> {
    let mut buf: Vec<C64> = field.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft.forward(&mut buf, scratch);
    let n = field.len() as f64;
    buf.iter().map(|c| c.norm_sqr() / n).collect()
}

/// Radially averaged 2-D power spectrum of a set of fields on `grid`
/// (per-mode power averaged over fields, then over integer radial bins).
pub fn radial_psd<'a>(
    grid: &GridSpec,
    fields: impl IntoIterator<Item = &'a [f64]>,
) -> Result<Vec<f64>> {
    let geometry = ModeGeometry::new(grid);
    let fft = Fft2::new(grid.n_lat, grid.n_lon);
    let mut scratch = Fft2Scratch::default();
    let mut acc = vec![0.0; grid.len()];
    let mut count = 0usize;
    for f in fields {
        if f.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field of {} values on a {} grid",
                f.len(),
                grid
            )));
        }
        for (a, p) in acc.iter_mut().zip(mode_power(&fft, f, &mut scratch)) {
            *a += p;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InsufficientSamples {
            needed: 1,
            found: 0,
        });
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    Ok(geometry.radial_average(&acc))
}

/// Real per-mode gain applied through [`RealFft2`]: `IFFT(gain * FFT(x))`.
#[derive(Debug, Clone)]
pub struct SpectralFilter {
    fft: RealFft2,
    /// Gain on the half-spectrum layout.
    gain: Vec<f64>,
}

impl SpectralFilter {
    /// Gain as a function of each mode's radial wavenumber.
    pub fn radial(grid: &GridSpec, f: impl Fn(f64) -> f64) -> Self {
        let geometry = ModeGeometry::new(grid);
        let fft = RealFft2::new(grid.n_lat, grid.n_lon);
        let gain = (0..fft.spectrum_len())
            .map(|h| f(geometry.k_radial[fft.full_index(h)]))
            .collect();
        Self { fft, gain }
    }

    /// Gain as a function of each mode's zonal wavenumber (cycles per 360 degrees).
    pub fn zonal(grid: &GridSpec, f: impl Fn(f64) -> f64) -> Self {
        let fft = RealFft2::new(grid.n_lat, grid.n_lon);
        let sx = 360.0 / grid.lon_extent();
        let gain = (0..fft.spectrum_len())
            .map(|h| f((h / grid.n_lat) as f64 * sx))
            .collect();
        Self { fft, gain }
    }

    /// Amplitude filter `sqrt(S)` that colors unit white noise with spectrum `S`.
    pub fn coloring(spec: &Spectrum2d) -> Self {
        let fft = RealFft2::new(spec.geometry.n_lat, spec.geometry.n_lon);
        let gain = (0..fft.spectrum_len())
            .map(|h| spec.power[fft.full_index(h)].max(0.0).sqrt())
            .collect();
        Self { fft, gain }
    }

    pub fn apply(&self, field: &[f64], scratch: &mut RealFft2Scratch) -> Vec<f64> {
        let mut spec = vec![C64::default(); self.fft.spectrum_len()];
        self.fft.forward(field, &mut spec, scratch);
        for (c, g) in spec.iter_mut().zip(&self.gain) {
            *c *= *g;
        }
        let mut out = vec![0.0; field.len()];
        self.fft.inverse(&mut spec, &mut out, scratch);
        out
    }
}
