use serde::{Deserialize, Serialize};

use super::ConditionNoiseLevel;
use crate::error::{Error, Result};
use crate::grid::{expect_units, FieldStack, GridSpec, Units};
use crate::spectral::{
    Fft2, Fft2Scratch, ModeGeometry, RealFft2, RealFft2Scratch, Spectrum2d, C64,
};

/// Per-field denoising state: the condition is fixed for a whole sampling
/// trajectory, so implementations may precompute from it once.
pub trait DenoiseSession {
    /// Estimate of the clean field given `x_t` at step `t` with signal fraction `alpha_bar`.
    fn denoise(&mut self, x_t: &[f64], t: usize, alpha_bar: f64) -> Result<Vec<f64>>;
}

/// Estimates `x0` from `(x_t, t, condition, condition level)`.
///
/// Implementations are shared read-only across threads; mutable scratch
/// lives in the session.
pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    fn session<'a>(
        &'a self,
        condition: &'a [f64],
        level: ConditionNoiseLevel,
    ) -> Result<Box<dyn DenoiseSession + 'a>>;

    fn denoise(
        &self,
        x_t: &[f64],
        t: usize,
        alpha_bar: f64,
        condition: &[f64],
        level: ConditionNoiseLevel,
    ) -> Result<Vec<f64>> {
        self.session(condition, level)?.denoise(x_t, t, alpha_bar)
    }
}

/// Returns the condition unchanged; isolates the sampler in wiring checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

struct IdentitySession<'a>(&'a [f64]);

impl DenoiseSession for IdentitySession<'_> {
    fn denoise(&mut self, x_t: &[f64], _t: usize, _ab: f64) -> Result<Vec<f64>> {
        if x_t.len() != self.0.len() {
            return Err(Error::Shape("condition and state differ in size".into()));
        }
        Ok(self.0.to_vec())
    }
}

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }

    fn session<'a>(
        &'a self,
        condition: &'a [f64],
        _: ConditionNoiseLevel,
    ) -> Result<Box<dyn DenoiseSession + 'a>> {
        Ok(Box::new(IdentitySession(condition)))
    }
}

fn check_len(grid: &GridSpec, n: usize) -> Result<()> {
    if n != grid.len() {
        return Err(Error::Shape(format!(
            "field of {n} values on a {grid} grid"
        )));
    }
    Ok(())
}

/// Exact posterior mean for a zero-mean Gaussian field with known spectrum.
/// Ignores the condition.
#[derive(Debug, Clone)]
pub struct WienerDenoiser {
    grid: GridSpec,
    spectrum: Spectrum2d,
    /// Spectrum on the half-spectrum layout of `fft`.
    half_power: Vec<f64>,
    fft: RealFft2,
}

impl WienerDenoiser {
    pub fn new(grid: &GridSpec, spectrum: Spectrum2d) -> Result<Self> {
        spectrum.ensure_positive()?;
        if spectrum.geometry.n_lat != grid.n_lat || spectrum.geometry.n_lon != grid.n_lon {
            return Err(Error::GridMismatch(
                "spectrum and grid dimensions differ".into(),
            ));
        }
        let fft = RealFft2::new(grid.n_lat, grid.n_lon);
        let half_power = (0..fft.spectrum_len())
            .map(|h| spectrum.power[fft.full_index(h)])
            .collect();
        Ok(Self {
            grid: grid.clone(),
            fft,
            half_power,
            spectrum,
        })
    }

    /// Per-mode gain `sqrt(ab) S / (ab S + 1 - ab)`.
    pub fn gain(s: f64, alpha_bar: f64) -> f64 {
        alpha_bar.sqrt() * s / (alpha_bar * s + 1.0 - alpha_bar)
    }

    pub fn spectrum(&self) -> &Spectrum2d {
        &self.spectrum
    }
}

struct WienerSession<'a> {
    d: &'a WienerDenoiser,
    spec: Vec<C64>,
    scratch: RealFft2Scratch,
}

impl DenoiseSession for WienerSession<'_> {
    fn denoise(&mut self, x_t: &[f64], _t: usize, alpha_bar: f64) -> Result<Vec<f64>> {
        check_len(&self.d.grid, x_t.len())?;
        if 1.0 - alpha_bar <= 1e-12 {
            return Ok(x_t.to_vec());
        }
        self.d.fft.forward(x_t, &mut self.spec, &mut self.scratch);
        for (c, &s) in self.spec.iter_mut().zip(&self.d.half_power) {
            *c *= WienerDenoiser::gain(s, alpha_bar);
        }
        let mut out = vec![0.0; x_t.len()];
        self.d
            .fft
            .inverse(&mut self.spec, &mut out, &mut self.scratch);
        Ok(out)
    }
}

impl Denoiser for WienerDenoiser {
    fn name(&self) -> &str {
        "wiener"
    }

    fn session<'a>(
        &'a self,
        _: &'a [f64],
        _: ConditionNoiseLevel,
    ) -> Result<Box<dyn DenoiseSession + 'a>> {
        Ok(Box::new(WienerSession {
            d: self,
            spec: vec![C64::default(); self.fft.spectrum_len()],
            scratch: RealFft2Scratch::default(),
        }))
    }
}

/// Fitted statistics of [`ConditionalGaussianDenoiser`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGaussianParams {
    pub grid: GridSpec,
    /// Target climatology per pixel.
    pub mean: Vec<f64>,
    /// Condition climatology per pixel.
    pub cond_mean: Vec<f64>,
    /// Per radial bin: target anomaly power.
    pub prior: Vec<f64>,
    /// Per radial bin: regression gain of the condition on the target.
    pub gain: Vec<f64>,
    /// Per radial bin: condition power left unexplained by the target.
    pub residual: Vec<f64>,
}

/// Linear-Gaussian conditional denoiser fitted on (target, clean condition)
/// pairs in transformed space.
///
/// Per radial bin the target anomaly has power `S`, and the condition
/// anomaly is `g * x0 + e` with `e` of power `E`. At inference the
/// augmented condition contributes extra white noise of variance
/// `(1 - ab_c) / ab_c` after rescaling, and the denoiser returns the exact
/// posterior mean of `x0` given both `x_t` and the condition under this model.
#[derive(Debug, Clone)]
pub struct ConditionalGaussianDenoiser {
    params: ConditionalGaussianParams,
    /// Radial bin of each half-spectrum entry of `fft`.
    half_bins: Vec<usize>,
    fft: RealFft2,
}

impl ConditionalGaussianDenoiser {
    pub fn fit(target: &FieldStack, condition: &FieldStack) -> Result<Self> {
        expect_units(target.units(), Units::Transformed)?;
        expect_units(condition.units(), Units::Transformed)?;
        target.ensure_aligned(condition)?;
        let grid = target.grid().clone();
        if target.n_time() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                found: target.n_time(),
            });
        }
        let mean = target.time_mean();
        let cond_mean = condition.time_mean();
        let geometry = ModeGeometry::new(&grid);
        let fft = Fft2::new(grid.n_lat, grid.n_lon);
        let nb = geometry.n_bins();
        let bins: Vec<usize> = (0..geometry.len()).map(|m| geometry.bin(m)).collect();
        let n = grid.len() as f64;

        let (mut suu, mut sxx, mut sux) = (vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]);
        let mut scratch = Fft2Scratch::default();
        let mut a = vec![C64::default(); grid.len()];
        let mut b = vec![C64::default(); grid.len()];
        for t in 0..target.n_time() {
            for (k, (x, m)) in target.slice(t).iter().zip(&mean).enumerate() {
                a[k] = C64::new(x - m, 0.0);
            }
            for (k, (c, m)) in condition.slice(t).iter().zip(&cond_mean).enumerate() {
                b[k] = C64::new(c - m, 0.0);
            }
            fft.forward(&mut a, &mut scratch);
            fft.forward(&mut b, &mut scratch);
            for (m, &bin) in bins.iter().enumerate() {
                suu[bin] += a[m].norm_sqr();
                sxx[bin] += b[m].norm_sqr();
                sux[bin] += (a[m] * b[m].conj()).re;
            }
        }
        let counts = geometry.bin_counts();
        let nt = target.n_time() as f64;
        let (mut prior, mut gain, mut residual) = (vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]);
        for k in 0..nb {
            if counts[k] == 0 {
                continue;
            }
            let denom = counts[k] as f64 * nt * n;
            let (uu, xx, ux) = (suu[k] / denom, sxx[k] / denom, sux[k] / denom);
            prior[k] = uu.max(1e-12);
            // likelihood model c = g x0 + e, so g = Sux / Suu and E = Sxx - Sux^2 / Suu
            if xx > 1e-12 * prior[k] {
                gain[k] = ux / prior[k];
                residual[k] = (xx - ux * ux / prior[k]).max(1e-9 * xx).max(1e-15);
            } else {
                gain[k] = 0.0;
                residual[k] = 1.0;
            }
        }
        Ok(Self::assemble(ConditionalGaussianParams {
            grid,
            mean,
            cond_mean,
            prior,
            gain,
            residual,
        }))
    }

    fn assemble(params: ConditionalGaussianParams) -> Self {
        let fft = RealFft2::new(params.grid.n_lat, params.grid.n_lon);
        let half_bins = ModeGeometry::new(&params.grid).half_spectrum_bins(&fft);
        Self {
            params,
            half_bins,
            fft,
        }
    }

    pub fn from_params(params: ConditionalGaussianParams) -> Result<Self> {
        params.grid.validate()?;
        let nb = ModeGeometry::new(&params.grid).n_bins();
        let ok = params.mean.len() == params.grid.len()
            && params.cond_mean.len() == params.grid.len()
            && [&params.prior, &params.gain, &params.residual]
                .iter()
                .all(|v| v.len() == nb);
        if !ok {
            return Err(Error::Shape(
                "denoiser parameters do not fit their grid".into(),
            ));
        }
        Ok(Self::assemble(params))
    }

    pub fn params(&self) -> &ConditionalGaussianParams {
        &self.params
    }
}

struct GaussianSession<'a> {
    d: &'a ConditionalGaussianDenoiser,
    /// Transformed condition anomaly spectrum, or `None` when the condition carries no signal.
    cond: Option<Vec<C64>>,
    /// Per bin `g / sigma_c^2` and `g^2 / sigma_c^2`.
    cond_weight: Vec<f64>,
    cond_precision: Vec<f64>,
    spec: Vec<C64>,
    centered: Vec<f64>,
    scratch: RealFft2Scratch,
}

impl DenoiseSession for GaussianSession<'_> {
    fn denoise(&mut self, x_t: &[f64], _t: usize, alpha_bar: f64) -> Result<Vec<f64>> {
        let p = &self.d.params;
        check_len(&p.grid, x_t.len())?;
        let a = alpha_bar.sqrt();
        let s2 = 1.0 - alpha_bar;
        if s2 <= 1e-12 {
            return Ok(x_t.to_vec());
        }
        let nb = p.prior.len();
        let mut wx = vec![0.0; nb];
        let mut wc = vec![0.0; nb];
        for k in 0..nb {
            let precision = 1.0 / p.prior[k] + a * a / s2 + self.cond_precision[k];
            wx[k] = a / s2 / precision;
            wc[k] = self.cond_weight[k] / precision;
        }
        self.centered.clear();
        self.centered
            .extend(x_t.iter().zip(&p.mean).map(|(x, m)| x - a * m));
        self.d
            .fft
            .forward(&self.centered, &mut self.spec, &mut self.scratch);
        let bins = &self.d.half_bins;
        match &self.cond {
            Some(c) => {
                for ((v, cv), &b) in self.spec.iter_mut().zip(c).zip(bins) {
                    *v = *v * wx[b] + *cv * wc[b];
                }
            }
            None => {
                for (v, &b) in self.spec.iter_mut().zip(bins) {
                    *v *= wx[b];
                }
            }
        }
        let mut out = vec![0.0; x_t.len()];
        self.d
            .fft
            .inverse(&mut self.spec, &mut out, &mut self.scratch);
        out.iter_mut().zip(&p.mean).for_each(|(o, m)| *o += m);
        Ok(out)
    }
}

impl Denoiser for ConditionalGaussianDenoiser {
    fn name(&self) -> &str {
        "gaussian-conditional"
    }

    fn session<'a>(
        &'a self,
        condition: &'a [f64],
        level: ConditionNoiseLevel,
    ) -> Result<Box<dyn DenoiseSession + 'a>> {
        let p = &self.params;
        check_len(&p.grid, condition.len())?;
        let nb = p.prior.len();
        let ab_c = level.alpha_bar();
        let mut session = GaussianSession {
            d: self,
            cond: None,
            cond_weight: vec![0.0; nb],
            cond_precision: vec![0.0; nb],
            spec: vec![C64::default(); self.fft.spectrum_len()],
            centered: Vec::with_capacity(p.grid.len()),
            scratch: RealFft2Scratch::default(),
        };
        if ab_c > 1e-12 {
            let sc = ab_c.sqrt();
            let extra = (1.0 - ab_c) / ab_c;
            for k in 0..nb {
                let var = p.residual[k] + extra;
                session.cond_weight[k] = p.gain[k] / var;
                session.cond_precision[k] = p.gain[k] * p.gain[k] / var;
            }
            let centered: Vec<f64> = condition
                .iter()
                .zip(&p.cond_mean)
                .map(|(v, m)| v / sc - m)
                .collect();
            let mut c = vec![C64::default(); self.fft.spectrum_len()];
            self.fft.forward(&centered, &mut c, &mut session.scratch);
            session.cond = Some(c);
        }
        Ok(Box::new(session))
    }
}
