//! DDPM mathematics: noise schedules, forward noising, condition-noise
//! augmentation and its PSD-based calibration, and the strided ancestral
//! sampler with pluggable denoisers.
//!
//! Denoisers predict the clean field `x0` directly. With
//! `x_t = sqrt(ab) x0 + sqrt(1 - ab) eps` the noise prediction follows from
//! [`eps_from_x0`] and back via [`x0_from_eps`].

mod denoiser;
mod sampler;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{expect_units, FieldStack, Units};
use crate::metrics::Spectrum;

pub use denoiser::{
    ConditionalGaussianDenoiser, DenoiseSession, Denoiser, IdentityDenoiser, WienerDenoiser,
};
pub use sampler::{ancestral_sample, ancestral_sample_field, posterior_step, sample_ensemble};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_INFERENCE_STEPS: usize = 100;
pub const COSINE_OFFSET: f64 = 0.008;
pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 2e-2;
pub const DEFAULT_DELTA_LOG: f64 = 0.3;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    Linear,
    Custom,
}

/// Cumulative signal fractions `alpha_bar[0..=n_steps]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub n_steps: usize,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn cosine(n_steps: usize, offset: f64) -> Result<Self> {
        if n_steps == 0 || !(offset >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cosine schedule needs n_steps >= 1 and offset >= 0 (got {n_steps}, {offset})"
            )));
        }
        let f = |t: usize| {
            let u = (t as f64 / n_steps as f64 + offset) / (1.0 + offset);
            (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let f0 = f(0);
        let raw: Vec<f64> = (0..=n_steps).map(|t| f(t) / f0).collect();
        // clip per-step betas so the terminal value stays strictly positive
        let mut alpha_bar = Vec::with_capacity(n_steps + 1);
        alpha_bar.push(1.0);
        for t in 1..=n_steps {
            let beta = (1.0 - raw[t] / raw[t - 1]).clamp(0.0, MAX_BETA);
            alpha_bar.push(alpha_bar[t - 1] * (1.0 - beta));
        }
        Ok(Self {
            kind: ScheduleKind::Cosine,
            n_steps,
            alpha_bar,
        })
    }

    pub fn linear(n_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if n_steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "linear schedule needs 0 < beta_start <= beta_end < 1 (got {beta_start}, {beta_end})"
            )));
        }
        let mut alpha_bar = vec![1.0];
        for s in 1..=n_steps {
            let frac = if n_steps == 1 {
                0.0
            } else {
                (s - 1) as f64 / (n_steps - 1) as f64
            };
            let beta = beta_start + (beta_end - beta_start) * frac;
            alpha_bar.push(alpha_bar[s - 1] * (1.0 - beta));
        }
        Ok(Self {
            kind: ScheduleKind::Linear,
            n_steps,
            alpha_bar,
        })
    }

    /// Arbitrary non-increasing schedule with values in [0, 1] starting at 1.
    pub fn custom(alpha_bar: Vec<f64>) -> Result<Self> {
        let ok = alpha_bar.len() >= 2
            && alpha_bar[0] == 1.0
            && alpha_bar.iter().all(|a| (0.0..=1.0).contains(a))
            && alpha_bar.windows(2).all(|w| w[1] <= w[0]);
        if !ok {
            return Err(Error::InvalidArgument(
                "custom schedule must start at 1 and be non-increasing in [0, 1]".into(),
            ));
        }
        Ok(Self {
            kind: ScheduleKind::Custom,
            n_steps: alpha_bar.len() - 1,
            alpha_bar,
        })
    }

    pub fn default_target() -> Self {
        Self::cosine(DEFAULT_TRAIN_STEPS, COSINE_OFFSET).expect("valid defaults")
    }

    pub fn default_condition() -> Self {
        Self::linear(DEFAULT_TRAIN_STEPS, LINEAR_BETA_START, LINEAR_BETA_END)
            .expect("valid defaults")
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or(Error::OutOfRange {
            index: t,
            max: self.n_steps,
        })
    }
}

/// Affine conversion from an `x0` estimate to the implied noise.
pub fn eps_from_x0(x_t: f64, x0: f64, alpha_bar: f64) -> f64 {
    (x_t - alpha_bar.sqrt() * x0) / (1.0 - alpha_bar).sqrt()
}

pub fn x0_from_eps(x_t: f64, eps: f64, alpha_bar: f64) -> f64 {
    (x_t - (1.0 - alpha_bar).sqrt() * eps) / alpha_bar.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub train_steps: usize,
    pub inference_steps: usize,
    pub seed: u64,
    pub ensemble_size: usize,
    /// Range `x0` estimates are clipped to at every step.
    #[serde(default)]
    pub clip: Option<(f64, f64)>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            train_steps: DEFAULT_TRAIN_STEPS,
            inference_steps: DEFAULT_INFERENCE_STEPS,
            seed: 0,
            ensemble_size: 50,
            clip: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inference_steps == 0 || self.inference_steps > self.train_steps {
            return Err(Error::Config(format!(
                "need 1 <= inference_steps <= train_steps (got {} and {})",
                self.inference_steps, self.train_steps
            )));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo < hi) {
                return Err(Error::Config(format!("empty clip range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionNoiseLevel {
    pub tau_c: usize,
    pub sigma_eff: f64,
}

impl ConditionNoiseLevel {
    pub fn at(sched_c: &NoiseSchedule, tau_c: usize) -> Result<Self> {
        let ab = sched_c.alpha_bar(tau_c)?;
        Ok(Self {
            tau_c,
            sigma_eff: (1.0 - ab).max(0.0).sqrt(),
        })
    }

    pub fn none() -> Self {
        Self {
            tau_c: 0,
            sigma_eff: 0.0,
        }
    }

    pub fn alpha_bar(&self) -> f64 {
        1.0 - self.sigma_eff * self.sigma_eff
    }
}

/// Inference steps `[train, ..., 0]`: `inference` evenly spaced steps
/// `round(train * (inference - i) / inference)` followed by a terminal 0.
pub fn stride_timesteps(train_steps: usize, inference_steps: usize) -> Result<Vec<usize>> {
    if inference_steps == 0 || inference_steps > train_steps {
        return Err(Error::InvalidArgument(format!(
            "cannot stride {train_steps} training steps into {inference_steps}"
        )));
    }
    let mut steps: Vec<usize> = (0..inference_steps)
        .map(|i| {
            let num = train_steps as u128 * (inference_steps - i) as u128;
            ((2 * num + inference_steps as u128) / (2 * inference_steps as u128)) as usize
        })
        .collect();
    steps.push(0);
    Ok(steps)
}

fn mix<R: Rng + ?Sized>(x: &FieldStack, alpha_bar: f64, rng: &mut R) -> FieldStack {
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).max(0.0).sqrt());
    if s == 0.0 {
        return x.clone();
    }
    let mut eps = vec![0.0; x.values().len()];
    crate::rng::fill_standard_normal(rng, &mut eps);
    let values = x
        .values()
        .iter()
        .zip(&eps)
        .map(|(v, e)| a * v + s * e)
        .collect();
    x.derive(values, Units::Transformed)
}

/// `x_t = sqrt(ab[t]) x0 + sqrt(1 - ab[t]) eps`, noise drawn in storage order.
pub fn forward_noise<R: Rng + ?Sized>(
    x0: &FieldStack,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<FieldStack> {
    expect_units(x0.units(), Units::Transformed)?;
    Ok(mix(x0, sched.alpha_bar(t)?, rng))
}

/// Noise-condition augmentation of an upsampled, transformed condition.
pub fn augment_condition<R: Rng + ?Sized>(
    c: &FieldStack,
    level: &ConditionNoiseLevel,
    sched_c: &NoiseSchedule,
    rng: &mut R,
) -> Result<FieldStack> {
    expect_units(c.units(), Units::Transformed)?;
    Ok(mix(c, sched_c.alpha_bar(level.tau_c)?, rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub level: ConditionNoiseLevel,
    /// First wavenumber of the diverged tail; `None` if the spectra agree.
    pub k_star: Option<usize>,
    /// Reference power at `k_star` that the noise floor must cover.
    pub target_power: Option<f64>,
    /// Whether some schedule index reaches the target.
    pub feasible: bool,
}

fn diverges(pred: f64, reference: f64, delta_log: f64) -> bool {
    if pred == reference {
        return false;
    }
    if pred <= 0.0 || reference <= 0.0 {
        return true;
    }
    (pred.log10() - reference.log10()).abs() > delta_log
}

/// Smallest wavenumber from which every larger wavenumber diverges by more than `delta_log` decades.
pub fn divergence_wavenumber(
    psd_ref: &Spectrum,
    psd_pred: &Spectrum,
    delta_log: f64,
) -> Result<Option<usize>> {
    psd_ref.ensure_same_axis(psd_pred)?;
    let mut k_star = None;
    for k in (0..psd_ref.len()).rev() {
        if diverges(psd_pred.power[k], psd_ref.power[k], delta_log) {
            k_star = Some(k);
        } else {
            break;
        }
    }
    Ok(k_star)
}

/// Picks the smallest condition-noise index whose white-noise floor covers
/// the reference spectrum at the divergence wavenumber.
pub fn calibrate_condition_noise(
    psd_ref: &Spectrum,
    psd_pred: &Spectrum,
    sched_c: &NoiseSchedule,
    delta_log: f64,
) -> Result<NoiseCalibration> {
    if !(delta_log > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta_log must be positive, got {delta_log}"
        )));
    }
    let Some(k) = divergence_wavenumber(psd_ref, psd_pred, delta_log)? else {
        return Ok(NoiseCalibration {
            level: ConditionNoiseLevel::none(),
            k_star: None,
            target_power: None,
            feasible: true,
        });
    };
    let target = psd_ref.power[k];
    let found = (0..=sched_c.n_steps)
        .find(|&tau| psd_ref.white_noise_floor(k, 1.0 - sched_c.alpha_bar[tau]) >= target);
    let tau = match found {
        Some(t) => t,
        None => {
            log::warn!(
                "no condition-noise level covers reference power {target:.3e} at k={k}; using the final step"
            );
            sched_c.n_steps
        }
    };
    Ok(NoiseCalibration {
        level: ConditionNoiseLevel::at(sched_c, tau)?,
        k_star: Some(k),
        target_power: Some(target),
        feasible: found.is_some(),
    })
}
