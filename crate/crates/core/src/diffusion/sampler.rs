use rand::Rng;
use rayon::prelude::*;

use super::{
    augment_condition, stride_timesteps, ConditionNoiseLevel, DenoiseSession, Denoiser,
    NoiseSchedule, SamplerConfig,
};
use crate::error::{Error, Result};
use crate::grid::{expect_units, EnsembleStack, FieldStack, Units};
use crate::rng::{fill_standard_normal, stream, Purpose, StreamId};

/// One ancestral jump `t -> t'` given an `x0` estimate.
///
/// With `a = ab_t / ab_t'` and `b = 1 - a` the posterior of `x_t'` has mean
/// `sqrt(ab_t') b / (1 - ab_t) x0 + sqrt(a) (1 - ab_t') / (1 - ab_t) x_t` and
/// variance `b (1 - ab_t') / (1 - ab_t)`. `noise` is scaled by the posterior
/// std and added in place.
pub fn posterior_step(x_t: &mut [f64], x0: &[f64], ab_t: f64, ab_next: f64, noise: Option<&[f64]>) {
    let denom = 1.0 - ab_t;
    if denom <= 1e-12 {
        x_t.copy_from_slice(x0);
        return;
    }
    let alpha = ab_t / ab_next;
    let beta = 1.0 - alpha;
    let c0 = ab_next.sqrt() * beta / denom;
    let ct = alpha.sqrt() * (1.0 - ab_next) / denom;
    let sd = (beta * (1.0 - ab_next) / denom).max(0.0).sqrt();
    match noise {
        Some(eps) => {
            for ((x, &h), &e) in x_t.iter_mut().zip(x0).zip(eps) {
                *x = c0 * h + ct * *x + sd * e;
            }
        }
        None => {
            for (x, &h) in x_t.iter_mut().zip(x0) {
                *x = c0 * h + ct * *x;
            }
        }
    }
}

/// Samples one field. The rng supplies `x_T` first, then one noise field per non-final jump.
pub fn ancestral_sample_field<R: Rng + ?Sized>(
    session: &mut dyn DenoiseSession,
    n: usize,
    steps: &[usize],
    sched: &NoiseSchedule,
    clip: Option<(f64, f64)>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; n];
    fill_standard_normal(rng, &mut x);
    let mut eps = vec![0.0; n];
    for pair in steps.windows(2) {
        let (t, t_next) = (pair[0], pair[1]);
        let ab_t = sched.alpha_bar(t)?;
        let ab_next = sched.alpha_bar(t_next)?;
        let mut x0 = session.denoise(&x, t, ab_t)?;
        if x0.len() != n {
            return Err(Error::Shape(format!(
                "denoiser returned {} values for a {n}-cell field",
                x0.len()
            )));
        }
        if let Some((lo, hi)) = clip {
            x0.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        }
        if t_next == 0 {
            x = x0;
        } else {
            fill_standard_normal(rng, &mut eps);
            posterior_step(&mut x, &x0, ab_t, ab_next, Some(&eps));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state after step {t}")));
        }
    }
    Ok(x)
}

fn check_inputs(
    condition: &FieldStack,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
) -> Result<Vec<usize>> {
    expect_units(condition.units(), Units::Transformed)?;
    cfg.validate()?;
    if sched.n_steps != cfg.train_steps {
        return Err(Error::Config(format!(
            "schedule has {} steps, sampler expects {}",
            sched.n_steps, cfg.train_steps
        )));
    }
    stride_timesteps(cfg.train_steps, cfg.inference_steps)
}

fn sample_slices(
    denoiser: &dyn Denoiser,
    condition: &FieldStack,
    level: ConditionNoiseLevel,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    steps: &[usize],
    member: u64,
) -> Result<FieldStack> {
    let n = condition.grid().len();
    let slices: Vec<Vec<f64>> = (0..condition.n_time())
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(cfg.seed, StreamId::new(Purpose::Sampler, member, t as u64));
            let mut session = denoiser.session(condition.slice(t), level)?;
            ancestral_sample_field(session.as_mut(), n, steps, sched, cfg.clip, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(condition.derive(slices.concat(), Units::Transformed))
}

/// Samples one member for every time slice of an already augmented condition.
///
/// Slice `t` of member `m` draws from stream `(Sampler, m, t)`.
pub fn ancestral_sample(
    denoiser: &dyn Denoiser,
    condition: &FieldStack,
    level: ConditionNoiseLevel,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    member: u64,
) -> Result<FieldStack> {
    let steps = check_inputs(condition, cfg, sched)?;
    sample_slices(denoiser, condition, level, cfg, sched, &steps, member)
}

/// Full ensemble from a clean condition. Each member gets its own condition
/// augmentation from stream `(ConditionNoise, m, 0)`.
pub fn sample_ensemble(
    denoiser: &dyn Denoiser,
    clean_condition: &FieldStack,
    level: ConditionNoiseLevel,
    sched_c: &NoiseSchedule,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
) -> Result<EnsembleStack> {
    let steps = check_inputs(clean_condition, cfg, sched)?;
    let members = (0..cfg.ensemble_size as u64)
        .into_par_iter()
        .map(|m| {
            let mut rng = stream(cfg.seed, StreamId::new(Purpose::ConditionNoise, m, 0));
            let cond = augment_condition(clean_condition, &level, sched_c, &mut rng)?;
            sample_slices(denoiser, &cond, level, cfg, sched, &steps, m)
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleStack::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{IdentityDenoiser, WienerDenoiser};
    use crate::grid::GridSpec;
    use crate::spectral::Spectrum2d;

    fn cfg(train: usize, inference: usize) -> SamplerConfig {
        SamplerConfig {
            train_steps: train,
            inference_steps: inference,
            seed: 42,
            ensemble_size: 2,
            clip: None,
        }
    }

    #[test]
    fn degenerate_schedule_returns_one_shot_estimate() {
        let g = GridSpec::global(8, 16).unwrap();
        let spec = Spectrum2d::power_law(&g, 2.0, 1.0).unwrap();
        let d = WienerDenoiser::new(&g, spec).unwrap();
        let sched = NoiseSchedule::custom(vec![1.0, 1.0, 1.0, 0.3]).unwrap();
        let cond = FieldStack::filled(g.clone(), vec![0], 0.0, Units::Transformed).unwrap();
        let out = ancestral_sample(
            &d,
            &cond,
            ConditionNoiseLevel::none(),
            &cfg(3, 3),
            &sched,
            0,
        )
        .unwrap();
        // the first jump lands exactly on the estimate and later steps see no noise
        let mut rng = stream(42, StreamId::new(Purpose::Sampler, 0, 0));
        let x_t = crate::rng::standard_normal_vec(&mut rng, g.len());
        let one_shot = d
            .denoise(&x_t, 3, 0.3, &[], ConditionNoiseLevel::none())
            .unwrap();
        assert_eq!(out.values(), &one_shot[..]);
    }

    #[test]
    fn final_step_equals_estimate_for_identity() {
        let g = GridSpec::global(4, 8).unwrap();
        let vals: Vec<f64> = (0..g.len() * 2).map(|k| (k as f64 * 0.37).sin()).collect();
        let cond = FieldStack::daily(g, 0, vals, Units::Transformed).unwrap();
        let sched = NoiseSchedule::default_target();
        let out = ancestral_sample(
            &IdentityDenoiser,
            &cond,
            ConditionNoiseLevel::none(),
            &cfg(1000, 10),
            &sched,
            3,
        )
        .unwrap();
        assert_eq!(out.values(), cond.values());
    }

    #[test]
    fn fixed_seed_is_bit_identical_and_members_differ() {
        let g = GridSpec::global(8, 16).unwrap();
        let d = WienerDenoiser::new(&g, Spectrum2d::power_law(&g, 3.0, 1.0).unwrap()).unwrap();
        let cond = FieldStack::filled(g, vec![0, 1], 0.0, Units::Transformed).unwrap();
        let sched = NoiseSchedule::default_target();
        let c = cfg(1000, 20);
        let a = ancestral_sample(&d, &cond, ConditionNoiseLevel::none(), &c, &sched, 0).unwrap();
        let b = ancestral_sample(&d, &cond, ConditionNoiseLevel::none(), &c, &sched, 0).unwrap();
        let other =
            ancestral_sample(&d, &cond, ConditionNoiseLevel::none(), &c, &sched, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert_ne!(a.slice(0), a.slice(1));
    }

    #[test]
    fn posterior_step_moments() {
        // jump 0.25 -> 0.5 with x0 = 1, x_t = 0
        let mut x = vec![0.0];
        posterior_step(&mut x, &[1.0], 0.25, 0.5, None);
        let b = 0.5f64;
        assert!((x[0] - 0.5f64.sqrt() * b / 0.75).abs() < 1e-15);
        let mut y = vec![0.0];
        posterior_step(&mut y, &[1.0], 0.25, 0.5, Some(&[1.0]));
        let sd = (b * 0.5 / 0.75f64).sqrt();
        assert!((y[0] - x[0] - sd).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_schedule() {
        let g = GridSpec::global(4, 8).unwrap();
        let cond = FieldStack::filled(g, vec![0], 0.0, Units::Transformed).unwrap();
        let sched = NoiseSchedule::cosine(50, 0.008).unwrap();
        assert!(ancestral_sample(
            &IdentityDenoiser,
            &cond,
            ConditionNoiseLevel::none(),
            &cfg(1000, 10),
            &sched,
            0
        )
        .is_err());
        let mm = FieldStack::filled(cond.grid().clone(), vec![0], 0.0, Units::MmPerDay).unwrap();
        let sched = NoiseSchedule::default_target();
        assert!(ancestral_sample(
            &IdentityDenoiser,
            &mm,
            ConditionNoiseLevel::none(),
            &cfg(1000, 10),
            &sched,
            0
        )
        .is_err());
    }
}
