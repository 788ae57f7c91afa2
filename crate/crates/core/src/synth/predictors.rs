use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{average_pool, expect_units, FieldStack, GridSpec, Units};
use crate::preprocess::{fit_atmos_params, fit_transform_params, TransformParams};
use crate::rng::{fill_standard_normal, stream, Purpose, StreamId};
use crate::spectral::{RealFft2Scratch, SpectralFilter};
use crate::stats;

/// Surrogate variable names, in predictor order.
pub const ATMOS_VARIABLES: [&str; 4] = ["humidity", "eastward_wind", "northward_wind", "pressure"];

/// The four predictor stacks, ordered as [`ATMOS_VARIABLES`].
pub type AtmosStacks = [FieldStack; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorNoise {
    /// Signal-to-noise variance ratio; `None` adds no noise.
    pub snr: Option<f64>,
    /// e-folding radial wavenumber of the Gaussian smoother, `exp(-k^2 / (2 k_s^2))`.
    pub smoothing_k: f64,
}

impl Default for PredictorNoise {
    fn default() -> Self {
        Self {
            snr: Some(10.0),
            smoothing_k: 16.0,
        }
    }
}

impl PredictorNoise {
    pub fn validate(&self) -> Result<()> {
        let snr_ok = self.snr.map_or(true, |s| s > 0.0 && s.is_finite());
        if !snr_ok || !(self.smoothing_k > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid predictor noise {self:?}"
            )));
        }
        Ok(())
    }
}

fn gradients(field: &[f64], g: &GridSpec) -> (Vec<f64>, Vec<f64>) {
    let (ny, nx) = (g.n_lat, g.n_lon);
    let mut dlon = vec![0.0; field.len()];
    let mut dlat = vec![0.0; field.len()];
    for i in 0..ny {
        for j in 0..nx {
            let c = i * nx + j;
            let (e, w) = (i * nx + (j + 1) % nx, i * nx + (j + nx - 1) % nx);
            dlon[c] = (field[e] - field[w]) / (2.0 * g.d_lon);
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(ny - 1));
            if hi > lo {
                dlat[c] = (field[hi * nx + j] - field[lo * nx + j]) / ((hi - lo) as f64 * g.d_lat);
            }
        }
    }
    (dlon, dlat)
}

/// Four surrogate atmospheric stacks on the grid pooled by `factor`.
///
/// With `L = log10(x + 1)` smoothed by a Gaussian spectral filter the
/// signals are `L`, its zonal and meridional gradients, and `-L`, each
/// average-pooled. Independent Gaussian noise with variance
/// `var(signal) / snr` comes from stream `(Predictors, variable, t)`.
pub fn derive_atmos_predictors(
    truth_hr: &FieldStack,
    factor: usize,
    noise: &PredictorNoise,
    seed: u64,
) -> Result<AtmosStacks> {
    expect_units(truth_hr.units(), Units::MmPerDay)?;
    noise.validate()?;
    let g = *truth_hr.grid();
    let ks = noise.smoothing_k;
    let smoother = SpectralFilter::radial(&g, |k| (-0.5 * (k / ks).powi(2)).exp());
    let per_slice: Vec<[Vec<f64>; 3]> = truth_hr
        .slices()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map_init(RealFft2Scratch::default, |scratch, slice| {
            let logs: Vec<f64> = slice
                .iter()
                .map(|x| x.ln_1p() / std::f64::consts::LN_10)
                .collect();
            let smooth = smoother.apply(&logs, scratch);
            let (dlon, dlat) = gradients(&smooth, &g);
            [smooth, dlon, dlat]
        })
        .collect();
    let mut hr: [Vec<f64>; 4] = Default::default();
    for [s, dx, dy] in per_slice {
        hr[3].extend(s.iter().map(|v| -v));
        hr[0].extend(s);
        hr[1].extend(dx);
        hr[2].extend(dy);
    }
    let mut out = Vec::with_capacity(4);
    for (v, values) in hr.into_iter().enumerate() {
        let stack = FieldStack::from_parts(
            g,
            truth_hr.times().to_vec(),
            values,
            Units::Native,
            ATMOS_VARIABLES[v].to_string(),
        );
        let mut pooled = average_pool(&stack, factor)?;
        if let Some(snr) = noise.snr {
            let sd = (stats::population_variance(pooled.values()) / snr).sqrt();
            let n = pooled.grid().len();
            let noisy: Vec<f64> = pooled
                .slices()
                .enumerate()
                .flat_map(|(t, slice)| {
                    let mut rng =
                        stream(seed, StreamId::new(Purpose::Predictors, v as u64, t as u64));
                    let mut eps = vec![0.0; n];
                    fill_standard_normal(&mut rng, &mut eps);
                    slice
                        .iter()
                        .zip(eps)
                        .map(|(x, e)| x + sd * e)
                        .collect::<Vec<_>>()
                })
                .collect();
            pooled = pooled.derive(noisy, Units::Native);
        }
        out.push(pooled);
    }
    Ok(out.try_into().expect("four stacks"))
}

/// Per-pixel affine map from transformed predictors to transformed precipitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub grid: GridSpec,
    pub ridge: f64,
    pub atmos_params: [TransformParams; 4],
    pub target_params: TransformParams,
    pub intercept: Vec<f64>,
    /// `coefficients[v][cell]` multiplies transformed predictor `v`.
    pub coefficients: [Vec<f64>; 4],
}

fn check_atmos(atmos: &AtmosStacks, grid: &GridSpec) -> Result<()> {
    for a in atmos {
        expect_units(a.units(), Units::Native)?;
        grid.ensure_matches(a.grid())?;
        atmos[0].ensure_aligned(a)?;
    }
    Ok(())
}

fn transformed(atmos: &AtmosStacks, params: &[TransformParams; 4]) -> Vec<Vec<f64>> {
    atmos
        .iter()
        .zip(params)
        .map(|(a, p)| a.values().iter().map(|&x| p.forward(x)).collect())
        .collect()
}

/// Fits transforms on the training data, then the ridge regression.
pub fn fit_linear_predictor(
    atmos: &AtmosStacks,
    target_lr: &FieldStack,
    ridge: f64,
) -> Result<LinearPredictor> {
    let mut params = Vec::with_capacity(4);
    for a in atmos {
        params.push(fit_atmos_params(a)?);
    }
    let target_params = fit_transform_params(target_lr)?;
    fit_linear_predictor_with(
        atmos,
        target_lr,
        ridge,
        params.try_into().expect("four"),
        target_params,
    )
}

/// Ridge regression with given transforms. Each pixel solves
/// `(Xc'Xc + ridge I) b = Xc'yc` on time-centered data; the intercept is
/// unpenalized, so a huge ridge leaves the target mean.
pub fn fit_linear_predictor_with(
    atmos: &AtmosStacks,
    target_lr: &FieldStack,
    ridge: f64,
    atmos_params: [TransformParams; 4],
    target_params: TransformParams,
) -> Result<LinearPredictor> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge must be finite and >= 0 (got {ridge})"
        )));
    }
    expect_units(target_lr.units(), Units::MmPerDay)?;
    let g = *target_lr.grid();
    check_atmos(atmos, &g)?;
    target_lr.ensure_aligned(&atmos[0])?;
    let n_t = target_lr.n_time();
    if n_t < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            found: n_t,
        });
    }
    let xs = transformed(atmos, &atmos_params);
    let ys: Vec<f64> = target_lr
        .values()
        .iter()
        .map(|&x| target_params.forward(x))
        .collect();
    let n = g.len();
    let fits: Vec<(f64, [f64; 4])> = (0..n)
        .into_par_iter()
        .map(|c| {
            let mut xm = [0.0; 4];
            let mut ym = 0.0;
            for t in 0..n_t {
                for v in 0..4 {
                    xm[v] += xs[v][t * n + c];
                }
                ym += ys[t * n + c];
            }
            xm.iter_mut().for_each(|m| *m /= n_t as f64);
            ym /= n_t as f64;
            let mut gram = Matrix4::<f64>::zeros();
            let mut rhs = Vector4::<f64>::zeros();
            for t in 0..n_t {
                let row = Vector4::from_fn(|v, _| xs[v][t * n + c] - xm[v]);
                gram += row * row.transpose();
                rhs += row * (ys[t * n + c] - ym);
            }
            gram += Matrix4::identity() * ridge;
            let eig = gram.symmetric_eigen().eigenvalues;
            let (lo, hi) = (eig.min(), eig.max());
            if !(lo > 1e-12 * hi.max(f64::MIN_POSITIVE)) {
                return Err(Error::Singular(format!(
                    "predictor design at cell {c} has eigenvalues in [{lo:e}, {hi:e}]"
                )));
            }
            let b = gram
                .cholesky()
                .ok_or_else(|| Error::Singular(format!("predictor design at cell {c}")))?
                .solve(&rhs);
            let a = ym - (0..4).map(|v| b[v] * xm[v]).sum::<f64>();
            Ok((a, [b[0], b[1], b[2], b[3]]))
        })
        .collect::<Result<_>>()?;
    let mut coefficients: [Vec<f64>; 4] = Default::default();
    let mut intercept = Vec::with_capacity(n);
    for (a, b) in fits {
        intercept.push(a);
        for v in 0..4 {
            coefficients[v].push(b[v]);
        }
    }
    Ok(LinearPredictor {
        grid: g,
        ridge,
        atmos_params,
        target_params,
        intercept,
        coefficients,
    })
}

impl LinearPredictor {
    /// Prediction in model space, before the inverse transform.
    pub fn predict_transformed(&self, atmos: &AtmosStacks) -> Result<FieldStack> {
        check_atmos(atmos, &self.grid)?;
        let n = self.grid.len();
        if self.intercept.len() != n || self.coefficients.iter().any(|c| c.len() != n) {
            return Err(Error::Shape(format!(
                "predictor coefficients do not cover grid {}",
                self.grid
            )));
        }
        let xs = transformed(atmos, &self.atmos_params);
        let values = (0..atmos[0].values().len())
            .map(|k| {
                let c = k % n;
                self.intercept[c]
                    + (0..4)
                        .map(|v| self.coefficients[v][c] * xs[v][k])
                        .sum::<f64>()
            })
            .collect();
        FieldStack::new(
            self.grid,
            atmos[0].times().to_vec(),
            values,
            Units::Transformed,
        )
    }
}

/// Affine map per pixel, inverse-transformed to mm/d (clipped at 0).
pub fn predict(p: &LinearPredictor, atmos: &AtmosStacks) -> Result<FieldStack> {
    let y = p.predict_transformed(atmos)?;
    let values = y
        .values()
        .iter()
        .map(|&v| p.target_params.inverse(v))
        .collect();
    FieldStack::new(p.grid, y.times().to_vec(), values, Units::MmPerDay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{sample_grf, GrfSpec};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn truth(n_time: usize, seed: u64) -> FieldStack {
        let spec = GrfSpec {
            grid: GridSpec::global(32, 64).unwrap(),
            spectral_slope_beta: 2.5,
            variance: 0.5,
            seed,
        };
        sample_grf(&spec, n_time).unwrap()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (stats::mean(a), stats::mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn noiseless_first_predictor_is_pooled_smoothed_log_truth() {
        let t = truth(3, 1);
        let noise = PredictorNoise {
            snr: None,
            smoothing_k: 8.0,
        };
        let p = derive_atmos_predictors(&t, 4, &noise, 0).unwrap();
        assert_eq!(p.len(), 4);
        for (a, name) in p.iter().zip(ATMOS_VARIABLES) {
            assert_eq!((a.grid().n_lat, a.grid().n_lon, a.n_time()), (8, 16, 3));
            assert_eq!(a.variable(), name);
        }
        // independent oracle: naive 2-D DFT smoothing, then block means
        let g = *t.grid();
        let geom = crate::spectral::ModeGeometry::new(&g);
        let (ny, nx) = (g.n_lat, g.n_lon);
        let logs: Vec<f64> = t.slice(1).iter().map(|x| (x + 1.0).log10()).collect();
        let mut smooth = vec![0.0; g.len()];
        let tau = std::f64::consts::TAU;
        for ky in 0..ny {
            for kx in 0..nx {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..ny {
                    for j in 0..nx {
                        let ph = -tau
                            * (ky as f64 * i as f64 / ny as f64 + kx as f64 * j as f64 / nx as f64);
                        re += logs[i * nx + j] * ph.cos();
                        im += logs[i * nx + j] * ph.sin();
                    }
                }
                let w = (-0.5 * (geom.k_radial[ky * nx + kx] / 8.0).powi(2)).exp();
                for i in 0..ny {
                    for j in 0..nx {
                        let ph = tau
                            * (ky as f64 * i as f64 / ny as f64 + kx as f64 * j as f64 / nx as f64);
                        smooth[i * nx + j] += w * (re * ph.cos() - im * ph.sin()) / g.len() as f64;
                    }
                }
            }
        }
        for bi in 0..8 {
            for bj in 0..16 {
                let mut s = 0.0;
                for di in 0..4 {
                    for dj in 0..4 {
                        s += smooth[(bi * 4 + di) * nx + bj * 4 + dj];
                    }
                }
                assert!((p[0].get(1, bi, bj) - s / 16.0).abs() < 1e-10);
                assert!((p[3].get(1, bi, bj) + s / 16.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn first_predictor_tracks_pooled_truth_at_snr_10() {
        let t = truth(30, 2);
        let noise = PredictorNoise {
            snr: Some(10.0),
            smoothing_k: 16.0,
        };
        let p = derive_atmos_predictors(&t, 4, &noise, 7).unwrap();
        let logs = t.derive(
            t.values().iter().map(|x| (x + 1.0).log10()).collect(),
            Units::Native,
        );
        let pooled = average_pool(&logs, 4).unwrap();
        let r = pearson(p[0].values(), pooled.values());
        assert!(r > 0.9, "correlation {r}");
        let again = derive_atmos_predictors(&t, 4, &noise, 7).unwrap();
        assert_eq!(p, again);
    }

    fn linear_world(
        n_t: usize,
    ) -> (
        AtmosStacks,
        [TransformParams; 4],
        TransformParams,
        Vec<f64>,
        [Vec<f64>; 4],
    ) {
        let g = GridSpec::global(4, 8).unwrap();
        let n = g.len();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let atmos: Vec<FieldStack> = (0..4)
            .map(|v| {
                let vals = (0..n * n_t)
                    .map(|_| normal.sample(&mut rng) * (v + 1) as f64)
                    .collect();
                FieldStack::with_variable(
                    g,
                    (0..n_t as i64).collect(),
                    vals,
                    Units::Native,
                    ATMOS_VARIABLES[v],
                )
                .unwrap()
            })
            .collect();
        let atmos: AtmosStacks = atmos.try_into().unwrap();
        let params: [TransformParams; 4] =
            std::array::from_fn(|v| fit_atmos_params(&atmos[v]).unwrap());
        let target_params = TransformParams::precipitation(0.5, 0.2, -5.0, 5.0).unwrap();
        let intercept: Vec<f64> = (0..n).map(|c| 0.1 + 0.01 * c as f64).collect();
        let coef: [Vec<f64>; 4] = std::array::from_fn(|v| {
            (0..n)
                .map(|c| 0.02 * (v as f64 - 1.5) + 0.001 * c as f64)
                .collect()
        });
        (atmos, params, target_params, intercept, coef)
    }

    fn exact_target(
        atmos: &AtmosStacks,
        params: &[TransformParams; 4],
        tp: &TransformParams,
        a: &[f64],
        b: &[Vec<f64>; 4],
    ) -> FieldStack {
        let n = atmos[0].grid().len();
        let vals = (0..atmos[0].values().len())
            .map(|k| {
                let c = k % n;
                let y = a[c]
                    + (0..4)
                        .map(|v| b[v][c] * params[v].forward(atmos[v].values()[k]))
                        .sum::<f64>();
                tp.inverse(y)
            })
            .collect();
        FieldStack::daily(*atmos[0].grid(), 0, vals, Units::MmPerDay).unwrap()
    }

    #[test]
    fn exact_linear_target_is_recovered() {
        let (atmos, params, tp, a, b) = linear_world(40);
        let target = exact_target(&atmos, &params, &tp, &a, &b);
        assert!(target.values().iter().all(|&v| v > 0.0));
        let p = fit_linear_predictor_with(&atmos, &target, 0.0, params, tp).unwrap();
        for c in 0..a.len() {
            assert!((p.intercept[c] - a[c]).abs() < 1e-8);
            for v in 0..4 {
                assert!((p.coefficients[v][c] - b[v][c]).abs() < 1e-8);
            }
        }
        let back = predict(&p, &atmos).unwrap();
        for (x, y) in back.values().iter().zip(target.values()) {
            assert!((x - y).abs() <= 1e-6 * y.max(1.0));
        }
    }

    #[test]
    fn huge_ridge_predicts_the_mean() {
        let (atmos, params, tp, a, b) = linear_world(40);
        let target = exact_target(&atmos, &params, &tp, &a, &b);
        let p = fit_linear_predictor_with(&atmos, &target, 1e15, params, tp).unwrap();
        let n = a.len();
        for c in 0..n {
            let series = target.series(c / 8, c % 8);
            let mean = stats::mean(&series.iter().map(|&x| tp.forward(x)).collect::<Vec<_>>());
            assert!((p.intercept[c] - mean).abs() < 1e-9);
            assert!(p.coefficients.iter().all(|cv| cv[c].abs() < 1e-12));
        }
    }

    #[test]
    fn in_sample_error_is_below_target_variance() {
        let t = truth(60, 5);
        let atmos = derive_atmos_predictors(&t, 4, &PredictorNoise::default(), 1).unwrap();
        let target = average_pool(&t, 4).unwrap();
        let p = fit_linear_predictor(&atmos, &target, 1e-3).unwrap();
        let fitted = p.predict_transformed(&atmos).unwrap();
        let ys: Vec<f64> = target
            .values()
            .iter()
            .map(|&x| p.target_params.forward(x))
            .collect();
        let n = target.grid().len();
        for c in 0..n {
            let y: Vec<f64> = (0..60).map(|t| ys[t * n + c]).collect();
            let mse = (0..60)
                .map(|t| (fitted.values()[t * n + c] - y[t]).powi(2))
                .sum::<f64>()
                / 60.0;
            assert!(mse <= stats::population_variance(&y) + 1e-12);
        }
    }

    #[test]
    fn constant_predictor_without_ridge_is_singular() {
        let (mut atmos, params, tp, a, b) = linear_world(10);
        let target = exact_target(&atmos, &params, &tp, &a, &b);
        atmos[2] = FieldStack::filled(
            *atmos[2].grid(),
            atmos[2].times().to_vec(),
            1.0,
            Units::Native,
        )
        .unwrap();
        let err = fit_linear_predictor_with(&atmos, &target, 0.0, params, tp).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
        assert!(fit_linear_predictor_with(&atmos, &target, 1e-3, params, tp).is_ok());
    }

    #[test]
    fn predict_rejects_other_grids() {
        let (atmos, params, tp, a, b) = linear_world(10);
        let target = exact_target(&atmos, &params, &tp, &a, &b);
        let p = fit_linear_predictor_with(&atmos, &target, 0.1, params, tp).unwrap();
        let g = GridSpec::global(2, 4).unwrap();
        let other: AtmosStacks =
            std::array::from_fn(|_| FieldStack::filled(g, vec![0], 0.0, Units::Native).unwrap());
        assert!(predict(&p, &other).is_err());
    }
}
