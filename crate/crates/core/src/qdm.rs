//! Quantile delta mapping (QDM) bias correction.
//!
//! A [`QuantileMap`] holds observed and modelled historical quantiles on a
//! common probability grid `tau_k = (k - 0.5) / n`. Correcting a projection
//! value `x`:
//!
//! 1. `tau = F_target(x)`, the empirical CDF of the projection sample itself,
//!    clamped to `[0.5/n, 1 - 0.5/n]`;
//! 2. `delta = x / Q_mod_hist(tau)` (or `x - Q_mod_hist(tau)` for the
//!    additive kind);
//! 3. `out = Q_obs_hist(tau) * delta` (or `+ delta`), floored at 0.
//!
//! The ratio denominator is floored at the trace threshold so dry quantiles
//! do not blow up the multiplicative delta.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{expect_units, FieldStack, GridSpec, Units};
use crate::stats::{quantile_sorted, sorted_copy};

pub const DEFAULT_QUANTILES: usize = 500;
pub const DEFAULT_TRACE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    #[default]
    Multiplicative,
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileMap {
    pub n_quantiles: usize,
    pub taus: Vec<f64>,
    pub q_obs_hist: Vec<f64>,
    pub q_mod_hist: Vec<f64>,
    pub kind: DeltaKind,
    pub trace_threshold: f64,
}

/// Probability levels `(k - 0.5) / n` for `k = 1..=n`.
pub fn tau_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect()
}

fn quantiles_at(sample: &[f64], taus: &[f64]) -> Vec<f64> {
    let sorted = sorted_copy(sample);
    taus.iter().map(|&p| quantile_sorted(&sorted, p)).collect()
}

/// Piecewise-linear evaluation of a table defined on the uniform tau grid.
fn table_at(table: &[f64], tau: f64) -> f64 {
    let n = table.len();
    let pos = (tau * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = (pos.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    table[lo] + (pos - lo as f64) * (table[hi] - table[lo])
}

/// Inverse of a nondecreasing quantile table: the probability level of `x`.
/// Runs of equal quantiles map to the middle of their tau range.
fn tau_of(quantiles: &[f64], taus: &[f64], x: f64) -> f64 {
    let n = quantiles.len();
    // first index with q >= x, first index with q > x
    let lo = quantiles.partition_point(|&q| q < x);
    let hi = quantiles.partition_point(|&q| q <= x);
    if lo < hi {
        return 0.5 * (taus[lo] + taus[hi - 1]);
    }
    if lo == 0 {
        return taus[0];
    }
    if lo == n {
        return taus[n - 1];
    }
    let (q0, q1) = (quantiles[lo - 1], quantiles[lo]);
    let w = (x - q0) / (q1 - q0);
    taus[lo - 1] + w * (taus[lo] - taus[lo - 1])
}

impl QuantileMap {
    pub fn fit_samples(
        obs_hist: &[f64],
        mod_hist: &[f64],
        n: usize,
        kind: DeltaKind,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one quantile".into()));
        }
        for s in [obs_hist, mod_hist] {
            if s.len() < n {
                return Err(Error::InsufficientSamples {
                    needed: n,
                    found: s.len(),
                });
            }
        }
        let taus = tau_grid(n);
        Ok(Self {
            n_quantiles: n,
            q_obs_hist: quantiles_at(obs_hist, &taus),
            q_mod_hist: quantiles_at(mod_hist, &taus),
            taus,
            kind,
            trace_threshold: DEFAULT_TRACE_THRESHOLD,
        })
    }

    pub fn with_trace_threshold(mut self, threshold: f64) -> Self {
        self.trace_threshold = threshold;
        self
    }

    pub fn tau_bounds(&self) -> (f64, f64) {
        let n = self.n_quantiles as f64;
        (0.5 / n, 1.0 - 0.5 / n)
    }

    pub fn q_obs_at(&self, tau: f64) -> f64 {
        table_at(&self.q_obs_hist, tau)
    }

    pub fn q_mod_at(&self, tau: f64) -> f64 {
        table_at(&self.q_mod_hist, tau)
    }

    /// Largest gap between adjacent historical quantiles of either table.
    pub fn max_adjacent_gap(&self) -> f64 {
        [&self.q_obs_hist, &self.q_mod_hist]
            .iter()
            .flat_map(|q| q.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max)
    }

    /// Corrected value of `x` at probability level `tau`.
    pub fn correct_at(&self, x: f64, tau: f64) -> f64 {
        let (lo, hi) = self.tau_bounds();
        let tau = tau.clamp(lo, hi);
        let out = match self.kind {
            DeltaKind::Multiplicative => {
                let denom = self.q_mod_at(tau).max(self.trace_threshold);
                self.q_obs_at(tau) * (x / denom)
            }
            DeltaKind::Additive => self.q_obs_at(tau) + (x - self.q_mod_at(tau)),
        };
        out.max(0.0)
    }

    /// Corrects a projection sample using its own empirical CDF.
    pub fn correct_samples(&self, target: &[f64]) -> Result<Vec<f64>> {
        if target.is_empty() {
            return Err(Error::InsufficientSamples {
                needed: 1,
                found: 0,
            });
        }
        let q_target = quantiles_at(target, &self.taus);
        Ok(target
            .iter()
            .map(|&x| self.correct_at(x, tau_of(&q_target, &self.taus, x)))
            .collect())
    }
}

/// Fits a domain-pooled quantile map from two mm/d stacks.
pub fn fit_quantile_map(
    obs_hist: &FieldStack,
    mod_hist: &FieldStack,
    n: usize,
    kind: DeltaKind,
) -> Result<QuantileMap> {
    expect_units(obs_hist.units(), Units::MmPerDay)?;
    expect_units(mod_hist.units(), Units::MmPerDay)?;
    QuantileMap::fit_samples(obs_hist.values(), mod_hist.values(), n, kind)
}

/// Applies a pooled map; the target CDF is estimated from the whole stack.
pub fn qdm_correct(map: &QuantileMap, mod_target: &FieldStack) -> Result<FieldStack> {
    expect_units(mod_target.units(), Units::MmPerDay)?;
    let values = map.correct_samples(mod_target.values())?;
    Ok(mod_target.derive(values, Units::MmPerDay))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QdmSettings {
    pub n_quantiles: usize,
    pub kind: DeltaKind,
    pub trace_threshold: f64,
    /// One map per grid cell instead of one pooled over the domain.
    pub per_pixel: bool,
}

impl Default for QdmSettings {
    fn default() -> Self {
        Self {
            n_quantiles: DEFAULT_QUANTILES,
            kind: DeltaKind::Multiplicative,
            trace_threshold: DEFAULT_TRACE_THRESHOLD,
            per_pixel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum QdmModel {
    Pooled {
        map: QuantileMap,
    },
    PerPixel {
        grid: GridSpec,
        maps: Vec<QuantileMap>,
    },
}

impl QdmModel {
    pub fn fit(obs_hist: &FieldStack, mod_hist: &FieldStack, s: &QdmSettings) -> Result<Self> {
        expect_units(obs_hist.units(), Units::MmPerDay)?;
        expect_units(mod_hist.units(), Units::MmPerDay)?;
        if !s.per_pixel {
            let map = fit_quantile_map(obs_hist, mod_hist, s.n_quantiles, s.kind)?
                .with_trace_threshold(s.trace_threshold);
            return Ok(QdmModel::Pooled { map });
        }
        obs_hist.grid().ensure_matches(mod_hist.grid())?;
        let g = *obs_hist.grid();
        let mut maps = Vec::with_capacity(g.len());
        for i in 0..g.n_lat {
            for j in 0..g.n_lon {
                let m = QuantileMap::fit_samples(
                    &obs_hist.series(i, j),
                    &mod_hist.series(i, j),
                    s.n_quantiles,
                    s.kind,
                )?;
                maps.push(m.with_trace_threshold(s.trace_threshold));
            }
        }
        Ok(QdmModel::PerPixel { grid: g, maps })
    }

    pub fn correct(&self, target: &FieldStack) -> Result<FieldStack> {
        match self {
            QdmModel::Pooled { map } => qdm_correct(map, target),
            QdmModel::PerPixel { grid, maps } => {
                expect_units(target.units(), Units::MmPerDay)?;
                grid.ensure_matches(target.grid())?;
                let n = grid.len();
                let mut values = vec![0.0; target.values().len()];
                for (k, map) in maps.iter().enumerate() {
                    let (i, j) = (k / grid.n_lon, k % grid.n_lon);
                    let corrected = map.correct_samples(&target.series(i, j))?;
                    for (t, v) in corrected.into_iter().enumerate() {
                        values[t * n + k] = v;
                    }
                }
                Ok(target.derive(values, Units::MmPerDay))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn stack(values: Vec<f64>) -> FieldStack {
        let n = values.len();
        let g = GridSpec::new(1, n, 0.0, 1.0, 0.5, 360.0 / n as f64).unwrap();
        FieldStack::new(g, vec![0], values, Units::MmPerDay).unwrap()
    }

    #[test]
    fn taus_are_midpoints() {
        let t = tau_grid(4);
        assert_eq!(t, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn identical_inputs_give_identical_tables() {
        let mut r = rng(1);
        let s: Vec<f64> = (0..2000).map(|_| r.gen::<f64>() * 30.0).collect();
        let m = QuantileMap::fit_samples(&s, &s, 500, DeltaKind::Multiplicative).unwrap();
        assert_eq!(m.q_obs_hist, m.q_mod_hist);
    }

    #[test]
    fn scaled_model_quantiles_against_sorted_oracle() {
        let obs: Vec<f64> = (1..=1000).map(|k| k as f64 / 10.0).collect();
        let model: Vec<f64> = obs.iter().map(|v| 2.0 * v).collect();
        let m = QuantileMap::fit_samples(&obs, &model, 500, DeltaKind::Multiplicative).unwrap();
        for (k, &tau) in m.taus.iter().enumerate() {
            // type-7 position on the sorted 1..1000 / 10 sample
            let h = 999.0 * tau;
            let lo = h.floor();
            let expect = (lo + 1.0 + (h - lo)) / 10.0;
            assert_relative_eq!(m.q_obs_hist[k], expect, epsilon = 1e-12);
            assert_relative_eq!(m.q_mod_hist[k], 2.0 * m.q_obs_hist[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn default_quantile_count() {
        assert_eq!(QdmSettings::default().n_quantiles, 500);
        assert_eq!(DEFAULT_QUANTILES, 500);
    }

    #[test]
    fn insufficient_samples_and_units() {
        assert!(matches!(
            QuantileMap::fit_samples(&[1.0; 10], &[1.0; 600], 500, DeltaKind::Additive),
            Err(Error::InsufficientSamples { .. })
        ));
        let g = GridSpec::global(1, 4).unwrap();
        let t = FieldStack::new(g, vec![0], vec![0.0; 4], Units::Transformed).unwrap();
        let m = FieldStack::new(g, vec![0], vec![0.0; 4], Units::MmPerDay).unwrap();
        assert!(fit_quantile_map(&t, &m, 2, DeltaKind::Multiplicative).is_err());
        let map = QuantileMap::fit_samples(&[1.0, 2.0], &[1.0, 2.0], 2, DeltaKind::Multiplicative)
            .unwrap();
        assert!(map.correct_samples(&[]).is_err());
    }

    #[test]
    fn identity_when_distributions_agree() {
        let mut r = rng(2);
        let s: Vec<f64> = (0..10_000)
            .map(|_| {
                if r.gen::<f64>() < 0.3 {
                    0.0
                } else {
                    -5.0 * r.gen::<f64>().ln()
                }
            })
            .collect();
        let m = QuantileMap::fit_samples(&s, &s, 500, DeltaKind::Multiplicative).unwrap();
        let out = m.correct_samples(&s).unwrap();
        let gap = m.max_adjacent_gap();
        for (a, b) in out.iter().zip(&s) {
            assert!((a - b).abs() <= gap);
        }
    }

    #[test]
    fn scaling_oracle_preserves_relative_change() {
        let mut r = rng(3);
        let u: Vec<f64> = (0..5000).map(|_| r.gen_range(1.0..20.0)).collect();
        let model: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        let future: Vec<f64> = u.iter().map(|v| 3.0 * v).collect();
        let m = QuantileMap::fit_samples(&u, &model, 500, DeltaKind::Multiplicative).unwrap();
        let out = m.correct_samples(&future).unwrap();
        for (o, v) in out.iter().zip(&u) {
            assert!((o - 1.5 * v).abs() <= 1e-6 * 1.5 * v);
        }
    }

    #[test]
    fn additive_shift_oracle() {
        let mut r = rng(4);
        let u: Vec<f64> = (0..3000).map(|_| r.gen_range(5.0..20.0)).collect();
        let model: Vec<f64> = u.iter().map(|v| v + 2.0).collect();
        let future: Vec<f64> = u.iter().map(|v| v + 3.0).collect();
        let m = QuantileMap::fit_samples(&u, &model, 300, DeltaKind::Additive).unwrap();
        for (o, v) in m.correct_samples(&future).unwrap().iter().zip(&u) {
            assert_relative_eq!(*o, v + 1.0, epsilon = 1e-9);
        }
    }

    fn ks(a: &[f64], b: &[f64]) -> f64 {
        // step-function oracle over the merged support
        let mut pts: Vec<f64> = a.iter().chain(b).copied().collect();
        pts.sort_by(|x, y| x.total_cmp(y));
        let sa = sorted_copy(a);
        let sb = sorted_copy(b);
        pts.iter()
            .map(|&x| {
                let fa = sa.partition_point(|&v| v <= x) as f64 / a.len() as f64;
                let fb = sb.partition_point(|&v| v <= x) as f64 / b.len() as f64;
                (fa - fb).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn historical_correction_is_quantile_mapping() {
        let mut r = rng(5);
        let n = 10_000;
        let obs: Vec<f64> = (0..n).map(|_| -4.0 * r.gen::<f64>().ln()).collect();
        let model: Vec<f64> = (0..n)
            .map(|_| 1.5 * r.gen::<f64>().powf(0.7) * 10.0)
            .collect();
        let m = QuantileMap::fit_samples(&obs, &model, 500, DeltaKind::Multiplicative).unwrap();
        let out = m.correct_samples(&model).unwrap();
        assert!(ks(&out, &obs) <= 2.0 / (n as f64).sqrt());
    }

    #[test]
    fn delta_preserved_at_evaluated_tau() {
        let mut r = rng(6);
        let obs: Vec<f64> = (0..1000).map(|_| r.gen_range(0.5..40.0)).collect();
        let model: Vec<f64> = (0..1000).map(|_| r.gen_range(1.0..30.0)).collect();
        let m = QuantileMap::fit_samples(&obs, &model, 100, DeltaKind::Multiplicative).unwrap();
        for k in 0..200 {
            let tau = (k as f64 + 0.5) / 200.0;
            let x = r.gen_range(0.1..50.0);
            let t = tau.clamp(m.tau_bounds().0, m.tau_bounds().1);
            let out = m.correct_at(x, tau);
            assert_relative_eq!(out / m.q_obs_at(t), x / m.q_mod_at(t), max_relative = 1e-12);
        }
    }

    #[test]
    fn trace_floor_bounds_the_ratio() {
        let m = QuantileMap {
            n_quantiles: 2,
            taus: tau_grid(2),
            q_obs_hist: vec![1.0, 2.0],
            q_mod_hist: vec![0.0, 0.001],
            kind: DeltaKind::Multiplicative,
            trace_threshold: DEFAULT_TRACE_THRESHOLD,
        };
        assert_relative_eq!(m.correct_at(0.01, 0.25), 1.0 * 0.01 / 0.05);
    }

    #[test]
    fn pooled_and_per_pixel_agree_on_homogeneous_field() {
        let g = GridSpec::global(2, 2).unwrap();
        let mut r = rng(7);
        let obs: Vec<f64> = (0..400 * 4).map(|_| r.gen_range(0.5..10.0)).collect();
        let modl: Vec<f64> = obs.iter().map(|v| v * 1.7).collect();
        let obs = FieldStack::daily(g, 0, obs, Units::MmPerDay).unwrap();
        let modl = FieldStack::daily(g, 0, modl, Units::MmPerDay).unwrap();
        let s = QdmSettings {
            n_quantiles: 100,
            per_pixel: true,
            ..Default::default()
        };
        let per = QdmModel::fit(&obs, &modl, &s).unwrap();
        let out = per.correct(&modl).unwrap();
        for (a, b) in out.values().iter().zip(obs.values()) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
        let text = serde_json::to_string(&per).unwrap();
        let back: QdmModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, per);
    }

    #[test]
    fn serializes_documented_fields() {
        let m = QuantileMap::fit_samples(
            &[1.0, 2.0, 3.0],
            &[1.0, 2.0, 3.0],
            3,
            DeltaKind::Multiplicative,
        )
        .unwrap();
        let v = serde_json::to_value(&m).unwrap();
        for key in ["taus", "q_obs_hist", "q_mod_hist", "kind", "n_quantiles"] {
            assert!(v.get(key).is_some());
        }
        assert_eq!(v["kind"], "multiplicative");
    }

    fn assert_rank_preserved(target: &[f64], out: &[f64]) -> Result<(), TestCaseError> {
        let mut idx: Vec<usize> = (0..target.len()).collect();
        idx.sort_by(|&i, &j| target[i].total_cmp(&target[j]));
        for w in idx.windows(2) {
            prop_assert!(out[w[1]] >= out[w[0]] - 1e-9);
        }
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn rank_order_preserved_multiplicative(
            seed in 0u64..1000,
            a in 0.2f64..5.0,
            b in 0.2f64..5.0,
            c in 0.2f64..5.0,
        ) {
            let mut r = rng(seed);
            let u: Vec<f64> = (0..600).map(|_| r.gen_range(0.0..30.0)).collect();
            let obs: Vec<f64> = u.iter().map(|v| a * v).collect();
            let model: Vec<f64> = u.iter().map(|v| b * v).collect();
            let target: Vec<f64> = (0..400).map(|_| c * r.gen_range(0.0..30.0)).collect();
            let m = QuantileMap::fit_samples(&obs, &model, 100, DeltaKind::Multiplicative).unwrap();
            assert_rank_preserved(&target, &m.correct_samples(&target).unwrap())?;
        }

        #[test]
        fn rank_order_preserved_additive(
            seed in 0u64..1000,
            a in 0.0f64..5.0,
            b in 0.0f64..5.0,
            c in 0.0f64..5.0,
        ) {
            let mut r = rng(seed);
            let u: Vec<f64> = (0..600).map(|_| r.gen_range(0.0..30.0)).collect();
            let obs: Vec<f64> = u.iter().map(|v| v + a).collect();
            let model: Vec<f64> = u.iter().map(|v| v + b).collect();
            let target: Vec<f64> = (0..400).map(|_| r.gen_range(0.0..30.0) + c).collect();
            let m = QuantileMap::fit_samples(&obs, &model, 100, DeltaKind::Additive).unwrap();
            assert_rank_preserved(&target, &m.correct_samples(&target).unwrap())?;
        }
    }

    #[test]
    fn pooled_correct_on_stack() {
        let s: Vec<f64> = (1..=50).map(f64::from).collect();
        let m = QuantileMap::fit_samples(&s, &s, 10, DeltaKind::Multiplicative).unwrap();
        let out = qdm_correct(&m, &stack(s.clone())).unwrap();
        for (a, b) in out.values().iter().zip(&s) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}
