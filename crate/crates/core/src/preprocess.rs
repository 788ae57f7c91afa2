//! Value-space transforms applied before the models see any data.
//!
//! Precipitation goes through `x -> log10(x + 1)`, standardization with
//! population moments, and an affine map of the fitted standardized range
//! onto `[-1, 1]`. Atmospheric predictors skip the offset and log. The
//! inverse clips at 0 mm/d; nothing is clipped in transformed space, so
//! values beyond the training range pass through.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{expect_units, FieldStack, GridSpec, Units};
use crate::stats;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Converts a precipitation stack to `to` (only mm/d targets are defined).
pub fn convert_units(f: &FieldStack, to: Units) -> Result<FieldStack> {
    if to != Units::MmPerDay {
        return Err(Error::InvalidArgument(format!(
            "no conversion from {} to {to}",
            f.units()
        )));
    }
    let factor = match f.units() {
        Units::MmPerDay => return Ok(f.clone()),
        // 1 kg of water over 1 m^2 is a 1 mm layer
        Units::KgPerM2S => SECONDS_PER_DAY,
        Units::MPerHour => 1000.0 * 24.0,
        other => {
            return Err(Error::InvalidArgument(format!(
                "no conversion from {other} to {to}"
            )))
        }
    };
    let values = f.values().iter().map(|v| (v * factor).max(0.0)).collect();
    Ok(f.derive(values, Units::MmPerDay))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueTransform {
    /// Precipitation: offset, logarithm, standardize, range map.
    LogOffset,
    /// Atmospheric variables: standardize and range map only.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub kind: ValueTransform,
    pub offset_mm_per_day: f64,
    pub log_base: f64,
    pub mean: f64,
    pub std: f64,
    pub range_lo: f64,
    pub range_hi: f64,
    /// Standardized training minimum, mapped onto `range_lo`.
    pub z_min: f64,
    /// Standardized training maximum, mapped onto `range_hi`.
    pub z_max: f64,
}

impl TransformParams {
    /// Precipitation parameters with an explicit standardization and the
    /// standardized range `[z_min, z_max]` mapped to `[-1, 1]`.
    pub fn precipitation(mean: f64, std: f64, z_min: f64, z_max: f64) -> Result<Self> {
        let p = Self {
            kind: ValueTransform::LogOffset,
            offset_mm_per_day: 1.0,
            log_base: 10.0,
            mean,
            std,
            range_lo: -1.0,
            range_hi: 1.0,
            z_min,
            z_max,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.std > 0.0
            && self.range_lo < self.range_hi
            && self.z_min < self.z_max
            && self.std.is_finite()
            && self.mean.is_finite();
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid transform parameters {self:?}"
            )));
        }
        if self.kind == ValueTransform::LogOffset
            && !(self.offset_mm_per_day > 0.0 && self.log_base > 1.0)
        {
            return Err(Error::InvalidArgument(
                "log transform needs a positive offset and a base above 1".into(),
            ));
        }
        Ok(())
    }

    fn input_units(&self) -> Units {
        match self.kind {
            ValueTransform::LogOffset => Units::MmPerDay,
            ValueTransform::Linear => Units::Native,
        }
    }

    fn log_value(&self, x: f64) -> f64 {
        match self.kind {
            ValueTransform::Linear => x,
            ValueTransform::LogOffset if self.offset_mm_per_day == 1.0 => {
                x.ln_1p() / self.log_base.ln()
            }
            ValueTransform::LogOffset => (x + self.offset_mm_per_day).ln() / self.log_base.ln(),
        }
    }

    fn exp_value(&self, l: f64) -> f64 {
        match self.kind {
            ValueTransform::Linear => l,
            ValueTransform::LogOffset if self.offset_mm_per_day == 1.0 => {
                (l * self.log_base.ln()).exp_m1().max(0.0)
            }
            ValueTransform::LogOffset => {
                ((l * self.log_base.ln()).exp() - self.offset_mm_per_day).max(0.0)
            }
        }
    }

    fn scale(&self) -> f64 {
        (self.range_hi - self.range_lo) / (self.z_max - self.z_min)
    }

    /// Forward map of one physical value.
    pub fn forward(&self, x: f64) -> f64 {
        let z = (self.log_value(x) - self.mean) / self.std;
        self.range_lo + (z - self.z_min) * self.scale()
    }

    /// Inverse map of one transformed value; precipitation is clipped at 0.
    pub fn inverse(&self, y: f64) -> f64 {
        let z = (y - self.range_lo) / self.scale() + self.z_min;
        self.exp_value(z * self.std + self.mean)
    }

    /// Transformed value of 0 mm/d (the dry floor in model space).
    pub fn dry_value(&self) -> f64 {
        self.forward(0.0)
    }
}

fn fit(f: &FieldStack, kind: ValueTransform) -> Result<TransformParams> {
    let mut p = TransformParams {
        kind,
        offset_mm_per_day: 1.0,
        log_base: 10.0,
        mean: 0.0,
        std: 1.0,
        range_lo: -1.0,
        range_hi: 1.0,
        z_min: -1.0,
        z_max: 1.0,
    };
    expect_units(f.units(), p.input_units())?;
    if f.values().is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 1,
            found: 0,
        });
    }
    let logs: Vec<f64> = f.values().iter().map(|&x| p.log_value(x)).collect();
    p.mean = stats::mean(&logs);
    p.std = stats::population_variance(&logs).sqrt();
    if !(p.std > 0.0) {
        return Err(Error::ZeroVariance(format!(
            "`{}` training stack",
            f.variable()
        )));
    }
    let (lo, hi) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &l| {
            (a.min(l), b.max(l))
        });
    p.z_min = (lo - p.mean) / p.std;
    p.z_max = (hi - p.mean) / p.std;
    p.validate()?;
    Ok(p)
}

/// Fits precipitation transform parameters on an mm/d training stack.
pub fn fit_transform_params(f: &FieldStack) -> Result<TransformParams> {
    fit(f, ValueTransform::LogOffset)
}

/// Fits standardize-and-range parameters for an atmospheric predictor.
pub fn fit_atmos_params(f: &FieldStack) -> Result<TransformParams> {
    fit(f, ValueTransform::Linear)
}

pub fn forward_transform(f: &FieldStack, p: &TransformParams) -> Result<FieldStack> {
    expect_units(f.units(), p.input_units())?;
    if p.kind == ValueTransform::LogOffset {
        if let Some(neg) = f.values().iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidData(format!("negative precipitation {neg}")));
        }
    }
    let values = f.values().iter().map(|&x| p.forward(x)).collect();
    Ok(f.derive(values, Units::Transformed))
}

pub fn inverse_transform(f: &FieldStack, p: &TransformParams) -> Result<FieldStack> {
    expect_units(f.units(), Units::Transformed)?;
    let values = f.values().iter().map(|&y| p.inverse(y)).collect();
    Ok(f.derive(values, p.input_units()))
}

/// Conservative remap of every row onto `n_out` equal longitude cells that
/// share the western edge of the input grid. Each output cell is the
/// overlap-length-weighted mean of the input cells it intersects.
pub fn conservative_lon_remap(f: &FieldStack, n_out: usize) -> Result<FieldStack> {
    let g = f.grid();
    if n_out == 0 {
        return Err(Error::InvalidArgument(
            "output must have at least one cell".into(),
        ));
    }
    let extent = g.lon_extent();
    let d_in = g.d_lon.abs();
    let d_out = extent / n_out as f64;
    // overlap table: (input index, output index, overlap length)
    let mut overlaps = Vec::with_capacity(g.n_lon + n_out);
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0.0f64;
    while i < g.n_lon && j < n_out {
        let in_end = (i + 1) as f64 * d_in;
        let out_end = (j + 1) as f64 * d_out;
        let end = in_end.min(out_end);
        if end > pos {
            overlaps.push((i, j, end - pos));
        }
        pos = end;
        if (in_end - end).abs() <= 1e-12 * extent {
            i += 1;
        }
        if (out_end - end).abs() <= 1e-12 * extent {
            j += 1;
        }
    }
    let west = g.lon_start - 0.5 * g.d_lon;
    let out_grid = GridSpec::new(
        g.n_lat,
        n_out,
        g.lat_start,
        g.d_lat,
        west + 0.5 * d_out * g.d_lon.signum(),
        d_out * g.d_lon.signum(),
    )?;
    let mut values = vec![0.0; f.n_time() * out_grid.len()];
    for (row_in, row_out) in f
        .values()
        .chunks_exact(g.n_lon)
        .zip(values.chunks_exact_mut(n_out))
    {
        for &(i, j, len) in &overlaps {
            row_out[j] += row_in[i] * len;
        }
        row_out.iter_mut().for_each(|v| *v /= d_out);
    }
    if f.units() == Units::MmPerDay {
        values.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(f.derive_on(out_grid, values))
}

/// Remaps 1.25 degree longitude spacing onto 1 degree, conserving each row's zonal integral.
pub fn regrid_lon_1p25_to_1(f: &FieldStack) -> Result<FieldStack> {
    let g = f.grid();
    if (g.d_lon.abs() - 1.25).abs() > 1e-9 {
        return Err(Error::InvalidGrid(format!(
            "expected 1.25 degree longitude spacing, found {}",
            g.d_lon
        )));
    }
    let n_out = (g.lon_extent()).round() as usize;
    conservative_lon_remap(f, n_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn g() -> GridSpec {
        GridSpec::global(2, 4).unwrap()
    }

    fn identity_range() -> TransformParams {
        TransformParams::precipitation(0.0, 1.0, -1.0, 1.0).unwrap()
    }

    #[test]
    fn unit_conversions() {
        let f = FieldStack::daily(g(), 0, vec![1.0; 8], Units::KgPerM2S).unwrap();
        assert!(convert_units(&f, Units::MmPerDay)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 86400.0));
        let f = FieldStack::daily(g(), 0, vec![0.001; 8], Units::MPerHour).unwrap();
        for v in convert_units(&f, Units::MmPerDay).unwrap().values() {
            assert_relative_eq!(*v, 24.0, epsilon = 1e-12);
        }
        let f = FieldStack::daily(g(), 0, vec![2.5e-5; 8], Units::KgPerM2S).unwrap();
        for v in convert_units(&f, Units::MmPerDay).unwrap().values() {
            assert_relative_eq!(*v, 2.16, epsilon = 1e-12);
        }
        let t = FieldStack::daily(g(), 0, vec![0.0; 8], Units::Transformed).unwrap();
        assert!(convert_units(&t, Units::MmPerDay).is_err());
        assert!(convert_units(&f, Units::KgPerM2S).is_err());
    }

    #[test]
    fn fit_zero_variance() {
        let f = FieldStack::daily(g(), 0, vec![0.0; 8], Units::MmPerDay).unwrap();
        assert!(matches!(
            fit_transform_params(&f),
            Err(Error::ZeroVariance(_))
        ));
    }

    #[test]
    fn fit_two_values_by_hand() {
        let v = [0.0, 99.0, 0.0, 99.0, 99.0, 0.0, 99.0, 0.0];
        let f = FieldStack::daily(g(), 0, v.to_vec(), Units::MmPerDay).unwrap();
        let p = fit_transform_params(&f).unwrap();
        assert_relative_eq!(p.mean, 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.std, 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.z_min, -1.0, epsilon = 1e-15);
        assert_relative_eq!(p.z_max, 1.0, epsilon = 1e-15);
        let y = forward_transform(&f, &p).unwrap();
        assert!(y.values().iter().all(|v| (v.abs() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn fit_rejects_transformed_input() {
        let f = FieldStack::daily(
            g(),
            0,
            vec![0.3, -0.2, 0.1, 0.0, 0.5, 0.9, -1.0, 0.2],
            Units::Transformed,
        )
        .unwrap();
        assert!(matches!(fit_transform_params(&f), Err(Error::Units { .. })));
    }

    #[test]
    fn forward_anchors() {
        let p = identity_range();
        assert_eq!(p.forward(0.0), 0.0);
        assert_relative_eq!(p.forward(9.0), 1.0, epsilon = 1e-15);
        assert_eq!(p.inverse(0.0), 0.0);
        assert_relative_eq!(p.inverse(1.0), 9.0, epsilon = 1e-13);
    }

    #[test]
    fn inverse_clips_at_zero() {
        let p = identity_range();
        assert_eq!(p.inverse(-3.0), 0.0);
        let f = FieldStack::daily(g(), 0, vec![-5.0; 8], Units::Transformed).unwrap();
        assert!(inverse_transform(&f, &p)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_values_pass_through() {
        let p = identity_range();
        let y = p.forward(1e4);
        assert!(y > 1.0);
        assert_relative_eq!(p.inverse(y), 1e4, max_relative = 1e-12);
    }

    #[test]
    fn atmos_params_skip_log() {
        let v: Vec<f64> = (0..8).map(|k| 1000.0 + k as f64).collect();
        let f = FieldStack::with_variable(g(), (0..1).collect(), v, Units::Native, "slp").unwrap();
        let p = fit_atmos_params(&f).unwrap();
        let y = forward_transform(&f, &p).unwrap();
        assert_relative_eq!(y.values()[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(y.values()[7], 1.0, epsilon = 1e-12);
        assert_eq!(inverse_transform(&y, &p).unwrap().units(), Units::Native);
    }

    #[test]
    fn random_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..4000)
            .map(|_| rng.gen::<f64>().powi(3) * 200.0)
            .collect();
        let f =
            FieldStack::daily(GridSpec::global(20, 40).unwrap(), 0, v, Units::MmPerDay).unwrap();
        let p = fit_transform_params(&f).unwrap();
        let back = inverse_transform(&forward_transform(&f, &p).unwrap(), &p).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 1e-9 * (b + p.offset_mm_per_day));
            if *b > 1e-3 {
                assert!((a - b).abs() <= 1e-9 * b);
            }
        }
    }

    proptest! {
        #[test]
        fn forward_is_strictly_monotone(a in 0.0f64..1e4, b in 0.0f64..1e4) {
            let p = TransformParams::precipitation(0.4, 0.3, -1.3, 6.0).unwrap();
            prop_assume!(a != b);
            prop_assert_eq!(a < b, p.forward(a) < p.forward(b));
        }
    }

    fn row_grid(n_lon: usize, d_lon: f64) -> GridSpec {
        GridSpec::new(1, n_lon, 0.0, 1.0, 0.5 * d_lon, d_lon).unwrap()
    }

    #[test]
    fn regrid_constant_row() {
        let f = FieldStack::daily(row_grid(288, 1.25), 0, vec![3.0; 288], Units::MmPerDay).unwrap();
        let r = regrid_lon_1p25_to_1(&f).unwrap();
        assert_eq!(r.grid().n_lon, 360);
        assert_relative_eq!(r.grid().lon(0), 0.5, epsilon = 1e-12);
        assert!(r.values().iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn regrid_alternating_matches_overlap_oracle() {
        let v: Vec<f64> = (0..288)
            .map(|k| if k % 2 == 0 { 0.0 } else { 2.0 })
            .collect();
        let f = FieldStack::daily(row_grid(288, 1.25), 0, v.clone(), Units::MmPerDay).unwrap();
        let r = regrid_lon_1p25_to_1(&f).unwrap();
        for j in 0..360 {
            let (a, b) = (j as f64, j as f64 + 1.0);
            let mut acc = 0.0;
            for (i, &x) in v.iter().enumerate() {
                let (c, d) = (i as f64 * 1.25, (i + 1) as f64 * 1.25);
                let ov = (b.min(d) - a.max(c)).max(0.0);
                acc += x * ov;
            }
            assert_relative_eq!(r.values()[j], acc, epsilon = 1e-12);
        }
        let before: f64 = v.iter().sum::<f64>() * 1.25 / 360.0;
        let after: f64 = r.values().iter().sum::<f64>() / 360.0;
        assert_relative_eq!(before, after, epsilon = 1e-12);
    }

    #[test]
    fn regrid_rejects_wrong_spacing() {
        let f = FieldStack::daily(row_grid(360, 1.0), 0, vec![1.0; 360], Units::MmPerDay).unwrap();
        assert!(regrid_lon_1p25_to_1(&f).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn regrid_conserves_zonal_integral(raw in proptest::collection::vec(0.0f64..50.0, 288 * 2)) {
            let grid = GridSpec::new(2, 288, -45.0, 90.0, 0.625, 1.25).unwrap();
            let f = FieldStack::daily(grid, 0, raw, Units::MmPerDay).unwrap();
            let r = regrid_lon_1p25_to_1(&f).unwrap();
            for (row_in, row_out) in f.values().chunks(288).zip(r.values().chunks(360)) {
                let a = stats::sum(row_in.iter().copied()) / 288.0;
                let b = stats::sum(row_out.iter().copied()) / 360.0;
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
