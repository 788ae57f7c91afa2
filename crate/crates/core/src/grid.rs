//! Regular latitude/longitude grids and time stacks of 2-D fields.
//!
//! Grids are cell-centered and latitude-ascending. Values are stored flat,
//! time-major, then latitude, then longitude. All operations here are pure
//! and return new stacks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

const COORD_EPS: f64 = 1e-9;

/// Geometry of a regular lat/lon grid; coordinates are cell centers in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_lat: usize,
    pub n_lon: usize,
    pub lat_start: f64,
    pub d_lat: f64,
    pub lon_start: f64,
    pub d_lon: f64,
}

impl GridSpec {
    pub fn new(
        n_lat: usize,
        n_lon: usize,
        lat_start: f64,
        d_lat: f64,
        lon_start: f64,
        d_lon: f64,
    ) -> Result<Self> {
        let g = Self {
            n_lat,
            n_lon,
            lat_start,
            d_lat,
            lon_start,
            d_lon,
        };
        g.validate()?;
        Ok(g)
    }

    /// Cell-centered global grid covering the sphere with `n_lat` x `n_lon` cells.
    pub fn global(n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat == 0 || n_lon == 0 {
            return Err(Error::InvalidGrid(
                "grid dimensions must be positive".into(),
            ));
        }
        let d_lat = 180.0 / n_lat as f64;
        let d_lon = 360.0 / n_lon as f64;
        Self::new(n_lat, n_lon, -90.0 + 0.5 * d_lat, d_lat, 0.5 * d_lon, d_lon)
    }

    /// 0.25 degree target grid (720 x 1440).
    pub fn canonical_high_res() -> Self {
        Self::global(720, 1440).expect("static grid")
    }

    /// 1 degree grid (180 x 360).
    pub fn canonical_low_res() -> Self {
        Self::global(180, 360).expect("static grid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_lat == 0 || self.n_lon == 0 {
            return Err(Error::InvalidGrid(
                "grid dimensions must be positive".into(),
            ));
        }
        if self.d_lat == 0.0
            || self.d_lon == 0.0
            || !self.d_lat.is_finite()
            || !self.d_lon.is_finite()
        {
            return Err(Error::InvalidGrid(
                "grid spacing must be finite and nonzero".into(),
            ));
        }
        if !self.lat_start.is_finite() || !self.lon_start.is_finite() {
            return Err(Error::InvalidGrid("grid origin must be finite".into()));
        }
        let first = self.lat(0);
        let last = self.lat(self.n_lat - 1);
        if first.abs() > 90.0 + COORD_EPS || last.abs() > 90.0 + COORD_EPS {
            return Err(Error::InvalidGrid(format!(
                "cell-center latitudes {first}..{last} leave [-90, 90]"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat_start + i as f64 * self.d_lat
    }

    /// Longitude of column `j`, wrapped to [0, 360).
    pub fn lon(&self, j: usize) -> f64 {
        (self.lon_start + j as f64 * self.d_lon).rem_euclid(360.0)
    }

    pub fn lats(&self) -> Vec<f64> {
        (0..self.n_lat).map(|i| self.lat(i)).collect()
    }

    pub fn lons(&self) -> Vec<f64> {
        (0..self.n_lon).map(|j| self.lon(j)).collect()
    }

    /// Longitude extent covered by the grid; 360 for a global grid.
    pub fn lon_extent(&self) -> f64 {
        self.n_lon as f64 * self.d_lon.abs()
    }

    pub fn lat_extent(&self) -> f64 {
        self.n_lat as f64 * self.d_lat.abs()
    }

    /// Same geometry up to floating-point noise in the coordinates.
    pub fn matches(&self, other: &GridSpec) -> bool {
        self.n_lat == other.n_lat
            && self.n_lon == other.n_lon
            && (self.lat_start - other.lat_start).abs() < COORD_EPS
            && (self.d_lat - other.d_lat).abs() < COORD_EPS
            && (self.lon_start - other.lon_start).abs() < COORD_EPS
            && (self.d_lon - other.d_lon).abs() < COORD_EPS
    }

    pub fn ensure_matches(&self, other: &GridSpec) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self} vs {other}")))
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} (lat {}+{}, lon {}+{})",
            self.n_lat, self.n_lon, self.lat_start, self.d_lat, self.lon_start, self.d_lon
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    MmPerDay,
    KgPerM2S,
    MPerHour,
    /// Model space produced by the forward value transform.
    Transformed,
    /// Native physical units of a non-precipitation atmospheric variable.
    Native,
}

impl Units {
    pub fn as_str(&self) -> &'static str {
        match self {
            Units::MmPerDay => "mm_per_day",
            Units::KgPerM2S => "kg_per_m2_s",
            Units::MPerHour => "m_per_hour",
            Units::Transformed => "transformed",
            Units::Native => "native",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mm_per_day" => Ok(Units::MmPerDay),
            "kg_per_m2_s" => Ok(Units::KgPerM2S),
            "m_per_hour" => Ok(Units::MPerHour),
            "transformed" => Ok(Units::Transformed),
            "native" => Ok(Units::Native),
            other => Err(Error::InvalidData(format!("unknown units `{other}`"))),
        }
    }
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub(crate) fn expect_units(found: Units, expected: Units) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::Units {
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}

/// Time series of 2-D fields of one variable on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStack {
    grid: GridSpec,
    times: Vec<i64>,
    values: Vec<f64>,
    units: Units,
    variable: String,
}

impl FieldStack {
    pub fn new(grid: GridSpec, times: Vec<i64>, values: Vec<f64>, units: Units) -> Result<Self> {
        Self::with_variable(grid, times, values, units, "precipitation")
    }

    pub fn with_variable(
        grid: GridSpec,
        times: Vec<i64>,
        values: Vec<f64>,
        units: Units,
        variable: impl Into<String>,
    ) -> Result<Self> {
        grid.validate()?;
        if values.len() != times.len() * grid.len() {
            return Err(Error::Shape(format!(
                "{} values for {} times on a {} grid",
                values.len(),
                times.len(),
                grid
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData(
                "times must be strictly increasing".into(),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite value {bad}")));
        }
        if units == Units::MmPerDay {
            if let Some(neg) = values.iter().find(|&&v| v < 0.0) {
                return Err(Error::InvalidData(format!(
                    "negative precipitation {neg} mm/d"
                )));
            }
        }
        Ok(Self {
            grid,
            times,
            values,
            units,
            variable: variable.into(),
        })
    }

    /// Contiguous daily time axis starting at `t0`.
    pub fn daily(grid: GridSpec, t0: i64, values: Vec<f64>, units: Units) -> Result<Self> {
        let n = if grid.is_empty() {
            0
        } else {
            values.len() / grid.len()
        };
        Self::new(grid, (t0..t0 + n as i64).collect(), values, units)
    }

    pub fn filled(grid: GridSpec, times: Vec<i64>, value: f64, units: Units) -> Result<Self> {
        let n = times.len() * grid.len();
        Self::new(grid, times, vec![value; n], units)
    }

    /// Builds a stack whose invariants the caller has already established.
    pub(crate) fn from_parts(
        grid: GridSpec,
        times: Vec<i64>,
        values: Vec<f64>,
        units: Units,
        variable: String,
    ) -> Self {
        debug_assert_eq!(values.len(), times.len() * grid.len());
        Self {
            grid,
            times,
            values,
            units,
            variable,
        }
    }

    /// Same metadata as `self`, new values and units (values must already satisfy the invariants).
    pub(crate) fn derive(&self, values: Vec<f64>, units: Units) -> Self {
        Self::from_parts(
            self.grid,
            self.times.clone(),
            values,
            units,
            self.variable.clone(),
        )
    }

    pub(crate) fn derive_on(&self, grid: GridSpec, values: Vec<f64>) -> Self {
        Self::from_parts(
            grid,
            self.times.clone(),
            values,
            self.units,
            self.variable.clone(),
        )
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn variable(&self) -> &str {
        &self.variable
    }

    pub fn set_variable(&mut self, name: impl Into<String>) {
        self.variable = name.into();
    }

    pub fn n_time(&self) -> usize {
        self.times.len()
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.len())
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> f64 {
        self.values[(t * self.grid.n_lat + i) * self.grid.n_lon + j]
    }

    /// Values of cell `(i, j)` over time.
    pub fn series(&self, i: usize, j: usize) -> Vec<f64> {
        let n = self.grid.len();
        let k = i * self.grid.n_lon + j;
        (0..self.n_time()).map(|t| self.values[t * n + k]).collect()
    }

    /// Subset of time slices `range`.
    pub fn time_range(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.n_time() || range.start > range.end {
            return Err(Error::OutOfRange {
                index: range.end,
                max: self.n_time(),
            });
        }
        let n = self.grid.len();
        Ok(Self::from_parts(
            self.grid,
            self.times[range.clone()].to_vec(),
            self.values[range.start * n..range.end * n].to_vec(),
            self.units,
            self.variable.clone(),
        ))
    }

    /// Per-cell mean over time.
    pub fn time_mean(&self) -> Vec<f64> {
        let n = self.grid.len();
        let nt = self.n_time().max(1) as f64;
        (0..n)
            .map(|k| stats::sum((0..self.n_time()).map(|t| self.values[t * n + k])) / nt)
            .collect()
    }

    pub fn ensure_aligned(&self, other: &FieldStack) -> Result<()> {
        self.grid.ensure_matches(&other.grid)?;
        if self.times != other.times {
            return Err(Error::Shape("time axes differ".into()));
        }
        Ok(())
    }
}

/// Member-indexed collection of stacks sharing grid, time axis and units.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStack {
    members: Vec<FieldStack>,
}

impl EnsembleStack {
    pub fn new(members: Vec<FieldStack>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidData("ensemble needs at least one member".into()))?;
        for m in &members[1..] {
            first.ensure_aligned(m)?;
            if m.units() != first.units() {
                return Err(Error::Units {
                    expected: first.units().to_string(),
                    found: m.units().to_string(),
                });
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[FieldStack] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn grid(&self) -> &GridSpec {
        self.members[0].grid()
    }

    pub fn times(&self) -> &[i64] {
        self.members[0].times()
    }

    /// Member mean at every cell and time.
    pub fn mean(&self) -> FieldStack {
        let n = self.members[0].values().len();
        let k = self.members.len() as f64;
        let values = (0..n)
            .map(|idx| stats::sum(self.members.iter().map(|m| m.values()[idx])) / k)
            .collect();
        self.members[0].derive(values, self.members[0].units())
    }
}

/// Normalized cosine-of-latitude row weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LatWeights {
    weights: Vec<f64>,
}

impl LatWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn uniform(n_lat: usize) -> Self {
        Self {
            weights: vec![1.0 / n_lat as f64; n_lat],
        }
    }
}

pub fn cos_lat_weights(grid: &GridSpec) -> Result<LatWeights> {
    cos_lat_weights_at(&grid.lats())
}

/// Normalized cosine weights for arbitrary row latitudes (degrees).
pub fn cos_lat_weights_at(lats: &[f64]) -> Result<LatWeights> {
    let raw: Vec<f64> = lats
        .iter()
        .map(|l| {
            if 90.0 - l.abs() < COORD_EPS {
                0.0
            } else {
                l.to_radians().cos().max(0.0)
            }
        })
        .collect();
    let total = stats::sum(raw.iter().copied());
    if total <= 0.0 {
        return Err(Error::InvalidGrid("all latitude weights are zero".into()));
    }
    Ok(LatWeights {
        weights: raw.into_iter().map(|w| w / total).collect(),
    })
}

pub(crate) fn check_weights(grid: &GridSpec, w: &LatWeights) -> Result<()> {
    if w.len() != grid.n_lat {
        return Err(Error::GridMismatch(format!(
            "{} latitude weights for {} rows",
            w.len(),
            grid.n_lat
        )));
    }
    Ok(())
}

/// Weighted mean of one 2-D slice: sum over rows of `w_i * rowmean_i`.
pub fn weighted_mean_2d(slice: &[f64], grid: &GridSpec, w: &LatWeights) -> f64 {
    let n_lon = grid.n_lon;
    stats::sum(
        slice
            .chunks_exact(n_lon)
            .zip(w.as_slice())
            .map(|(row, wi)| wi * stats::sum(row.iter().copied()) / n_lon as f64),
    )
}

/// Latitude-weighted global mean for every time slice.
pub fn weighted_global_mean(f: &FieldStack, w: &LatWeights) -> Result<Vec<f64>> {
    check_weights(f.grid(), w)?;
    Ok(f.slices()
        .map(|s| weighted_mean_2d(s, f.grid(), w))
        .collect())
}

/// Grid of block means of `factor` x `factor` cells.
pub fn pooled_grid(g: &GridSpec, factor: usize) -> Result<GridSpec> {
    if factor == 0 || g.n_lat % factor != 0 || g.n_lon % factor != 0 {
        return Err(Error::Shape(format!(
            "grid {}x{} is not divisible by pooling factor {factor}",
            g.n_lat, g.n_lon
        )));
    }
    let half = (factor as f64 - 1.0) / 2.0;
    GridSpec::new(
        g.n_lat / factor,
        g.n_lon / factor,
        g.lat_start + half * g.d_lat,
        g.d_lat * factor as f64,
        g.lon_start + half * g.d_lon,
        g.d_lon * factor as f64,
    )
}

/// Block-mean downsampling by `factor` in both directions.
pub fn average_pool(f: &FieldStack, factor: usize) -> Result<FieldStack> {
    let g = f.grid();
    let out_grid = pooled_grid(g, factor)?;
    if factor == 1 {
        return Ok(f.clone());
    }
    let (ny, nx) = (out_grid.n_lat, out_grid.n_lon);
    let inv = 1.0 / (factor * factor) as f64;
    let mut values = Vec::with_capacity(f.n_time() * ny * nx);
    for s in f.slices() {
        for bi in 0..ny {
            for bj in 0..nx {
                let mut acc = 0.0;
                for di in 0..factor {
                    let row = (bi * factor + di) * g.n_lon + bj * factor;
                    acc += s[row..row + factor].iter().sum::<f64>();
                }
                values.push(acc * inv);
            }
        }
    }
    Ok(f.derive_on(out_grid, values))
}

/// Keeps every `stride`-th cell in both directions, anchored at index 0.
pub fn strided_subsample(f: &FieldStack, stride: usize) -> Result<FieldStack> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if stride == 1 {
        return Ok(f.clone());
    }
    let g = f.grid();
    let ny = g.n_lat.div_ceil(stride);
    let nx = g.n_lon.div_ceil(stride);
    let out_grid = GridSpec::new(
        ny,
        nx,
        g.lat_start,
        g.d_lat * stride as f64,
        g.lon_start,
        g.d_lon * stride as f64,
    )?;
    let mut values = Vec::with_capacity(f.n_time() * ny * nx);
    for s in f.slices() {
        for i in (0..g.n_lat).step_by(stride) {
            let row = &s[i * g.n_lon..(i + 1) * g.n_lon];
            values.extend(row.iter().step_by(stride));
        }
    }
    Ok(f.derive_on(out_grid, values))
}

/// Interpolation stencil along one axis: lower index, upper index, weight of upper.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    lo: usize,
    hi: usize,
    w: f64,
}

fn lat_stencils(src: &GridSpec, dst: &GridSpec) -> Vec<Stencil> {
    (0..dst.n_lat)
        .map(|i| {
            let u = ((dst.lat(i) - src.lat_start) / src.d_lat).clamp(0.0, (src.n_lat - 1) as f64);
            let lo = (u.floor() as usize).min(src.n_lat - 1);
            let hi = (lo + 1).min(src.n_lat - 1);
            Stencil {
                lo,
                hi,
                w: u - lo as f64,
            }
        })
        .collect()
}

fn lon_stencils(src: &GridSpec, dst: &GridSpec) -> Vec<Stencil> {
    let n = src.n_lon as f64;
    (0..dst.n_lon)
        .map(|j| {
            let raw = (dst.lon_start + j as f64 * dst.d_lon - src.lon_start) / src.d_lon;
            let mut v = raw.rem_euclid(n);
            if v >= n {
                v = 0.0;
            }
            let lo = (v.floor() as usize).min(src.n_lon - 1);
            let hi = (lo + 1) % src.n_lon;
            Stencil {
                lo,
                hi,
                w: v - lo as f64,
            }
        })
        .collect()
}

/// Bilinear interpolation onto `target` cell centers; periodic in longitude,
/// clamped at the latitude edges.
pub fn bilinear_upsample(f: &FieldStack, target: &GridSpec) -> Result<FieldStack> {
    target.validate()?;
    let src = f.grid();
    if target.d_lat.abs() > src.d_lat.abs() + COORD_EPS
        || target.d_lon.abs() > src.d_lon.abs() + COORD_EPS
    {
        return Err(Error::InvalidGrid(format!(
            "target {target} is coarser than source {src}"
        )));
    }
    let ys = lat_stencils(src, target);
    let xs = lon_stencils(src, target);
    let mut values = Vec::with_capacity(f.n_time() * target.len());
    for s in f.slices() {
        for y in &ys {
            let r0 = &s[y.lo * src.n_lon..(y.lo + 1) * src.n_lon];
            let r1 = &s[y.hi * src.n_lon..(y.hi + 1) * src.n_lon];
            for x in &xs {
                let a = r0[x.lo] + x.w * (r0[x.hi] - r0[x.lo]);
                let b = r1[x.lo] + x.w * (r1[x.hi] - r1[x.lo]);
                values.push(a + y.w * (b - a));
            }
        }
    }
    // Convex combinations keep nonnegative fields nonnegative up to rounding.
    if f.units() == Units::MmPerDay {
        values.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(f.derive_on(*target, values))
}

/// Drops the last latitude row (721 -> 720 rows on the 0.25 degree grid).
pub fn drop_last_lat_row(f: &FieldStack) -> Result<FieldStack> {
    let g = f.grid();
    if g.n_lat < 2 {
        return Err(Error::Shape("cannot drop the only latitude row".into()));
    }
    let out_grid = GridSpec::new(
        g.n_lat - 1,
        g.n_lon,
        g.lat_start,
        g.d_lat,
        g.lon_start,
        g.d_lon,
    )?;
    let keep = out_grid.len();
    let values = f.slices().flat_map(|s| s[..keep].iter().copied()).collect();
    Ok(f.derive_on(out_grid, values))
}
