use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_weights, FieldStack, LatWeights};

pub const RELATIVE_CHANGE_FLOOR: f64 = 0.05;

/// Per-latitude mean of the time-mean field.
pub fn lat_profile(f: &FieldStack) -> Vec<f64> {
    let n = f.grid().n_lon;
    f.time_mean()
        .chunks_exact(n)
        .map(|row| crate::stats::mean(row))
        .collect()
}

/// Per-longitude latitude-weighted mean of the time-mean field.
pub fn lon_profile(f: &FieldStack, w: &LatWeights) -> Result<Vec<f64>> {
    check_weights(f.grid(), w)?;
    let n = f.grid().n_lon;
    let tm = f.time_mean();
    let total: f64 = w.as_slice().iter().sum();
    let mut out = vec![0.0; n];
    for (row, wi) in tm.chunks_exact(n).zip(w.as_slice()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += wi * v;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimatologyBias {
    pub mab: f64,
    /// `mean(a) - mean(b)` per pixel.
    pub map: Vec<f64>,
}

pub fn climatology_mab(a: &FieldStack, b: &FieldStack, w: &LatWeights) -> Result<ClimatologyBias> {
    a.grid().ensure_matches(b.grid())?;
    if a.units() != b.units() {
        return Err(Error::Units {
            expected: a.units().to_string(),
            found: b.units().to_string(),
        });
    }
    check_weights(a.grid(), w)?;
    let map: Vec<f64> = a
        .time_mean()
        .iter()
        .zip(b.time_mean())
        .map(|(x, y)| x - y)
        .collect();
    let abs: Vec<f64> = map.iter().map(|d| d.abs()).collect();
    let mab = crate::grid::weighted_mean_2d(&abs, a.grid(), w);
    Ok(ClimatologyBias { mab, map })
}

/// Percent change of the time mean, relative to `max(mean_hist, floor)`.
pub fn relative_change(future: &FieldStack, hist: &FieldStack) -> Result<Vec<f64>> {
    future.grid().ensure_matches(hist.grid())?;
    Ok(future
        .time_mean()
        .iter()
        .zip(hist.time_mean())
        .map(|(f, h)| 100.0 * (f - h) / h.max(RELATIVE_CHANGE_FLOOR))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{cos_lat_weights, GridSpec, Units};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn random_stack(ny: usize, nx: usize, nt: usize, seed: u64) -> FieldStack {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = GridSpec::global(ny, nx).unwrap();
        let v = (0..ny * nx * nt)
            .map(|_| rng.gen_range(0.0..10.0))
            .collect();
        FieldStack::new(g, (0..nt as i64).collect(), v, Units::MmPerDay).unwrap()
    }

    #[test]
    fn profiles_match_loop_oracle() {
        let f = random_stack(4, 8, 3, 1);
        let w = cos_lat_weights(f.grid()).unwrap();
        let lat = lat_profile(&f);
        let lon = lon_profile(&f, &w).unwrap();
        for i in 0..4 {
            let mut s = 0.0;
            for t in 0..3 {
                for j in 0..8 {
                    s += f.get(t, i, j);
                }
            }
            assert_relative_eq!(lat[i], s / 24.0, epsilon = 1e-12);
        }
        for j in 0..8 {
            let mut s = 0.0;
            for i in 0..4 {
                let tm: f64 = (0..3).map(|t| f.get(t, i, j)).sum::<f64>() / 3.0;
                s += w.as_slice()[i] * tm;
            }
            assert_relative_eq!(lon[j], s, epsilon = 1e-12);
        }
    }

    #[test]
    fn separable_field_profiles() {
        let g = GridSpec::global(4, 6).unwrap();
        let v: Vec<f64> = (0..24).map(|c| (c / 6) as f64 + 1.0).collect();
        let f = FieldStack::daily(g, 0, v, Units::MmPerDay).unwrap();
        let w = cos_lat_weights(f.grid()).unwrap();
        assert_eq!(lat_profile(&f), vec![1.0, 2.0, 3.0, 4.0]);
        let want: f64 = (0..4).map(|i| w.as_slice()[i] * (i as f64 + 1.0)).sum();
        for p in lon_profile(&f, &w).unwrap() {
            assert_relative_eq!(p, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn mab_examples() {
        let a = random_stack(4, 8, 5, 2);
        let w = cos_lat_weights(a.grid()).unwrap();
        assert_eq!(climatology_mab(&a, &a, &w).unwrap().mab, 0.0);
        let b = a.derive(
            a.values().iter().map(|v| v + 1.0).collect(),
            Units::MmPerDay,
        );
        assert_relative_eq!(
            climatology_mab(&b, &a, &w).unwrap().mab,
            1.0,
            epsilon = 1e-12
        );
        let c = random_stack(4, 8, 5, 3);
        let got = climatology_mab(&a, &c, &w).unwrap();
        let mut oracle = 0.0;
        for i in 0..4 {
            for j in 0..8 {
                let d: f64 = (0..5).map(|t| a.get(t, i, j) - c.get(t, i, j)).sum::<f64>() / 5.0;
                oracle += w.as_slice()[i] * d.abs() / 8.0;
            }
        }
        assert_relative_eq!(got.mab, oracle, epsilon = 1e-12);
        let other = random_stack(2, 8, 5, 3);
        assert!(climatology_mab(&a, &other, &LatWeights::uniform(4)).is_err());
    }

    #[test]
    fn relative_change_examples() {
        let h = random_stack(3, 4, 6, 4);
        assert!(relative_change(&h, &h).unwrap().iter().all(|&p| p == 0.0));
        let fut = h.derive(
            h.values().iter().map(|v| v * 1.5).collect(),
            Units::MmPerDay,
        );
        for (p, m) in relative_change(&fut, &h).unwrap().iter().zip(h.time_mean()) {
            if m >= RELATIVE_CHANGE_FLOOR {
                assert_relative_eq!(*p, 50.0, epsilon = 1e-9);
            }
        }
        let other = random_stack(3, 4, 2, 5);
        let got = relative_change(&other, &h).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mf = (0..2).map(|t| other.get(t, i, j)).sum::<f64>() / 2.0;
                let mh = (0..6).map(|t| h.get(t, i, j)).sum::<f64>() / 6.0;
                let want = 100.0 * (mf - mh) / mh.max(0.05);
                assert_relative_eq!(got[i * 4 + j], want, epsilon = 1e-9);
            }
        }
    }
}
