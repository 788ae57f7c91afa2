use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_weights, weighted_mean_2d, EnsembleStack, FieldStack, LatWeights};
use crate::stats;

/// CRPS of an ensemble against one observation.
///
/// Uses the sorted form of the pairwise term,
/// `sum_i sum_j |x_i - x_j| = 2 sum_i (2i - n - 1) x_(i)`, so cost is
/// `O(n log n)`. `members` is sorted in place.
pub fn crps_sample(members: &mut [f64], obs: f64) -> f64 {
    let n = members.len();
    assert!(n > 0, "empty ensemble");
    members.sort_by(f64::total_cmp);
    let nf = n as f64;
    let abs_err = stats::sum(members.iter().map(|x| (x - obs).abs())) / nf;
    if n == 1 {
        return abs_err;
    }
    let spread = stats::sum(
        members
            .iter()
            .enumerate()
            .map(|(i, x)| (2.0 * (i + 1) as f64 - nf - 1.0) * x),
    );
    abs_err - spread / (nf * nf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrpsResult {
    /// Time-mean CRPS per pixel.
    pub map: Vec<f64>,
    /// Latitude-weighted mean of `map`.
    pub scalar: f64,
    /// Latitude-weighted spatial mean per time slice.
    pub series: Vec<f64>,
}

pub fn crps_ensemble(ens: &EnsembleStack, obs: &FieldStack, w: &LatWeights) -> Result<CrpsResult> {
    let g = ens.grid();
    g.ensure_matches(obs.grid())?;
    if ens.times() != obs.times() {
        return Err(Error::Shape(
            "ensemble and observation time axes differ".into(),
        ));
    }
    check_weights(g, w)?;
    let np = g.len();
    let nt = obs.n_time();
    let per_time: Vec<Vec<f64>> = (0..nt)
        .into_par_iter()
        .map(|t| {
            let mut buf = vec![0.0; ens.len()];
            let o = obs.slice(t);
            (0..np)
                .map(|p| {
                    for (b, m) in buf.iter_mut().zip(ens.members()) {
                        *b = m.slice(t)[p];
                    }
                    crps_sample(&mut buf, o[p])
                })
                .collect()
        })
        .collect();
    let series = per_time.iter().map(|s| weighted_mean_2d(s, g, w)).collect();
    let mut map = vec![0.0; np];
    for s in &per_time {
        for (m, v) in map.iter_mut().zip(s) {
            *m += v;
        }
    }
    map.iter_mut().for_each(|m| *m /= nt.max(1) as f64);
    let scalar = weighted_mean_2d(&map, g, w);
    Ok(CrpsResult {
        map,
        scalar,
        series,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadSkillCurve {
    /// Mean spread per bin.
    pub bin_centers: Vec<f64>,
    /// Root-mean-square spread per bin; the 1:1 line compares this with `rmse`.
    pub rms_spread: Vec<f64>,
    pub rmse: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-population spread-skill binning of precomputed cases.
///
/// Bins close after `n/n_bins` cases but never split tied spreads, so a
/// zero-spread ensemble collapses into one bin.
pub fn spread_skill_cases(
    spread: &[f64],
    error: &[f64],
    n_bins: usize,
) -> Result<SpreadSkillCurve> {
    if spread.len() != error.len() {
        return Err(Error::Shape("spread and error lengths differ".into()));
    }
    if n_bins == 0 || spread.is_empty() {
        return Err(Error::InvalidArgument(
            "spread-skill needs cases and at least one bin".into(),
        ));
    }
    let mut order: Vec<usize> = (0..spread.len()).collect();
    order.sort_by(|&a, &b| spread[a].total_cmp(&spread[b]));
    let n = order.len();
    let mut curve = SpreadSkillCurve {
        bin_centers: vec![],
        rms_spread: vec![],
        rmse: vec![],
        counts: vec![],
    };
    let mut start = 0;
    for b in 1..=n_bins {
        if start >= n {
            break;
        }
        let mut end = (n * b / n_bins).max(start + 1);
        while end < n && spread[order[end]] == spread[order[end - 1]] {
            end += 1;
        }
        let idx = &order[start..end];
        let c = idx.len() as f64;
        curve
            .bin_centers
            .push(stats::sum(idx.iter().map(|&i| spread[i])) / c);
        curve
            .rms_spread
            .push((stats::sum(idx.iter().map(|&i| spread[i] * spread[i])) / c).sqrt());
        curve
            .rmse
            .push((stats::sum(idx.iter().map(|&i| error[i] * error[i])) / c).sqrt());
        curve.counts.push(idx.len());
        start = end;
    }
    Ok(curve)
}

/// Spread (sample std scaled by `sqrt((n+1)/n)`) against ensemble-mean error over all cells and times.
pub fn spread_skill(
    ens: &EnsembleStack,
    obs: &FieldStack,
    n_bins: usize,
) -> Result<SpreadSkillCurve> {
    let m = ens.len();
    if m < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            found: m,
        });
    }
    ens.grid().ensure_matches(obs.grid())?;
    if ens.times() != obs.times() {
        return Err(Error::Shape(
            "ensemble and observation time axes differ".into(),
        ));
    }
    let n = obs.values().len();
    let mut spread = Vec::with_capacity(n);
    let mut error = Vec::with_capacity(n);
    let mut buf = vec![0.0; m];
    for c in 0..n {
        for (b, mem) in buf.iter_mut().zip(ens.members()) {
            *b = mem.values()[c];
        }
        let (s, mean) = member_spread(&buf);
        spread.push(s);
        error.push(mean - obs.values()[c]);
    }
    spread_skill_cases(&spread, &error, n_bins)
}

/// (fair spread, ensemble mean) of one case.
pub(crate) fn member_spread(members: &[f64]) -> (f64, f64) {
    let n = members.len() as f64;
    let mean = stats::mean(members);
    let ss = stats::sum(members.iter().map(|x| (x - mean) * (x - mean)));
    ((ss / (n - 1.0)).sqrt() * ((n + 1.0) / n).sqrt(), mean)
}
