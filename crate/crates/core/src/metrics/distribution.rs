use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{expect_units, FieldStack, Units};

/// Counts per bin plus an explicit dry bin below the first edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub dry: u64,
    pub counts: Vec<u64>,
    /// Values above the last edge.
    pub overflow: u64,
    pub total: u64,
    /// `count / (width * total)` per bin.
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        // geometric centers suit log-spaced bins
        self.edges
            .windows(2)
            .map(|e| (e[0] * e[1]).sqrt())
            .collect()
    }
}

/// 50 log-spaced bins over [0.1, 500] mm/d.
pub fn default_log_edges() -> Vec<f64> {
    let (lo, hi, n) = (0.1f64.ln(), 500f64.ln(), 50);
    (0..=n)
        .map(|i| (lo + (hi - lo) * i as f64 / n as f64).exp())
        .collect()
}

/// Bins are half-open `[e_i, e_{i+1})`, except the last which includes its right edge.
pub fn histogram(f: &FieldStack, edges: &[f64]) -> Result<Histogram> {
    expect_units(f.units(), Units::MmPerDay)?;
    if edges.len() < 2 || edges.windows(2).any(|e| !(e[1] > e[0])) {
        return Err(Error::InvalidArgument(
            "histogram edges must be at least two strictly increasing values".into(),
        ));
    }
    let nb = edges.len() - 1;
    let last = edges[nb];
    let mut counts = vec![0u64; nb];
    let (mut dry, mut overflow) = (0u64, 0u64);
    for &v in f.values() {
        if v < edges[0] {
            dry += 1;
        } else if v > last {
            overflow += 1;
        } else {
            let i = edges.partition_point(|&e| e <= v).min(nb);
            counts[i - 1] += 1;
        }
    }
    let total = f.values().len() as u64;
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, e)| {
            if total == 0 {
                0.0
            } else {
                c as f64 / ((e[1] - e[0]) * total as f64)
            }
        })
        .collect();
    Ok(Histogram {
        edges: edges.to_vec(),
        dry,
        counts,
        overflow,
        total,
        density,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 1,
            found: 0,
        });
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidData("NaN in KS sample".into()));
    }
    let sa = crate::stats::sorted_copy(a);
    let sb = crate::stats::sorted_copy(b);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}
