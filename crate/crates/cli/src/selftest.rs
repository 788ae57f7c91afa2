//! Quick invariant checks against brute-force oracles; one line per check.

use std::f64::consts::PI;
use std::process::ExitCode;

use precipgen::diffusion::{stride_timesteps, NoiseSchedule, DEFAULT_DELTA_LOG};
use precipgen::grid::cos_lat_weights;
use precipgen::metrics::{crps_sample, ks_distance, max_run, mean_psd, r95p_series};
use precipgen::qdm::{DeltaKind, QuantileMap, DEFAULT_QUANTILES};
use precipgen::rng::{standard_normal_vec, stream, Purpose, StreamId};
use precipgen::synth::default_truth_transform;
use precipgen::{FieldStack, GridSpec, Result, Units};

use crate::fixture::{calibration_fixture, scan_tau, FIXTURE_CUTOFF};

type Check = Result<(bool, String)>;

fn normals(minor: u64, n: usize) -> Vec<f64> {
    standard_normal_vec(&mut stream(0, StreamId::new(Purpose::Auxiliary, 0, minor)), n)
}

/// Zero-inflated, skewed positive sample.
fn rain(minor: u64, n: usize) -> Vec<f64> {
    normals(minor, n)
        .into_iter()
        .map(|z| if z < -0.5 { 0.0 } else { 2.0 * (z + 0.5).powi(2) + 0.1 })
        .collect()
}

fn qdm_identity() -> Check {
    let obs = rain(1, 10_000);
    let map = QuantileMap::fit_samples(&obs, &obs, DEFAULT_QUANTILES, DeltaKind::Multiplicative)?;
    let out = map.correct_samples(&obs)?;
    let dev = out.iter().zip(&obs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ks = ks_distance(&out, &obs)?;
    Ok((
        dev <= map.max_adjacent_gap() && ks <= 0.02,
        format!("max deviation {dev:.2e}, KS {ks:.4}"),
    ))
}

fn qdm_delta() -> Check {
    let obs = rain(2, 10_000);
    let hist: Vec<f64> = obs.iter().map(|x| 2.0 * x).collect();
    let fut: Vec<f64> = obs.iter().map(|x| 3.0 * x).collect();
    let map = QuantileMap::fit_samples(&obs, &hist, DEFAULT_QUANTILES, DeltaKind::Multiplicative)?;
    let out = map.correct_samples(&fut)?;
    let worst = out
        .iter()
        .zip(&obs)
        .map(|(c, x)| if *x == 0.0 { c.abs() } else { (c - 1.5 * x).abs() / (1.5 * x) })
        .fold(0.0, f64::max);
    Ok((worst <= 1e-6, format!("worst relative error {worst:.2e}")))
}

fn crps() -> Check {
    let a = crps_sample(&mut [0.0, 2.0], 1.0);
    let b = crps_sample(&mut [1.0, 2.0, 3.0], 2.0);
    let z = normals(3, 2000);
    let single = z.chunks_exact(2).all(|p| crps_sample(&mut [p[0]], p[1]) == (p[0] - p[1]).abs());
    Ok((
        (a - 0.5).abs() <= 1e-9 && (b - 2.0 / 9.0).abs() <= 1e-9 && single,
        format!("{a:.6}, {b:.6}, single member = MAE: {single}"),
    ))
}

fn extremes() -> Check {
    let base: Vec<f64> = (1..=100).map(f64::from).collect();
    let th = r95p_series(&base, 1.0).unwrap_or(f64::NAN);
    let total: f64 = [96.0, 100.0, 50.0].iter().filter(|&&v| v > th).sum();
    let days = [2.0, 0.0, 3.0, 4.0, 1.0, 0.5, 0.2, 0.0, 7.0];
    let (wet, dry) = (max_run(&days, |v| v >= 1.0), max_run(&days, |v| v < 1.0));
    Ok((
        (th - 95.05).abs() < 1e-12 && total == 196.0 && wet == 3 && dry == 3,
        format!("threshold {th}, R95p {total}, CWD {wet}, CDD {dry}"),
    ))
}

fn parseval() -> Check {
    let grid = GridSpec::global(8, 16)?;
    let values: Vec<f64> = normals(4, grid.len()).iter().map(|z| 1.5 + z).collect();
    let f = FieldStack::daily(grid, 0, values, Units::Transformed)?;
    let w = cos_lat_weights(&grid)?;
    let psd = mean_psd(&f, &w)?;
    let mut oracle = vec![0.0; 9];
    let mut moment = 0.0;
    for (row, wi) in f.slice(0).chunks_exact(16).zip(w.as_slice()) {
        for (k, o) in oracle.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &x) in row.iter().enumerate() {
                let a = -2.0 * PI * (k * j) as f64 / 16.0;
                re += x * a.cos();
                im += x * a.sin();
            }
            let m = if k == 0 || k == 8 { 1.0 } else { 2.0 };
            *o += wi * m * (re * re + im * im) / 256.0;
        }
        moment += wi * row.iter().map(|x| x * x).sum::<f64>() / 16.0;
    }
    let bins = psd.power.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / moment;
    let total = (psd.total() - moment).abs() / moment;
    Ok((bins <= 1e-9 && total <= 1e-9, format!("bins {bins:.1e}, total {total:.1e}")))
}

fn round_trip() -> Check {
    let p = default_truth_transform();
    let worst = normals(5, 100_000)
        .iter()
        .map(|z| 10f64.powf(3.0 * z))
        .chain([0.0])
        .map(|x| (p.inverse(p.forward(x)) - x).abs() / (x + p.offset_mm_per_day))
        .fold(0.0, f64::max);
    Ok((worst <= 1e-9, format!("worst error relative to x+offset {worst:.2e}")))
}

fn strides() -> Check {
    let s = stride_timesteps(1000, 100)?;
    let ok = s.len() == 101 && s[0] == 1000 && s[1] == 990 && s[99] == 10 && s[100] == 0;
    Ok((ok, format!("{} steps: {}, {}, ..., {}, {}", s.len(), s[0], s[1], s[99], s[100])))
}

fn calibration() -> Check {
    let (reference, prediction) = calibration_fixture()?;
    let w = cos_lat_weights(reference.grid())?;
    let psd_ref = mean_psd(&reference, &w)?;
    let psd_pred = mean_psd(&prediction, &w)?;
    let sched = NoiseSchedule::default_condition();
    let cal = precipgen::diffusion::calibrate_condition_noise(&psd_ref, &psd_pred, &sched, DEFAULT_DELTA_LOG)?;
    let scan = scan_tau(&psd_ref, FIXTURE_CUTOFF, &sched);
    Ok((
        cal.k_star == Some(FIXTURE_CUTOFF) && Some(cal.level.tau_c) == scan,
        format!("k* {:?}, tau_c {} (scan {:?})", cal.k_star, cal.level.tau_c, scan),
    ))
}

pub fn run() -> ExitCode {
    let checks: [(&str, fn() -> Check); 8] = [
        ("qdm identity", qdm_identity),
        ("qdm delta preservation", qdm_delta),
        ("crps exactness", crps),
        ("extreme indices", extremes),
        ("parseval", parseval),
        ("transform round trip", round_trip),
        ("stride timesteps", strides),
        ("noise calibration scan", calibration),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failures += usize::from(!ok);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} check(s) failed");
        ExitCode::from(4)
    }
}
