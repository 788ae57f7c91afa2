use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::MetricToggles;
use crate::error::{Error, Result};
use crate::grid::{
    bilinear_upsample, cos_lat_weights, weighted_mean_2d, EnsembleStack, FieldStack, LatWeights,
};
use crate::metrics::{
    cdd, climatology_mab, crps_ensemble, cwd, default_log_edges, global_annual_means, histogram,
    ks_distance, lat_profile, lon_profile, mean_psd, r95p, spread_skill, trend_series, Calendar,
    Histogram, Spectrum, SpreadSkillCurve, DEFAULT_WET_THRESHOLD, EQUATOR_KM,
};
use crate::stats::OlsFit;

/// Products compared against the reference, all in mm/d and aligned in time.
#[derive(Debug, Clone, Copy)]
pub struct EvaluationInputs<'a> {
    /// High-resolution reference.
    pub truth: &'a FieldStack,
    /// Pseudo-ESM on the low-resolution grid.
    pub esm: Option<&'a FieldStack>,
    /// QDM-corrected prediction on the low-resolution grid.
    pub deterministic: Option<&'a FieldStack>,
    /// High-resolution diffusion ensemble.
    pub ensemble: Option<&'a EnsembleStack>,
    pub calendar: Calendar,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProductMetrics {
    pub name: String,
    pub climatology_mab: Option<f64>,
    pub ks: Option<f64>,
    pub crps: Option<f64>,
    pub crps_series: Option<Vec<f64>>,
    pub psd: Option<Spectrum>,
    pub histogram: Option<Histogram>,
    pub lat_profile: Option<Vec<f64>>,
    pub lon_profile: Option<Vec<f64>>,
    pub spread_skill: Option<SpreadSkillCurve>,
    /// Area-weighted means of the per-pixel index climatologies.
    pub r95p: Option<f64>,
    pub cwd: Option<f64>,
    pub cdd: Option<f64>,
    pub annual_means: Option<(Vec<f64>, Vec<f64>)>,
    pub trend: Option<OlsFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub lats: Vec<f64>,
    pub lons: Vec<f64>,
    pub products: Vec<ProductMetrics>,
}

impl EvaluationReport {
    pub fn product(&self, name: &str) -> Option<&ProductMetrics> {
        self.products.iter().find(|p| p.name == name)
    }
}

/// Member stacks laid end to end in time, for pooled distribution metrics.
fn pooled_members(ens: &EnsembleStack) -> Result<FieldStack> {
    let first = &ens.members()[0];
    let span = first
        .times()
        .last()
        .map_or(0, |&l| l - first.times()[0] + 1);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (m, member) in ens.members().iter().enumerate() {
        times.extend(member.times().iter().map(|t| t + m as i64 * span));
        values.extend_from_slice(member.values());
    }
    FieldStack::new(*first.grid(), times, values, first.units())
}

fn weighted_map_mean(map: &[f64], f: &FieldStack, w: &LatWeights) -> f64 {
    weighted_mean_2d(map, f.grid(), w)
}

struct Product<'a> {
    name: &'static str,
    /// Field for climatology, profiles and trend (the ensemble mean for ensembles).
    field: FieldStack,
    /// Samples for spectra, histograms and extremes.
    samples: Vec<FieldStack>,
    ensemble: Option<&'a EnsembleStack>,
}

fn evaluate_product(
    p: &Product<'_>,
    truth: &FieldStack,
    toggles: &MetricToggles,
    w: &LatWeights,
    cal: Calendar,
    bins: usize,
) -> Result<ProductMetrics> {
    let mut m = ProductMetrics {
        name: p.name.to_string(),
        ..Default::default()
    };
    truth.ensure_aligned(&p.field)?;
    if toggles.climatology {
        m.climatology_mab = Some(climatology_mab(&p.field, truth, w)?.mab);
    }
    if toggles.histogram {
        let pooled = match p.ensemble {
            Some(e) => pooled_members(e)?,
            None => p.field.clone(),
        };
        m.histogram = Some(histogram(&pooled, &default_log_edges())?);
        m.ks = Some(ks_distance(pooled.values(), truth.values())?);
    }
    if toggles.psd {
        let spectra = p
            .samples
            .iter()
            .map(|s| mean_psd(s, w))
            .collect::<Result<Vec<_>>>()?;
        let n = spectra.len() as f64;
        let power = (0..spectra[0].len())
            .map(|k| spectra.iter().map(|s| s.power[k]).sum::<f64>() / n)
            .collect();
        m.psd = Some(Spectrum::new(truth.grid().n_lon, power, p.name)?);
    }
    if toggles.profiles {
        m.lat_profile = Some(lat_profile(&p.field));
        m.lon_profile = Some(lon_profile(&p.field, w)?);
    }
    if toggles.crps {
        let single;
        let ens = match p.ensemble {
            Some(e) => e,
            None => {
                single = EnsembleStack::new(vec![p.field.clone()])?;
                &single
            }
        };
        let c = crps_ensemble(ens, truth, w)?;
        m.crps = Some(c.scalar);
        m.crps_series = Some(c.series);
    }
    if toggles.spread_skill {
        if let Some(e) = p.ensemble.filter(|e| e.len() > 1) {
            m.spread_skill = Some(spread_skill(e, truth, bins)?);
        }
    }
    if toggles.extremes {
        let n = p.samples.len() as f64;
        let (mut r, mut cw, mut cd) = (0.0, 0.0, 0.0);
        for s in &p.samples {
            r += weighted_map_mean(&r95p(s, truth, DEFAULT_WET_THRESHOLD, cal)?.map, s, w);
            cw += weighted_map_mean(&cwd(s, DEFAULT_WET_THRESHOLD, cal)?.map, s, w);
            cd += weighted_map_mean(&cdd(s, DEFAULT_WET_THRESHOLD, cal)?.map, s, w);
        }
        m.r95p = Some(r / n);
        m.cwd = Some(cw / n);
        m.cdd = Some(cd / n);
    }
    if toggles.trend {
        let (years, annual) = global_annual_means(&p.field, w, cal)?;
        if years.len() >= 3 {
            m.trend = Some(trend_series(&years, &annual)?);
        }
        m.annual_means = Some((years, annual));
    }
    Ok(m)
}

/// Metrics of the reference itself, the pseudo-ESM and the deterministic
/// prediction (both bilinearly upsampled in mm/d) and the diffusion ensemble.
pub fn run_evaluation(
    inputs: &EvaluationInputs<'_>,
    toggles: &MetricToggles,
    spread_skill_bins: usize,
) -> Result<EvaluationReport> {
    let truth = inputs.truth;
    let hr = *truth.grid();
    let w = cos_lat_weights(&hr)?;
    let mut products = vec![Product {
        name: "truth",
        field: truth.clone(),
        samples: vec![truth.clone()],
        ensemble: None,
    }];
    for (name, lr) in [("esm", inputs.esm), ("predictor_qdm", inputs.deterministic)] {
        if let Some(f) = lr {
            let up = bilinear_upsample(f, &hr)?;
            products.push(Product {
                name,
                field: up.clone(),
                samples: vec![up],
                ensemble: None,
            });
        }
    }
    if let Some(e) = inputs.ensemble {
        products.push(Product {
            name: "diffusion",
            field: e.mean(),
            samples: e.members().to_vec(),
            ensemble: Some(e),
        });
    }
    let products = products
        .iter()
        .map(|p| evaluate_product(p, truth, toggles, &w, inputs.calendar, spread_skill_bins))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        lats: hr.lats(),
        lons: hr.lons(),
        products,
    })
}

fn write_csv(dir: &Path, name: &str, header: &str, body: &str) -> Result<Option<String>> {
    if body.is_empty() {
        return Ok(None);
    }
    let path = dir.join(name);
    fs::write(&path, format!("{header}\n{body}")).map_err(|e| Error::io(&path, e))?;
    Ok(Some(name.to_string()))
}

/// Writes `report.json` plus one CSV per metric family that has rows. Returns the written file names.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut scalars = String::new();
    let mut psd = String::new();
    let mut hist = String::new();
    let mut lat = String::new();
    let mut lon = String::new();
    let mut crps = String::new();
    let mut ss = String::new();
    let mut annual = String::new();
    for p in &report.products {
        let n = &p.name;
        let named = [
            ("climatology_mab", p.climatology_mab),
            ("ks", p.ks),
            ("crps", p.crps),
            ("r95p", p.r95p),
            ("cwd", p.cwd),
            ("cdd", p.cdd),
            ("trend_slope", p.trend.map(|t| t.slope)),
            ("trend_ci95_lo", p.trend.map(|t| t.ci95().0)),
            ("trend_ci95_hi", p.trend.map(|t| t.ci95().1)),
        ];
        for (metric, v) in named {
            if let Some(v) = v {
                let _ = writeln!(&mut scalars, "{n},{metric},{v}");
            }
        }
        if let Some(s) = &p.psd {
            for (k, pw) in s.wavenumbers.iter().zip(&s.power) {
                let wl = if *k == 0 {
                    f64::INFINITY
                } else {
                    EQUATOR_KM / *k as f64
                };
                let _ = writeln!(&mut psd, "{n},{k},{wl},{pw}");
            }
        }
        if let Some(h) = &p.histogram {
            for (c, d) in h.centers().iter().zip(&h.density) {
                let _ = writeln!(&mut hist, "{n},{c},{d}");
            }
        }
        if let Some(profile) = &p.lat_profile {
            for (l, v) in report.lats.iter().zip(profile) {
                let _ = writeln!(&mut lat, "{n},{l},{v}");
            }
        }
        if let Some(profile) = &p.lon_profile {
            for (l, v) in report.lons.iter().zip(profile) {
                let _ = writeln!(&mut lon, "{n},{l},{v}");
            }
        }
        if let Some(series) = &p.crps_series {
            for (t, v) in series.iter().enumerate() {
                let _ = writeln!(&mut crps, "{n},{t},{v}");
            }
        }
        if let Some(c) = &p.spread_skill {
            for i in 0..c.bin_centers.len() {
                let _ = writeln!(
                    &mut ss,
                    "{n},{},{},{},{}",
                    c.bin_centers[i], c.rms_spread[i], c.rmse[i], c.counts[i]
                );
            }
        }
        if let Some((years, means)) = &p.annual_means {
            for (y, v) in years.iter().zip(means) {
                let _ = writeln!(&mut annual, "{n},{y},{v}");
            }
        }
    }
    let mut written = Vec::new();
    let files = [
        ("scalars.csv", "product,metric,value", &scalars),
        ("psd.csv", "product,k,wavelength_km,power", &psd),
        ("histogram.csv", "product,bin_center,density", &hist),
        ("lat_profile.csv", "product,lat,mean", &lat),
        ("lon_profile.csv", "product,lon,mean", &lon),
        ("crps_series.csv", "product,t,crps", &crps),
        (
            "spread_skill.csv",
            "product,bin_center,spread,rmse,count",
            &ss,
        ),
        ("annual_means.csv", "product,year,mean", &annual),
    ];
    for (name, header, body) in files {
        written.extend(write_csv(dir, name, header, body)?);
    }
    crate::io::write_json(&dir.join("report.json"), report)?;
    written.push("report.json".into());
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, Units};
    use crate::synth::{sample_grf, GrfSpec};

    fn truth() -> FieldStack {
        let spec = GrfSpec {
            grid: GridSpec::global(8, 16).unwrap(),
            spectral_slope_beta: 2.0,
            variance: 0.5,
            seed: 1,
        };
        sample_grf(&spec, 40).unwrap()
    }

    #[test]
    fn truth_against_itself_scores_zero() {
        let t = truth();
        let inputs = EvaluationInputs {
            truth: &t,
            esm: None,
            deterministic: None,
            ensemble: None,
            calendar: Calendar::new(10).unwrap(),
        };
        let r = run_evaluation(&inputs, &MetricToggles::default(), 5).unwrap();
        let p = r.product("truth").unwrap();
        assert_eq!(p.climatology_mab, Some(0.0));
        assert_eq!(p.ks, Some(0.0));
        assert_eq!(p.crps, Some(0.0));
        assert_eq!(p.annual_means.as_ref().unwrap().0.len(), 4);
    }

    #[test]
    fn no_toggles_give_an_empty_report() {
        let t = truth();
        let ens = EnsembleStack::new(vec![t.clone(), t.clone()]).unwrap();
        let inputs = EvaluationInputs {
            truth: &t,
            esm: None,
            deterministic: None,
            ensemble: Some(&ens),
            calendar: Calendar::new(10).unwrap(),
        };
        let r = run_evaluation(&inputs, &MetricToggles::none(), 5).unwrap();
        assert!(r.products.iter().all(|p| *p
            == ProductMetrics {
                name: p.name.clone(),
                ..Default::default()
            }));
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            write_report(&r, dir.path()).unwrap(),
            vec!["report.json".to_string()]
        );
    }

    #[test]
    fn low_resolution_products_are_upsampled_and_csvs_written() {
        let t = truth();
        let lr = crate::grid::average_pool(&t, 2).unwrap();
        let ens = EnsembleStack::new(vec![t.clone(), lr_up(&lr, &t)]).unwrap();
        let inputs = EvaluationInputs {
            truth: &t,
            esm: Some(&lr),
            deterministic: Some(&lr),
            ensemble: Some(&ens),
            calendar: Calendar::new(10).unwrap(),
        };
        let r = run_evaluation(&inputs, &MetricToggles::default(), 4).unwrap();
        let names: Vec<&str> = r.products.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["truth", "esm", "predictor_qdm", "diffusion"]);
        assert!(r.product("esm").unwrap().climatology_mab.unwrap() > 0.0);
        assert!(r.product("diffusion").unwrap().spread_skill.is_some());
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&r, dir.path()).unwrap();
        assert!(files.contains(&"psd.csv".to_string()));
        let text = fs::read_to_string(dir.path().join("scalars.csv")).unwrap();
        assert!(text.starts_with("product,metric,value\ntruth,climatology_mab,0"));
    }

    fn lr_up(lr: &FieldStack, t: &FieldStack) -> FieldStack {
        let up = bilinear_upsample(lr, t.grid()).unwrap();
        assert_eq!(up.units(), Units::MmPerDay);
        up
    }
}
