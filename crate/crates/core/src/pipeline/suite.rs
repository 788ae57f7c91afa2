use std::fs;
use std::path::{Path, PathBuf};

use super::config::{InputPaths, PipelineConfig};
use crate::error::{Error, Result};
use crate::io::{write_json, write_stack};
use crate::synth::{AtmosStacks, SyntheticSuite, ATMOS_VARIABLES};

pub const SUITE_CONFIG: &str = "config.json";
pub const SUITE_WORLD: &str = "world.json";

fn write_atmos(dir: &Path, prefix: &str, atmos: &AtmosStacks) -> Result<[PathBuf; 4]> {
    let mut stems = Vec::with_capacity(4);
    for (name, f) in ATMOS_VARIABLES.iter().zip(atmos) {
        let stem = format!("{prefix}_{name}");
        write_stack(&dir.join(&stem), f)?;
        stems.push(PathBuf::from(stem));
    }
    Ok(stems.try_into().expect("four stems"))
}

/// Writes every stack of `suite` into `dir`, plus `world.json` and a
/// `config.json` that runs the ESM-driven chain on them. Input paths in the
/// config are relative to `dir`. Returns the config path.
pub fn write_suite(suite: &SyntheticSuite, dir: &Path, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_stack(&dir.join("truth_hr"), &suite.truth_hr)?;
    write_stack(&dir.join("truth_lr"), &suite.truth_lr)?;
    write_stack(&dir.join("esm"), &suite.esm)?;
    let atmos = write_atmos(dir, "atmos", &suite.atmos)?;
    let esm_atmos = write_atmos(dir, "esm_atmos", &suite.esm_atmos)?;
    write_json(&dir.join(SUITE_WORLD), &suite.config)?;

    let mut cfg = PipelineConfig {
        seed,
        train_days: Some(suite.config.n_train_days()),
        calendar: suite.config.calendar()?,
        inputs: InputPaths {
            truth_hr: Some("truth_hr".into()),
            truth_lr: Some("truth_lr".into()),
            atmos_train: Some(atmos),
            atmos_hist: Some(esm_atmos.clone()),
            atmos_target: Some(esm_atmos),
            esm: Some("esm".into()),
            truth_eval: Some("truth_hr".into()),
        },
        output_dir: "out".into(),
        ..PipelineConfig::default()
    };
    // per-pixel quantiles cannot outnumber the training days
    cfg.qdm.n_quantiles = cfg.qdm.n_quantiles.min(suite.config.n_train_days());
    let path = dir.join(SUITE_CONFIG);
    write_json(&path, &cfg)?;
    Ok(path)
}
