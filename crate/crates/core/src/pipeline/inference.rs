use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ConditionTau, DenoiserKind, PipelineConfig};
use crate::diffusion::{
    calibrate_condition_noise, sample_ensemble, ConditionNoiseLevel, ConditionalGaussianDenoiser,
    Denoiser, IdentityDenoiser, NoiseCalibration, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::grid::{bilinear_upsample, cos_lat_weights, EnsembleStack, FieldStack};
use crate::io::{read_json, read_stack, sha256_file, stack_paths, write_json, write_stack};
use crate::metrics::mean_psd;
use crate::preprocess::{
    fit_transform_params, forward_transform, inverse_transform, TransformParams,
};
use crate::qdm::QdmModel;
use crate::synth::{
    atmos_range, fit_linear_predictor, predict, AtmosStacks, LinearPredictor, SyntheticSuite,
};

/// In-memory inputs of the chain.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    /// High-resolution reference over the training period.
    pub truth_hr: FieldStack,
    /// Low-resolution reference over the training period.
    pub truth_lr: FieldStack,
    /// Predictors aligned with `truth_lr`, for fitting the predictor.
    pub atmos_train: AtmosStacks,
    /// Model predictors over the training period, for the QDM model side.
    pub atmos_hist: AtmosStacks,
    pub atmos_target: AtmosStacks,
}

impl PipelineInputs {
    /// Chain driven by the truth's own predictors over `target` days.
    pub fn truth_driven(suite: &SyntheticSuite, target: std::ops::Range<usize>) -> Result<Self> {
        let train = suite.train_range();
        let atmos_train = atmos_range(&suite.atmos, train.clone())?;
        Ok(Self {
            truth_hr: suite.truth_hr.time_range(train.clone())?,
            truth_lr: suite.truth_lr.time_range(train)?,
            atmos_hist: atmos_train.clone(),
            atmos_train,
            atmos_target: atmos_range(&suite.atmos, target)?,
        })
    }

    /// Chain driven by the pseudo-ESM predictors over the whole record.
    pub fn esm_driven(suite: &SyntheticSuite) -> Result<Self> {
        let train = suite.train_range();
        Ok(Self {
            truth_hr: suite.truth_hr.time_range(train.clone())?,
            truth_lr: suite.truth_lr.time_range(train.clone())?,
            atmos_train: atmos_range(&suite.atmos, train.clone())?,
            atmos_hist: atmos_range(&suite.esm_atmos, train)?,
            atmos_target: suite.esm_atmos.clone(),
        })
    }
}

fn read_atmos(stems: &[PathBuf; 4]) -> Result<AtmosStacks> {
    let v: Vec<FieldStack> = stems.iter().map(|s| read_stack(s)).collect::<Result<_>>()?;
    Ok(v.try_into().expect("four stacks"))
}

fn leading(f: FieldStack, n: Option<usize>) -> Result<FieldStack> {
    match n {
        Some(n) if n < f.n_time() => f.time_range(0..n),
        _ => Ok(f),
    }
}

fn leading_atmos(a: AtmosStacks, n: Option<usize>) -> Result<AtmosStacks> {
    let v: Vec<FieldStack> = a
        .into_iter()
        .map(|f| leading(f, n))
        .collect::<Result<_>>()?;
    Ok(v.try_into().expect("four stacks"))
}

/// Reads the stacks named in `cfg.inputs`, restricting training data to `train_days`.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<PipelineInputs> {
    cfg.check_inputs_exist()?;
    let i = &cfg.inputs;
    let need = |p: &Option<PathBuf>, name: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("inputs.{name} is required")))
    };
    let need4 = |p: &Option<[PathBuf; 4]>, name: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("inputs.{name} is required")))
    };
    let n = cfg.train_days;
    let atmos_train = leading_atmos(read_atmos(&need4(&i.atmos_train, "atmos_train")?)?, n)?;
    let atmos_hist = match &i.atmos_hist {
        Some(stems) => leading_atmos(read_atmos(stems)?, n)?,
        None => atmos_train.clone(),
    };
    Ok(PipelineInputs {
        truth_hr: leading(read_stack(&need(&i.truth_hr, "truth_hr")?)?, n)?,
        truth_lr: leading(read_stack(&need(&i.truth_lr, "truth_lr")?)?, n)?,
        atmos_train,
        atmos_hist,
        atmos_target: read_atmos(&need4(&i.atmos_target, "atmos_target")?)?,
    })
}

/// Deterministic stage: predictor and quantile delta mapping.
#[derive(Debug, Clone)]
pub struct Stage1 {
    pub predictor: LinearPredictor,
    pub predicted_hist: FieldStack,
    pub predicted: FieldStack,
    pub qdm: QdmModel,
    /// QDM-corrected prediction on the low-resolution grid, mm/d.
    pub corrected: FieldStack,
}

impl Stage1 {
    pub fn run(inputs: &PipelineInputs, cfg: &PipelineConfig) -> Result<Self> {
        let predictor =
            fit_linear_predictor(&inputs.atmos_train, &inputs.truth_lr, cfg.predictor.ridge)
                .map_err(|e| e.in_stage("predict"))?;
        let predicted_hist =
            predict(&predictor, &inputs.atmos_hist).map_err(|e| e.in_stage("predict"))?;
        let predicted =
            predict(&predictor, &inputs.atmos_target).map_err(|e| e.in_stage("predict"))?;
        let qdm = QdmModel::fit(&inputs.truth_lr, &predicted_hist, &cfg.qdm)
            .map_err(|e| e.in_stage("qdm"))?;
        let corrected = qdm.correct(&predicted).map_err(|e| e.in_stage("qdm"))?;
        Ok(Self {
            predictor,
            predicted_hist,
            predicted,
            qdm,
            corrected,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub member: usize,
    /// `(purpose, major, minor)` of the condition-noise stream.
    pub condition_noise: (u8, u64, u64),
    /// Sampler stream of time slice `t` is `(5, member, t)`.
    pub sampler_purpose: u8,
}

/// Provenance of one run. Contains no timestamps, so identical runs give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_sha256: String,
    pub predictor: String,
    pub denoiser: String,
    pub ensemble_size: usize,
    pub train_steps: usize,
    pub inference_steps: usize,
    pub tau_c: usize,
    pub sigma_eff: f64,
    pub tau_source: String,
    pub k_star: Option<usize>,
    pub calibration_feasible: bool,
    pub streams: Vec<StreamRecord>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    pub stage1: Stage1,
    pub transform: TransformParams,
    /// Clean condition: transformed, upsampled, QDM-corrected prediction.
    pub condition: FieldStack,
    pub calibration: NoiseCalibration,
    pub level: ConditionNoiseLevel,
    /// High-resolution ensemble in mm/d.
    pub ensemble: EnsembleStack,
    pub manifest: Manifest,
}

fn config_digest(cfg: &PipelineConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn build_denoiser(
    kind: DenoiserKind,
    inputs: &PipelineInputs,
    transform: &TransformParams,
) -> Result<Box<dyn Denoiser>> {
    match kind {
        DenoiserKind::Identity => Ok(Box::new(IdentityDenoiser)),
        DenoiserKind::GaussianConditional => {
            if inputs.truth_hr.times() != inputs.truth_lr.times() {
                return Err(Error::Shape(
                    "high- and low-resolution references cover different days".into(),
                ));
            }
            let target = forward_transform(&inputs.truth_hr, transform)?;
            let cond = bilinear_upsample(
                &forward_transform(&inputs.truth_lr, transform)?,
                inputs.truth_hr.grid(),
            )?;
            Ok(Box::new(ConditionalGaussianDenoiser::fit(&target, &cond)?))
        }
    }
}

/// Transform, upsampled condition and the spectral noise calibration.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub transform: TransformParams,
    /// Clean condition: transformed, upsampled, QDM-corrected prediction.
    pub condition: FieldStack,
    pub calibration: NoiseCalibration,
}

impl Conditioning {
    pub fn run(inputs: &PipelineInputs, cfg: &PipelineConfig, stage1: &Stage1) -> Result<Self> {
        let hr = *inputs.truth_hr.grid();
        let transform = match &cfg.transform {
            Some(path) => read_json::<TransformParams>(path),
            None => fit_transform_params(&inputs.truth_hr),
        }
        .map_err(|e| e.in_stage("transform"))?;
        let condition = forward_transform(&stage1.corrected, &transform)
            .and_then(|c| bilinear_upsample(&c, &hr))
            .map_err(|e| e.in_stage("upsample"))?;
        let calibration = (|| {
            let w = cos_lat_weights(&hr)?;
            let reference = mean_psd(&forward_transform(&inputs.truth_hr, &transform)?, &w)?;
            let predicted = mean_psd(&condition, &w)?;
            calibrate_condition_noise(
                &reference,
                &predicted,
                &NoiseSchedule::default_condition(),
                cfg.diffusion.delta_log,
            )
        })()
        .map_err(|e| e.in_stage("calibrate"))?;
        Ok(Self {
            transform,
            condition,
            calibration,
        })
    }
}

/// predict, QDM, transform, upsample, calibrate, sample, inverse transform.
pub fn run_inference(inputs: &PipelineInputs, cfg: &PipelineConfig) -> Result<InferenceOutput> {
    cfg.validate()?;
    let stage1 = Stage1::run(inputs, cfg)?;

    let Conditioning {
        transform,
        condition,
        calibration,
    } = Conditioning::run(inputs, cfg, &stage1)?;
    let sched_c = NoiseSchedule::default_condition();
    let (level, tau_source) = match cfg.diffusion.condition_tau {
        ConditionTau::Auto => (calibration.level, "auto"),
        ConditionTau::Index(t) => (
            ConditionNoiseLevel::at(&sched_c, t).map_err(|e| e.in_stage("calibrate"))?,
            "fixed",
        ),
    };

    let denoiser = build_denoiser(cfg.diffusion.denoiser, inputs, &transform)
        .map_err(|e| e.in_stage("denoiser"))?;
    let sched = NoiseSchedule::cosine(cfg.diffusion.train_steps, crate::diffusion::COSINE_OFFSET)
        .map_err(|e| e.in_stage("sample"))?;
    let sampled = sample_ensemble(
        denoiser.as_ref(),
        &condition,
        level,
        &sched_c,
        &cfg.sampler(),
        &sched,
    )
    .map_err(|e| e.in_stage("sample"))?;
    let members = sampled
        .members()
        .iter()
        .map(|m| inverse_transform(m, &transform))
        .collect::<Result<Vec<_>>>()
        .and_then(EnsembleStack::new)
        .map_err(|e| e.in_stage("inverse_transform"))?;

    let streams = (0..cfg.ensemble_size)
        .map(|m| StreamRecord {
            member: m,
            condition_noise: (crate::rng::Purpose::ConditionNoise as u8, m as u64, 0),
            sampler_purpose: crate::rng::Purpose::Sampler as u8,
        })
        .collect();
    let manifest = Manifest {
        seed: cfg.seed,
        config_sha256: config_digest(cfg),
        predictor: cfg.predictor.name.clone(),
        denoiser: denoiser.name().to_string(),
        ensemble_size: cfg.ensemble_size,
        train_steps: cfg.diffusion.train_steps,
        inference_steps: cfg.diffusion.inference_steps,
        tau_c: level.tau_c,
        sigma_eff: level.sigma_eff,
        tau_source: tau_source.into(),
        k_star: calibration.k_star,
        calibration_feasible: calibration.feasible,
        streams,
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
    };
    Ok(InferenceOutput {
        stage1,
        transform,
        condition,
        calibration,
        level,
        ensemble: members,
        manifest,
    })
}

/// Checksums of every configured input file, keyed by path.
pub fn input_checksums(cfg: &PipelineConfig) -> Result<BTreeMap<String, String>> {
    let i = &cfg.inputs;
    let mut stems: Vec<&PathBuf> = [&i.truth_hr, &i.truth_lr].into_iter().flatten().collect();
    for set in [&i.atmos_train, &i.atmos_hist, &i.atmos_target]
        .into_iter()
        .flatten()
    {
        stems.extend(set.iter());
    }
    let mut out = BTreeMap::new();
    for stem in stems {
        let (json, bin) = stack_paths(stem);
        for p in [json, bin] {
            out.insert(p.display().to_string(), sha256_file(&p)?);
        }
    }
    if let Some(t) = &cfg.transform {
        out.insert(t.display().to_string(), sha256_file(t)?);
    }
    Ok(out)
}

fn write_all(out: &InferenceOutput, dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    let mut stack = |name: String, f: &FieldStack| -> Result<()> {
        write_stack(&dir.join(&name), f)?;
        names.push(format!("{name}.json"));
        names.push(format!("{name}.bin"));
        Ok(())
    };
    stack("predicted_lr".into(), &out.stage1.predicted)?;
    stack("corrected_lr".into(), &out.stage1.corrected)?;
    stack("condition_hr".into(), &out.condition)?;
    for (m, member) in out.ensemble.members().iter().enumerate() {
        stack(format!("member_{m:03}"), member)?;
    }
    write_json(&dir.join("transform.json"), &out.transform)?;
    names.push("transform.json".into());
    Ok(names)
}

/// Writes all products and `manifest.json` into `dir`. Files are staged in a
/// scratch directory first, so a failed write leaves no partial products.
pub fn write_outputs(
    out: &InferenceOutput,
    dir: &Path,
    inputs: BTreeMap<String, String>,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let staging = dir.join(".partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let result = (|| {
        let names = write_all(out, &staging)?;
        let mut manifest = out.manifest.clone();
        manifest.inputs = inputs;
        for name in &names {
            manifest
                .outputs
                .insert(name.clone(), sha256_file(&staging.join(name))?);
        }
        write_json(&staging.join("manifest.json"), &manifest)?;
        for name in names.iter().map(String::as_str).chain(["manifest.json"]) {
            let to = dir.join(name);
            fs::rename(staging.join(name), &to).map_err(|e| Error::io(to, e))?;
        }
        Ok(manifest)
    })();
    let _ = fs::remove_dir_all(&staging);
    result
}
