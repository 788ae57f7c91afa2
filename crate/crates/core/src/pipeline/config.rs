use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::diffusion::{DEFAULT_DELTA_LOG, DEFAULT_INFERENCE_STEPS, DEFAULT_TRAIN_STEPS};
use crate::error::{Error, Result};
use crate::metrics::Calendar;
use crate::qdm::QdmSettings;

/// Name of the shipped predictor.
pub const LINEAR_RIDGE: &str = "linear-ridge";

/// Condition-noise index: calibrated from spectra, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConditionTau {
    #[default]
    Auto,
    Index(usize),
}

impl Serialize for ConditionTau {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ConditionTau::Auto => s.serialize_str("auto"),
            ConditionTau::Index(i) => s.serialize_u64(*i as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ConditionTau {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(ConditionTau::Index(i)),
            Raw::Word(w) if w == "auto" => Ok(ConditionTau::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "condition_tau must be \"auto\" or an index, got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    /// Linear-Gaussian conditional denoiser fitted on the training pairs.
    GaussianConditional,
    /// Returns the condition; turns the diffusion stage into a no-op.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionSettings {
    pub train_steps: usize,
    pub inference_steps: usize,
    pub condition_tau: ConditionTau,
    pub delta_log: f64,
    pub denoiser: DenoiserKind,
    pub clip: Option<(f64, f64)>,
}

impl Default for DiffusionSettings {
    fn default() -> Self {
        Self {
            train_steps: DEFAULT_TRAIN_STEPS,
            inference_steps: DEFAULT_INFERENCE_STEPS,
            condition_tau: ConditionTau::Auto,
            delta_log: DEFAULT_DELTA_LOG,
            denoiser: DenoiserKind::GaussianConditional,
            clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorSettings {
    pub name: String,
    pub ridge: f64,
}

impl Default for PredictorSettings {
    fn default() -> Self {
        Self {
            name: LINEAR_RIDGE.into(),
            ridge: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricToggles {
    pub psd: bool,
    pub histogram: bool,
    pub profiles: bool,
    pub climatology: bool,
    pub crps: bool,
    pub spread_skill: bool,
    pub extremes: bool,
    pub trend: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            psd: true,
            histogram: true,
            profiles: true,
            climatology: true,
            crps: true,
            spread_skill: true,
            extremes: true,
            trend: true,
        }
    }
}

impl MetricToggles {
    pub fn none() -> Self {
        Self {
            psd: false,
            histogram: false,
            profiles: false,
            climatology: false,
            crps: false,
            spread_skill: false,
            extremes: false,
            trend: false,
        }
    }
}

/// GridStack stems (paths without extension) read by the file-driven commands.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPaths {
    /// High-resolution reference precipitation; its training days fit the transform and denoiser.
    pub truth_hr: Option<PathBuf>,
    /// Low-resolution reference precipitation aligned with `atmos_train`.
    pub truth_lr: Option<PathBuf>,
    pub atmos_train: Option<[PathBuf; 4]>,
    /// Model predictors over the historical period; defaults to `atmos_train`.
    pub atmos_hist: Option<[PathBuf; 4]>,
    /// Predictors the chain is run on.
    pub atmos_target: Option<[PathBuf; 4]>,
    /// Pseudo-ESM precipitation, used only by the evaluation.
    pub esm: Option<PathBuf>,
    /// Reference for the evaluation; defaults to `truth_hr`.
    pub truth_eval: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub inputs: InputPaths,
    /// Leading days of the reference and predictor stacks used for fitting; all when unset.
    pub train_days: Option<usize>,
    /// Precipitation transform parameters as JSON; fitted on the training truth when unset.
    pub transform: Option<PathBuf>,
    pub predictor: PredictorSettings,
    pub qdm: QdmSettings,
    pub diffusion: DiffusionSettings,
    pub ensemble_size: usize,
    pub calendar: Calendar,
    pub metrics: MetricToggles,
    pub spread_skill_bins: usize,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            inputs: InputPaths::default(),
            train_days: None,
            transform: None,
            predictor: PredictorSettings::default(),
            qdm: QdmSettings {
                per_pixel: true,
                ..QdmSettings::default()
            },
            diffusion: DiffusionSettings::default(),
            ensemble_size: 50,
            calendar: Calendar::default(),
            metrics: MetricToggles::default(),
            spread_skill_bins: 10,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::io::read_json(path).map_err(|e| match e {
            Error::Json { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        })?;
        Ok(cfg.resolve_relative_to(path.parent().unwrap_or(Path::new("."))))
    }

    fn resolve_relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [
            &mut i.truth_hr,
            &mut i.truth_lr,
            &mut i.esm,
            &mut i.truth_eval,
            &mut self.transform,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for set in [&mut i.atmos_train, &mut i.atmos_hist, &mut i.atmos_target]
            .into_iter()
            .flatten()
        {
            set.iter_mut().for_each(fix);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size must be at least 1".into()));
        }
        if self.predictor.name != LINEAR_RIDGE {
            return Err(Error::Config(format!(
                "unknown predictor `{}` (available: {LINEAR_RIDGE})",
                self.predictor.name
            )));
        }
        if !(self.predictor.ridge >= 0.0) {
            return Err(Error::Config(format!(
                "ridge must be >= 0 (got {})",
                self.predictor.ridge
            )));
        }
        if self.qdm.n_quantiles < 2 {
            return Err(Error::Config("QDM needs at least 2 quantiles".into()));
        }
        if self.calendar.days_per_year == 0 {
            return Err(Error::Config("days_per_year must be positive".into()));
        }
        if self.train_days == Some(0) {
            return Err(Error::Config("train_days must be positive".into()));
        }
        if let ConditionTau::Index(t) = self.diffusion.condition_tau {
            if t > self.diffusion.train_steps {
                return Err(Error::Config(format!(
                    "condition_tau {t} exceeds {} steps",
                    self.diffusion.train_steps
                )));
            }
        }
        if !(self.diffusion.delta_log > 0.0) {
            return Err(Error::Config("delta_log must be positive".into()));
        }
        self.sampler().validate()
    }

    /// Checks that every configured input file exists.
    pub fn check_inputs_exist(&self) -> Result<()> {
        let i = &self.inputs;
        let singles = [
            &i.truth_hr,
            &i.truth_lr,
            &i.esm,
            &i.truth_eval,
            &self.transform,
        ];
        let sets = [&i.atmos_train, &i.atmos_hist, &i.atmos_target];
        let stems = singles
            .into_iter()
            .flatten()
            .chain(sets.into_iter().flatten().flat_map(|s| s.iter()));
        for stem in stems {
            let json = if stem.extension().is_some_and(|e| e == "json") {
                stem.clone()
            } else {
                crate::io::stack_paths(stem).0
            };
            if !json.exists() {
                return Err(Error::Config(format!(
                    "input {} does not exist",
                    json.display()
                )));
            }
        }
        Ok(())
    }

    pub fn sampler(&self) -> crate::diffusion::SamplerConfig {
        crate::diffusion::SamplerConfig {
            train_steps: self.diffusion.train_steps,
            inference_steps: self.diffusion.inference_steps,
            seed: self.seed,
            ensemble_size: self.ensemble_size,
            clip: self.diffusion.clip,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(text.contains("\"condition_tau\": \"auto\""));
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.qdm.n_quantiles, 500);
        assert_eq!(
            (cfg.diffusion.train_steps, cfg.diffusion.inference_steps),
            (1000, 100)
        );
        assert_eq!(cfg.ensemble_size, 50);
    }

    #[test]
    fn condition_tau_accepts_index_or_auto() {
        let d: DiffusionSettings = serde_json::from_str(r#"{"condition_tau": 37}"#).unwrap();
        assert_eq!(d.condition_tau, ConditionTau::Index(37));
        let d: DiffusionSettings = serde_json::from_str(r#"{"condition_tau": "auto"}"#).unwrap();
        assert_eq!(d.condition_tau, ConditionTau::Auto);
        assert!(serde_json::from_str::<DiffusionSettings>(r#"{"condition_tau": "max"}"#).is_err());
    }

    #[test]
    fn validation_rejects_bad_settings() {
        let mut cfg = PipelineConfig::default();
        cfg.ensemble_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.predictor.name = "unet".into();
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.diffusion.condition_tau = ConditionTau::Index(5000);
        assert!(cfg.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn missing_input_files_are_config_errors() {
        let mut cfg = PipelineConfig::default();
        cfg.inputs.truth_hr = Some(PathBuf::from("/nonexistent/truth"));
        let err = cfg.check_inputs_exist().unwrap_err();
        assert_eq!(err.class(), crate::ErrorClass::Config);
    }
}
