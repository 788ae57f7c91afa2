//! The two-stage chain: ridge predictor, quantile delta mapping, then
//! noise-conditioned diffusion downscaling, plus the evaluation report.

mod config;
mod evaluation;
mod inference;
mod suite;

pub use config::{
    ConditionTau, DenoiserKind, DiffusionSettings, InputPaths, MetricToggles, PipelineConfig,
    PredictorSettings, LINEAR_RIDGE,
};
pub use evaluation::{
    run_evaluation, write_report, EvaluationInputs, EvaluationReport, ProductMetrics,
};
pub use inference::{
    input_checksums, load_inputs, run_inference, write_outputs, Conditioning, InferenceOutput,
    Manifest, PipelineInputs, Stage1,
};
pub use suite::{write_suite, SUITE_CONFIG, SUITE_WORLD};
