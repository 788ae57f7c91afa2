use std::path::{Path, PathBuf};
use std::process::ExitCode;

use precipgen::diffusion::{calibrate_condition_noise, NoiseCalibration, NoiseSchedule, DEFAULT_DELTA_LOG};
use precipgen::grid::cos_lat_weights;
use precipgen::io::{read_json, read_stack, write_json, write_stack};
use precipgen::metrics::{mean_psd, Spectrum};
use precipgen::pipeline::{
    input_checksums, load_inputs, run_evaluation, run_inference, write_outputs, write_report, write_suite,
    Conditioning, EvaluationInputs, Manifest, PipelineConfig, Stage1,
};
use precipgen::preprocess::{fit_transform_params, forward_transform, TransformParams};
use precipgen::synth::{SyntheticSuite, WorldConfig};
use precipgen::{EnsembleStack, Error, FieldStack, Result};

use crate::fixture::{calibration_fixture, scan_tau};
use crate::{CalibrateArgs, Cli, Command, ReportArgs, SynthArgs};

pub fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Synth(args) => synth(cli, args)?,
        Command::Preprocess => preprocess(cli)?,
        Command::Qdm => qdm(cli)?,
        Command::CalibrateNoise(args) => calibrate(cli, args)?,
        Command::Sample => sample(cli)?,
        Command::Evaluate => evaluate(cli)?,
        Command::Report(args) => report(cli, args)?,
        Command::Selftest => return Ok(crate::selftest::run()),
    }
    Ok(ExitCode::SUCCESS)
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config <file>".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut world = match &cli.config {
        Some(path) => read_json::<WorldConfig>(path).map_err(|e| Error::Config(e.to_string()))?,
        None => WorldConfig::default(),
    };
    if let Some(seed) = cli.seed {
        world.seed = seed;
    }
    let overrides = [
        (args.n_lat, &mut world.n_lat),
        (args.n_lon, &mut world.n_lon),
        (args.years, &mut world.years),
        (args.train_years, &mut world.train_years),
    ];
    for (value, field) in overrides {
        if let Some(v) = value {
            *field = v;
        }
    }
    if let Some(d) = args.days_per_year {
        world.days_per_year = d;
    }
    world.validate()?;
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
    log::info!(
        "generating a {}x{} world, {} years of {} days",
        world.n_lat,
        world.n_lon,
        world.years,
        world.days_per_year
    );
    let suite = SyntheticSuite::generate(&world)?;
    let path = write_suite(&suite, &dir, world.seed)?;
    println!("{}", path.display());
    Ok(())
}

fn preprocess(cli: &Cli) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let inputs = load_inputs(&cfg)?;
    let params = match &cfg.transform {
        Some(path) => read_json::<TransformParams>(path)?,
        None => fit_transform_params(&inputs.truth_hr).map_err(|e| e.in_stage("transform"))?,
    };
    let transformed = forward_transform(&inputs.truth_hr, &params)?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("transform.json"), &params)?;
    write_stack(&cfg.output_dir.join("truth_hr_transformed"), &transformed)?;
    println!("{}", serde_json::to_string_pretty(&params).expect("serializable"));
    Ok(())
}

fn qdm(cli: &Cli) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let stage1 = Stage1::run(&load_inputs(&cfg)?, &cfg)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_stack(&dir.join("predicted_lr"), &stage1.predicted)?;
    write_stack(&dir.join("corrected_lr"), &stage1.corrected)?;
    write_json(&dir.join("predictor.json"), &stage1.predictor)?;
    write_json(&dir.join("qdm.json"), &stage1.qdm)?;
    println!(
        "wrote {} days of predicted and corrected precipitation to {}",
        stage1.corrected.n_time(),
        dir.display()
    );
    Ok(())
}

fn print_calibration(cal: &NoiseCalibration) {
    match cal.k_star {
        Some(k) => println!("k_star: {k}"),
        None => println!("k_star: none"),
    }
    println!("tau_c: {}", cal.level.tau_c);
    println!("sigma_eff: {:.6}", cal.level.sigma_eff);
    println!("feasible: {}", cal.feasible);
}

fn calibrate_stacks(reference: &FieldStack, prediction: &FieldStack, delta_log: f64) -> Result<(Spectrum, NoiseCalibration)> {
    reference.grid().ensure_matches(prediction.grid())?;
    let w = cos_lat_weights(reference.grid())?;
    let psd_ref = mean_psd(reference, &w)?;
    let psd_pred = mean_psd(prediction, &w)?;
    let cal = calibrate_condition_noise(&psd_ref, &psd_pred, &NoiseSchedule::default_condition(), delta_log)?;
    Ok((psd_ref, cal))
}

fn calibrate(cli: &Cli, args: &CalibrateArgs) -> Result<()> {
    if args.fixture {
        let (reference, prediction) = calibration_fixture()?;
        let (psd_ref, cal) = calibrate_stacks(&reference, &prediction, args.delta_log.unwrap_or(DEFAULT_DELTA_LOG))?;
        print_calibration(&cal);
        let scan = cal.k_star.and_then(|k| scan_tau(&psd_ref, k, &NoiseSchedule::default_condition()));
        match scan {
            Some(t) => println!("scan_tau_c: {t}"),
            None => println!("scan_tau_c: none"),
        }
        return Ok(());
    }
    if let (Some(r), Some(p)) = (&args.reference, &args.prediction) {
        let (_, cal) = calibrate_stacks(&read_stack(r)?, &read_stack(p)?, args.delta_log.unwrap_or(DEFAULT_DELTA_LOG))?;
        print_calibration(&cal);
        return Ok(());
    }
    let mut cfg = pipeline_config(cli)?;
    if let Some(d) = args.delta_log {
        cfg.diffusion.delta_log = d;
    }
    let inputs = load_inputs(&cfg)?;
    let stage1 = Stage1::run(&inputs, &cfg)?;
    let cond = Conditioning::run(&inputs, &cfg, &stage1)?;
    print_calibration(&cond.calibration);
    Ok(())
}

fn sample(cli: &Cli) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let inputs = load_inputs(&cfg)?;
    let checksums = input_checksums(&cfg)?;
    let out = run_inference(&inputs, &cfg)?;
    let manifest = write_outputs(&out, &cfg.output_dir, checksums)?;
    println!(
        "{} members x {} days, tau_c {} ({}), outputs in {}",
        manifest.ensemble_size,
        out.ensemble.times().len(),
        manifest.tau_c,
        manifest.tau_source,
        cfg.output_dir.display()
    );
    Ok(())
}

/// The days of `stack` matching `times`, which must be a contiguous run of its axis.
fn align(stack: &FieldStack, times: &[i64], what: &str) -> Result<FieldStack> {
    let start = times
        .first()
        .and_then(|t0| stack.times().iter().position(|t| t == t0))
        .ok_or_else(|| Error::Config(format!("{what} does not cover the sampled days")))?;
    let range = start..start + times.len();
    if range.end > stack.n_time() || stack.times()[range.clone()] != *times {
        return Err(Error::Config(format!("{what} does not cover the sampled days")));
    }
    stack.time_range(range)
}

fn evaluate(cli: &Cli) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let dir = &cfg.output_dir;
    let manifest: Manifest = read_json(&dir.join("manifest.json"))
        .map_err(|e| Error::Config(format!("no sampled run in {}: {e}", dir.display())))?;
    let members = (0..manifest.ensemble_size)
        .map(|m| read_stack(&dir.join(format!("member_{m:03}"))))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = EnsembleStack::new(members)?;
    let corrected = read_stack(&dir.join("corrected_lr"))?;
    let truth_path = cfg
        .inputs
        .truth_eval
        .as_ref()
        .or(cfg.inputs.truth_hr.as_ref())
        .ok_or_else(|| Error::Config("inputs.truth_eval or inputs.truth_hr is required".into()))?;
    let times = ensemble.times().to_vec();
    let truth = align(&read_stack(truth_path)?, &times, "the reference")?;
    let esm = match &cfg.inputs.esm {
        Some(p) => Some(align(&read_stack(p)?, &times, "the ESM stack")?),
        None => None,
    };
    let report = run_evaluation(
        &EvaluationInputs {
            truth: &truth,
            esm: esm.as_ref(),
            deterministic: Some(&corrected),
            ensemble: Some(&ensemble),
            calendar: cfg.calendar,
        },
        &cfg.metrics,
        cfg.spread_skill_bins,
    )?;
    let files = write_report(&report, &dir.join("report"))?;
    for p in &report.products {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<14} MAB {:>8}  CRPS {:>8}  KS {:>8}",
            p.name,
            fmt(p.climatology_mab),
            fmt(p.crps),
            fmt(p.ks)
        );
    }
    println!("wrote {} report files to {}", files.len(), dir.join("report").display());
    Ok(())
}

fn report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    if args.print_defaults {
        println!("{}", serde_json::to_string_pretty(&PipelineConfig::default()).expect("serializable"));
        return Ok(());
    }
    let dir = match (&cli.out, &cli.config) {
        (Some(d), _) => d.clone(),
        (None, Some(_)) => pipeline_config(cli)?.output_dir,
        (None, None) => return Err(Error::Config("report needs --out <dir> or --config <file>".into())),
    };
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    println!("run in {}", dir.display());
    println!("  seed {}  config sha256 {}", manifest.seed, manifest.config_sha256);
    println!(
        "  predictor {}  denoiser {}  members {}",
        manifest.predictor, manifest.denoiser, manifest.ensemble_size
    );
    println!(
        "  steps {} -> {}  tau_c {} ({})  sigma_eff {:.4}  k* {:?}",
        manifest.train_steps,
        manifest.inference_steps,
        manifest.tau_c,
        manifest.tau_source,
        manifest.sigma_eff,
        manifest.k_star
    );
    println!("  {} inputs, {} outputs checksummed", manifest.inputs.len(), manifest.outputs.len());
    let scalars = dir.join("report").join("scalars.csv");
    if let Ok(text) = std::fs::read_to_string(&scalars) {
        println!();
        print!("{text}");
    }
    Ok(())
}
