use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;

use crate::curve::ScaleSchedule;
use crate::evolution::{Checkpoint, SearchResult, SearchRunner};
use crate::fitness::{
    ConstantEvaluator, EvalError, Evaluator, ExternalEvaluator, ExternalOptions, PlantedOracle,
    ToyRetrievalOracle,
};

use super::config::{EvaluatorSpec, RunConfig};
use super::manifest::{unix_now, RunManifest};
use super::{CliError, SearchArgs};

/// Builds the evaluator for schedules of `n_layers` starting at `first_scaled_layer`.
pub(crate) fn build_evaluator(
    cfg: &RunConfig,
    n_layers: usize,
    first_scaled_layer: usize,
) -> Result<Box<dyn Evaluator>, CliError> {
    let spec = cfg.evaluator_spec()?;
    Ok(match spec {
        EvaluatorSpec::Planted => {
            let hidden = match &cfg.planted.hidden {
                Some(h) => ScaleSchedule::new(h.clone(), first_scaled_layer)
                    .map_err(|e| CliError::Config(format!("planted hidden schedule: {e}")))?,
                None => PlantedOracle::default_hidden(n_layers),
            };
            if hidden.len() != n_layers {
                return Err(CliError::Config(format!(
                    "planted hidden schedule has {} layers, search uses {n_layers}",
                    hidden.len()
                )));
            }
            let sharpness = cfg.planted.sharpness;
            if !(sharpness.is_finite() && sharpness > 0.0) {
                return Err(CliError::Config(format!("sharpness must be > 0, got {sharpness}")));
            }
            Box::new(PlantedOracle::new(hidden, sharpness))
        }
        EvaluatorSpec::Toy => {
            if first_scaled_layer + n_layers > cfg.toy.n_layers {
                return Err(CliError::Config(format!(
                    "toy model has {} layers but schedules cover layers {first_scaled_layer}..{}; set --n-layers",
                    cfg.toy.n_layers,
                    first_scaled_layer + n_layers
                )));
            }
            cfg.toy
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let oracle = ToyRetrievalOracle::calibrated(
                cfg.toy.clone(),
                cfg.evaluator.instance_seed,
                cfg.evaluator.trials,
            )
            .map_err(|e| CliError::Evaluator(e.to_string()))?;
            info!("toy oracle calibrated: {}", oracle.describe());
            Box::new(oracle)
        }
        EvaluatorSpec::Constant(t) => Box::new(ConstantEvaluator::new(t)),
        EvaluatorSpec::External(endpoint) => {
            let secs = cfg.evaluator.timeout_secs;
            if !(secs.is_finite() && secs > 0.0) {
                return Err(CliError::Config(format!("timeout must be > 0, got {secs}")));
            }
            let options = ExternalOptions {
                timeout: Duration::from_secs_f64(secs),
                retries: cfg.evaluator.retries,
            };
            Box::new(
                ExternalEvaluator::connect(endpoint, n_layers, first_scaled_layer, options)
                    .map_err(|e| CliError::Evaluator(format!("cannot start evaluator: {e}")))?,
            )
        }
    })
}

pub(crate) fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::InvalidSchedule(m) => CliError::Config(m),
        other => CliError::Evaluator(other.to_string()),
    }
}

fn checkpoint_name(generation: usize) -> String {
    format!("generation-{generation:04}.json")
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_history(path: &Path, result: &SearchResult) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(io)?;
    for rec in &result.history {
        w.serialize(rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid checkpoint {}: {e}", path.display())))
}

pub(crate) fn cmd_search(args: &SearchArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let started_unix = unix_now();
    let started = Instant::now();

    let checkpoint = args.resume.as_deref().map(load_checkpoint).transpose()?;
    let cfg = match (&checkpoint, &args.replay) {
        (Some(cp), _) => {
            let mut cfg: RunConfig = serde_json::from_value(cp.context.clone()).map_err(|e| {
                CliError::Config(format!("checkpoint carries no usable run configuration: {e}"))
            })?;
            cfg.ga = cp.config.clone();
            // Runtime-only settings may change across a resume.
            if let Some(t) = args.evaluator.timeout {
                cfg.evaluator.timeout_secs = t;
            }
            if let Some(r) = args.evaluator.retries {
                cfg.evaluator.retries = r;
            }
            cfg
        }
        (None, Some(manifest)) => {
            let mut cfg = RunManifest::load(manifest)?.config;
            args.evaluator.apply(&mut cfg)?;
            args.ga.apply(&mut cfg.ga);
            cfg
        }
        (None, None) => {
            let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
            args.evaluator.apply(&mut cfg)?;
            args.ga.apply(&mut cfg.ga);
            cfg
        }
    };
    cfg.ga
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let evaluator = build_evaluator(&cfg, cfg.ga.n_layers, cfg.ga.first_scaled_layer)?;
    let jobs = args.jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(usize::from)
            .unwrap_or(1)
    });

    let out_dir = &args.out_dir;
    let cp_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&cp_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cp_dir.display())))?;

    let context = serde_json::to_value(&cfg).expect("config serializes");
    let runner = SearchRunner::new()
        .jobs(jobs)
        .context(context)
        .on_checkpoint(|cp| {
            let path = cp_dir.join(checkpoint_name(cp.generation));
            write_json(&path, cp).map_err(|e| e.to_string())
        });
    let result = match checkpoint {
        Some(cp) => runner.resume(cp, &evaluator),
        None => runner.run(&cfg.ga, &evaluator),
    }
    .map_err(|e| match e {
        crate::evolution::GaError::Checkpoint(m) => CliError::Io(m),
        other => CliError::Config(other.to_string()),
    })?;

    let result_path = out_dir.join("result.json");
    std::fs::write(&result_path, result.canonical_json() + "\n")
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", result_path.display())))?;
    write_history(&out_dir.join("history.csv"), &result)?;
    if let Some(best) = &result.best_schedule {
        write_json(&out_dir.join("best_schedule.json"), best)?;
    }

    let manifest = RunManifest::collect(
        out_dir,
        &cfg,
        evaluator.describe(),
        std::env::args().collect(),
        args.resume.as_ref().map(|p: &PathBuf| p.display().to_string()),
        started_unix,
        started.elapsed().as_secs_f64(),
        result.complete,
    )?;
    write_json(&out_dir.join("manifest.json"), &manifest)?;

    match (&result.best, result.best_utilization()) {
        (Some(best), Some(u)) => writeln!(
            stdout,
            "best individual {} utilization {u:.4} after {} generation(s), {} evaluation(s)",
            best.id,
            result.history.len(),
            result.evaluations
        )?,
        _ => writeln!(stdout, "no individual was evaluated")?,
    }
    writeln!(stdout, "results in {}", out_dir.display())?;
    if let Some(msg) = &result.failure {
        eprintln!("error: search aborted, partial results written: {msg}");
        return Ok(3);
    }
    Ok(0)
}
