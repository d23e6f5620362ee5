use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::curve::ScaleSchedule;
use crate::evolution::{utilization, UtilizationWeights};
use crate::fitness::AccuracyTriple;

use super::config::RunConfig;
use super::search::{build_evaluator, eval_error};
use super::{CliError, EvalArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub evaluator: String,
    pub schedule: ScaleSchedule,
    pub accuracy: AccuracyTriple,
    pub weights: UtilizationWeights,
    pub utilization: f64,
}

fn load_schedule(path: &std::path::Path) -> Result<ScaleSchedule, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid JSON in {}: {e}", path.display())))?;
    let value = if value.is_array() {
        serde_json::json!({ "scales": value, "first_scaled_layer": 0 })
    } else {
        value
    };
    serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("invalid schedule in {}: {e}", path.display())))
}

pub(crate) fn cmd_eval(args: &EvalArgs, stdout: &mut dyn Write) -> Result<EvalReport, CliError> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    args.evaluator.apply(&mut cfg)?;
    let weights = args.weights.unwrap_or(cfg.ga.weights);
    weights
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let schedule = load_schedule(&args.schedule)?;

    let evaluator = build_evaluator(&cfg, schedule.len(), schedule.first_scaled_layer())?;
    let accuracy = evaluator
        .evaluate(&schedule)
        .map_err(eval_error)?
        .to_percent();
    let u = utilization(&accuracy, &weights).map_err(|e| CliError::Config(e.to_string()))?;
    let report = EvalReport {
        evaluator: evaluator.describe(),
        schedule,
        accuracy,
        weights,
        utilization: u,
    };
    if args.json {
        writeln!(stdout, "{}", serde_json::to_string(&report).expect("serializable"))?;
    } else {
        let a = &report.accuracy;
        writeln!(stdout, "evaluator    {}", report.evaluator)?;
        writeln!(stdout, "first        {:.4}", a.first)?;
        writeln!(stdout, "middle       {:.4}", a.middle)?;
        writeln!(stdout, "last         {:.4}", a.last)?;
        writeln!(stdout, "utilization  {:.4}", report.utilization)?;
    }
    Ok(report)
}
