use crate::curve::ScaleSchedule;
use crate::toy::{
    calibrate_delta, retrieval_accuracy, RetrievalTask, ToyError, ToyModel, ToyModelConfig,
};

use super::{AccuracyTriple, EvalError, Evaluator};

/// Retrieval accuracy of the toy attention stack as a fitness surface.
pub struct ToyRetrievalOracle {
    model: ToyModel,
    task: RetrievalTask,
    trials: usize,
}

impl ToyRetrievalOracle {
    pub fn new(config: ToyModelConfig, task: RetrievalTask, trials: usize) -> Result<Self, ToyError> {
        let model = ToyModel::new(config)?;
        task.validate(model.config().seq_len)?;
        Ok(Self {
            model,
            task,
            trials,
        })
    }

    /// Builds the standard task and freezes a margin that puts unscaled
    /// middle accuracy inside `[20, 60]` percent.
    pub fn calibrated(config: ToyModelConfig, instance_seed: u64, trials: usize) -> Result<Self, ToyError> {
        let model = ToyModel::new(config)?;
        let cfg = model.config();
        let mut task = RetrievalTask::standard(cfg.seq_len, 0.0, instance_seed);
        let ones = ScaleSchedule::uniform(cfg.n_layers, 1.0).map_err(|e| ToyError::Config(e.to_string()))?;
        task.delta = calibrate_delta(&model, &task, &ones, trials, (20.0, 60.0))?;
        Ok(Self {
            model,
            task,
            trials,
        })
    }

    pub fn task(&self) -> &RetrievalTask {
        &self.task
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }

    pub fn trials(&self) -> usize {
        self.trials
    }
}

impl Evaluator for ToyRetrievalOracle {
    fn evaluate(&self, schedule: &ScaleSchedule) -> Result<AccuracyTriple, EvalError> {
        retrieval_accuracy(&self.model, &self.task, schedule, self.trials).map_err(|e| match e {
            ToyError::Dimension(m) => EvalError::InvalidSchedule(m),
            other => EvalError::Backend(other.to_string()),
        })
    }

    fn describe(&self) -> String {
        format!(
            "toy(seed={}, delta={:.6}, trials={})",
            self.model.config().weight_seed,
            self.task.delta,
            self.trials
        )
    }
}
