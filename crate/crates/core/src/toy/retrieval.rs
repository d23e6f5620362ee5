use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::ScaleSchedule;
use crate::fitness::AccuracyTriple;

use super::{random_tokens, softmax, Capture, ForwardOptions, ToyError, ToyModel};

pub const DEFAULT_TRIALS: usize = 64;

/// A key planted near one of three positions with a content margin `delta`
/// over every distractor.
///
/// Each trial moves every slot by an offset drawn uniformly from
/// `-jitter..=jitter`, the way a document's token offset varies between
/// instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalTask {
    /// Centres of the first, middle and last slots.
    pub positions: [usize; 3],
    pub delta: f64,
    pub instance_seed: u64,
    #[serde(default)]
    pub jitter: usize,
    /// Weight of the embedding component shared by every token.
    #[serde(default = "default_shared")]
    pub shared: f64,
}

fn default_shared() -> f64 {
    1.0
}

impl RetrievalTask {
    /// Slots centred at `j`, `n/2` and `n-2-j` with jitter `j = n/8`.
    pub fn standard(seq_len: usize, delta: f64, instance_seed: u64) -> Self {
        let jitter = seq_len / 8;
        Self {
            positions: [jitter, seq_len / 2, seq_len.saturating_sub(2 + jitter)],
            delta,
            instance_seed,
            jitter,
            shared: default_shared(),
        }
    }

    /// Slots never overlap and never reach the final (query) position.
    pub fn validate(&self, seq_len: usize) -> Result<(), ToyError> {
        let [f, m, l] = self.positions.map(|p| p as i64);
        let (j, n) = (self.jitter as i64, seq_len as i64);
        if !(f - j >= 0 && f + j < m - j && m + j < l - j && l + j < n - 1) {
            return Err(ToyError::Task(format!(
                "slots {:?} with jitter {j} must be disjoint and end before position {}",
                self.positions,
                seq_len.saturating_sub(1)
            )));
        }
        if self.delta.is_nan() {
            return Err(ToyError::Task("delta is NaN".into()));
        }
        Ok(())
    }

    /// Seed of trial `trial`: the first word of stream `trial` of a
    /// generator keyed by `instance_seed`, so different instances share no trials.
    pub fn trial_seed(&self, trial: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.instance_seed);
        rng.set_stream(trial);
        rng.next_u64()
    }

    /// Planted positions of one trial.
    pub fn trial_positions(&self, trial: u64) -> [usize; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.trial_seed(trial));
        rng.set_stream(1);
        let j = self.jitter as i64;
        self.positions
            .map(|p| (p as i64 + rng.random_range(-j..=j)) as usize)
    }
}

#[derive(Debug, Clone)]
pub struct TrialLogits {
    pub positions: [usize; 3],
    /// `[head][position]`.
    pub logits: Vec<Vec<f64>>,
}

/// Last-layer scores of the final query for each trial, before any planting.
#[derive(Debug, Clone)]
pub struct RetrievalLogits {
    pub trials: Vec<TrialLogits>,
}

impl RetrievalLogits {
    /// Whether the head-averaged attention argmax of `trial` lands on `pos`
    /// once `delta` is added to that position's score in every head.
    pub fn hit(&self, trial: usize, pos: usize, delta: f64) -> bool {
        let heads = &self.trials[trial].logits;
        let len = heads[0].len();
        let mut avg = vec![0.0; len];
        for logits in heads {
            let mut planted = logits.clone();
            planted[pos] += delta;
            for (a, p) in avg.iter_mut().zip(softmax(&planted)) {
                *a += p;
            }
        }
        let best = avg
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        best.0 == pos
    }

    /// Percent of trials retrieving slot `slot` (0 first, 1 middle, 2 last).
    pub fn accuracy_at(&self, slot: usize, delta: f64) -> f64 {
        let hits = self
            .trials
            .iter()
            .enumerate()
            .filter(|(t, trial)| self.hit(*t, trial.positions[slot], delta))
            .count();
        100.0 * hits as f64 / self.trials.len() as f64
    }

    pub fn accuracy(&self, delta: f64) -> Result<AccuracyTriple, ToyError> {
        let [f, m, l] = [0, 1, 2].map(|slot| self.accuracy_at(slot, delta));
        AccuracyTriple::percent(f, m, l)
            .map(|t| t.with_sample_count(self.trials.len() as u64))
            .map_err(|e| ToyError::Task(e.to_string()))
    }
}

/// Runs one forward pass per trial; trial `t` uses tokens seeded by [`RetrievalTask::trial_seed`].
pub fn retrieval_logits(
    model: &ToyModel,
    task: &RetrievalTask,
    schedule: &ScaleSchedule,
    trials: usize,
) -> Result<RetrievalLogits, ToyError> {
    let cfg = model.config();
    task.validate(cfg.seq_len)?;
    if trials == 0 {
        return Err(ToyError::Task("trials must be positive".into()));
    }
    let opts = ForwardOptions {
        capture: Capture::None,
        entropy: false,
    };
    let trials = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let tokens = random_tokens(
                cfg.seq_len,
                cfg.d_model(),
                task.shared,
                task.trial_seed(t),
            );
            model.forward(&tokens, schedule, &opts).map(|o| TrialLogits {
                positions: task.trial_positions(t),
                logits: o.last_logits,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RetrievalLogits { trials })
}

/// Position-wise retrieval accuracy over `trials` instances.
pub fn retrieval_accuracy(
    model: &ToyModel,
    task: &RetrievalTask,
    schedule: &ScaleSchedule,
    trials: usize,
) -> Result<AccuracyTriple, ToyError> {
    retrieval_logits(model, task, schedule, trials)?.accuracy(task.delta)
}

/// Finds the smallest margin that lifts middle accuracy under `schedule`
/// to the centre of `[low, high]` percent, and fails unless the accuracy
/// there lies within the band.
pub fn calibrate_delta(
    model: &ToyModel,
    task: &RetrievalTask,
    schedule: &ScaleSchedule,
    trials: usize,
    (low, high): (f64, f64),
) -> Result<f64, ToyError> {
    let logits = retrieval_logits(model, task, schedule, trials)?;
    let acc = |d: f64| logits.accuracy_at(1, d);
    let target = 0.5 * (low + high);
    let (mut lo, mut hi) = (0.0, 1.0);
    if acc(lo) > high {
        return Err(ToyError::Calibration(format!(
            "middle accuracy is already {:.1}% without a margin",
            acc(lo)
        )));
    }
    while acc(hi) < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(ToyError::Calibration("no margin reaches the target".into()));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if acc(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = acc(hi);
    if (low..=high).contains(&a) {
        Ok(hi)
    } else {
        Err(ToyError::Calibration(format!(
            "accuracy jumps from below {target}% to {a}% at margin {hi}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::ToyModelConfig;

    #[test]
    fn standard_positions() {
        let t = RetrievalTask::standard(512, 1.0, 0);
        assert_eq!(t.positions, [64, 256, 446]);
        assert_eq!(t.jitter, 64);
        t.validate(512).unwrap();
        assert!(t.validate(400).is_err());
        for trial in 0..50 {
            let p = t.trial_positions(trial);
            for (c, q) in t.positions.iter().zip(p) {
                assert!(c.abs_diff(q) <= 64);
            }
        }
        let bad = RetrievalTask {
            positions: [5, 5, 9],
            ..t
        };
        assert!(bad.validate(512).is_err());
    }

    #[test]
    fn huge_margin_always_retrieves() {
        let cfg = ToyModelConfig {
            n_layers: 2,
            n_heads: 2,
            head_dim: 8,
            seq_len: 64,
            ..ToyModelConfig::default()
        };
        let model = ToyModel::new(cfg).unwrap();
        let task = RetrievalTask::standard(64, 1e6, 5);
        let ones = ScaleSchedule::uniform(2, 1.0).unwrap();
        let acc = retrieval_accuracy(&model, &task, &ones, 6).unwrap();
        assert_eq!((acc.first, acc.middle, acc.last), (100.0, 100.0, 100.0));
        assert_eq!(acc.sample_count, 6);
    }
}
