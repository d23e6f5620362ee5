use std::ops::Range;

use crate::curve::{BezierCurve, SamplingMode, ScaleSchedule};
use crate::search_space::SearchGrid;

use super::{AccuracyTriple, AccuracyUnit, EvalError, Evaluator};

/// Splits `n` layers into first/middle/last groups at `floor(n/3)` boundaries;
/// the remainder goes to the last group.
pub fn layer_thirds(n: usize) -> [Range<usize>; 3] {
    let b = n / 3;
    [0..b, b..2 * b, 2 * b..n]
}

/// Synthetic evaluator whose unique optimum is a known schedule.
///
/// Accuracy for each position group is `100 * exp(-sharpness * d)` where `d`
/// is the mean absolute scale error over that third of the layers. An empty
/// group (fewer than three layers) contributes `d = 0`.
#[derive(Debug, Clone)]
pub struct PlantedOracle {
    hidden: ScaleSchedule,
    sharpness: f64,
}

impl PlantedOracle {
    pub const DEFAULT_SHARPNESS: f64 = 5.0;

    pub fn new(hidden: ScaleSchedule, sharpness: f64) -> Self {
        Self { hidden, sharpness }
    }

    /// A front-loaded on-grid cubic: large scales early, small scales late.
    pub fn default_hidden_curve(n_layers: usize) -> BezierCurve {
        let last = n_layers.saturating_sub(1) as f64;
        let grid = SearchGrid::new(n_layers.max(4)).expect("non-empty grid");
        let raw = [(0.0, 1.8), (last / 4.0, 2.0), (last * 2.0 / 3.0, 1.3), (last, 1.1)];
        let points = raw
            .iter()
            .map(|&(x, y)| grid.snap(x, y).expect("inside grid"))
            .collect();
        BezierCurve::new(points).expect("snapped x stays increasing for n >= 4")
    }

    /// Default hidden schedule: [`Self::default_hidden_curve`] sampled at uniform t.
    pub fn default_hidden(n_layers: usize) -> ScaleSchedule {
        Self::default_hidden_curve(n_layers)
            .sample_layer_scales(n_layers, SamplingMode::UniformT)
            .expect("n_layers >= 2")
            .schedule
    }

    pub fn hidden(&self) -> &ScaleSchedule {
        &self.hidden
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    fn group_error(&self, candidate: &[f64], range: Range<usize>) -> f64 {
        if range.is_empty() {
            return 0.0;
        }
        let len = range.len() as f64;
        range
            .map(|k| (candidate[k] - self.hidden.scales()[k]).abs())
            .sum::<f64>()
            / len
    }
}

impl Evaluator for PlantedOracle {
    fn evaluate(&self, schedule: &ScaleSchedule) -> Result<AccuracyTriple, EvalError> {
        if schedule.len() != self.hidden.len() {
            return Err(EvalError::InvalidSchedule(format!(
                "expected {} layers, got {}",
                self.hidden.len(),
                schedule.len()
            )));
        }
        let [f, m, l] = layer_thirds(schedule.len());
        let score = |r| 100.0 * (-self.sharpness * self.group_error(schedule.scales(), r)).exp();
        AccuracyTriple::new(score(f), score(m), score(l), schedule.len() as u64, AccuracyUnit::Percent)
    }

    fn describe(&self) -> String {
        format!("planted(n={}, sharpness={})", self.hidden.len(), self.sharpness)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn thirds_partition() {
        assert_eq!(layer_thirds(30), [0..10, 10..20, 20..30]);
        assert_eq!(layer_thirds(32), [0..10, 10..20, 20..32]);
        assert_eq!(layer_thirds(3), [0..1, 1..2, 2..3]);
        assert_eq!(layer_thirds(2), [0..0, 0..0, 0..2]);
    }

    #[test]
    fn hidden_scores_full_marks() {
        let hidden = PlantedOracle::default_hidden(30);
        let o = PlantedOracle::new(hidden.clone(), 5.0);
        assert_eq!(o.evaluate(&hidden).unwrap().as_array(), [100.0, 100.0, 100.0]);
    }

    #[test]
    fn uniform_offset_closed_form() {
        let hidden = ScaleSchedule::uniform(30, 1.4).unwrap();
        let shifted = ScaleSchedule::uniform(30, 1.5).unwrap();
        let t = PlantedOracle::new(hidden, 5.0).evaluate(&shifted).unwrap();
        let expected = 100.0 * (-0.5f64).exp();
        assert_relative_eq!(expected, 60.653_065_971_263_34, epsilon = 1e-10);
        for v in t.as_array() {
            assert_relative_eq!(v, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let o = PlantedOracle::new(ScaleSchedule::uniform(30, 1.5).unwrap(), 5.0);
        let short = ScaleSchedule::uniform(29, 1.5).unwrap();
        assert!(matches!(o.evaluate(&short), Err(EvalError::InvalidSchedule(_))));
    }

    #[test]
    fn default_hidden_is_front_loaded() {
        let h = PlantedOracle::default_hidden(30);
        assert!(h.scales()[0] > h.scales()[29]);
        assert!(h.scales().iter().all(|s| (1.0..=2.0).contains(s)));
        let c = PlantedOracle::default_hidden_curve(30);
        assert_eq!(c.points().len(), 4);
    }
}
