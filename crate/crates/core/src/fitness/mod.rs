//! Evaluators: anything that turns a scale schedule into position-wise
//! retrieval accuracies.
//!
//! Built-in backends are the [`PlantedOracle`] (known optimum, used to test
//! the search), the [`ToyRetrievalOracle`] (a small attention stack) and a
//! [`ConstantEvaluator`]. Real models live behind [`ExternalEvaluator`],
//! which speaks newline-delimited JSON to a subprocess or TCP peer.

mod external;
mod planted;
pub mod protocol;
mod toy_oracle;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::ScaleSchedule;

pub use external::{Endpoint, ExternalEvaluator, ExternalOptions};
pub use planted::{layer_thirds, PlantedOracle};
pub use toy_oracle::ToyRetrievalOracle;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("schedule rejected: {0}")]
    InvalidSchedule(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("handshake rejected: {0}")]
    Handshake(String),
    #[error("evaluator reported an error for request {id}: {message}")]
    Remote { id: u64, message: String },
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("gave up after {attempts} attempt(s); last error: {last}")]
    Exhausted { attempts: u32, last: Box<EvalError> },
}

impl EvalError {
    /// Attempts made before this error surfaced.
    pub fn attempts(&self) -> u32 {
        match self {
            Self::Exhausted { attempts, .. } => *attempts,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyUnit {
    #[default]
    Percent,
    Fraction,
}

impl AccuracyUnit {
    fn max(self) -> f64 {
        match self {
            Self::Percent => 100.0,
            Self::Fraction => 1.0,
        }
    }
}

/// Accuracy with the target placed at the first, middle and last context position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTriple {
    pub first: f64,
    pub middle: f64,
    pub last: f64,
    #[serde(default)]
    pub sample_count: u64,
    #[serde(default)]
    pub unit: AccuracyUnit,
}

impl AccuracyTriple {
    /// A percent-valued triple; fails if any value is outside [0, 100].
    pub fn percent(first: f64, middle: f64, last: f64) -> Result<Self, EvalError> {
        Self::new(first, middle, last, 0, AccuracyUnit::Percent)
    }

    pub fn new(
        first: f64,
        middle: f64,
        last: f64,
        sample_count: u64,
        unit: AccuracyUnit,
    ) -> Result<Self, EvalError> {
        let t = Self {
            first,
            middle,
            last,
            sample_count,
            unit,
        };
        t.check()?;
        Ok(t)
    }

    pub fn with_sample_count(mut self, n: u64) -> Self {
        self.sample_count = n;
        self
    }

    pub fn check(&self) -> Result<(), EvalError> {
        let max = self.unit.max();
        for (name, v) in [("first", self.first), ("middle", self.middle), ("last", self.last)] {
            if !(v.is_finite() && (0.0..=max).contains(&v)) {
                return Err(EvalError::Protocol(format!(
                    "{name} accuracy {v} outside [0, {max}]"
                )));
            }
        }
        Ok(())
    }

    /// The same accuracies expressed in percent.
    pub fn to_percent(self) -> Self {
        match self.unit {
            AccuracyUnit::Percent => self,
            AccuracyUnit::Fraction => Self {
                first: self.first * 100.0,
                middle: self.middle * 100.0,
                last: self.last * 100.0,
                unit: AccuracyUnit::Percent,
                ..self
            },
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.first, self.middle, self.last]
    }
}

/// Scores a scale schedule. Implementations must tolerate concurrent calls.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, schedule: &ScaleSchedule) -> Result<AccuracyTriple, EvalError>;

    /// Short label for logs and manifests.
    fn describe(&self) -> String;
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, schedule: &ScaleSchedule) -> Result<AccuracyTriple, EvalError> {
        (**self).evaluate(schedule)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, schedule: &ScaleSchedule) -> Result<AccuracyTriple, EvalError> {
        (**self).evaluate(schedule)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Returns the same triple for every schedule.
#[derive(Debug, Clone)]
pub struct ConstantEvaluator {
    triple: AccuracyTriple,
}

impl ConstantEvaluator {
    pub fn new(triple: AccuracyTriple) -> Self {
        Self { triple }
    }
}

impl Evaluator for ConstantEvaluator {
    fn evaluate(&self, _schedule: &ScaleSchedule) -> Result<AccuracyTriple, EvalError> {
        Ok(self.triple)
    }

    fn describe(&self) -> String {
        format!(
            "constant({},{},{})",
            self.triple.first, self.triple.middle, self.triple.last
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_range_checks() {
        assert!(AccuracyTriple::percent(70.0, 55.6, 60.2).is_ok());
        assert!(AccuracyTriple::percent(101.0, 0.0, 0.0).is_err());
        assert!(AccuracyTriple::percent(f64::NAN, 0.0, 0.0).is_err());
        assert!(AccuracyTriple::new(0.5, 0.5, 2.0, 1, AccuracyUnit::Fraction).is_err());
        let f = AccuracyTriple::new(0.5, 0.25, 1.0, 4, AccuracyUnit::Fraction).unwrap();
        let p = f.to_percent();
        assert_eq!(p.as_array(), [50.0, 25.0, 100.0]);
        assert_eq!(p.sample_count, 4);
    }

    #[test]
    fn constant_evaluator_passes_through() {
        let t = AccuracyTriple::percent(70.0, 55.6, 60.2).unwrap();
        let e = ConstantEvaluator::new(t);
        let s = ScaleSchedule::uniform(4, 1.3).unwrap();
        assert_eq!(e.evaluate(&s).unwrap(), t);
    }

    #[test]
    fn exhausted_reports_attempts() {
        let e = EvalError::Exhausted {
            attempts: 4,
            last: Box::new(EvalError::Timeout(Duration::from_secs(1))),
        };
        assert_eq!(e.attempts(), 4);
        assert!(e.to_string().contains("4 attempt"));
    }
}
