//! Constrained genetic search over Bézier control points.
//!
//! Each generation evaluates the population, folds it into the running
//! Top-k, and builds the next population from mutants of Top-k members,
//! crossover children of Top-k pairs, and the Top-k itself. Every operator
//! preserves the monotone-x constraint and grid membership, so no invalid
//! individual ever enters a population.

mod operators;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{CurveError, SamplingMode};
use crate::fitness::AccuracyTriple;
use crate::search_space::{GridError, SearchGrid};

pub use operators::{
    crossover, init_population, mutate, swap_points, CrossoverOutcome, IdSource, InitialPopulation,
};
pub use search::{
    run, CacheEntry, Checkpoint, GenerationRecord, SearchResult, SearchRunner, CHECKPOINT_VERSION,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("population initialization failed: {0}")]
    Init(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Weights of the first/middle/last accuracies in the utilization score.
///
/// Must satisfy `0 < first < middle < last` so that gains in the middle
/// can never be bought with losses at the end of the context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationWeights {
    pub first: f64,
    pub middle: f64,
    pub last: f64,
}

impl Default for UtilizationWeights {
    fn default() -> Self {
        Self {
            first: 0.2,
            middle: 0.3,
            last: 0.5,
        }
    }
}

impl UtilizationWeights {
    pub fn new(first: f64, middle: f64, last: f64) -> Result<Self, GaError> {
        let w = Self {
            first,
            middle,
            last,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), GaError> {
        let all_finite = [self.first, self.middle, self.last]
            .iter()
            .all(|v| v.is_finite());
        if all_finite && 0.0 < self.first && self.first < self.middle && self.middle < self.last {
            Ok(())
        } else {
            Err(GaError::Config(format!(
                "utilization weights must satisfy 0 < lambda_first < lambda_middle < lambda_last, got ({}, {}, {})",
                self.first, self.middle, self.last
            )))
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            first: self.first * factor,
            middle: self.middle * factor,
            last: self.last * factor,
        }
    }

    pub fn sum(&self) -> f64 {
        self.first + self.middle + self.last
    }
}

impl std::str::FromStr for UtilizationWeights {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad weight `{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [f, m, l] => Ok(Self {
                first: f,
                middle: m,
                last: l,
            }),
            _ => Err(format!("expected three comma-separated weights, got `{s}`")),
        }
    }
}

/// Weighted context utilization `λf·Af + λm·Am + λl·Al`, in percent points.
pub fn utilization(acc: &AccuracyTriple, weights: &UtilizationWeights) -> Result<f64, GaError> {
    weights.validate()?;
    let a = acc.to_percent();
    Ok(weights.first * a.first + weights.middle * a.middle + weights.last * a.last)
}

/// Search hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub mutation_size: usize,
    pub crossover_size: usize,
    pub max_iterations: usize,
    pub mutate_probability: f64,
    pub top_k: usize,
    /// Mutation amplitude along the layer axis, in layers.
    pub amplitude_x: usize,
    /// Mutation amplitude along the scale axis, in scale units.
    pub amplitude_y: f64,
    pub weights: UtilizationWeights,
    pub rng_seed: u64,
    pub n_layers: usize,
    pub first_scaled_layer: usize,
    pub control_points: usize,
    pub sampling_mode: SamplingMode,
    pub y_min: f64,
    pub y_max: f64,
    pub y_step: f64,
    /// Extra attempts per evaluation before the run is aborted.
    pub eval_retries: u32,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 32,
            mutation_size: 16,
            crossover_size: 8,
            max_iterations: 20,
            mutate_probability: 0.3,
            top_k: 8,
            amplitude_x: 3,
            amplitude_y: 0.3,
            weights: UtilizationWeights::default(),
            rng_seed: 0,
            n_layers: 32,
            first_scaled_layer: 0,
            control_points: 4,
            sampling_mode: SamplingMode::UniformT,
            y_min: SearchGrid::DEFAULT_Y_MIN,
            y_max: SearchGrid::DEFAULT_Y_MAX,
            y_step: SearchGrid::DEFAULT_Y_STEP,
            eval_retries: 3,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        let fail = |m: String| Err(GaError::Config(m));
        if self.population_size == 0 {
            return fail("population_size must be positive".into());
        }
        if self.top_k == 0 || self.top_k > self.population_size {
            return fail(format!(
                "top_k must be in 1..={} (population_size), got {}",
                self.population_size, self.top_k
            ));
        }
        if !(self.mutate_probability > 0.0 && self.mutate_probability <= 1.0) {
            return fail(format!(
                "mutate_probability must be in (0, 1], got {}",
                self.mutate_probability
            ));
        }
        if self.control_points < 2 {
            return fail("control_points must be >= 2".into());
        }
        if self.n_layers < 2 || self.n_layers < self.control_points {
            return fail(format!(
                "n_layers ({}) must be >= 2 and >= control_points ({})",
                self.n_layers, self.control_points
            ));
        }
        if !(self.amplitude_y.is_finite() && self.amplitude_y >= 0.0) {
            return fail(format!("amplitude_y must be >= 0, got {}", self.amplitude_y));
        }
        self.weights.validate()?;
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<SearchGrid, GaError> {
        Ok(SearchGrid::with_scale_range(
            self.n_layers,
            self.y_min,
            self.y_max,
            self.y_step,
        )?)
    }

    /// `amplitude_y` expressed in grid steps.
    pub fn amplitude_y_steps(&self) -> usize {
        (self.amplitude_y / self.y_step + 1e-9).floor() as usize
    }

    /// Size of each generation after the first: `N1 + N2 + top_k`.
    pub fn next_generation_size(&self) -> usize {
        self.mutation_size + self.crossover_size + self.top_k
    }
}
