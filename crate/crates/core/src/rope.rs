//! Rotary position embedding numerics with position-interpolation scaling.
//!
//! Pairs `(v[2j], v[2j+1])` are rotated by `(m / scale) * theta_j` with
//! `theta_j = base^(-2j/d)`. Positions are divided by the scale as reals,
//! never rounded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{CurveError, ScaleSchedule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RopeError {
    #[error("head dimension must be even and >= 2, got {0}")]
    HeadDim(usize),
    #[error("base must be > 1, got {0}")]
    Base(f64),
    #[error("scale must be finite and >= 1, got {0}")]
    Scale(f64),
    #[error("vector length {got} does not match head dimension {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("entropy needs non-negative weights with a positive sum")]
    EntropyWeights,
    #[error("target window {target} is smaller than pretrained window {pretrained}")]
    WindowShrinks { pretrained: f64, target: f64 },
    #[error("peak layer {peak} is outside 0..{n_layers}")]
    PeakLayer { peak: usize, n_layers: usize },
    #[error("interval must be finite and >= 0, got {0}")]
    Interval(f64),
    #[error("NTK base scaling needs head_dim > 2, got {0}")]
    NtkHeadDim(usize),
    #[error("NTK factor must be >= 1, got {0}")]
    NtkFactor(f64),
    #[error("max distance must be >= 1")]
    MaxDistance,
    #[error(transparent)]
    Schedule(#[from] CurveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotaryConfig {
    pub head_dim: usize,
    pub base: f64,
    pub scale: f64,
}

impl Default for RotaryConfig {
    fn default() -> Self {
        Self {
            head_dim: 64,
            base: 10_000.0,
            scale: 1.0,
        }
    }
}

impl RotaryConfig {
    pub fn new(head_dim: usize, base: f64, scale: f64) -> Result<Self, RopeError> {
        let c = Self {
            head_dim,
            base,
            scale,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), RopeError> {
        if self.head_dim < 2 || !self.head_dim.is_multiple_of(2) {
            return Err(RopeError::HeadDim(self.head_dim));
        }
        if !(self.base.is_finite() && self.base > 1.0) {
            return Err(RopeError::Base(self.base));
        }
        if !(self.scale.is_finite() && self.scale >= 1.0) {
            return Err(RopeError::Scale(self.scale));
        }
        Ok(())
    }

    pub fn with_scale(self, scale: f64) -> Self {
        Self { scale, ..self }
    }

    /// `theta_j = base^(-2j/d)` for `j = 0..d/2`.
    pub fn frequencies(&self) -> Vec<f64> {
        frequencies(self.head_dim, self.base)
    }
}

pub fn frequencies(head_dim: usize, base: f64) -> Vec<f64> {
    (0..head_dim / 2)
        .map(|j| base.powf(-2.0 * j as f64 / head_dim as f64))
        .collect()
}

/// Rotates `v` as if it sat at position `position`.
pub fn rotate(v: &[f64], position: i64, config: &RotaryConfig) -> Result<Vec<f64>, RopeError> {
    config.validate()?;
    check_len(v, config.head_dim)?;
    let mut out = v.to_vec();
    rotate_in_place(&mut out, position as f64 / config.scale, &config.frequencies());
    Ok(out)
}

/// Rotates consecutive pairs of `v` by `effective_position * theta_j`.
pub(crate) fn rotate_in_place(v: &mut [f64], effective_position: f64, thetas: &[f64]) {
    for (j, theta) in thetas.iter().enumerate() {
        let (sin, cos) = (effective_position * theta).sin_cos();
        let (a, b) = (v[2 * j], v[2 * j + 1]);
        v[2 * j] = a * cos - b * sin;
        v[2 * j + 1] = a * sin + b * cos;
    }
}

fn check_len(v: &[f64], expected: usize) -> Result<(), RopeError> {
    if v.len() != expected {
        return Err(RopeError::LengthMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product of `q` rotated to position `m` with `k` rotated to `n`.
pub fn attention_score(
    q: &[f64],
    k: &[f64],
    m: i64,
    n: i64,
    config: &RotaryConfig,
) -> Result<f64, RopeError> {
    check_len(k, config.head_dim)?;
    let rq = rotate(q, m, config)?;
    let rk = rotate(k, n, config)?;
    Ok(dot(&rq, &rk))
}

/// Probe vector used for decay curves.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    AllOnes,
    Fixed(Vec<f64>),
}

impl Probe {
    fn vector(&self, head_dim: usize) -> Result<Vec<f64>, RopeError> {
        match self {
            Self::AllOnes => Ok(vec![1.0; head_dim]),
            Self::Fixed(v) => {
                check_len(v, head_dim)?;
                Ok(v.clone())
            }
        }
    }
}

/// Attention score of a probe against itself as a function of relative distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub config: RotaryConfig,
    pub distances: Vec<u64>,
    pub scores: Vec<f64>,
    /// Tail maximum: the largest score reachable at any distance `>= d`
    /// within the effective window `scale * max_distance`.
    pub envelope: Vec<f64>,
}

impl DecayCurve {
    /// Trailing running max over `window` samples, for plotting the raw oscillation.
    pub fn running_max(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        (0..self.scores.len())
            .map(|i| {
                self.scores[i.saturating_sub(w - 1)..=i]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

/// Scores at distances `0..=max_distance`, plus the decay envelope.
///
/// The envelope at distance `d` is `max score(d')` over `d <= d' <= H`, with
/// horizon `H = ceil(scale * max_distance)`. Scaling by `s` compresses the
/// positional range, so a scaled curve looks `s` times further ahead to
/// cover the same span of interpolated positions.
pub fn decay_curve(
    probe: &Probe,
    config: &RotaryConfig,
    max_distance: u64,
) -> Result<DecayCurve, RopeError> {
    config.validate()?;
    if max_distance < 1 {
        return Err(RopeError::MaxDistance);
    }
    let v = probe.vector(config.head_dim)?;
    let thetas = config.frequencies();
    let score_at = |d: u64| {
        let mut rq = v.clone();
        rotate_in_place(&mut rq, d as f64 / config.scale, &thetas);
        dot(&rq, &v)
    };
    let horizon = ((config.scale * max_distance as f64).ceil() as u64).max(max_distance);
    let all: Vec<f64> = (0..=horizon).map(score_at).collect();
    let mut tail = all.clone();
    for i in (0..tail.len() - 1).rev() {
        tail[i] = tail[i].max(tail[i + 1]);
    }
    let n = max_distance as usize + 1;
    Ok(DecayCurve {
        config: *config,
        distances: (0..=max_distance).collect(),
        scores: all[..n].to_vec(),
        envelope: tail[..n].to_vec(),
    })
}

/// Shannon entropy in nats of the normalized weights; `0 ln 0 = 0`.
///
/// Equal positive weights (one-hot included) give exactly `ln k`; otherwise
/// computed as `ln S - (Σ w ln w) / S`, clamped to `[0, ln(len)]`.
pub fn entropy(weights: &[f64]) -> Result<f64, RopeError> {
    if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(RopeError::EntropyWeights);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(RopeError::EntropyWeights);
    }
    let positive: Vec<f64> = weights.iter().copied().filter(|w| *w > 0.0).collect();
    if positive.iter().all(|w| *w == positive[0]) {
        return Ok((positive.len() as f64).ln());
    }
    let weighted_log: f64 = weights
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| w * w.ln())
        .sum();
    let h = total.ln() - weighted_log / total;
    Ok(h.clamp(0.0, (weights.len() as f64).ln()))
}

/// Extrapolation scale `L' / L`.
pub fn extrapolation_factor(pretrained: f64, target: f64) -> Result<f64, RopeError> {
    if !(pretrained > 0.0 && target.is_finite()) || target < pretrained {
        return Err(RopeError::WindowShrinks { pretrained, target });
    }
    Ok(target / pretrained)
}

pub fn default_peak_layer(n_layers: usize) -> usize {
    n_layers / 2
}

/// Triangle schedule: `s` at layer 0, rising linearly to `s + interval` at
/// `peak_layer`, falling linearly back to `s` at the last layer, where
/// `s = target / pretrained`.
pub fn extrapolation_schedule(
    n_layers: usize,
    pretrained: f64,
    target: f64,
    interval: f64,
    peak_layer: usize,
) -> Result<ScaleSchedule, RopeError> {
    let s = extrapolation_factor(pretrained, target)?;
    if !(interval.is_finite() && interval >= 0.0) {
        return Err(RopeError::Interval(interval));
    }
    if peak_layer >= n_layers {
        return Err(RopeError::PeakLayer {
            peak: peak_layer,
            n_layers,
        });
    }
    let last = n_layers - 1;
    let scales = (0..n_layers)
        .map(|k| {
            let frac = if k == peak_layer {
                1.0
            } else if k < peak_layer {
                k as f64 / peak_layer as f64
            } else {
                (last - k) as f64 / (last - peak_layer) as f64
            };
            s + interval * frac
        })
        .collect();
    Ok(ScaleSchedule::new(scales, 0)?)
}

/// NTK-aware base rescaling `base * factor^(d / (d - 2))`.
pub fn ntk_base(config: &RotaryConfig, factor: f64) -> Result<f64, RopeError> {
    if config.head_dim <= 2 {
        return Err(RopeError::NtkHeadDim(config.head_dim));
    }
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(RopeError::NtkFactor(factor));
    }
    let d = config.head_dim as f64;
    Ok(config.base * factor.powf(d / (d - 2.0)))
}
