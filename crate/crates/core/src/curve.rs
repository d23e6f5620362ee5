//! Bézier curves over (layer, scale) control points and their conversion
//! into per-layer scale schedules.
//!
//! A curve is evaluated in Bernstein form ([`BezierCurve::evaluate`]) and,
//! independently, by repeated linear interpolation
//! ([`BezierCurve::de_casteljau`]). The two routes must agree to within
//! 1e-12 relative error; the test suites use the second as an oracle for the
//! first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on |x(t) - target| when inverting the x-component.
pub const SOLVE_X_TOLERANCE: f64 = 1e-9;
/// Bisection iteration cap for [`BezierCurve::solve_t_for_x`].
pub const SOLVE_X_MAX_ITERATIONS: usize = 80;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("parameter t = {0} is outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("basis index {index} is outside 0..={degree}")]
    BasisIndexOutOfRange { index: usize, degree: usize },
    #[error("a curve needs at least 2 control points, got {0}")]
    TooFewPoints(usize),
    #[error("control point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("control point x-coordinates must be strictly increasing (point {index}: {prev} -> {next})")]
    NotIncreasing { index: usize, prev: f64, next: f64 },
    #[error("x = {target} is not covered by the curve span [{lo}, {hi}]")]
    Coverage { target: f64, lo: f64, hi: f64 },
    #[error("need at least 2 layers to sample a schedule, got {0}")]
    TooFewLayers(usize),
    #[error("scale schedule must not be empty")]
    EmptySchedule,
    #[error("scale at layer {index} is {value}, must be finite and >= 1")]
    ScaleBelowOne { index: usize, value: f64 },
}

/// A control point in (layer, scale) space.
///
/// Serialized as a two-element JSON array `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ControlPoint {
    pub x: f64,
    pub y: f64,
}

impl ControlPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<[f64; 2]> for ControlPoint {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<ControlPoint> for [f64; 2] {
    fn from(p: ControlPoint) -> Self {
        [p.x, p.y]
    }
}

impl From<(f64, f64)> for ControlPoint {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// Bernstein basis polynomial `C(n, i) (1 - t)^(n - i) t^i`.
pub fn bernstein_weight(index: usize, degree: usize, t: f64) -> Result<f64, CurveError> {
    if index > degree {
        return Err(CurveError::BasisIndexOutOfRange { index, degree });
    }
    check_parameter(t)?;
    Ok(bernstein_unchecked(index, degree, t))
}

fn bernstein_unchecked(index: usize, degree: usize, t: f64) -> f64 {
    binomial(degree, index) * (1.0 - t).powi((degree - index) as i32) * t.powi(index as i32)
}

/// Binomial coefficient as a float; exact for every degree a curve will plausibly use.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for j in 0..k {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    acc.round()
}

fn check_parameter(t: f64) -> Result<(), CurveError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(CurveError::ParameterOutOfRange(t))
    }
}

/// A Bézier curve whose control-point x-coordinates are strictly increasing.
///
/// The monotone-x constraint makes x(t) itself monotone, so every layer
/// coordinate in the curve's span maps back to exactly one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ControlPoint>", into = "Vec<ControlPoint>")]
pub struct BezierCurve {
    points: Vec<ControlPoint>,
}

impl TryFrom<Vec<ControlPoint>> for BezierCurve {
    type Error = CurveError;

    fn try_from(points: Vec<ControlPoint>) -> Result<Self, Self::Error> {
        Self::new(points)
    }
}

impl From<BezierCurve> for Vec<ControlPoint> {
    fn from(curve: BezierCurve) -> Self {
        curve.points
    }
}

impl BezierCurve {
    pub fn new(points: Vec<ControlPoint>) -> Result<Self, CurveError> {
        if points.len() < 2 {
            return Err(CurveError::TooFewPoints(points.len()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(CurveError::NonFinite(i));
            }
        }
        for (i, w) in points.windows(2).enumerate() {
            if w[1].x <= w[0].x {
                return Err(CurveError::NotIncreasing {
                    index: i + 1,
                    prev: w[0].x,
                    next: w[1].x,
                });
            }
        }
        Ok(Self { points })
    }

    /// Convenience constructor from `(x, y)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, CurveError> {
        Self::new(pairs.iter().copied().map(ControlPoint::from).collect())
    }

    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }

    pub fn degree(&self) -> usize {
        self.points.len() - 1
    }

    /// Bernstein-form evaluation `B(t) = Σ b_{i,n}(t) P_i`.
    pub fn evaluate(&self, t: f64) -> Result<ControlPoint, CurveError> {
        check_parameter(t)?;
        Ok(self.evaluate_unchecked(t))
    }

    fn evaluate_unchecked(&self, t: f64) -> ControlPoint {
        let n = self.degree();
        let (mut x, mut y) = (0.0, 0.0);
        for (i, p) in self.points.iter().enumerate() {
            let w = bernstein_unchecked(i, n, t);
            x += w * p.x;
            y += w * p.y;
        }
        ControlPoint { x, y }
    }

    /// Evaluation by repeated linear interpolation of the control polygon.
    pub fn de_casteljau(&self, t: f64) -> Result<ControlPoint, CurveError> {
        check_parameter(t)?;
        let mut work: Vec<ControlPoint> = self.points.clone();
        for level in (1..work.len()).rev() {
            for i in 0..level {
                let (a, b) = (work[i], work[i + 1]);
                work[i] = ControlPoint {
                    x: (1.0 - t) * a.x + t * b.x,
                    y: (1.0 - t) * a.y + t * b.y,
                };
            }
        }
        Ok(work[0])
    }

    /// Span of the x-component, `[x(0), x(1)]`.
    pub fn x_span(&self) -> (f64, f64) {
        (self.points[0].x, self.points[self.points.len() - 1].x)
    }

    /// Finds the parameter `t` with `x(t) = x_target` by bisection.
    pub fn solve_t_for_x(&self, x_target: f64) -> Result<f64, CurveError> {
        let (lo_x, hi_x) = self.x_span();
        if !(lo_x..=hi_x).contains(&x_target) {
            return Err(CurveError::Coverage {
                target: x_target,
                lo: lo_x,
                hi: hi_x,
            });
        }
        if x_target == lo_x {
            return Ok(0.0);
        }
        if x_target == hi_x {
            return Ok(1.0);
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut mid = 0.5;
        for _ in 0..SOLVE_X_MAX_ITERATIONS {
            mid = 0.5 * (lo + hi);
            let x = self.evaluate_unchecked(mid).x;
            if (x - x_target).abs() <= SOLVE_X_TOLERANCE {
                return Ok(mid);
            }
            if x < x_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(mid)
    }

    /// Samples one scale per layer; see [`SamplingMode`] for the two readings
    /// of "divide t into equal intervals".
    pub fn sample_layer_scales(
        &self,
        n_layers: usize,
        mode: SamplingMode,
    ) -> Result<SampledSchedule, CurveError> {
        if n_layers < 2 {
            return Err(CurveError::TooFewLayers(n_layers));
        }
        let last = (n_layers - 1) as f64;
        let raw: Vec<f64> = match mode {
            SamplingMode::UniformT => (0..n_layers)
                .map(|k| self.evaluate_unchecked(k as f64 / last).y)
                .collect(),
            SamplingMode::XResolved => {
                let (lo, hi) = self.x_span();
                if lo > 0.0 {
                    return Err(CurveError::Coverage { target: 0.0, lo, hi });
                }
                if hi < last {
                    return Err(CurveError::Coverage { target: last, lo, hi });
                }
                let mut out = Vec::with_capacity(n_layers);
                for k in 0..n_layers {
                    let t = self.solve_t_for_x(k as f64)?;
                    out.push(self.evaluate_unchecked(t).y);
                }
                out
            }
        };
        let mut clamped = Vec::new();
        let scales = raw
            .into_iter()
            .enumerate()
            .map(|(k, s)| {
                if s < 1.0 {
                    clamped.push(k);
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(SampledSchedule {
            schedule: ScaleSchedule::new(scales, 0)?,
            clamped_layers: clamped,
        })
    }
}

/// How layer slots map onto the curve parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Slot `k` reads the y-component at `t = k / (n - 1)`.
    #[default]
    UniformT,
    /// Layer `k` reads the y-component where the x-component equals `k`.
    XResolved,
}

impl std::str::FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform_t" | "uniform-t" => Ok(Self::UniformT),
            "x_resolved" | "x-resolved" => Ok(Self::XResolved),
            other => Err(format!("unknown sampling mode `{other}` (uniform_t | x_resolved)")),
        }
    }
}

/// Per-layer positional scale factors, all `>= 1`.
///
/// `scales[k]` applies to model layer `first_scaled_layer + k`; layers
/// outside that range run unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct ScaleSchedule {
    scales: Vec<f64>,
    first_scaled_layer: usize,
}

#[derive(Deserialize)]
struct RawSchedule {
    scales: Vec<f64>,
    #[serde(default)]
    first_scaled_layer: usize,
}

impl TryFrom<RawSchedule> for ScaleSchedule {
    type Error = CurveError;

    fn try_from(raw: RawSchedule) -> Result<Self, Self::Error> {
        Self::new(raw.scales, raw.first_scaled_layer)
    }
}

impl ScaleSchedule {
    pub fn new(scales: Vec<f64>, first_scaled_layer: usize) -> Result<Self, CurveError> {
        if scales.is_empty() {
            return Err(CurveError::EmptySchedule);
        }
        if let Some((index, &value)) = scales
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || **s < 1.0)
        {
            return Err(CurveError::ScaleBelowOne { index, value });
        }
        Ok(Self {
            scales,
            first_scaled_layer,
        })
    }

    /// The same scale on `n_layers` layers.
    pub fn uniform(n_layers: usize, scale: f64) -> Result<Self, CurveError> {
        Self::new(vec![scale; n_layers], 0)
    }

    pub fn with_first_scaled_layer(mut self, first: usize) -> Self {
        self.first_scaled_layer = first;
        self
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn first_scaled_layer(&self) -> usize {
        self.first_scaled_layer
    }

    /// Scale for absolute model layer `layer`; 1.0 outside the scaled range.
    pub fn scale_for_layer(&self, layer: usize) -> f64 {
        layer
            .checked_sub(self.first_scaled_layer)
            .and_then(|k| self.scales.get(k).copied())
            .unwrap_or(1.0)
    }

    pub fn mean(&self) -> f64 {
        self.scales.iter().sum::<f64>() / self.scales.len() as f64
    }

    /// Mean absolute per-layer difference; `None` when lengths differ.
    pub fn mean_abs_diff(&self, other: &ScaleSchedule) -> Option<f64> {
        (self.len() == other.len()).then(|| {
            self.scales
                .iter()
                .zip(&other.scales)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / self.len() as f64
        })
    }
}

/// A sampled schedule plus the layers whose raw value fell below 1 and were clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSchedule {
    pub schedule: ScaleSchedule,
    pub clamped_layers: Vec<usize>,
}

impl SampledSchedule {
    pub fn was_clamped(&self) -> bool {
        !self.clamped_layers.is_empty()
    }
}
