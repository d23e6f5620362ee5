//! The discretized control-point grid, individuals on it, and search-space size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{BezierCurve, ControlPoint, CurveError};
use crate::fitness::AccuracyTriple;

/// Slack used when deciding grid membership and rounding ties.
const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid needs at least one layer")]
    NoLayers,
    #[error("invalid scale range [{min}, {max}] with step {step}")]
    BadScaleRange { min: f64, max: f64, step: f64 },
    #[error("point ({x}, {y}) lies outside the grid box [0, {x_max}] x [{y_min}, {y_max}]")]
    OutsideBox {
        x: f64,
        y: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    #[error("need at least one control point")]
    NoControlPoints,
    #[error("search space size overflows 128 bits")]
    Overflow,
}

/// Layer coordinates `{0, 1, ..., n-1}` crossed with scale coordinates
/// `{y_min, y_min + step, ..., y_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    n_layers: usize,
    y_min: f64,
    y_max: f64,
    y_step: f64,
}

impl SearchGrid {
    pub const DEFAULT_Y_MIN: f64 = 1.0;
    pub const DEFAULT_Y_MAX: f64 = 2.0;
    pub const DEFAULT_Y_STEP: f64 = 0.1;

    /// The standard grid: scales 1.0..=2.0 in steps of 0.1.
    pub fn new(n_layers: usize) -> Result<Self, GridError> {
        Self::with_scale_range(
            n_layers,
            Self::DEFAULT_Y_MIN,
            Self::DEFAULT_Y_MAX,
            Self::DEFAULT_Y_STEP,
        )
    }

    pub fn with_scale_range(
        n_layers: usize,
        y_min: f64,
        y_max: f64,
        y_step: f64,
    ) -> Result<Self, GridError> {
        if n_layers == 0 {
            return Err(GridError::NoLayers);
        }
        let bad = GridError::BadScaleRange {
            min: y_min,
            max: y_max,
            step: y_step,
        };
        if !(y_min.is_finite() && y_max.is_finite() && y_step.is_finite())
            || y_min < 1.0
            || y_max < y_min
            || y_step <= 0.0
        {
            return Err(bad);
        }
        let span = (y_max - y_min) / y_step;
        if (span - span.round()).abs() > 1e-6 {
            return Err(bad);
        }
        Ok(Self {
            n_layers,
            y_min,
            y_max,
            y_step,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn x_max(&self) -> f64 {
        (self.n_layers - 1) as f64
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn y_step(&self) -> f64 {
        self.y_step
    }

    pub fn x_values(&self) -> Vec<f64> {
        (0..self.n_layers).map(|x| x as f64).collect()
    }

    /// Number of scale levels, e.g. 11 for the default grid.
    pub fn y_count(&self) -> usize {
        ((self.y_max - self.y_min) / self.y_step).round() as usize + 1
    }

    /// Canonical scale value of level `index`.
    ///
    /// Rounded to 12 decimals so that level 1 of the default grid is the
    /// literal `1.1`, not `1.0 + 0.1`.
    pub fn y_value(&self, index: usize) -> f64 {
        let raw = self.y_min + index as f64 * self.y_step;
        (raw * 1e12).round() / 1e12
    }

    pub fn y_values(&self) -> Vec<f64> {
        (0..self.y_count()).map(|k| self.y_value(k)).collect()
    }

    /// Level index of an on-grid scale value, `None` when off-grid.
    pub fn y_index(&self, y: f64) -> Option<usize> {
        let k = (y - self.y_min) / self.y_step;
        let r = k.round();
        if r < 0.0 || r as usize >= self.y_count() {
            return None;
        }
        ((y - self.y_value(r as usize)).abs() <= GRID_EPS).then_some(r as usize)
    }

    /// Layer index of an on-grid x-coordinate.
    pub fn x_index(&self, x: f64) -> Option<usize> {
        let r = x.round();
        (r >= 0.0 && r <= self.x_max() && (x - r).abs() <= GRID_EPS).then_some(r as usize)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= -GRID_EPS
            && x <= self.x_max() + GRID_EPS
            && y >= self.y_min - GRID_EPS
            && y <= self.y_max + GRID_EPS
    }

    /// Nearest grid point, ties broken toward the smaller coordinate.
    pub fn snap(&self, x: f64, y: f64) -> Result<ControlPoint, GridError> {
        if !x.is_finite() || !y.is_finite() || !self.contains(x, y) {
            return Err(GridError::OutsideBox {
                x,
                y,
                x_max: self.x_max(),
                y_min: self.y_min,
                y_max: self.y_max,
            });
        }
        let xi = round_half_down(x).clamp(0.0, self.x_max());
        let yk = round_half_down((y - self.y_min) / self.y_step)
            .clamp(0.0, (self.y_count() - 1) as f64) as usize;
        Ok(ControlPoint::new(xi, self.y_value(yk)))
    }

    /// Grid point from indices.
    pub fn point(&self, x_index: usize, y_index: usize) -> ControlPoint {
        ControlPoint::new(x_index as f64, self.y_value(y_index))
    }

    /// Number of distinct curves with `n_control` control points when every
    /// point ranges freely over the grid: `(|X| * |Y|)^n_control`.
    pub fn space_size(&self, n_control: usize) -> Result<u128, GridError> {
        if n_control == 0 {
            return Err(GridError::NoControlPoints);
        }
        let per_point = (self.n_layers as u128)
            .checked_mul(self.y_count() as u128)
            .ok_or(GridError::Overflow)?;
        checked_pow(per_point, n_control)
    }

    /// Number of per-layer schedules a brute-force search would visit: `|Y|^n_layers`.
    pub fn brute_force_size(&self) -> Result<u128, GridError> {
        checked_pow(self.y_count() as u128, self.n_layers)
    }
}

fn checked_pow(base: u128, exp: usize) -> Result<u128, GridError> {
    let exp = u32::try_from(exp).map_err(|_| GridError::Overflow)?;
    base.checked_pow(exp).ok_or(GridError::Overflow)
}

/// Round to nearest integer with exact (within [`GRID_EPS`]) halves going down.
fn round_half_down(v: f64) -> f64 {
    let floor = v.floor();
    if v - floor > 0.5 + GRID_EPS {
        floor + 1.0
    } else {
        floor
    }
}

/// Fitness attached to an evaluated individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub accuracy: AccuracyTriple,
    pub utilization: f64,
}

/// A candidate curve on the grid.
///
/// The control points are held raw rather than as a [`BezierCurve`] so that
/// a candidate violating the monotone-x rule can still be represented and
/// reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u64,
    #[serde(default)]
    pub parent_ids: Vec<u64>,
    pub points: Vec<ControlPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<FitnessRecord>,
}

impl Individual {
    pub fn new(id: u64, parent_ids: Vec<u64>, points: Vec<ControlPoint>) -> Self {
        Self {
            id,
            parent_ids,
            points,
            fitness: None,
        }
    }

    pub fn curve(&self) -> Result<BezierCurve, CurveError> {
        BezierCurve::new(self.points.clone())
    }

    pub fn utilization(&self) -> Option<f64> {
        self.fitness.as_ref().map(|f| f.utilization)
    }

    /// Identity of the curve on the grid, independent of id and lineage.
    pub fn genome_key(&self, grid: &SearchGrid) -> Vec<(i64, i64)> {
        self.points
            .iter()
            .map(|p| {
                (
                    p.x.round() as i64,
                    ((p.y - grid.y_min) / grid.y_step).round() as i64,
                )
            })
            .collect()
    }
}

/// One broken constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewPoints { count: usize },
    NotIncreasing { index: usize, prev: f64, next: f64 },
    XOutOfBounds { index: usize, x: f64 },
    YOutOfBounds { index: usize, y: f64 },
    OffGrid { index: usize, x: f64, y: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TooFewPoints { count } => write!(f, "only {count} control point(s)"),
            Self::NotIncreasing { index, prev, next } => write!(
                f,
                "x not strictly increasing at point {index} ({prev} -> {next})"
            ),
            Self::XOutOfBounds { index, x } => write!(f, "point {index}: x = {x} out of bounds"),
            Self::YOutOfBounds { index, y } => write!(f, "point {index}: y = {y} out of bounds"),
            Self::OffGrid { index, x, y } => write!(f, "point {index}: ({x}, {y}) is off-grid"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks monotonicity, bounds and grid membership. Never fails; an empty
/// report means the individual is valid.
pub fn validate(ind: &Individual, grid: &SearchGrid) -> ValidityReport {
    validate_points(&ind.points, grid)
}

pub fn validate_points(points: &[ControlPoint], grid: &SearchGrid) -> ValidityReport {
    let mut violations = Vec::new();
    if points.len() < 2 {
        violations.push(Violation::TooFewPoints {
            count: points.len(),
        });
    }
    for (i, w) in points.windows(2).enumerate() {
        if w[1].x.partial_cmp(&w[0].x) != Some(std::cmp::Ordering::Greater) {
            violations.push(Violation::NotIncreasing {
                index: i + 1,
                prev: w[0].x,
                next: w[1].x,
            });
        }
    }
    for (index, p) in points.iter().enumerate() {
        let x_ok = p.x >= 0.0 && p.x <= grid.x_max();
        let y_ok = p.y >= grid.y_min - GRID_EPS && p.y <= grid.y_max + GRID_EPS;
        if !x_ok {
            violations.push(Violation::XOutOfBounds { index, x: p.x });
        }
        if !y_ok {
            violations.push(Violation::YOutOfBounds { index, y: p.y });
        }
        if x_ok && y_ok && (grid.x_index(p.x).is_none() || grid.y_index(p.y).is_none()) {
            violations.push(Violation::OffGrid {
                index,
                x: p.x,
                y: p.y,
            });
        }
    }
    ValidityReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(p: &[(f64, f64)]) -> Vec<ControlPoint> {
        p.iter().copied().map(ControlPoint::from).collect()
    }

    #[test]
    fn default_grid_shape() {
        let g = SearchGrid::new(30).unwrap();
        assert_eq!(g.x_values().len(), 30);
        assert_eq!(
            g.y_values(),
            vec![1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0]
        );
        assert_eq!(g.y_index(1.3), Some(3));
        assert_eq!(g.y_index(1.35), None);
        assert_eq!(g.x_index(4.0), Some(4));
        assert_eq!(g.x_index(30.0), None);
    }

    #[test]
    fn grid_rejects_bad_ranges() {
        assert_eq!(SearchGrid::new(0), Err(GridError::NoLayers));
        assert!(SearchGrid::with_scale_range(4, 0.5, 2.0, 0.1).is_err());
        assert!(SearchGrid::with_scale_range(4, 1.0, 2.05, 0.1).is_err());
        let wide = SearchGrid::with_scale_range(4, 1.0, 3.0, 0.1).unwrap();
        assert_eq!(wide.y_count(), 21);
    }

    #[test]
    fn snap_examples() {
        let g = SearchGrid::new(30).unwrap();
        assert_eq!(g.snap(9.667, 1.5).unwrap(), ControlPoint::new(10.0, 1.5));
        assert_eq!(g.snap(0.0, 1.5).unwrap(), ControlPoint::new(0.0, 1.5));
        assert_eq!(g.snap(14.5, 1.55).unwrap(), ControlPoint::new(14.0, 1.5));
        assert_eq!(g.snap(29.0 / 3.0 * 2.0, 1.5).unwrap().x, 19.0);
        assert!(matches!(g.snap(30.0, 1.5), Err(GridError::OutsideBox { .. })));
        assert!(g.snap(3.0, 0.9).is_err());
    }

    #[test]
    fn validate_examples() {
        let g = SearchGrid::new(30).unwrap();
        let ok = Individual::new(0, vec![], pts(&[(0.0, 1.5), (10.0, 1.5), (19.0, 1.5), (29.0, 1.5)]));
        assert!(validate(&ok, &g).is_valid());

        let dup = Individual::new(1, vec![], pts(&[(0.0, 1.5), (10.0, 1.5), (10.0, 1.6), (29.0, 1.5)]));
        let r = validate(&dup, &g);
        assert_eq!(r.violations.len(), 1);
        assert!(matches!(r.violations[0], Violation::NotIncreasing { index: 2, .. }));

        let low = Individual::new(2, vec![], pts(&[(0.0, 0.9), (10.0, 1.5), (19.0, 1.5), (29.0, 1.5)]));
        let r = validate(&low, &g);
        assert!(matches!(r.violations[..], [Violation::YOutOfBounds { index: 0, .. }]));

        let off = Individual::new(3, vec![], pts(&[(0.0, 1.5), (9.5, 1.55), (29.0, 1.5)]));
        assert_eq!(validate(&off, &g).violations.len(), 1);
    }

    #[test]
    fn space_sizes() {
        let g32 = SearchGrid::new(32).unwrap();
        assert_eq!(g32.space_size(4).unwrap(), 15_352_201_216);
        assert_eq!(g32.space_size(4).unwrap(), 352u128.pow(4));
        assert_eq!(g32.brute_force_size().unwrap(), 11u128.pow(32));
        assert_eq!(SearchGrid::new(1).unwrap().space_size(1).unwrap(), 11);
        assert_eq!(g32.space_size(0), Err(GridError::NoControlPoints));
        assert_eq!(SearchGrid::new(64).unwrap().brute_force_size(), Err(GridError::Overflow));
    }

    #[test]
    fn individual_json_shape() {
        let ind = Individual::new(7, vec![1, 2], pts(&[(0.0, 1.5), (29.0, 2.0)]));
        let text = serde_json::to_string(&ind).unwrap();
        assert_eq!(text, r#"{"id":7,"parent_ids":[1,2],"points":[[0.0,1.5],[29.0,2.0]]}"#);
        let back: Individual = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ind);
    }
}
