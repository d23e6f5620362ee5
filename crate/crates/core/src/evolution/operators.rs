use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curve::{ControlPoint, SamplingMode};
use crate::search_space::{validate_points, Individual, SearchGrid};

use super::{GaConfig, GaError};

/// Monotone id allocator; ids record discovery order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdSource {
    next: u64,
}

impl IdSource {
    pub fn starting_at(next: u64) -> Self {
        Self { next }
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }

    pub fn peek(&self) -> u64 {
        self.next
    }
}

/// Generation-0 population plus the seed as computed before snapping.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialPopulation {
    pub individuals: Vec<Individual>,
    pub seed_unsnapped: Vec<[f64; 2]>,
}

/// Seed individual `((n-1)·i/(c-1), 1.5)` snapped to the grid, followed by
/// `P - 1` distinct mutants of it.
pub fn init_population<R: Rng + ?Sized>(
    config: &GaConfig,
    grid: &SearchGrid,
    rng: &mut R,
    ids: &mut IdSource,
) -> Result<InitialPopulation, GaError> {
    config.validate()?;
    let c = config.control_points;
    let last = (config.n_layers - 1) as f64;
    let seed_y = 1.5_f64.clamp(grid.y_min(), grid.y_max());
    let unsnapped: Vec<[f64; 2]> = (0..c)
        .map(|i| [last * i as f64 / (c - 1) as f64, seed_y])
        .collect();
    let points = unsnapped
        .iter()
        .map(|&[x, y]| grid.snap(x, y))
        .collect::<Result<Vec<_>, _>>()?;
    let seed = Individual::new(ids.next_id(), vec![], points);
    debug_assert!(validate_points(&seed.points, grid).is_valid());

    let mut seen: HashSet<Vec<(i64, i64)>> = HashSet::new();
    seen.insert(seed.genome_key(grid));
    let mut individuals = vec![seed];
    let budget = config.population_size * 20;
    let mut attempts = 0;
    while individuals.len() < config.population_size {
        if attempts >= budget {
            return Err(GaError::Init(format!(
                "only {} distinct individuals after {budget} mutation attempts",
                individuals.len()
            )));
        }
        attempts += 1;
        let points = mutate_points(&individuals[0].points, config, grid, rng);
        let candidate = Individual::new(0, vec![individuals[0].id], points);
        if seen.insert(candidate.genome_key(grid)) {
            individuals.push(Individual {
                id: ids.next_id(),
                ..candidate
            });
        }
    }
    Ok(InitialPopulation {
        individuals,
        seed_unsnapped: unsnapped,
    })
}

/// Mutates each control point with probability `p`.
///
/// A selected point draws a new x uniformly from the integers in
/// `[max(floor, x - N_x), min(ceiling, x + N_x)]`, where floor/ceiling are
/// one past the neighbouring points' x (or the domain edges 0 and n-1), and
/// a new y uniformly from the grid levels within `N_y` of the current one.
/// The result is always valid. In x-resolved sampling mode the end points
/// keep their x so the curve keeps covering every layer.
pub fn mutate<R: Rng + ?Sized>(
    parent: &Individual,
    id: u64,
    config: &GaConfig,
    grid: &SearchGrid,
    rng: &mut R,
) -> Individual {
    Individual::new(
        id,
        vec![parent.id],
        mutate_points(&parent.points, config, grid, rng),
    )
}

pub(crate) fn mutate_points<R: Rng + ?Sized>(
    points: &[ControlPoint],
    config: &GaConfig,
    grid: &SearchGrid,
    rng: &mut R,
) -> Vec<ControlPoint> {
    let mut out = points.to_vec();
    let n = out.len();
    let x_max = grid.n_layers() - 1;
    let y_top = grid.y_count() - 1;
    let ny = config.amplitude_y_steps();
    let pin_ends = config.sampling_mode == SamplingMode::XResolved;
    for i in 0..n {
        if !rng.random_bool(config.mutate_probability.clamp(0.0, 1.0)) {
            continue;
        }
        let x = out[i].x.round() as usize;
        let floor = if i == 0 { 0 } else { out[i - 1].x.round() as usize + 1 };
        let ceiling = if i + 1 == n { x_max } else { out[i + 1].x.round() as usize - 1 };
        let lo = floor.max(x.saturating_sub(config.amplitude_x));
        let hi = ceiling.min(x + config.amplitude_x);
        let new_x = if pin_ends && (i == 0 || i + 1 == n) {
            x
        } else {
            rng.random_range(lo..=hi)
        };

        let yk = grid
            .y_index(out[i].y)
            .unwrap_or_else(|| ((out[i].y - grid.y_min()) / grid.y_step()).round() as usize);
        let new_y = rng.random_range(yk.saturating_sub(ny)..=(yk + ny).min(y_top));
        out[i] = grid.point(new_x, new_y);
    }
    out
}

/// Exchanges the points selected by `mask` between two parents.
pub fn swap_points(
    a: &[ControlPoint],
    b: &[ControlPoint],
    mask: &[bool],
) -> (Vec<ControlPoint>, Vec<ControlPoint>) {
    let mut ca = a.to_vec();
    let mut cb = b.to_vec();
    for (i, &swap) in mask.iter().enumerate().take(a.len().min(b.len())) {
        if swap {
            std::mem::swap(&mut ca[i], &mut cb[i]);
        }
    }
    (ca, cb)
}

/// Result of one crossover request.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverOutcome {
    pub children: Option<(Individual, Individual)>,
    /// Swap attempts made, including the successful one.
    pub attempts: usize,
}

/// Uniform crossover with a validity check and bounded retries.
///
/// Each point index is swapped with probability 0.5. If either child breaks
/// a constraint a fresh parent pair is drawn from `pool` and the swap is
/// retried, up to `2 · N2` attempts in total; after that no children are
/// returned.
pub fn crossover<R: Rng + ?Sized>(
    a: &Individual,
    b: &Individual,
    pool: &[Individual],
    config: &GaConfig,
    grid: &SearchGrid,
    rng: &mut R,
    ids: &mut IdSource,
) -> CrossoverOutcome {
    let max_attempts = (2 * config.crossover_size).max(1);
    let (mut pa, mut pb) = (a, b);
    for attempt in 1..=max_attempts {
        let len = pa.points.len().min(pb.points.len());
        let mask: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
        let (ca, cb) = swap_points(&pa.points, &pb.points, &mask);
        if pa.points.len() == pb.points.len()
            && validate_points(&ca, grid).is_valid()
            && validate_points(&cb, grid).is_valid()
        {
            let parents = vec![pa.id, pb.id];
            let first = Individual::new(ids.next_id(), parents.clone(), ca);
            let second = Individual::new(ids.next_id(), parents, cb);
            return CrossoverOutcome {
                children: Some((first, second)),
                attempts: attempt,
            };
        }
        if attempt < max_attempts && !pool.is_empty() {
            let (i, j) = distinct_pair(pool.len(), rng);
            pa = &pool[i];
            pb = &pool[j];
        }
    }
    CrossoverOutcome {
        children: None,
        attempts: max_attempts,
    }
}

/// Two distinct indices below `len` (the same index twice when `len == 1`).
pub(crate) fn distinct_pair<R: Rng + ?Sized>(len: usize, rng: &mut R) -> (usize, usize) {
    if len < 2 {
        return (0, 0);
    }
    let i = rng.random_range(0..len);
    let mut j = rng.random_range(0..len - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::validate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pts(p: &[(f64, f64)]) -> Vec<ControlPoint> {
        p.iter().copied().map(ControlPoint::from).collect()
    }

    fn config(n_layers: usize) -> GaConfig {
        GaConfig {
            n_layers,
            ..GaConfig::default()
        }
    }

    #[test]
    fn seed_for_thirty_layers() {
        let cfg = config(30);
        let grid = cfg.grid().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ids = IdSource::starting_at(0);
        let pop = init_population(&cfg, &grid, &mut rng, &mut ids).unwrap();
        assert_eq!(
            pop.individuals[0].points,
            pts(&[(0.0, 1.5), (10.0, 1.5), (19.0, 1.5), (29.0, 1.5)])
        );
        assert!((pop.seed_unsnapped[1][0] - 29.0 / 3.0).abs() < 1e-12);
        assert_eq!(pop.individuals.len(), 32);
        assert!(pop.individuals.iter().all(|i| validate(i, &grid).is_valid()));
        let keys: HashSet<_> = pop.individuals.iter().map(|i| i.genome_key(&grid)).collect();
        assert_eq!(keys.len(), 32);
    }

    #[test]
    fn seed_for_four_layers_and_small_population() {
        let cfg = GaConfig {
            n_layers: 4,
            population_size: 8,
            top_k: 4,
            ..GaConfig::default()
        };
        let grid = cfg.grid().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pop = init_population(&cfg, &grid, &mut rng, &mut IdSource::starting_at(0)).unwrap();
        assert_eq!(
            pop.individuals[0].points,
            pts(&[(0.0, 1.5), (1.0, 1.5), (2.0, 1.5), (3.0, 1.5)])
        );
        assert_eq!(pop.individuals.len(), 8);
        assert_eq!(pop.individuals[0].id, 0);
        assert!(pop.individuals[1..].iter().all(|i| i.parent_ids == vec![0]));
    }

    #[test]
    fn init_fails_when_space_is_exhausted() {
        // Two layers, two points, one scale level: only the seed exists.
        let cfg = GaConfig {
            n_layers: 2,
            control_points: 2,
            population_size: 2,
            top_k: 1,
            y_min: 1.5,
            y_max: 1.5,
            ..GaConfig::default()
        };
        let grid = cfg.grid().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = init_population(&cfg, &grid, &mut rng, &mut IdSource::starting_at(0));
        assert!(matches!(err, Err(GaError::Init(_))));
    }

    #[test]
    fn zero_probability_is_identity() {
        let cfg = GaConfig {
            mutate_probability: 0.0,
            ..config(30)
        };
        let grid = cfg.grid().unwrap();
        let parent = Individual::new(5, vec![], pts(&[(0.0, 1.5), (10.0, 1.2), (19.0, 1.9), (29.0, 1.5)]));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let child = mutate(&parent, 6, &cfg, &grid, &mut rng);
        assert_eq!(child.points, parent.points);
        assert_eq!(child.parent_ids, vec![5]);
    }

    #[test]
    fn first_point_range_enumeration() {
        // Enumerated bound: x in [max(0, 0-3), min(10-1, 0+3)] = {0,1,2,3}.
        let cfg = GaConfig {
            mutate_probability: 1.0,
            ..config(30)
        };
        let grid = cfg.grid().unwrap();
        let parent = Individual::new(0, vec![], pts(&[(0.0, 1.5), (10.0, 1.5), (19.0, 1.5), (29.0, 1.5)]));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = HashSet::new();
        for _ in 0..2000 {
            let child = mutate(&parent, 1, &cfg, &grid, &mut rng);
            seen.insert(child.points[0].x as i64);
            assert!((1.2 - 1e-9..=1.8 + 1e-9).contains(&child.points[0].y));
        }
        let expected: HashSet<i64> = [0, 1, 2, 3].into_iter().collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn x_resolved_pins_end_points() {
        let cfg = GaConfig {
            mutate_probability: 1.0,
            sampling_mode: SamplingMode::XResolved,
            ..config(30)
        };
        let grid = cfg.grid().unwrap();
        let parent = Individual::new(0, vec![], pts(&[(0.0, 1.5), (10.0, 1.5), (19.0, 1.5), (29.0, 1.5)]));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let c = mutate(&parent, 1, &cfg, &grid, &mut rng);
            assert_eq!(c.points[0].x, 0.0);
            assert_eq!(c.points[3].x, 29.0);
        }
    }

    #[test]
    fn crossover_of_identical_parents() {
        let cfg = config(30);
        let grid = cfg.grid().unwrap();
        let a = Individual::new(1, vec![], pts(&[(0.0, 1.5), (10.0, 1.5), (19.0, 1.5), (29.0, 1.5)]));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ids = IdSource::starting_at(10);
        let out = crossover(&a, &a, &[], &cfg, &grid, &mut rng, &mut ids);
        let (c1, c2) = out.children.unwrap();
        assert_eq!(out.attempts, 1);
        assert_eq!(c1.points, a.points);
        assert_eq!(c2.points, a.points);
        assert_eq!((c1.id, c2.id), (10, 11));
    }

    #[test]
    fn swap_examples() {
        let grid = SearchGrid::new(30).unwrap();
        let a = pts(&[(0.0, 1.0), (5.0, 1.2), (19.0, 1.5), (29.0, 1.5)]);
        let b = pts(&[(0.0, 1.5), (10.0, 1.5), (12.0, 1.1), (29.0, 2.0)]);
        let (ca, cb) = swap_points(&a, &b, &[false, true, false, false]);
        assert_eq!(ca, pts(&[(0.0, 1.0), (10.0, 1.5), (19.0, 1.5), (29.0, 1.5)]));
        assert_eq!(cb, pts(&[(0.0, 1.5), (5.0, 1.2), (12.0, 1.1), (29.0, 2.0)]));
        assert!(validate_points(&ca, &grid).is_valid());
        assert!(validate_points(&cb, &grid).is_valid());

        let c = pts(&[(0.0, 1.0), (12.0, 1.2), (19.0, 1.5), (29.0, 1.5)]);
        let (bad, _) = swap_points(&c, &b, &[false, false, true, false]);
        assert_eq!(bad.iter().map(|p| p.x).collect::<Vec<_>>(), vec![0.0, 12.0, 12.0, 29.0]);
        assert!(!validate_points(&bad, &grid).is_valid());
    }

    #[test]
    fn crossover_gives_up_after_bounded_retries() {
        // Parents of different length never produce a valid pair.
        let cfg = GaConfig {
            crossover_size: 3,
            ..config(30)
        };
        let grid = cfg.grid().unwrap();
        let a = Individual::new(1, vec![], pts(&[(0.0, 1.5), (29.0, 1.5)]));
        let b = Individual::new(2, vec![], pts(&[(0.0, 1.5), (10.0, 1.5), (29.0, 1.5)]));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ids = IdSource::starting_at(0);
        let out = crossover(&a, &b, &[a.clone(), b.clone()], &cfg, &grid, &mut rng, &mut ids);
        assert!(out.children.is_none());
        assert_eq!(out.attempts, 6);
        assert_eq!(ids.peek(), 0);
    }

    #[test]
    fn distinct_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let (i, j) = distinct_pair(5, &mut rng);
            assert!(i != j && i < 5 && j < 5);
        }
        assert_eq!(distinct_pair(1, &mut rng), (0, 0));
    }
}
