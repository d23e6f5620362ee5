use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::ScaleSchedule;
use crate::fitness::{AccuracyTriple, EvalError, Evaluator};
use crate::search_space::{validate, FitnessRecord, Individual, SearchGrid};

use super::operators::{crossover, distinct_pair, init_population, mutate, IdSource};
use super::{utilization, GaConfig, GaError};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Summary of one evaluated generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_utilization: f64,
    pub mean_utilization: f64,
    pub best_id: u64,
    pub population_size: usize,
    /// Evaluator calls made for this generation (cache misses).
    pub new_evaluations: u64,
    /// Evaluator calls made so far in the run.
    pub total_evaluations: u64,
    /// Crossover swap attempts spent building the next generation.
    pub crossover_attempts: usize,
    /// Crossover requests that ran out of retries.
    pub crossover_failures: usize,
}

/// One memoized evaluation, keyed by the schedule rounded to grid steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: Vec<i64>,
    pub accuracy: AccuracyTriple,
}

/// Resumable search state: the population of `generation`, not yet evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub generation: usize,
    pub config: GaConfig,
    pub rng_state: ChaCha8Rng,
    pub next_id: u64,
    pub population: Vec<Individual>,
    pub top_k: Vec<Individual>,
    pub history: Vec<GenerationRecord>,
    pub cache: Vec<CacheEntry>,
    pub evaluations: u64,
    pub seed_unsnapped: Vec<[f64; 2]>,
    /// Caller-owned metadata carried through resumes untouched.
    #[serde(default)]
    pub context: serde_json::Value,
}

/// Outcome of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Highest-utilization individual seen; absent only if generation 0 failed.
    pub best: Option<Individual>,
    pub best_schedule: Option<ScaleSchedule>,
    pub top_k: Vec<Individual>,
    pub history: Vec<GenerationRecord>,
    pub config: GaConfig,
    pub evaluations: u64,
    pub seed_unsnapped: Vec<[f64; 2]>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub wall_time_secs: f64,
}

impl SearchResult {
    pub fn best_utilization(&self) -> Option<f64> {
        self.best.as_ref().and_then(Individual::utilization)
    }

    /// JSON with wall time zeroed, for byte-level reproducibility checks.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.wall_time_secs = 0.0;
        serde_json::to_string_pretty(&copy).expect("result serializes")
    }
}

struct State {
    config: GaConfig,
    grid: SearchGrid,
    generation: usize,
    rng: ChaCha8Rng,
    ids: IdSource,
    population: Vec<Individual>,
    top_k: Vec<Individual>,
    history: Vec<GenerationRecord>,
    cache: BTreeMap<Vec<i64>, AccuracyTriple>,
    evaluations: u64,
    seed_unsnapped: Vec<[f64; 2]>,
    context: serde_json::Value,
}

impl State {
    fn fresh(config: &GaConfig, context: serde_json::Value) -> Result<Self, GaError> {
        config.validate()?;
        let grid = config.grid()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let mut ids = IdSource::starting_at(0);
        let init = init_population(config, &grid, &mut rng, &mut ids)?;
        Ok(Self {
            config: config.clone(),
            grid,
            generation: 0,
            rng,
            ids,
            population: init.individuals,
            top_k: Vec::new(),
            history: Vec::new(),
            cache: BTreeMap::new(),
            evaluations: 0,
            seed_unsnapped: init.seed_unsnapped,
            context,
        })
    }

    fn from_checkpoint(cp: Checkpoint) -> Result<Self, GaError> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(GaError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                cp.version
            )));
        }
        cp.config.validate()?;
        let grid = cp.config.grid()?;
        for ind in cp.population.iter().chain(&cp.top_k) {
            let report = validate(ind, &grid);
            if !report.is_valid() {
                return Err(GaError::Checkpoint(format!(
                    "individual {} is invalid: {}",
                    ind.id, report.violations[0]
                )));
            }
        }
        Ok(Self {
            grid,
            generation: cp.generation,
            rng: cp.rng_state,
            ids: IdSource::starting_at(cp.next_id),
            population: cp.population,
            top_k: cp.top_k,
            history: cp.history,
            cache: cp.cache.into_iter().map(|e| (e.key, e.accuracy)).collect(),
            evaluations: cp.evaluations,
            seed_unsnapped: cp.seed_unsnapped,
            context: cp.context,
            config: cp.config,
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            generation: self.generation,
            config: self.config.clone(),
            rng_state: self.rng.clone(),
            next_id: self.ids.peek(),
            population: self.population.clone(),
            top_k: self.top_k.clone(),
            history: self.history.clone(),
            cache: self
                .cache
                .iter()
                .map(|(k, v)| CacheEntry {
                    key: k.clone(),
                    accuracy: *v,
                })
                .collect(),
            evaluations: self.evaluations,
            seed_unsnapped: self.seed_unsnapped.clone(),
            context: self.context.clone(),
        }
    }

    fn schedule_of(&self, ind: &Individual) -> Result<ScaleSchedule, GaError> {
        let sampled = ind
            .curve()?
            .sample_layer_scales(self.config.n_layers, self.config.sampling_mode)?;
        Ok(sampled
            .schedule
            .with_first_scaled_layer(self.config.first_scaled_layer))
    }

    fn cache_key(&self, schedule: &ScaleSchedule) -> Vec<i64> {
        schedule
            .scales()
            .iter()
            .map(|s| (s / self.config.y_step).round() as i64)
            .collect()
    }

    /// Scores every unscored individual, calling the evaluator once per
    /// distinct cache key. Returns the number of evaluator calls.
    fn evaluate_population<E: Evaluator + ?Sized>(
        &mut self,
        evaluator: &E,
        jobs: usize,
    ) -> Result<u64, (GaError, Option<EvalError>)> {
        let mut pending: Vec<(usize, Vec<i64>, ScaleSchedule)> = Vec::new();
        for (i, ind) in self.population.iter().enumerate() {
            if ind.fitness.is_none() {
                let schedule = self.schedule_of(ind).map_err(|e| (e, None))?;
                pending.push((i, self.cache_key(&schedule), schedule));
            }
        }
        let mut seen = HashSet::new();
        let to_run: Vec<(&Vec<i64>, &ScaleSchedule)> = pending
            .iter()
            .filter(|(_, key, _)| !self.cache.contains_key(key) && seen.insert(key.clone()))
            .map(|(_, key, schedule)| (key, schedule))
            .collect();

        let retries = self.config.eval_retries;
        let call = |schedule: &ScaleSchedule| evaluate_with_retries(evaluator, schedule, retries);
        let results: Vec<Result<AccuracyTriple, EvalError>> = if jobs > 1 && to_run.len() > 1 {
            match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                Ok(pool) => pool.install(|| to_run.par_iter().map(|(_, s)| call(s)).collect()),
                Err(_) => to_run.iter().map(|(_, s)| call(s)).collect(),
            }
        } else {
            to_run.iter().map(|(_, s)| call(s)).collect()
        };

        let mut calls = 0;
        let mut fresh = Vec::with_capacity(results.len());
        for ((key, _), result) in to_run.iter().zip(results) {
            match result {
                Ok(triple) => fresh.push(((*key).clone(), triple)),
                Err(e) => {
                    // Successful calls of this generation still count and are cached.
                    let n = fresh.len() as u64;
                    self.evaluations += n;
                    self.cache.extend(fresh);
                    return Err((GaError::Config(e.to_string()), Some(e)));
                }
            }
            calls += 1;
        }
        self.cache.extend(fresh);
        self.evaluations += calls;

        for (i, key, _) in pending {
            let accuracy = self.cache[&key];
            let u = utilization(&accuracy, &self.config.weights).map_err(|e| (e, None))?;
            self.population[i].fitness = Some(FitnessRecord {
                accuracy,
                utilization: u,
            });
        }
        Ok(calls)
    }

    fn update_top_k(&mut self) {
        let mut candidates: Vec<Individual> = self
            .top_k
            .iter()
            .chain(self.population.iter())
            .filter(|i| i.fitness.is_some())
            .cloned()
            .collect();
        candidates.sort_by(|a, b| {
            let (ua, ub) = (a.utilization().unwrap(), b.utilization().unwrap());
            ub.total_cmp(&ua).then(a.id.cmp(&b.id))
        });
        let mut ids = HashSet::new();
        let mut genomes = HashSet::new();
        self.top_k = candidates
            .into_iter()
            .filter(|i| ids.insert(i.id) && genomes.insert(i.genome_key(&self.grid)))
            .take(self.config.top_k)
            .collect();
    }

    fn record(&mut self, new_evaluations: u64) {
        let best = &self.top_k[0];
        let utils: Vec<f64> = self
            .population
            .iter()
            .filter_map(Individual::utilization)
            .collect();
        let mean = utils.iter().sum::<f64>() / utils.len().max(1) as f64;
        self.history.push(GenerationRecord {
            generation: self.generation,
            best_utilization: best.utilization().unwrap(),
            mean_utilization: mean,
            best_id: best.id,
            population_size: self.population.len(),
            new_evaluations,
            total_evaluations: self.evaluations,
            crossover_attempts: 0,
            crossover_failures: 0,
        });
    }

    fn breed(&mut self) {
        let cfg = self.config.clone();
        let mut next = Vec::with_capacity(cfg.next_generation_size());
        for _ in 0..cfg.mutation_size {
            let parent = &self.top_k[self.rng.random_range(0..self.top_k.len())];
            let id = self.ids.next_id();
            next.push(mutate(parent, id, &cfg, &self.grid, &mut self.rng));
        }

        let mut children = Vec::with_capacity(cfg.crossover_size);
        let (mut attempts, mut failures) = (0, 0);
        while children.len() < cfg.crossover_size {
            let (i, j) = distinct_pair(self.top_k.len(), &mut self.rng);
            let outcome = crossover(
                &self.top_k[i],
                &self.top_k[j],
                &self.top_k,
                &cfg,
                &self.grid,
                &mut self.rng,
                &mut self.ids,
            );
            attempts += outcome.attempts;
            match outcome.children {
                Some((a, b)) => {
                    children.push(a);
                    if children.len() < cfg.crossover_size {
                        children.push(b);
                    }
                }
                None => {
                    failures += 1;
                    warn!(
                        "generation {}: no valid crossover after {} attempts",
                        self.generation, outcome.attempts
                    );
                    break;
                }
            }
        }
        if let Some(last) = self.history.last_mut() {
            last.crossover_attempts = attempts;
            last.crossover_failures = failures;
        }
        next.extend(children);
        next.extend(self.top_k.iter().cloned());
        debug_assert!(next.iter().all(|i| validate(i, &self.grid).is_valid()));
        self.population = next;
        self.generation += 1;
    }

    fn result(&self, started: Instant, failure: Option<String>) -> SearchResult {
        let best = self.top_k.first().cloned();
        let best_schedule = best.as_ref().and_then(|b| self.schedule_of(b).ok());
        SearchResult {
            best,
            best_schedule,
            top_k: self.top_k.clone(),
            history: self.history.clone(),
            config: self.config.clone(),
            evaluations: self.evaluations,
            seed_unsnapped: self.seed_unsnapped.clone(),
            complete: failure.is_none(),
            failure,
            wall_time_secs: started.elapsed().as_secs_f64(),
        }
    }
}

fn evaluate_with_retries<E: Evaluator + ?Sized>(
    evaluator: &E,
    schedule: &ScaleSchedule,
    retries: u32,
) -> Result<AccuracyTriple, EvalError> {
    let mut last = None;
    for attempt in 0..=retries {
        match evaluator.evaluate(schedule) {
            Ok(t) => {
                t.check()?;
                return Ok(t.to_percent());
            }
            Err(e) => {
                warn!("evaluation attempt {} failed: {e}", attempt + 1);
                last = Some(e);
            }
        }
    }
    Err(EvalError::Exhausted {
        attempts: retries + 1,
        last: Box::new(last.expect("loop runs at least once")),
    })
}

type CheckpointSink<'a> = Box<dyn FnMut(&Checkpoint) -> Result<(), String> + 'a>;

/// Drives a search; configure parallelism, checkpointing and resume here.
pub struct SearchRunner<'a> {
    jobs: usize,
    sink: Option<CheckpointSink<'a>>,
    context: serde_json::Value,
}

impl Default for SearchRunner<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> SearchRunner<'a> {
    pub fn new() -> Self {
        Self {
            jobs: 1,
            sink: None,
            context: serde_json::Value::Null,
        }
    }

    /// Threads used to evaluate one generation. Results do not depend on it.
    pub fn jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    /// Called with a checkpoint before each generation is evaluated.
    pub fn on_checkpoint(mut self, sink: impl FnMut(&Checkpoint) -> Result<(), String> + 'a) -> Self {
        self.sink = Some(Box::new(sink));
        self
    }

    /// Metadata stored in every checkpoint.
    pub fn context(mut self, context: serde_json::Value) -> Self {
        self.context = context;
        self
    }

    pub fn run<E: Evaluator + ?Sized>(
        self,
        config: &GaConfig,
        evaluator: &E,
    ) -> Result<SearchResult, GaError> {
        let state = State::fresh(config, self.context.clone())?;
        self.drive(state, evaluator)
    }

    pub fn resume<E: Evaluator + ?Sized>(
        self,
        checkpoint: Checkpoint,
        evaluator: &E,
    ) -> Result<SearchResult, GaError> {
        let state = State::from_checkpoint(checkpoint)?;
        self.drive(state, evaluator)
    }

    fn drive<E: Evaluator + ?Sized>(
        mut self,
        mut state: State,
        evaluator: &E,
    ) -> Result<SearchResult, GaError> {
        let started = Instant::now();
        loop {
            if let Some(sink) = self.sink.as_mut() {
                sink(&state.checkpoint()).map_err(GaError::Checkpoint)?;
            }
            let new_evals = match state.evaluate_population(evaluator, self.jobs) {
                Ok(n) => n,
                Err((_, Some(eval_err))) => {
                    warn!("aborting at generation {}: {eval_err}", state.generation);
                    return Ok(state.result(started, Some(eval_err.to_string())));
                }
                Err((err, None)) => return Err(err),
            };
            state.update_top_k();
            state.record(new_evals);
            let rec = state.history.last().expect("just recorded");
            info!(
                "generation {}: best {:.4} (id {}), mean {:.4}, {} new evaluations",
                rec.generation,
                rec.best_utilization,
                rec.best_id,
                rec.mean_utilization,
                rec.new_evaluations
            );
            if state.generation >= state.config.max_iterations {
                break;
            }
            state.breed();
        }
        Ok(state.result(started, None))
    }
}

/// Runs a fresh search sequentially without checkpoints.
pub fn run<E: Evaluator + ?Sized>(config: &GaConfig, evaluator: &E) -> Result<SearchResult, GaError> {
    SearchRunner::new().run(config, evaluator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitness::{ConstantEvaluator, PlantedOracle};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn small(n_layers: usize, seed: u64) -> GaConfig {
        GaConfig {
            n_layers,
            population_size: 12,
            mutation_size: 6,
            crossover_size: 4,
            top_k: 4,
            max_iterations: 5,
            rng_seed: seed,
            ..GaConfig::default()
        }
    }

    #[test]
    fn zero_iterations_returns_best_of_initial_population() {
        let cfg = GaConfig {
            max_iterations: 0,
            ..small(10, 1)
        };
        let oracle = PlantedOracle::new(PlantedOracle::default_hidden(10), 5.0);
        let r = run(&cfg, &oracle).unwrap();
        assert_eq!(r.history.len(), 1);
        assert!(r.complete);
        let init = {
            let grid = cfg.grid().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            init_population(&cfg, &grid, &mut rng, &mut IdSource::starting_at(0)).unwrap()
        };
        let best_u = init
            .individuals
            .iter()
            .map(|i| {
                let s = i
                    .curve()
                    .unwrap()
                    .sample_layer_scales(10, cfg.sampling_mode)
                    .unwrap()
                    .schedule;
                utilization(&oracle.evaluate(&s).unwrap(), &cfg.weights).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best_utilization().unwrap(), best_u);
    }

    struct Counting<E> {
        inner: E,
        calls: AtomicUsize,
        seen: std::sync::Mutex<HashSet<Vec<u64>>>,
    }

    impl<E: Evaluator> Evaluator for Counting<E> {
        fn evaluate(&self, s: &ScaleSchedule) -> Result<AccuracyTriple, EvalError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let key = s.scales().iter().map(|v| v.to_bits()).collect();
            assert!(self.seen.lock().unwrap().insert(key), "schedule evaluated twice");
            self.inner.evaluate(s)
        }
        fn describe(&self) -> String {
            "counting".into()
        }
    }

    #[test]
    fn cache_prevents_duplicate_evaluations() {
        let cfg = small(10, 2);
        let counting = Counting {
            inner: PlantedOracle::new(PlantedOracle::default_hidden(10), 5.0),
            calls: AtomicUsize::new(0),
            seen: Default::default(),
        };
        let r = run(&cfg, &counting).unwrap();
        assert_eq!(r.evaluations as usize, counting.calls.load(Ordering::SeqCst));
        assert_eq!(r.history.last().unwrap().total_evaluations, r.evaluations);
    }

    struct FailAfter(AtomicUsize, usize);

    impl Evaluator for FailAfter {
        fn evaluate(&self, _s: &ScaleSchedule) -> Result<AccuracyTriple, EvalError> {
            if self.0.fetch_add(1, Ordering::SeqCst) >= self.1 {
                Err(EvalError::Backend("down".into()))
            } else {
                AccuracyTriple::percent(50.0, 50.0, 50.0)
            }
        }
        fn describe(&self) -> String {
            "fail-after".into()
        }
    }

    #[test]
    fn evaluator_failure_yields_partial_result() {
        let cfg = small(10, 3);
        let r = run(&cfg, &FailAfter(AtomicUsize::new(0), 14)).unwrap();
        assert!(!r.complete);
        assert!(r.failure.as_ref().unwrap().contains("4 attempt"));
        assert!(r.best.is_some());
        assert_eq!(r.history.len(), 1);

        let r = run(&cfg, &FailAfter(AtomicUsize::new(0), 0)).unwrap();
        assert!(!r.complete);
        assert!(r.best.is_none());
    }

    #[test]
    fn constant_landscape_keeps_seed_best() {
        let cfg = small(10, 4);
        let t = AccuracyTriple::percent(70.0, 55.6, 60.2).unwrap();
        let r = run(&cfg, &ConstantEvaluator::new(t)).unwrap();
        // With equal utilization the earliest id wins.
        assert_eq!(r.best.unwrap().id, 0);
    }

    #[test]
    fn checkpoint_roundtrip_through_json() {
        let cfg = small(10, 5);
        let oracle = PlantedOracle::new(PlantedOracle::default_hidden(10), 5.0);
        let mut saved = Vec::new();
        let full = SearchRunner::new()
            .on_checkpoint(|cp| {
                saved.push(serde_json::to_string(cp).unwrap());
                Ok(())
            })
            .run(&cfg, &oracle)
            .unwrap();
        assert_eq!(saved.len(), cfg.max_iterations + 1);
        let cp: Checkpoint = serde_json::from_str(&saved[3]).unwrap();
        assert_eq!(cp.generation, 3);
        let resumed = SearchRunner::new().resume(cp, &oracle).unwrap();
        assert_eq!(resumed.canonical_json(), full.canonical_json());
    }

    #[test]
    fn parallel_evaluation_matches_sequential() {
        let cfg = small(12, 6);
        let oracle = PlantedOracle::new(PlantedOracle::default_hidden(12), 5.0);
        let a = SearchRunner::new().jobs(1).run(&cfg, &oracle).unwrap();
        let b = SearchRunner::new().jobs(4).run(&cfg, &oracle).unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
    }

    #[test]
    fn bad_checkpoint_version_rejected() {
        let cfg = small(10, 7);
        let oracle = PlantedOracle::new(PlantedOracle::default_hidden(10), 5.0);
        let mut first = None;
        SearchRunner::new()
            .on_checkpoint(|cp| {
                first.get_or_insert_with(|| cp.clone());
                Ok(())
            })
            .run(&GaConfig { max_iterations: 0, ..cfg }, &oracle)
            .unwrap();
        let mut cp = first.unwrap();
        cp.version = 99;
        assert!(matches!(
            SearchRunner::new().resume(cp, &oracle),
            Err(GaError::Checkpoint(_))
        ));
    }
}
