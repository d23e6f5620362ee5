use layerscale::curve::{bernstein_weight, BezierCurve, ControlPoint, SamplingMode};
use layerscale::evolution::{crossover, init_population, mutate, utilization, GaConfig, IdSource};
use layerscale::fitness::AccuracyTriple;
use layerscale::rope::{
    attention_score, entropy, extrapolation_schedule, ntk_base, rotate, RotaryConfig,
};
use layerscale::search_space::{validate, SearchGrid};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn increasing_points() -> impl Strategy<Value = Vec<ControlPoint>> {
    prop::collection::vec((0.1..5.0f64, 0.5..3.0f64), 2..7).prop_map(|steps| {
        let mut x = 0.0;
        steps
            .into_iter()
            .map(|(dx, y)| {
                let p = ControlPoint::new(x, y);
                x += dx;
                p
            })
            .collect()
    })
}

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn bernstein_partition_of_unity(degree in 0usize..12, t in 0.0..=1.0f64) {
        let sum: f64 = (0..=degree).map(|i| bernstein_weight(i, degree, t).unwrap()).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn bernstein_matches_de_casteljau(points in increasing_points(), t in 0.0..=1.0f64) {
        let curve = BezierCurve::new(points).unwrap();
        let a = curve.evaluate(t).unwrap();
        let b = curve.de_casteljau(t).unwrap();
        prop_assert!((a.x - b.x).abs() <= 1e-12 * (1.0 + a.x.abs()));
        prop_assert!((a.y - b.y).abs() <= 1e-12 * (1.0 + a.y.abs()));
    }

    #[test]
    fn curve_interpolates_end_points(points in increasing_points()) {
        let curve = BezierCurve::new(points.clone()).unwrap();
        prop_assert_eq!(curve.evaluate(0.0).unwrap(), points[0]);
        prop_assert_eq!(curve.evaluate(1.0).unwrap(), *points.last().unwrap());
    }

    #[test]
    fn curve_stays_in_bounding_box(points in increasing_points(), t in 0.0..=1.0f64) {
        let curve = BezierCurve::new(points.clone()).unwrap();
        let p = curve.evaluate(t).unwrap();
        let fold = |f: fn(&ControlPoint) -> f64| {
            points.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (xl, xh) = fold(|p| p.x);
        let (yl, yh) = fold(|p| p.y);
        prop_assert!(p.x >= xl - 1e-12 && p.x <= xh + 1e-12);
        prop_assert!(p.y >= yl - 1e-12 && p.y <= yh + 1e-12);
    }

    #[test]
    fn increasing_control_x_gives_monotone_curve(points in increasing_points(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let curve = BezierCurve::new(points).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(curve.evaluate(lo).unwrap().x <= curve.evaluate(hi).unwrap().x + 1e-12);
    }

    #[test]
    fn sampled_scales_are_at_least_one(points in increasing_points(), n in 2usize..40) {
        let curve = BezierCurve::new(points).unwrap();
        let sampled = curve.sample_layer_scales(n, SamplingMode::UniformT).unwrap();
        prop_assert_eq!(sampled.schedule.len(), n);
        prop_assert!(sampled.schedule.scales().iter().all(|s| *s >= 1.0));
    }

    #[test]
    fn rope_relative_position_invariance(
        q in vec_strategy(16), k in vec_strategy(16),
        m in -2000i64..2000, n in -2000i64..2000, shift in -5000i64..5000,
        scale in 1.0..4.0f64,
    ) {
        let cfg = RotaryConfig::new(16, 10000.0, scale).unwrap();
        let a = attention_score(&q, &k, m, n, &cfg).unwrap();
        let b = attention_score(&q, &k, m + shift, n + shift, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn rope_scale_distance_equivalence(
        q in vec_strategy(16), k in vec_strategy(16),
        d in 0i64..3000, s in 1i64..5,
    ) {
        let unit = RotaryConfig::new(16, 10000.0, 1.0).unwrap();
        let scaled = unit.with_scale(s as f64);
        let a = attention_score(&q, &k, s * d, 0, &scaled).unwrap();
        let b = attention_score(&q, &k, d, 0, &unit).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn rotation_preserves_norm(v in vec_strategy(32), pos in -100_000i64..100_000, scale in 1.0..8.0f64) {
        let cfg = RotaryConfig::new(32, 10000.0, scale).unwrap();
        let r = rotate(&v, pos, &cfg).unwrap();
        let n0: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n1: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n0 - n1).abs() <= 1e-12 * (1.0 + n0));
    }

    #[test]
    fn entropy_within_bounds(w in prop::collection::vec(0.0..10.0f64, 1..64)) {
        prop_assume!(w.iter().any(|x| *x > 0.0));
        let h = entropy(&w).unwrap();
        prop_assert!(h >= 0.0 && h <= (w.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn entropy_equality_cases(n in 1usize..200, hot in 0usize..200, mass in 0.01..100.0f64) {
        let uniform = vec![mass; n];
        prop_assert!((entropy(&uniform).unwrap() - (n as f64).ln()).abs() <= 1e-12);
        let mut one_hot = vec![0.0; n];
        one_hot[hot % n] = mass;
        prop_assert_eq!(entropy(&one_hot).unwrap(), 0.0);
    }

    #[test]
    fn extrapolation_schedule_is_a_triangle(
        n in 3usize..64, peak_frac in 0.0..1.0f64, interval in 0.0..1.0f64, ratio in 1.0..8.0f64,
    ) {
        let peak = ((n - 1) as f64 * peak_frac) as usize;
        let sched = extrapolation_schedule(n, 4096.0, 4096.0 * ratio, interval, peak).unwrap();
        let v = sched.scales();
        let s = ratio;
        prop_assert!((v[0] - s).abs() <= 1e-9 || peak == 0);
        prop_assert!((v[n - 1] - s).abs() <= 1e-9 || peak == n - 1);
        prop_assert!((v[peak] - (s + interval)).abs() <= 1e-9);
        for k in 1..n - 1 {
            if k != peak {
                prop_assert!((v[k - 1] - 2.0 * v[k] + v[k + 1]).abs() <= 1e-9);
            }
        }
        prop_assert!(v.iter().all(|x| *x >= s - 1e-12 && *x <= s + interval + 1e-12));
    }

    #[test]
    fn ntk_base_never_shrinks(d in 2usize..64, factor in 1.0..16.0f64) {
        let cfg = RotaryConfig::new(2 * d, 10000.0, 1.0).unwrap();
        let b = ntk_base(&cfg, factor).unwrap();
        prop_assert!(b >= 10000.0);
        let f0 = cfg.frequencies();
        let f1 = RotaryConfig::new(2 * d, b, 1.0).unwrap().frequencies();
        prop_assert!(f0.iter().zip(&f1).skip(1).all(|(a, b)| b <= a));
    }

    #[test]
    fn utilization_is_monotone_in_each_slot(
        f in 0.0..100.0f64, m in 0.0..100.0f64, l in 0.0..100.0f64, bump in 0.0..10.0f64, slot in 0usize..3,
    ) {
        let w = GaConfig::default().weights;
        let base = AccuracyTriple::percent(f, m, l).unwrap();
        let mut a = [f, m, l];
        a[slot] = (a[slot] + bump).min(100.0);
        let up = AccuracyTriple::percent(a[0], a[1], a[2]).unwrap();
        prop_assert!(utilization(&up, &w).unwrap() >= utilization(&base, &w).unwrap() - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operators_keep_individuals_valid(seed in any::<u64>(), n_layers in 4usize..40, amp_x in 0usize..6, amp_y in 0.0..0.6f64) {
        let cfg = GaConfig {
            n_layers,
            amplitude_x: amp_x,
            amplitude_y: amp_y,
            population_size: 8,
            top_k: 4,
            ..GaConfig::default()
        };
        let grid = SearchGrid::new(n_layers).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids = IdSource::starting_at(0);
        let pop = match init_population(&cfg, &grid, &mut rng, &mut ids) {
            Ok(p) => p.individuals,
            // Tiny amplitudes on a short grid can leave too few distinct mutants.
            Err(_) => return Ok(()),
        };
        for ind in &pop {
            prop_assert!(validate(ind, &grid).is_valid());
        }
        let mut current = pop[0].clone();
        for _ in 0..20 {
            let id = ids.next_id();
            current = mutate(&current, id, &cfg, &grid, &mut rng);
            prop_assert!(validate(&current, &grid).is_valid());
        }
        let out = crossover(&pop[0], &pop[1], &pop, &cfg, &grid, &mut rng, &mut ids);
        prop_assert!(out.attempts <= 2 * cfg.crossover_size);
        if let Some((a, b)) = out.children {
            prop_assert!(validate(&a, &grid).is_valid());
            prop_assert!(validate(&b, &grid).is_valid());
        }
    }
}
