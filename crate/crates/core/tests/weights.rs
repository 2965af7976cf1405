use heatlab::weights::*;
use heatlab::{TimeCurve, TimeGrid};
use proptest::prelude::*;

fn tol() -> Tolerances {
    Tolerances::default()
}

/// Closed-form primitive of `t / (c - 2t)^2`, `c = delta + 2`, vanishing at 1.
fn exact_primitive(t: f64, delta: f64) -> f64 {
    let c = delta + 2.0;
    let f = |t: f64| (c / (c - 2.0 * t) + (c - 2.0 * t).ln()) / 4.0;
    f(t) - f(1.0)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let left = (m - a) / 6.0 * (f(a) + 4.0 * f(lm) + f(m));
    let right = (b - m) / 6.0 * (f(m) + 4.0 * f(rm) + f(b));
    if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
        left + right + (left + right - whole) / 15.0
    } else {
        simpson(f, a, m, eps / 2.0, depth - 1) + simpson(f, m, b, eps / 2.0, depth - 1)
    }
}

fn midpoint(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

#[test]
fn primitive_matches_adaptive_simpson_and_closed_form() {
    let delta = 3.0;
    let grid = TimeGrid::unit(512).unwrap();
    let a = first_weight(&grid, delta);
    let p = antiderivative_a(&a);
    assert_eq!(p.last(), 0.0);
    let a1 = |t: f64| t / (delta + 2.0 - 2.0 * t).powi(2);
    for t in [0.0, 0.1, 0.37, 0.5, 0.8, 0.99] {
        let oracle = -simpson(&a1, t, 1.0, 1e-14, 40);
        assert!((oracle - exact_primitive(t, delta)).abs() < 1e-12);
        assert!((p.eval(t) - oracle).abs() < 1e-10, "t = {t}");
    }
}

#[test]
fn frequency_weight_matches_refined_quadrature() {
    // T(t) = 2 int_0^t b^2 - a - 8 int_0^t a^2 - C int_0^t e^{-8A}, with C
    // chosen so that T(1) = 0, from the analytic a and A.
    let delta = 3.0;
    let d2 = delta * delta;
    let a = |t: f64| t / (delta + 2.0 - 2.0 * t).powi(2);
    let pa = |t: f64| exact_primitive(t, delta);
    let b = |t: f64| 2.0 * (a(t) - t * (-8.0 * pa(t)).exp() / d2);
    let n = 5120;
    let parts = |t: f64| {
        (
            midpoint(&|s| b(s) * b(s), 0.0, t, n),
            midpoint(&|s| a(s) * a(s), 0.0, t, n),
            midpoint(&|s| (-8.0 * pa(s)).exp(), 0.0, t, n),
        )
    };
    let (b2, a2, e) = parts(1.0);
    let c = (2.0 * b2 - 1.0 / d2 - 8.0 * a2) / e;
    let oracle = |t: f64| {
        let (b2, a2, e) = parts(t);
        2.0 * b2 - a(t) - 8.0 * a2 - c * e
    };

    let family = WeightFamily::first(&TimeGrid::unit(512).unwrap(), delta, &tol()).unwrap();
    for t in [0.125, 0.25, 0.5, 0.75, 0.875] {
        let got = family.frequency.eval(t);
        assert!((got - oracle(t)).abs() < 1e-6, "t = {t}: {got} vs {}", oracle(t));
        assert!(got > 0.0);
    }
}

#[test]
fn cross_weight_closed_form_and_boundary_route_agree() {
    for delta in [2.5, 3.0, 10.0] {
        let grid = TimeGrid::unit(512).unwrap();
        let a = first_weight(&grid, delta);
        let p = antiderivative_a(&a);
        let closed = closed_form_b(&a, &p).unwrap();
        let bvp = solve_b_bvp(&a, &p).unwrap();
        assert!(closed.sub(&bvp).unwrap().sup_norm() < 1e-6, "delta = {delta}");
        let solved = solve_b(&a, &p, delta, &tol()).unwrap();
        assert!(solved.sub(&closed).unwrap().sup_norm() < 1e-12);
        let (bmax, _) = {
            let neg = solved.map(|v| -v);
            neg.min_interior()
        };
        assert!(bmax > 0.0, "b must be negative inside");
    }
}

#[test]
fn residuals_shrink_under_refinement() {
    for delta in [2.5, 3.0, 10.0] {
        let sup = |m| {
            let grid = TimeGrid::unit(m).unwrap();
            let a = first_weight(&grid, delta);
            let p = antiderivative_a(&a);
            let b = closed_form_b(&a, &p).unwrap();
            let t = closed_form_t(&a, &p, &b).unwrap();
            coefficient_residuals(&Weights {
                quadratic: a,
                primitive: p,
                cross: b,
                frequency: t,
            })
            .unwrap()
        };
        let (coarse, fine) = (sup(64), sup(128));
        assert!(coarse.cross.sup_norm() / fine.cross.sup_norm() >= 8.0, "delta = {delta}");
        assert!(coarse.frequency.sup_norm() / fine.frequency.sup_norm() >= 8.0, "delta = {delta}");
        assert!(sup(512).sup() <= 1e-6);
    }
}

#[test]
fn limit_family_is_a_fixed_point() {
    let delta = 3.0;
    let limit = limit_weight(delta, 512, DEFAULT_T_MIN, &tol()).unwrap();
    assert!(limit.cross.sup_norm() < 1e-10);
    assert!(limit.frequency.sup_norm() < 1e-10);
    let n = choose_n_delta(&limit.cross, &limit.frequency).unwrap();
    let (a, p) = iterate_weight(&limit.quadratic, &limit.primitive, &limit.cross, n, &tol()).unwrap();
    assert!(a.sub(&limit.quadratic).unwrap().sup_norm() < 1e-15);
    assert!(p.sub(&limit.primitive).unwrap().sup_norm() < 1e-12);
}

#[test]
fn limit_convexity_vanishes_at_half_radius() {
    // R = 1/2 corresponds to delta = 2 sqrt(1 + R^2).
    let delta = 2.0 * 1.25f64.sqrt();
    let limit = limit_weight(delta, 512, DEFAULT_T_MIN, &tol()).unwrap();
    assert!((limit.radius - 0.5).abs() < 1e-14);
    assert!(limit.convexity.identity.sup_norm() < 1e-8);
    assert_ne!(limit.convexity.verdict, ConvexityVerdict::Failed);
}

#[test]
fn singular_limit_lives_away_from_the_origin() {
    let limit = limit_weight(2.0, 512, DEFAULT_T_MIN, &tol()).unwrap();
    assert!(limit.is_singular());
    assert_eq!(limit.grid().start(), DEFAULT_T_MIN);
    assert!((limit.quadratic.first() - 0.25 / DEFAULT_T_MIN).abs() < 1e-9);
    assert!(limit_weight(2.0, 512, 0.0, &tol()).is_err());
}

#[test]
fn second_iterate_exceeds_the_first() {
    let trace = run_iteration(3.0, 2, 0.0, &IterationOptions::default()).unwrap();
    let a2 = &trace.families[1].quadratic;
    assert!(a2.eval(0.5) > 0.5 / 16.0);
    assert_eq!(a2.first(), 0.0);
    assert!((a2.last() - 1.0 / 9.0).abs() < 1e-12);
}

#[test]
fn iteration_keeps_its_invariants() {
    let trace = run_iteration(3.0, 20, 0.0, &IterationOptions::default()).unwrap();
    assert!(!trace.converged);
    for s in &trace.summaries {
        assert!(s.min_riccati >= -1e-6);
        assert!(s.max_a <= 0.2);
        assert!(s.min_convexity > 0.0);
        assert!(s.min_frequency > 0.0);
    }
    let sup_b = trace.sup_b();
    let gap = trace.gap_to_limit();
    for k in 1..sup_b.len() {
        assert!(sup_b[k] < sup_b[k - 1]);
        assert!(gap[k] < gap[k - 1]);
    }
    for w in trace.families.windows(2) {
        let inc = w[1].quadratic.sub(&w[0].quadratic).unwrap();
        assert!(inc.min_value() >= 0.0);
    }
}

#[test]
fn large_delta_stays_under_its_ceiling() {
    let trace = run_iteration(10.0, 20, 0.0, &IterationOptions::default()).unwrap();
    for s in &trace.summaries {
        assert!(s.max_a <= 1.0 / 96.0);
    }
}

#[test]
fn near_critical_delta_on_a_fine_grid() {
    let opts = IterationOptions {
        intervals: 2048,
        keep_every: 1000,
        ..Default::default()
    };
    let trace = run_iteration(2.01, 100, 0.0, &opts).unwrap();
    assert_eq!(trace.summaries.len(), 100);
    let gap = trace.gap_to_limit();
    assert!(gap[99] < gap[0]);
}

#[test]
fn n_delta_is_stable_under_refinement() {
    let n = |m| {
        let opts = IterationOptions {
            intervals: m,
            keep_every: 1000,
            ..Default::default()
        };
        run_iteration(3.0, 10, 0.0, &opts).unwrap().n_delta
    };
    let (coarse, fine) = (n(256), n(1024));
    assert!(coarse >= 1.0);
    assert!((coarse - fine).abs() < 1e-3);
}

#[test]
fn trace_csv_has_one_row_per_iterate() {
    let trace = run_iteration(3.0, 3, 0.0, &IterationOptions::default()).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("k,sup_b,gap_to_limit,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadratic_form_collapses_and_stays_nonnegative(
        t in 0.01f64..0.99,
        x in -10.0f64..10.0,
        xi in -10.0f64..10.0,
        delta in prop::sample::select(vec![2.5, 3.0, 10.0]),
    ) {
        let family = WeightFamily::first(&TimeGrid::unit(512).unwrap(), delta, &tol()).unwrap();
        let q = QuadraticFormCoefficients::new(&family).unwrap();
        let (assembled, collapsed) = q.evaluate(t, x, xi);
        let scale = (x * x + xi * xi).max(1.0) * q.xx.sup_norm().max(1.0);
        prop_assert!(assembled >= -1e-8 * scale);
        prop_assert!((assembled - collapsed).abs() <= 1e-6 * scale);
    }

    #[test]
    fn limit_weight_is_increasing_in_delta(t in 0.05f64..1.0, d in 2.2f64..6.0) {
        prop_assert!(limit_quadratic(t, d + 0.1) < limit_quadratic(t, d));
        let c = TimeCurve::from_fn(&TimeGrid::unit(64).unwrap(), |s| limit_quadratic(s, d));
        prop_assert!(c.max_value() <= 1.0 / (d * d - 4.0) + 1e-15);
    }
}
