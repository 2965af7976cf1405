use heatlab::functionals::{sharpness_probe, sharp_weight, Verdict};
use heatlab::heat::*;
use heatlab::weights::*;
use heatlab::TimeGrid;
use num_complex::Complex64;
use proptest::prelude::*;

fn grid() -> SpaceGrid {
    SpaceGrid::new(12.0, 1024).unwrap()
}

fn gaussian(lambda: f64) -> Field {
    Field::from_real(grid(), 0.0, |x| (-lambda * x * x).exp())
}

fn free_gaussian(lambda: f64, t: f64) -> Field {
    let s = 1.0 + 4.0 * lambda * t;
    Field::from_real(grid(), t, |x| (-lambda * x * x / s).exp() / s.sqrt())
}

fn oscillating() -> PotentialSpec {
    PotentialSpec::new("oscillating", 1.0, |x, t| {
        Complex64::new(0.3 * (3.0 * t).cos(), 0.9 * (3.0 * t).sin()) * (-x * x).exp()
    })
}

/// Gaussian times a cubic, with a complex phase.
fn hermite_like(c: [f64; 4], shift: f64) -> Field {
    Field::from_fn(grid(), 0.0, |x| {
        let y = x - shift;
        let p = c[0] + c[1] * y + c[2] * y * y + c[3] * y * y * y;
        Complex64::new(p, 0.3 * y) * (-0.5 * y * y).exp()
    })
}

#[test]
fn free_gaussian_matches_heat_kernel() {
    for lambda in [0.5, 1.0, 2.0] {
        let traj = evolve(&gaussian(lambda), &PotentialSpec::zero(), 0.0, 0.25, &EvolveOptions::with_steps(250)).unwrap();
        assert!(traj.last().distance(&free_gaussian(lambda, 0.25)) < 1e-6);
        assert!(!traj.is_flagged());
    }
}

#[test]
fn strang_splitting_is_second_order() {
    let u0 = gaussian(1.0);
    let run = |steps| {
        evolve(&u0, &oscillating(), 0.0, 1.0, &EvolveOptions { steps, store_every: steps, ..Default::default() })
            .unwrap()
            .last()
            .clone()
    };
    let (u1, u2, u3) = (run(50), run(100), run(200));
    let ratio = u1.distance(&u2) / u2.distance(&u3);
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn energy_inequality_for_complex_potentials() {
    let u0 = gaussian(1.0);
    for v in [
        PotentialSpec::gaussian(Complex64::new(0.0, 1.0)),
        PotentialSpec::gaussian(Complex64::new(1.0, 0.0)),
        PotentialSpec::constant(Complex64::new(0.6, 0.8)),
        oscillating(),
    ] {
        let traj = evolve(&u0, &v, 0.0, 1.0, &EvolveOptions::with_steps(1000)).unwrap();
        for f in &traj.frames {
            let bound = (v.sup_norm() * f.time).exp() * u0.norm();
            assert!(f.norm() <= bound + 1e-6, "{}: {} > {}", v.label(), f.norm(), bound);
        }
    }
}

#[test]
fn trajectories_satisfy_the_equation() {
    let traj = evolve(&gaussian(1.0), &oscillating(), 0.0, 0.5, &EvolveOptions::with_steps(500)).unwrap();
    let res = trajectory_residual(&traj, &oscillating()).unwrap();
    assert!(res.iter().all(|&(_, r)| r <= 1e-4));
}

#[test]
fn extremal_solution_is_reproduced_from_localised_data() {
    let (l, r) = (24.0, 1.0);
    let g = SpaceGrid::new(l, 2048).unwrap();
    let u0 = Field::from_fn(g, 0.0, |x| eval_u_r(x, 0.0, r).unwrap() * cutoff_window(x, 0.7 * l, 16));
    let traj = evolve(&u0, &PotentialSpec::zero(), 0.0, 1.0, &EvolveOptions { steps: 10, store_every: 10, ..Default::default() }).unwrap();
    let exact = u_r_field(g, 1.0, r).unwrap();
    assert!(traj.last().distance(&exact) < 1e-6);
}

#[test]
fn extremal_weight_membership_is_sharp() {
    let (r, t) = (1.0, 0.5);
    let boxes = [16.0, 32.0, 64.0, 128.0, 256.0];
    let inside = sharpness_probe(r, t, 0.99, &boxes, 1e-6).unwrap();
    assert_eq!(inside.verdict, Verdict::Convergent);
    let outside = sharpness_probe(r, t, 1.01, &boxes, 1e-6).unwrap();
    assert_eq!(outside.verdict, Verdict::Divergent);
    let n = &outside.norms;
    assert!(n[4].1 > 100.0 * n[2].1);
    assert!((inside.gamma - 0.99 * sharp_weight(t, r)).abs() < 1e-15);
}

#[test]
fn s_is_symmetric_and_a_is_skew() {
    let family = WeightFamily::first(&TimeGrid::unit(512).unwrap(), 3.0, &Tolerances::default()).unwrap();
    let d = family.derivatives();
    let spectral = Spectral::new(grid());
    let f = hermite_like([1.0, -0.5, 0.2, 0.1], 0.3);
    let g = hermite_like([0.3, 0.7, -0.1, 0.05], -0.8);
    for (t, xi) in [(0.2, 1.0), (0.5, -2.0), (0.9, 0.5)] {
        let w = d.slice(t);
        let sf = apply_s(&f, &w, xi, &spectral, DEFAULT_TAIL_TOL).unwrap();
        let sg = apply_s(&g, &w, xi, &spectral, DEFAULT_TAIL_TOL).unwrap();
        let (lhs, rhs) = (sf.inner(&g), f.inner(&sg));
        assert!((lhs - rhs).norm() <= 1e-8 * lhs.norm().max(1.0));
        let af = apply_a(&f, &w, xi, &spectral, DEFAULT_TAIL_TOL).unwrap();
        let ag = apply_a(&g, &w, xi, &spectral, DEFAULT_TAIL_TOL).unwrap();
        let (lhs, rhs) = (af.inner(&g), f.inner(&ag));
        assert!((lhs + rhs).norm() <= 1e-8 * lhs.norm().max(1.0));
        let aff = af.inner(&f);
        assert!(aff.re.abs() <= 1e-10 * aff.norm().max(1.0));
    }
}

#[test]
fn conjugation_turns_the_heat_operator_into_s_plus_a() {
    // For u solving the free heat equation, f = e^{a x^2 + b x xi - T xi^2} u
    // satisfies f_t = S f + A f.
    let family = WeightFamily::first(&TimeGrid::unit(512).unwrap(), 3.0, &Tolerances::default()).unwrap();
    let d = family.derivatives();
    let spectral = Spectral::new(grid());
    let (t, xi, h) = (0.5, 1.0, 1e-3);
    let f_at = |s: f64| {
        let w = d.slice(s);
        free_gaussian(1.0, s).multiply(|x| Complex64::new(w.exponent(x, xi).exp(), 0.0))
    };
    let (fm2, fm1, f0, fp1, fp2) = (f_at(t - 2.0 * h), f_at(t - h), f_at(t), f_at(t + h), f_at(t + 2.0 * h));
    let mut ft = f0.zeros_like();
    for j in 0..ft.samples.len() {
        ft.samples[j] = (fm2.samples[j] - 8.0 * fm1.samples[j] + 8.0 * fp1.samples[j] - fp2.samples[j]) / (12.0 * h);
    }
    let w = d.slice(t);
    let sf = apply_s(&f0, &w, xi, &spectral, DEFAULT_TAIL_TOL).unwrap();
    let af = apply_a(&f0, &w, xi, &spectral, DEFAULT_TAIL_TOL).unwrap();
    let rhs = sf.axpy(Complex64::new(1.0, 0.0), &af);
    assert!(ft.distance(&rhs) / f0.norm() < 1e-5);
}

#[test]
fn commutator_form_reduces_on_the_limit_family() {
    let limit = limit_weight(3.0, 512, DEFAULT_T_MIN, &Tolerances::default()).unwrap();
    let d = limit.derivatives();
    let f = gaussian(1.0);
    for t in [0.2, 0.5, 0.8] {
        let form = commutator_form_at(&f, &d, t, 0.0, DEFAULT_TAIL_TOL).unwrap();
        let scale = f.norm_sqr() * d.slice(t).gamma();
        assert!(form.rhs.abs() <= 1e-6 * scale);
        assert!((form.lhs - form.rhs).abs() <= 1e-6 * scale);
    }
}

#[test]
fn commutator_form_matches_its_collapsed_integral() {
    let family = WeightFamily::first(&TimeGrid::unit(512).unwrap(), 3.0, &Tolerances::default()).unwrap();
    let d = family.derivatives();
    let f = gaussian(1.0);
    for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let form = commutator_form_at(&f, &d, t, 1.0, DEFAULT_TAIL_TOL).unwrap();
        assert!(form.relative_gap() <= 1e-4, "t = {t}: {form:?}");
        assert!(form.rhs > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn commutator_form_is_nonnegative(
        c in prop::array::uniform4(-1.0f64..1.0),
        shift in -2.0f64..2.0,
        t in 0.02f64..0.98,
        xi in -3.0f64..3.0,
    ) {
        let family = WeightFamily::first(&TimeGrid::unit(512).unwrap(), 3.0, &Tolerances::default()).unwrap();
        let f = hermite_like(c, shift);
        let form = commutator_form(&f, &family.derivatives().slice(t), xi, &Spectral::new(grid()), DEFAULT_TAIL_TOL).unwrap();
        let scale = form.rhs.abs().max(f.norm_sqr());
        prop_assert!(form.lhs >= -1e-8 * scale);
        prop_assert!((form.lhs - form.rhs).abs() <= 1e-4 * scale);
    }
}
