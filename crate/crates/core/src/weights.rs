//! Gaussian weight families `e^{a x^2 + b x xi - T xi^2}` and the monotone
//! iteration that drives them to the optimal decay `t / 4(t^2 + R^2)`.
//!
//! Naming: the quadratic coefficient `a`, its primitive `A` (normalised so
//! `A(1) = 0`), the cross coefficient `b` and the frequency coefficient `T`
//! are stored as [`Weights::quadratic`], [`Weights::primitive`],
//! [`Weights::cross`] and [`Weights::frequency`]. The clock `gamma = e^{8A}`
//! appears throughout.
//!
//! `b` and `T` are evaluated from closed forms of their two-point boundary
//! value problems. Independently, [`solve_b_bvp`] integrates the `b` problem
//! twice from a finite-difference right-hand side and [`coefficient_residuals`]
//! plugs all curves back into the product-rule expansions of the defining
//! equations, so the closed forms are certified rather than trusted.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::timecurve::{TimeCurve, TimeGrid};

/// Default start time for the singular `delta = 2` limit weight `1/(4t)`.
pub const DEFAULT_T_MIN: f64 = 1e-3;

/// Numerical tolerances shared by the weight constructions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Residual of the defining ODEs and of the closed-form/BVP cross-check.
    pub residual: f64,
    /// `|A' - a|` after an iteration step.
    pub consistency: f64,
    /// Boundary data such as `a(1) = 1/delta^2`.
    pub boundary: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            residual: 1e-6,
            consistency: 1e-6,
            boundary: 1e-12,
        }
    }
}

/// The quadruple `(a, A, b, T)` on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub quadratic: TimeCurve,
    pub primitive: TimeCurve,
    pub cross: TimeCurve,
    pub frequency: TimeCurve,
}

/// Coefficients of the weight at one instant, with the time derivatives the
/// conjugated operators need.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightSlice {
    pub t: f64,
    pub a: f64,
    pub da: f64,
    pub dda: f64,
    pub primitive: f64,
    pub b: f64,
    pub db: f64,
    pub ddb: f64,
    pub big_t: f64,
    pub dt: f64,
    pub ddt: f64,
}

impl WeightSlice {
    pub fn gamma(&self) -> f64 {
        (8.0 * self.primitive).exp()
    }

    /// Exponent of the weight at `(x, xi)`.
    pub fn exponent(&self, x: f64, xi: f64) -> f64 {
        self.a * x * x + self.b * x * xi - self.big_t * xi * xi
    }
}

/// Weight curves plus their first and second derivatives, sampled once so
/// that repeated slicing is cheap.
#[derive(Debug, Clone)]
pub struct WeightDerivatives {
    a: [TimeCurve; 3],
    primitive: TimeCurve,
    b: [TimeCurve; 3],
    big_t: [TimeCurve; 3],
}

impl WeightDerivatives {
    pub fn new(w: &Weights) -> Self {
        let three = |c: &TimeCurve| [c.clone(), c.derivative(), c.second_derivative()];
        WeightDerivatives {
            a: three(&w.quadratic),
            primitive: w.primitive.clone(),
            b: three(&w.cross),
            big_t: three(&w.frequency),
        }
    }

    pub fn slice(&self, t: f64) -> WeightSlice {
        WeightSlice {
            t,
            a: self.a[0].eval(t),
            da: self.a[1].eval(t),
            dda: self.a[2].eval(t),
            primitive: self.primitive.eval(t),
            b: self.b[0].eval(t),
            db: self.b[1].eval(t),
            ddb: self.b[2].eval(t),
            big_t: self.big_t[0].eval(t),
            dt: self.big_t[1].eval(t),
            ddt: self.big_t[2].eval(t),
        }
    }
}

impl Weights {
    /// Weights with `b = T = 0` and the given `(a, A)`.
    pub fn quadratic_only(a: TimeCurve, primitive: TimeCurve) -> Result<Self> {
        if !a.same_grid(&primitive) {
            return Err(Error::GridMismatch);
        }
        let zeros = TimeCurve::zeros(a.grid());
        Ok(Weights {
            quadratic: a,
            primitive,
            cross: zeros.clone(),
            frequency: zeros,
        })
    }

    /// Constant quadratic weight `a = c`, `A = c (t - end)`, `b = T = 0`.
    pub fn constant(grid: &Arc<TimeGrid>, c: f64) -> Self {
        let end = grid.end();
        Weights {
            quadratic: TimeCurve::constant(grid, c),
            primitive: TimeCurve::from_fn(grid, |t| c * (t - end)),
            cross: TimeCurve::zeros(grid),
            frequency: TimeCurve::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        self.quadratic.grid()
    }

    pub fn gamma(&self) -> TimeCurve {
        self.primitive.map(|v| (8.0 * v).exp())
    }

    pub fn derivatives(&self) -> WeightDerivatives {
        WeightDerivatives::new(self)
    }
}

/// The first weight `a_1(t) = t / (delta + 2 - 2t)^2`.
pub fn first_weight(grid: &Arc<TimeGrid>, delta: f64) -> TimeCurve {
    TimeCurve::from_fn(grid, |t| {
        let d = delta + 2.0 - 2.0 * t;
        t / (d * d)
    })
}

/// The limit weight `a(t) = t / 4(t^2 + R^2)`, `R^2 = delta^2/4 - 1`.
pub fn limit_quadratic(t: f64, delta: f64) -> f64 {
    let r2 = (0.25 * delta * delta - 1.0).max(0.0);
    t / (4.0 * (t * t + r2))
}

/// `R = sqrt(delta^2/4 - 1)`.
pub fn radius_for(delta: f64) -> f64 {
    (0.25 * delta * delta - 1.0).max(0.0).sqrt()
}

/// Primitive of `a` vanishing at the right end of the grid.
pub fn antiderivative_a(a: &TimeCurve) -> TimeCurve {
    let cumulative = a.cumulative_integral();
    let total = cumulative.last();
    let mut primitive = cumulative.map(|v| v - total);
    let n = primitive.len();
    let mut values = primitive.values().to_vec();
    values[n - 1] = 0.0;
    primitive = TimeCurve::from_values(Arc::clone(a.grid()), values)
        .expect("same length as the input curve");
    primitive
}

/// `(e^{8A} a)'' = e^{8A}(a'' + 24 a a' + 64 a^3)`, evaluated from
/// finite-difference derivatives of `a`.
pub fn convexity_identity(a: &TimeCurve, primitive: &TimeCurve) -> Result<TimeCurve> {
    let da = a.derivative();
    let dda = a.second_derivative();
    let inner = TimeCurve::from_values(
        Arc::clone(a.grid()),
        a.values()
            .iter()
            .zip(da.values())
            .zip(dda.values())
            .map(|((&a, &da), &dda)| dda + 24.0 * a * da + 64.0 * a * a * a)
            .collect(),
    )?;
    inner.zip_with(primitive, |v, p| (8.0 * p).exp() * v)
}

/// Residual tolerances are relative to the size of `(e^{8A} a)''` once it
/// exceeds one, which happens only for near-critical `delta`.
fn residual_scale(a: &TimeCurve, primitive: &TimeCurve) -> Result<f64> {
    Ok(convexity_identity(a, primitive)?.sup_norm().max(1.0))
}

fn check_boundary_data(a: &TimeCurve, delta: f64, tol: &Tolerances) -> Result<()> {
    let target = 1.0 / (delta * delta);
    if (a.last() - target).abs() > tol.boundary.max(1e-15 * target) {
        return Err(Error::Precondition(format!(
            "a(end) = {:.6e}, expected 1/delta^2 = {target:.6e}",
            a.last()
        )));
    }
    if a.grid().start() == 0.0 && a.first().abs() > tol.boundary {
        return Err(Error::Precondition(format!(
            "a(0) = {:.6e}, expected 0",
            a.first()
        )));
    }
    Ok(())
}

/// Closed form of the `b` problem,
/// `b = 2(a - e^{-8A} l)` with `l` the linear interpolant of `e^{8A} a`
/// between the ends. On `[0, 1]` with `a(0) = 0` this is
/// `b = 2(a - t e^{-8A} / delta^2)`.
pub fn closed_form_b(a: &TimeCurve, primitive: &TimeCurve) -> Result<TimeCurve> {
    let grid = a.grid();
    let (t0, t1) = (grid.start(), grid.end());
    let g0 = (8.0 * primitive.first()).exp() * a.first();
    let g1 = (8.0 * primitive.last()).exp() * a.last();
    let values: Vec<f64> = grid
        .nodes()
        .zip(a.values().iter().zip(primitive.values()))
        .map(|(t, (&a, &p))| {
            let s = (t - t0) / (t1 - t0);
            let line = (1.0 - s) * g0 + s * g1;
            2.0 * (a - (-8.0 * p).exp() * line)
        })
        .collect();
    let mut b = TimeCurve::from_values(Arc::clone(grid), values)?;
    pin_ends(&mut b);
    Ok(b)
}

fn pin_ends(c: &mut TimeCurve) {
    let n = c.len();
    let mut values = c.values().to_vec();
    values[0] = 0.0;
    values[n - 1] = 0.0;
    *c = TimeCurve::from_values(Arc::clone(c.grid()), values).expect("length unchanged");
}

/// Direct solution of `(e^{8A} b)'' = 2 (e^{8A} a)''`, `b = 0` at both ends,
/// by double quadrature of the finite-difference right-hand side.
pub fn solve_b_bvp(a: &TimeCurve, primitive: &TimeCurve) -> Result<TimeCurve> {
    let rhs = convexity_identity(a, primitive)?.scale(2.0);
    let double = rhs.cumulative_integral().cumulative_integral();
    let grid = a.grid();
    let (t0, t1) = (grid.start(), grid.end());
    let end = double.last();
    let values = grid
        .nodes()
        .zip(double.values().iter().zip(primitive.values()))
        .map(|(t, (&w, &p))| (w - end * (t - t0) / (t1 - t0)) * (-8.0 * p).exp())
        .collect();
    let mut b = TimeCurve::from_values(Arc::clone(grid), values)?;
    pin_ends(&mut b);
    Ok(b)
}

/// The cross coefficient `b`. Returns the closed form after checking that the
/// independent double-quadrature solution agrees with it within
/// `tol.residual`.
pub fn solve_b(a: &TimeCurve, primitive: &TimeCurve, delta: f64, tol: &Tolerances) -> Result<TimeCurve> {
    if !a.same_grid(primitive) {
        return Err(Error::GridMismatch);
    }
    check_boundary_data(a, delta, tol)?;
    let scale = residual_scale(a, primitive)?;
    let closed = closed_form_b(a, primitive)?;
    let direct = solve_b_bvp(a, primitive)?;
    let gap = closed.sub(&direct)?.sup_norm();
    if gap > tol.residual * scale {
        return Err(Error::Disagreement {
            what: "closed-form and quadrature b",
            value: gap,
            tol: tol.residual,
        });
    }
    let residual = b_residual(a, primitive, &closed)?.sup_norm();
    if residual > tol.residual * scale {
        return Err(Error::Residual {
            what: "b equation",
            value: residual,
            tol: tol.residual,
        });
    }
    Ok(closed)
}

/// `T` from the first integral of its equation:
/// `T' = 2 b^2 - a' - 8 a^2 + C e^{-8A}`, with `C` fixed by `T(end) = 0`.
pub fn closed_form_t(a: &TimeCurve, primitive: &TimeCurve, b: &TimeCurve) -> Result<TimeCurve> {
    let grid = a.grid();
    let source = b.zip_with(a, |b, a| 2.0 * b * b - 8.0 * a * a)?.cumulative_integral();
    let clock = primitive.map(|p| (-8.0 * p).exp()).cumulative_integral();
    let a0 = a.first();
    let partial: Vec<f64> = source
        .values()
        .iter()
        .zip(a.values())
        .map(|(&s, &a)| s - (a - a0))
        .collect();
    let c = -partial[partial.len() - 1] / clock.last();
    let values = partial
        .iter()
        .zip(clock.values())
        .map(|(&p, &e)| p + c * e)
        .collect();
    let mut t = TimeCurve::from_values(Arc::clone(grid), values)?;
    pin_ends(&mut t);
    Ok(t)
}

/// The frequency coefficient `T`, checked against its ODE and, for
/// `delta > 2`, for positivity on the interior nodes.
pub fn solve_t(
    a: &TimeCurve,
    primitive: &TimeCurve,
    b: &TimeCurve,
    delta: f64,
    tol: &Tolerances,
) -> Result<TimeCurve> {
    let t = closed_form_t(a, primitive, b)?;
    let residual = t_residual(a, primitive, b, &t)?.sup_norm();
    if residual > tol.residual * residual_scale(a, primitive)? {
        return Err(Error::Residual {
            what: "T equation",
            value: residual,
            tol: tol.residual,
        });
    }
    if delta > 2.0 {
        // Strict positivity is certified per family; the limit family has T = 0.
        let (min, at) = t.min_interior();
        if min < -tol.residual {
            return Err(Error::Sign {
                what: "T on the interior",
                value: min,
                at,
            });
        }
    }
    Ok(t)
}

/// Residual of the `b` equation in expanded form,
/// `e^{8A}(b'' + 16ab' + 8a'b + 64a^2 b) - 2 e^{8A}(a'' + 24aa' + 64a^3)`.
pub fn b_residual(a: &TimeCurve, primitive: &TimeCurve, b: &TimeCurve) -> Result<TimeCurve> {
    let (da, dda) = (a.derivative(), a.second_derivative());
    let (db, ddb) = (b.derivative(), b.second_derivative());
    let n = a.len();
    let values = (0..n)
        .map(|i| {
            let (a, da, dda) = (a.values()[i], da.values()[i], dda.values()[i]);
            let (b, db, ddb) = (b.values()[i], db.values()[i], ddb.values()[i]);
            let g = (8.0 * primitive.values()[i]).exp();
            g * (ddb + 16.0 * a * db + 8.0 * da * b + 64.0 * a * a * b)
                - 2.0 * g * (dda + 24.0 * a * da + 64.0 * a * a * a)
        })
        .collect();
    TimeCurve::from_values(Arc::clone(a.grid()), values)
}

/// Residual of the `T` equation in expanded form,
/// `2 e^{8A}(8ab^2 + 2bb') - e^{8A}(T'' + 8aT') - e^{8A}(a'' + 24aa' + 64a^3)`.
pub fn t_residual(
    a: &TimeCurve,
    primitive: &TimeCurve,
    b: &TimeCurve,
    t: &TimeCurve,
) -> Result<TimeCurve> {
    if !(a.same_grid(primitive) && a.same_grid(b) && a.same_grid(t)) {
        return Err(Error::GridMismatch);
    }
    let (da, dda) = (a.derivative(), a.second_derivative());
    let db = b.derivative();
    let (dt, ddt) = (t.derivative(), t.second_derivative());
    let values = (0..a.len())
        .map(|i| {
            let (a, da, dda) = (a.values()[i], da.values()[i], dda.values()[i]);
            let (b, db) = (b.values()[i], db.values()[i]);
            let g = (8.0 * primitive.values()[i]).exp();
            2.0 * g * (8.0 * a * b * b + 2.0 * b * db)
                - g * (ddt.values()[i] + 8.0 * a * dt.values()[i])
                - g * (dda + 24.0 * a * da + 64.0 * a * a * a)
        })
        .collect();
    TimeCurve::from_values(Arc::clone(a.grid()), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvexityVerdict {
    Positive,
    Nonnegative,
    Failed,
}

/// Two evaluations of `(e^{8A} a)''` on the interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityCertificate {
    /// `e^{8A}(a'' + 24 a a' + 64 a^3)` at every node.
    pub identity: TimeCurve,
    /// Second difference of `e^{8A} a`.
    pub direct: TimeCurve,
    pub min_identity: f64,
    pub min_direct: f64,
    pub argmin: f64,
    /// Largest interior disagreement between the two evaluations.
    pub disagreement: f64,
    pub verdict: ConvexityVerdict,
}

/// Certifies `(e^{8A} a)'' >= 0`. Errors when the identity and the direct
/// second difference disagree by more than `tol` on the interior.
pub fn convexity_certificate(a: &TimeCurve, primitive: &TimeCurve, tol: f64) -> Result<ConvexityCertificate> {
    let identity = convexity_identity(a, primitive)?;
    let direct = a
        .zip_with(primitive, |a, p| (8.0 * p).exp() * a)?
        .second_derivative();
    let n = a.len();
    let disagreement = (1..n - 1)
        .map(|i| (identity.values()[i] - direct.values()[i]).abs())
        .fold(0.0, f64::max);
    if disagreement > tol * identity.sup_norm().max(1.0) {
        return Err(Error::Disagreement {
            what: "(e^{8A}a)'' evaluations",
            value: disagreement,
            tol,
        });
    }
    let (min_identity, argmin) = identity.min_interior();
    let (min_direct, _) = direct.min_interior();
    let verdict = if min_identity > 0.0 {
        ConvexityVerdict::Positive
    } else if min_identity >= -tol {
        ConvexityVerdict::Nonnegative
    } else {
        ConvexityVerdict::Failed
    };
    Ok(ConvexityCertificate {
        identity,
        direct,
        min_identity,
        min_direct,
        argmin,
        disagreement,
        verdict,
    })
}

/// Residuals of the two coefficient identities that collapse the commutator
/// form to `(e^{8A} a)'' |x + xi|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientResiduals {
    /// `(e^{8A} b)'' - 2 (e^{8A} a)''`.
    pub cross: TimeCurve,
    /// `2 (e^{8A} b^2)' - (e^{8A} T')' - (e^{8A} a)''`.
    pub frequency: TimeCurve,
}

impl CoefficientResiduals {
    pub fn sup(&self) -> f64 {
        self.cross.sup_norm().max(self.frequency.sup_norm())
    }
}

/// Both coefficient residuals, each expanded by the product rule so the
/// finite-difference truncation error is visible.
pub fn coefficient_residuals(w: &Weights) -> Result<CoefficientResiduals> {
    Ok(CoefficientResiduals {
        cross: b_residual(&w.quadratic, &w.primitive, &w.cross)?,
        frequency: t_residual(&w.quadratic, &w.primitive, &w.cross, &w.frequency)?,
    })
}

/// [`coefficient_residuals`] with a pass/fail check against `tol`.
pub fn commutator_coefficient_residuals(w: &Weights, tol: f64) -> Result<CoefficientResiduals> {
    let r = coefficient_residuals(w)?;
    let sup = r.sup();
    if sup > tol {
        return Err(Error::Residual {
            what: "commutator coefficient",
            value: sup,
            tol,
        });
    }
    Ok(r)
}

/// The coefficients of `|x|^2`, `x xi` and `|xi|^2` in
/// `e^{8A}(S_t + [S, A]) + (e^{8A})' S`, each from a direct second or first
/// difference of the relevant product.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFormCoefficients {
    pub xx: TimeCurve,
    pub x_xi: TimeCurve,
    pub xi_xi: TimeCurve,
}

impl QuadraticFormCoefficients {
    pub fn new(w: &Weights) -> Result<Self> {
        let gamma = w.gamma();
        let xx = gamma.mul(&w.quadratic)?.second_derivative();
        let x_xi = gamma.mul(&w.cross)?.second_derivative();
        let b2 = w.cross.mul(&w.cross)?;
        let xi_xi = gamma
            .mul(&b2)?
            .derivative()
            .scale(2.0)
            .sub(&gamma.mul(&w.frequency.derivative())?.derivative())?;
        Ok(QuadraticFormCoefficients { xx, x_xi, xi_xi })
    }

    /// `(assembled, collapsed)` at `(t, x, xi)`: the three-term form and
    /// `(e^{8A} a)'' (x + xi)^2`.
    pub fn evaluate(&self, t: f64, x: f64, xi: f64) -> (f64, f64) {
        let pxx = self.xx.eval(t);
        let assembled = pxx * x * x + self.x_xi.eval(t) * x * xi + self.xi_xi.eval(t) * xi * xi;
        (assembled, pxx * (x + xi) * (x + xi))
    }
}

/// Smallest `N >= 1` with `N + b/2 >= 1` and `T <= 2(int_0^t b^2 + N)` at
/// every node.
pub fn choose_n_delta(b: &TimeCurve, t: &TimeCurve) -> Result<f64> {
    let energy = b.mul(b)?.cumulative_integral();
    let from_cross = 1.0 - 0.5 * b.min_value();
    let from_freq = t
        .zip_with(&energy, |t, e| 0.5 * t - e)?
        .max_value();
    Ok(1.0f64.max(from_cross).max(from_freq))
}

/// One step of the weight iteration,
/// `a_{k+1} = a_k + b_k^2 / 8(int_0^t b_k^2 + N)` and
/// `A_{k+1} = A_k + log((int_0^t b_k^2 + N) / (int_0^1 b_k^2 + N)) / 8`.
///
/// The new primitive comes from the logarithmic update, and its
/// finite-difference derivative is checked against `a_{k+1}`.
pub fn iterate_weight(
    a: &TimeCurve,
    primitive: &TimeCurve,
    b: &TimeCurve,
    n_delta: f64,
    tol: &Tolerances,
) -> Result<(TimeCurve, TimeCurve)> {
    if n_delta < 1.0 {
        return Err(Error::Precondition(format!("N_delta = {n_delta} < 1")));
    }
    if !(a.same_grid(primitive) && a.same_grid(b)) {
        return Err(Error::GridMismatch);
    }
    let energy = b.mul(b)?.cumulative_integral();
    let total = energy.last() + n_delta;
    let n = a.len();
    let mut next_a = Vec::with_capacity(n);
    let mut next_p = Vec::with_capacity(n);
    for i in 0..n {
        let level = energy.values()[i] + n_delta;
        let bi = b.values()[i];
        next_a.push(a.values()[i] + bi * bi / (8.0 * level));
        next_p.push(primitive.values()[i] + 0.125 * (level / total).ln());
    }
    next_p[n - 1] = primitive.last();
    let next_a = TimeCurve::from_values(Arc::clone(a.grid()), next_a)?;
    let next_p = TimeCurve::from_values(Arc::clone(a.grid()), next_p)?;
    let mismatch = next_p.derivative().sub(&next_a)?.sup_norm();
    if mismatch > tol.consistency {
        return Err(Error::Residual {
            what: "A' = a consistency",
            value: mismatch,
            tol: tol.consistency,
        });
    }
    Ok((next_a, next_p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyKind {
    /// `k`-th iterate, `k >= 1`.
    Iterate(usize),
    /// Closed-form limit; `t_min` is set when `delta = 2`.
    Limit { t_min: Option<f64> },
    Custom,
}

/// A certified weight family for a given `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFamily {
    pub delta: f64,
    pub radius: f64,
    pub kind: FamilyKind,
    pub weights: Weights,
    pub convexity: ConvexityCertificate,
}

impl std::ops::Deref for WeightFamily {
    type Target = Weights;

    fn deref(&self) -> &Weights {
        &self.weights
    }
}

impl WeightFamily {
    /// Solves for `b` and `T` given `(a, A)` and certifies the result.
    pub fn build(
        delta: f64,
        a: TimeCurve,
        primitive: TimeCurve,
        kind: FamilyKind,
        tol: &Tolerances,
    ) -> Result<Self> {
        if delta < 2.0 {
            return Err(Error::Precondition(format!("delta = {delta} < 2")));
        }
        let b = solve_b(&a, &primitive, delta, tol)?;
        let t = solve_t(&a, &primitive, &b, delta, tol)?;
        let convexity = convexity_certificate(&a, &primitive, tol.residual)?;
        let family = WeightFamily {
            delta,
            radius: radius_for(delta),
            kind,
            weights: Weights {
                quadratic: a,
                primitive,
                cross: b,
                frequency: t,
            },
            convexity,
        };
        family.certify(tol)?;
        Ok(family)
    }

    /// The `k = 1` family `a_1(t) = t / (delta + 2 - 2t)^2`.
    pub fn first(grid: &Arc<TimeGrid>, delta: f64, tol: &Tolerances) -> Result<Self> {
        if delta <= 2.0 {
            return Err(Error::Precondition(format!("delta = {delta} must exceed 2")));
        }
        let a = first_weight(grid, delta);
        let primitive = antiderivative_a(&a);
        Self::build(delta, a, primitive, FamilyKind::Iterate(1), tol)
    }

    /// Checks the structural invariants of the family.
    pub fn certify(&self, tol: &Tolerances) -> Result<()> {
        let w = &self.weights;
        let mismatch = w.primitive.derivative().sub(&w.quadratic)?.sup_norm();
        if mismatch > tol.consistency {
            return Err(Error::Residual {
                what: "A' = a",
                value: mismatch,
                tol: tol.consistency,
            });
        }
        if w.primitive.last() != 0.0 {
            return Err(Error::Precondition("A(end) != 0".into()));
        }
        for (what, c) in [("b", &w.cross), ("T", &w.frequency)] {
            if c.first() != 0.0 || c.last() != 0.0 {
                return Err(Error::Precondition(format!("{what} does not vanish at the ends")));
            }
        }
        if self.convexity.verdict == ConvexityVerdict::Failed {
            return Err(Error::Sign {
                what: "(e^{8A}a)''",
                value: self.convexity.min_identity,
                at: self.convexity.argmin,
            });
        }
        if let FamilyKind::Iterate(_) = self.kind {
            if self.convexity.verdict != ConvexityVerdict::Positive {
                return Err(Error::Sign {
                    what: "(e^{8A}a)'' (strict)",
                    value: self.convexity.min_identity,
                    at: self.convexity.argmin,
                });
            }
            let (bmax, at) = interior_max(&w.cross);
            if bmax >= 0.0 {
                return Err(Error::Sign { what: "b < 0 on the interior", value: bmax, at });
            }
            let (tmin, at) = w.frequency.min_interior();
            if tmin <= 0.0 {
                return Err(Error::Sign { what: "T > 0 on the interior", value: tmin, at });
            }
        }
        Ok(())
    }

    pub fn is_singular(&self) -> bool {
        matches!(self.kind, FamilyKind::Limit { t_min: Some(_) })
    }

    pub fn k(&self) -> Option<usize> {
        match self.kind {
            FamilyKind::Iterate(k) => Some(k),
            _ => None,
        }
    }
}

fn interior_max(c: &TimeCurve) -> (f64, f64) {
    let neg = c.map(|v| -v);
    let (v, at) = neg.min_interior();
    (-v, at)
}

/// Closed-form limit family for `delta >= 2`: `a = t / 4(t^2 + R^2)` with
/// `a e^{8A} = t / delta^2` and `b = 0`. For `delta = 2` the weight `1/(4t)`
/// is singular at the origin and the family lives on `[t_min, 1]`.
pub fn limit_weight(delta: f64, intervals: usize, t_min: f64, tol: &Tolerances) -> Result<WeightFamily> {
    if delta < 2.0 {
        return Err(Error::Precondition(format!("delta = {delta} < 2")));
    }
    let singular = radius_for(delta) == 0.0;
    let grid = if singular {
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(Error::Precondition(format!("t_min = {t_min} must lie in (0, 1)")));
        }
        TimeGrid::new(t_min, 1.0, intervals, crate::timecurve::DEFAULT_ORDER)?
    } else {
        TimeGrid::unit(intervals)?
    };
    let d2 = delta * delta;
    let a = TimeCurve::from_fn(&grid, |t| limit_quadratic(t, delta));
    let r2 = 0.25 * d2 - 1.0;
    let primitive = TimeCurve::from_fn(&grid, |t| {
        0.125 * (4.0 * (t * t + r2.max(0.0)) / d2).ln()
    });
    let kind = FamilyKind::Limit {
        t_min: singular.then_some(t_min),
    };
    let mut values = primitive.values().to_vec();
    let n = values.len();
    values[n - 1] = 0.0;
    let primitive = TimeCurve::from_values(Arc::clone(&grid), values)?;
    if !singular {
        return WeightFamily::build(delta, a, primitive, kind, tol);
    }
    // A uniform grid cannot resolve 1/(4t) near t_min: b comes from its
    // pointwise closed form, T = 0 and (e^{8A}a)'' = 0 are exact for this
    // family, and the certificate uses the exact derivatives of 1/(4t).
    check_boundary_data(&a, delta, tol)?;
    let b = closed_form_b(&a, &primitive)?;
    let t = TimeCurve::zeros(&grid);
    let identity = TimeCurve::from_fn(&grid, |t| {
        let (a, da, dda) = (0.25 / t, -0.25 / (t * t), 0.5 / (t * t * t));
        t.powi(2) * (dda + 24.0 * a * da + 64.0 * a * a * a)
    });
    let (min_identity, argmin) = identity.min_interior();
    let convexity = ConvexityCertificate {
        direct: identity.clone(),
        identity,
        min_identity,
        min_direct: min_identity,
        argmin,
        disagreement: 0.0,
        verdict: if min_identity >= -tol.residual {
            ConvexityVerdict::Nonnegative
        } else {
            ConvexityVerdict::Failed
        },
    };
    Ok(WeightFamily {
        delta,
        radius: 0.0,
        kind,
        weights: Weights {
            quadratic: a,
            primitive,
            cross: b,
            frequency: t,
        },
        convexity,
    })
}

/// Per-iterate record of [`run_iteration`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateSummary {
    pub k: usize,
    pub sup_b: f64,
    pub gap_to_limit: f64,
    /// Minimal feasible `N` for this iterate alone.
    pub n_delta_k: f64,
    pub min_convexity: f64,
    pub min_frequency: f64,
    pub min_riccati: f64,
    pub max_a: f64,
    pub a_mid: f64,
}

#[derive(Debug, Clone)]
pub struct IterationOptions {
    pub intervals: usize,
    pub order: usize,
    pub tol: Tolerances,
    /// Retain every `keep_every`-th family (the last one is always kept).
    pub keep_every: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions {
            intervals: 512,
            order: crate::timecurve::DEFAULT_ORDER,
            tol: Tolerances::default(),
            keep_every: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub delta: f64,
    pub radius: f64,
    pub families: Vec<WeightFamily>,
    pub summaries: Vec<IterateSummary>,
    /// Running maximum of the per-iterate minimal `N`.
    pub n_delta: f64,
    pub converged: bool,
    pub stop_tol: f64,
}

impl IterationTrace {
    pub fn sup_b(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.sup_b).collect()
    }

    pub fn gap_to_limit(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.gap_to_limit).collect()
    }

    pub fn last(&self) -> &IterateSummary {
        self.summaries.last().expect("at least one iterate")
    }

    pub fn final_family(&self) -> &WeightFamily {
        self.families.last().expect("at least one family")
    }

    /// Turns a non-converged trace into [`Error::NonConvergence`].
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.summaries.len(),
                sup_b: self.last().sup_b,
                tol: self.stop_tol,
            })
        }
    }

    /// CSV of the per-iterate summaries.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        use crate::timecurve::fmt_sig12 as f;
        writeln!(
            out,
            "k,sup_b,gap_to_limit,n_delta_k,min_convexity,min_frequency,min_riccati,max_a,a_mid"
        )?;
        for s in &self.summaries {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.k,
                f(s.sup_b),
                f(s.gap_to_limit),
                f(s.n_delta_k),
                f(s.min_convexity),
                f(s.min_frequency),
                f(s.min_riccati),
                f(s.max_a),
                f(s.a_mid)
            )?;
        }
        Ok(())
    }
}

/// Runs the weight iteration from `a_1` for at most `max_iterates` families,
/// stopping once `sup |b_k| < stop_tol`. Invariant violations are errors;
/// running out of iterates is reported through `converged = false`.
pub fn run_iteration(
    delta: f64,
    max_iterates: usize,
    stop_tol: f64,
    opts: &IterationOptions,
) -> Result<IterationTrace> {
    if delta <= 2.0 {
        return Err(Error::Precondition(format!("delta = {delta} must exceed 2")));
    }
    if max_iterates == 0 {
        return Err(Error::Precondition("need at least one iterate".into()));
    }
    let tol = &opts.tol;
    let grid = TimeGrid::new(0.0, 1.0, opts.intervals, opts.order)?;
    let ceiling = 1.0 / (delta * delta - 4.0);
    let mut family = WeightFamily::first(&grid, delta, tol)?;
    let mut trace = IterationTrace {
        delta,
        radius: radius_for(delta),
        families: Vec::new(),
        summaries: Vec::new(),
        n_delta: 1.0,
        converged: false,
        stop_tol,
    };
    let keep_every = opts.keep_every.max(1);
    for k in 1..=max_iterates {
        let w = &family.weights;
        let n_k = choose_n_delta(&w.cross, &w.frequency)?;
        trace.n_delta = trace.n_delta.max(n_k);
        let riccati = w
            .quadratic
            .derivative()
            .zip_with(&w.quadratic, |da, a| da + 4.0 * a * a)?;
        let min_riccati = riccati.min_value();
        if min_riccati < -tol.residual {
            return Err(Error::Chain {
                k,
                detail: format!("a' + 4a^2 = {min_riccati:.3e} < 0"),
            });
        }
        let max_a = w.quadratic.max_value();
        if max_a > ceiling * (1.0 + 1e-12) {
            return Err(Error::Chain {
                k,
                detail: format!("max a = {max_a:.6e} above 1/(delta^2 - 4) = {ceiling:.6e}"),
            });
        }
        let (min_a, at) = w.quadratic.min_interior();
        if min_a <= 0.0 {
            return Err(Error::Chain {
                k,
                detail: format!("a = {min_a:.3e} <= 0 at t = {at}"),
            });
        }
        let sup_b = w.cross.sup_norm();
        let gap = w
            .quadratic
            .map_with_time(|t, a| (a - limit_quadratic(t, delta)).abs())
            .max_value();
        trace.summaries.push(IterateSummary {
            k,
            sup_b,
            gap_to_limit: gap,
            n_delta_k: n_k,
            min_convexity: family.convexity.min_identity,
            min_frequency: w.frequency.min_interior().0,
            min_riccati,
            max_a,
            a_mid: w.quadratic.eval(0.5),
        });
        let done = sup_b < stop_tol;
        if done || k == max_iterates {
            trace.converged = done;
            trace.families.push(family);
            break;
        }
        let (next_a, next_p) =
            iterate_weight(&w.quadratic, &w.primitive, &w.cross, trace.n_delta, tol)?;
        check_chain(k, &w.quadratic, &next_a, &w.cross)?;
        let next = WeightFamily::build(delta, next_a, next_p, FamilyKind::Iterate(k + 1), tol)
            .map_err(|e| Error::Chain {
                k: k + 1,
                detail: e.to_string(),
            })?;
        if (k - 1) % keep_every == 0 {
            trace.families.push(family);
        }
        family = next;
    }
    Ok(trace)
}

fn check_chain(k: usize, a: &TimeCurve, next: &TimeCurve, b: &TimeCurve) -> Result<()> {
    let n = a.len();
    for i in 0..n {
        let (old, new, bi) = (a.values()[i], next.values()[i], b.values()[i]);
        // Strictness is only observable where the increment exceeds rounding.
        let visible = i > 0 && i < n - 1 && bi * bi > 1e-12 * old;
        if new < old || (visible && new <= old) {
            return Err(Error::Chain {
                k,
                detail: format!(
                    "a_{{k+1}} = {new:.6e} not above a_k = {old:.6e} at t = {}",
                    a.grid().node(i)
                ),
            });
        }
    }
    if next.first() != a.first() || next.last() != a.last() {
        return Err(Error::Chain {
            k,
            detail: "boundary values moved".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn antiderivative_of_simple_curves() {
        let grid = TimeGrid::unit(64).unwrap();
        let zero = antiderivative_a(&TimeCurve::zeros(&grid));
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let one = antiderivative_a(&TimeCurve::constant(&grid, 1.0));
        for (t, v) in one.iter() {
            assert_abs_diff_eq!(v, t - 1.0, epsilon = 1e-14);
        }
        assert_eq!(one.last(), 0.0);
    }

    #[test]
    fn solve_b_rejects_bad_boundary_data() {
        let grid = TimeGrid::unit(128).unwrap();
        let a = TimeCurve::zeros(&grid);
        let p = antiderivative_a(&a);
        assert!(matches!(
            solve_b(&a, &p, 3.0, &tol()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn zero_source_gives_zero_t() {
        let grid = TimeGrid::unit(128).unwrap();
        let z = TimeCurve::zeros(&grid);
        let t = closed_form_t(&z, &z, &z).unwrap();
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_weight_convexity_is_64c3() {
        let grid = TimeGrid::unit(128).unwrap();
        let c = 0.3;
        let w = Weights::constant(&grid, c);
        let cert = convexity_certificate(&w.quadratic, &w.primitive, 1e-6).unwrap();
        for (t, v) in cert.identity.iter() {
            let expect = (8.0 * c * (t - 1.0)).exp() * 64.0 * c * c * c;
            assert_abs_diff_eq!(v, expect, epsilon = 1e-10);
        }
        assert_eq!(cert.verdict, ConvexityVerdict::Positive);
    }

    #[test]
    fn first_family_is_certified() {
        let grid = TimeGrid::unit(512).unwrap();
        for delta in [2.5, 3.0, 10.0] {
            let fam = WeightFamily::first(&grid, delta, &tol()).unwrap();
            assert_eq!(fam.convexity.verdict, ConvexityVerdict::Positive);
            assert!(fam.frequency.min_interior().0 > 0.0);
            assert_abs_diff_eq!(fam.quadratic.eval(0.5), 0.5 / (delta + 1.0).powi(2), epsilon = 1e-15);
        }
    }

    #[test]
    fn n_delta_examples() {
        let grid = TimeGrid::unit(64).unwrap();
        let z = TimeCurve::zeros(&grid);
        assert_eq!(choose_n_delta(&z, &z).unwrap(), 1.0);
        let b = TimeCurve::constant(&grid, -2.0);
        assert_eq!(choose_n_delta(&b, &z).unwrap(), 2.0);
    }

    #[test]
    fn zero_cross_term_is_a_fixed_point() {
        let grid = TimeGrid::unit(128).unwrap();
        let a = first_weight(&grid, 3.0);
        let p = antiderivative_a(&a);
        let z = TimeCurve::zeros(&grid);
        let (na, np) = iterate_weight(&a, &p, &z, 1.0, &tol()).unwrap();
        assert_eq!(na, a);
        assert_eq!(np, p);
    }

    #[test]
    fn iterate_rejects_small_n() {
        let grid = TimeGrid::unit(64).unwrap();
        let z = TimeCurve::zeros(&grid);
        assert!(iterate_weight(&z, &z, &z, 0.5, &tol()).is_err());
    }

    #[test]
    fn limit_weight_rejects_subcritical_delta() {
        assert!(limit_weight(1.9, 128, DEFAULT_T_MIN, &tol()).is_err());
    }

    #[test]
    fn corrupted_b_is_detected() {
        let grid = TimeGrid::unit(512).unwrap();
        let fam = WeightFamily::first(&grid, 3.0, &tol()).unwrap();
        let mut w = fam.weights.clone();
        w.cross = w
            .cross
            .map_with_time(|t, b| b + 1e-3 * t * (1.0 - t));
        let r = coefficient_residuals(&w).unwrap();
        assert!(r.cross.sup_norm() > 1e-3);
        assert!(commutator_coefficient_residuals(&w, 1e-6).is_err());
    }
}
