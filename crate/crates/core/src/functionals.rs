//! Weighted norms of heat solutions, the log-convexity bound with its
//! correction terms, the Appell change of variables, and the checks of the
//! Gaussian-decay bound and of its sharpness on the explicit solutions `u_R`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::heat::{
    self, apply_a, apply_s, commutator_form, eval_u_r, Field, PotentialSpec, SpaceGrid, Spectral,
    Trajectory, DEFAULT_TAIL_TOL, DIMENSION,
};
use crate::timecurve::{fmt_sig12, TimeCurve, TimeGrid, DEFAULT_ORDER};
use crate::weights::{WeightSlice, Weights};

/// Quadratic weight `a x^2 + b x xi - T xi^2` frozen at one time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightedNormSpec {
    pub a: f64,
    pub b: f64,
    pub big_t: f64,
    pub xi: f64,
}

impl WeightedNormSpec {
    pub fn quadratic(a: f64) -> Self {
        WeightedNormSpec {
            a,
            ..Default::default()
        }
    }

    pub fn from_slice(w: &WeightSlice, xi: f64) -> Self {
        WeightedNormSpec {
            a: w.a,
            b: w.b,
            big_t: w.big_t,
            xi,
        }
    }

    pub fn exponent(&self, x: f64) -> f64 {
        self.a * x * x + self.b * x * self.xi - self.big_t * self.xi * self.xi
    }
}

/// `||e^{a x^2 + b x xi - T xi^2} u||`, refusing inputs whose weighted tail
/// is not negligible.
pub fn weighted_norm(u: &Field, spec: &WeightedNormSpec, tail_tol: f64) -> Result<f64> {
    let density: Vec<f64> = u
        .grid
        .nodes()
        .zip(&u.samples)
        .map(|(x, z)| {
            let m = z.norm();
            if m == 0.0 {
                0.0
            } else {
                (2.0 * (spec.exponent(x) + m.ln())).exp()
            }
        })
        .collect();
    if density.iter().any(|d| !d.is_finite()) {
        return Err(Error::TailViolation {
            fraction: f64::INFINITY,
            tol: tail_tol,
        });
    }
    let fraction = heat::tail_fraction(&u.grid, |j| density[j]);
    if fraction > tail_tol {
        return Err(Error::TailViolation {
            fraction,
            tol: tail_tol,
        });
    }
    Ok((density.iter().sum::<f64>() * u.grid.dx()).sqrt())
}

/// `e^{a x^2 + b x xi - T xi^2} u` as a field.
pub fn weighted_field(u: &Field, spec: &WeightedNormSpec) -> Field {
    u.multiply(|x| Complex64::new(spec.exponent(x).exp(), 0.0))
}

fn check_positive(gamma: &TimeCurve) -> Result<()> {
    if let Some((t, g)) = gamma.iter().find(|&(_, g)| !(g > 0.0)) {
        return Err(Error::Sign {
            what: "gamma",
            value: g,
            at: t,
        });
    }
    Ok(())
}

fn check_interval(gamma: &TimeCurve, c: f64, d: f64) -> Result<()> {
    let g = gamma.grid();
    let slack = 1e-12 * (g.end() - g.start());
    if !(c < d) || c < g.start() - slack || d > g.end() + slack {
        return Err(Error::Precondition(format!(
            "[{c}, {d}] must be a subinterval of [{}, {}]",
            g.start(),
            g.end()
        )));
    }
    Ok(())
}

/// `theta(t) = int_t^d ds/gamma / int_c^d ds/gamma`.
pub fn theta(t: f64, c: f64, d: f64, gamma: &TimeCurve) -> Result<f64> {
    check_positive(gamma)?;
    check_interval(gamma, c, d)?;
    if t < c || t > d {
        return Err(Error::Precondition(format!("t = {t} outside [{c}, {d}]")));
    }
    let clock = gamma.map(|g| 1.0 / g).cumulative_integral();
    let (ic, id, it) = (clock.eval(c), clock.eval(d), clock.eval(t));
    Ok(((id - it) / (id - ic)).clamp(0.0, 1.0))
}

/// [`theta`] at every node, with `c, d` the ends of the grid.
pub fn theta_curve(gamma: &TimeCurve) -> Result<TimeCurve> {
    check_positive(gamma)?;
    let clock = gamma.map(|g| 1.0 / g).cumulative_integral();
    let total = clock.last();
    Ok(clock.map(|v| ((total - v) / total).clamp(0.0, 1.0)))
}

/// Solves `(gamma M')' = -source`, `M(c) = M(d) = 0` by double quadrature.
/// `c` and `d` must be the ends of the common grid.
pub fn solve_m_epsilon(gamma: &TimeCurve, source: &TimeCurve, c: f64, d: f64, tol: f64) -> Result<TimeCurve> {
    if !gamma.same_grid(source) {
        return Err(Error::GridMismatch);
    }
    check_positive(gamma)?;
    let g = gamma.grid();
    let slack = 1e-12 * (g.end() - g.start());
    if (c - g.start()).abs() > slack || (d - g.end()).abs() > slack {
        return Err(Error::Precondition(format!(
            "[{c}, {d}] must coincide with the grid [{}, {}]",
            g.start(),
            g.end()
        )));
    }
    if let Some((t, s)) = source.iter().find(|&(_, s)| s < 0.0) {
        return Err(Error::Sign {
            what: "source",
            value: s,
            at: t,
        });
    }
    let inv = gamma.map(|g| 1.0 / g);
    let flux = source.cumulative_integral();
    let constant = flux.zip_with(&inv, |s, i| s * i)?.integral() / inv.integral();
    let slope = flux.zip_with(&inv, |s, i| (constant - s) * i)?;
    let m = slope.cumulative_integral();
    let mut values = m.values().to_vec();
    let n = values.len();
    values[n - 1] = 0.0;
    let m = TimeCurve::from_values(Arc::clone(g), values)?;

    let residual = gamma
        .mul(&m.derivative())?
        .derivative()
        .add(source)?
        .sup_norm();
    let scale = source.sup_norm().max(1.0);
    if residual > tol * scale {
        return Err(Error::Residual {
            what: "M",
            value: residual,
            tol: tol * scale,
        });
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityOptions {
    pub epsilon: f64,
    pub tail_tol: f64,
    /// Largest admissible `max_t ||(f_t - S f - A f) - V f|| / ||f||`.
    pub conjugation_tol: f64,
    /// Commutator form must stay above `-hypothesis_tol * scale`.
    pub hypothesis_tol: f64,
    pub residual_tol: f64,
}

impl Default for ConvexityOptions {
    fn default() -> Self {
        ConvexityOptions {
            epsilon: 1e-6,
            tail_tol: DEFAULT_TAIL_TOL,
            conjugation_tol: 1e-3,
            hypothesis_tol: 1e-8,
            residual_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    /// `H(t) = ||f(t)||^2`.
    pub h: TimeCurve,
    pub theta: TimeCurve,
    pub m: TimeCurve,
    pub n_value: f64,
    /// `(H(c)+eps)^theta (H(d)+eps)^{1-theta} e^{M + 2N} - (H + eps)`.
    pub slack: TimeCurve,
    pub epsilon: f64,
    /// Smallest commutator form over the frames, divided by its largest
    /// magnitude.
    pub hypothesis_min: f64,
    /// `max_t ||(f_t - S f - A f) - V f|| / ||f||`.
    pub conjugation_residual: f64,
}

impl ConvexityReport {
    /// Scale against which the slack is judged.
    pub fn scale(&self) -> f64 {
        self.h.max_value() + self.epsilon
    }

    pub fn relative_min_slack(&self) -> f64 {
        self.slack.min_value() / self.scale()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,H,theta,M,slack")?;
        for i in 0..self.h.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_sig12(self.h.grid().node(i)),
                fmt_sig12(self.h.values()[i]),
                fmt_sig12(self.theta.values()[i]),
                fmt_sig12(self.m.values()[i]),
                fmt_sig12(self.slack.values()[i]),
            )?;
        }
        Ok(())
    }
}

/// Fourth-order time derivative of frame `i` from its neighbours.
fn frame_derivative(frames: &[Field], i: usize, h: f64) -> Field {
    let n = frames.len();
    let (offset, coeffs): (usize, [f64; 5]) = if i >= 2 && i + 2 < n {
        (i - 2, [1.0, -8.0, 0.0, 8.0, -1.0])
    } else if i == 0 {
        (0, [-25.0, 48.0, -36.0, 16.0, -3.0])
    } else if i == 1 {
        (0, [-3.0, -10.0, 18.0, -6.0, 1.0])
    } else if i + 2 == n {
        (n - 5, [-1.0, 6.0, -18.0, 10.0, 3.0])
    } else {
        (n - 5, [3.0, -16.0, 36.0, -48.0, 25.0])
    };
    let mut out = frames[i].zeros_like();
    for (k, &c) in coeffs.iter().enumerate() {
        if c != 0.0 {
            for (o, z) in out.samples.iter_mut().zip(&frames[offset + k].samples) {
                *o += c * z;
            }
        }
    }
    for o in out.samples.iter_mut() {
        *o /= 12.0 * h;
    }
    out
}

/// Checks the log-convexity bound for `f(t) = e^{a x^2 + b x xi - T xi^2} u(t)`
/// on the frames of `traj` lying in `[c, d]`.
pub fn check_logconvexity(
    traj: &Trajectory,
    w: &Weights,
    xi: f64,
    v: &PotentialSpec,
    c: f64,
    d: f64,
    opts: &ConvexityOptions,
) -> Result<ConvexityReport> {
    let eps_t = 1e-9 * (d - c).abs().max(1.0);
    let frames: Vec<&Field> = traj
        .frames
        .iter()
        .filter(|f| f.time >= c - eps_t && f.time <= d + eps_t)
        .collect();
    if frames.len() < crate::timecurve::MIN_INTERVALS + 1 {
        return Err(Error::GridTooCoarse {
            intervals: frames.len().saturating_sub(1),
            min: crate::timecurve::MIN_INTERVALS,
        });
    }
    let (t0, t1) = (frames[0].time, frames[frames.len() - 1].time);
    if (t0 - c).abs() > eps_t || (t1 - d).abs() > eps_t {
        return Err(Error::Precondition(format!(
            "frames span [{t0}, {t1}], expected [{c}, {d}]"
        )));
    }
    let wg = w.grid();
    if c < wg.start() - eps_t || d > wg.end() + eps_t {
        return Err(Error::Precondition("weights do not cover [c, d]".into()));
    }
    let intervals = frames.len() - 1;
    let h = (d - c) / intervals as f64;
    for (i, f) in frames.iter().enumerate() {
        if (f.time - (c + i as f64 * h)).abs() > 1e-9 * h {
            return Err(Error::Precondition("frames must be uniformly spaced".into()));
        }
    }
    let grid = TimeGrid::new(c, d, intervals, DEFAULT_ORDER)?;
    let space = frames[0].grid;
    let spectral = Spectral::new(space);
    let deriv = w.derivatives();
    let slices: Vec<WeightSlice> = (0..=intervals).map(|i| deriv.slice(grid.node(i))).collect();

    let conjugated: Vec<Field> = frames
        .iter()
        .zip(&slices)
        .map(|(u, s)| {
            let f = weighted_field(u, &WeightedNormSpec::from_slice(s, xi));
            f.check_tail(opts.tail_tol).map(|_| f)
        })
        .collect::<Result<_>>()?;

    let mut h_vals = Vec::with_capacity(conjugated.len());
    let mut source = Vec::with_capacity(conjugated.len());
    let mut drift = Vec::with_capacity(conjugated.len());
    let mut conj_res: f64 = 0.0;
    let mut hyp_min = f64::INFINITY;
    let mut hyp_scale: f64 = 0.0;
    for (i, (f, s)) in conjugated.iter().zip(&slices).enumerate() {
        let ft = frame_derivative(&conjugated, i, h);
        let sf = apply_s(f, s, xi, &spectral, opts.tail_tol)?;
        let af = apply_a(f, s, xi, &spectral, opts.tail_tol)?;
        let mut r = ft;
        for j in 0..r.samples.len() {
            r.samples[j] -= sf.samples[j] + af.samples[j];
        }
        let vs = v.sample(&space, f.time)?;
        let vf = Field {
            grid: space,
            samples: vs.iter().zip(&f.samples).map(|(a, b)| a * b).collect(),
            time: f.time,
        };
        let hf = f.norm_sqr();
        conj_res = conj_res.max(r.distance(&vf) / hf.sqrt());
        let form = commutator_form(f, s, xi, &spectral, opts.tail_tol)?;
        hyp_min = hyp_min.min(form.lhs);
        hyp_scale = hyp_scale.max(form.lhs.abs()).max(form.rhs.abs());
        let denom = hf + opts.epsilon;
        h_vals.push(hf);
        source.push(s.gamma() * r.norm_sqr() / denom);
        drift.push((r.inner(f).re / denom).abs());
    }
    if conj_res > opts.conjugation_tol {
        return Err(Error::Residual {
            what: "conjugation identity",
            value: conj_res,
            tol: opts.conjugation_tol,
        });
    }
    let hypothesis_min = hyp_min / hyp_scale.max(f64::MIN_POSITIVE);
    if hypothesis_min < -opts.hypothesis_tol {
        return Err(Error::Sign {
            what: "commutator hypothesis",
            value: hypothesis_min,
            at: c,
        });
    }

    let gamma = TimeCurve::from_values(Arc::clone(&grid), slices.iter().map(|s| s.gamma()).collect())?;
    let h_curve = TimeCurve::from_values(Arc::clone(&grid), h_vals)?;
    let source = TimeCurve::from_values(Arc::clone(&grid), source)?;
    let n_value = TimeCurve::from_values(Arc::clone(&grid), drift)?.integral();
    let theta = theta_curve(&gamma)?;
    let m = solve_m_epsilon(&gamma, &source, c, d, opts.residual_tol)?;
    let eps = opts.epsilon;
    let (hc, hd) = (h_curve.first() + eps, h_curve.last() + eps);
    let slack = TimeCurve::from_values(
        Arc::clone(&grid),
        (0..=intervals)
            .map(|i| {
                let th = theta.values()[i];
                hc.powf(th) * hd.powf(1.0 - th) * (m.values()[i] + 2.0 * n_value).exp()
                    - (h_curve.values()[i] + eps)
            })
            .collect(),
    )?;
    Ok(ConvexityReport {
        h: h_curve,
        theta,
        m,
        n_value,
        slack,
        epsilon: eps,
        hypothesis_min,
        conjugation_residual: conj_res,
    })
}

/// `D(t) = alpha (1 - t) + beta t`.
fn appell_denominator(alpha: f64, beta: f64, t: f64) -> f64 {
    alpha * (1.0 - t) + beta * t
}

/// Source time `s = beta t / D(t)` seen by the transformed solution at `t`.
pub fn appell_source_time(alpha: f64, beta: f64, t: f64) -> f64 {
    beta * t / appell_denominator(alpha, beta, t)
}

/// Inverse of [`appell_source_time`].
pub fn appell_target_time(alpha: f64, beta: f64, s: f64) -> f64 {
    alpha * s / (alpha * s + beta * (1.0 - s))
}

/// Exponent on `|y|^2` in the norm identity
/// `||e^{gamma x^2} u~(t)|| = ||e^{E |y|^2} u(s)||`, written in the source
/// time `s`.
pub fn appell_exponent(alpha: f64, beta: f64, gamma: f64, s: f64) -> f64 {
    let q = alpha * s + beta * (1.0 - s);
    gamma * alpha * beta / (q * q) + (alpha - beta) / (4.0 * q)
}

fn check_appell_params(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::Precondition(format!(
            "alpha = {alpha}, beta = {beta} must be positive"
        )));
    }
    Ok(())
}

/// Band-limited (trigonometric) interpolant of a periodic field, taken as
/// zero outside its box.
#[derive(Debug, Clone)]
pub struct BandLimited {
    grid: SpaceGrid,
    coeffs: Vec<Complex64>,
}

impl BandLimited {
    pub fn new(f: &Field) -> Self {
        let spectral = Spectral::new(f.grid);
        let mut coeffs = f.samples.clone();
        spectral.forward(&mut coeffs);
        let n = coeffs.len() as f64;
        for c in coeffs.iter_mut() {
            *c /= n;
        }
        BandLimited { grid: f.grid, coeffs }
    }

    /// Fraction of spectral energy in the top eighth of the band.
    pub fn high_band_fraction(&self) -> f64 {
        let n = self.coeffs.len();
        let cut = 3 * n / 8;
        let (mut hi, mut total) = (0.0, 0.0);
        for (j, c) in self.coeffs.iter().enumerate() {
            let m = if j < n / 2 { j } else { n - j };
            let e = c.norm_sqr();
            total += e;
            if m >= cut {
                hi += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            hi / total
        }
    }

    pub fn eval(&self, y: f64) -> Complex64 {
        let l = self.grid.half_width();
        if y.abs() > l {
            return Complex64::new(0.0, 0.0);
        }
        let n = self.coeffs.len();
        let phase = PI * (y + l) / l;
        let step = Complex64::from_polar(1.0, phase);
        let mut rot = Complex64::new(1.0, 0.0);
        let mut sum = self.coeffs[0];
        for m in 1..n / 2 {
            rot *= step;
            sum += self.coeffs[m] * rot + self.coeffs[n - m] * rot.conj();
        }
        sum + self.coeffs[n / 2] * (phase * (n / 2) as f64).cos()
    }
}

/// Where the untransformed solution comes from.
pub enum AppellSource<'a> {
    /// `u(x, t)` in closed form, sampled at the requested output times.
    ClosedForm {
        u: &'a dyn Fn(f64, f64) -> Complex64,
        times: &'a [f64],
        grid: SpaceGrid,
    },
    /// Stored frames; the output time of each frame is the preimage of its
    /// time under the change of variables.
    Trajectory(&'a Trajectory),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppellOptions {
    pub tail_tol: f64,
    /// Largest admissible high-band energy fraction of a resampled frame.
    pub resample_tol: f64,
    /// Resampled values below `noise_floor * max |u|` are set to zero; a
    /// growing multiplier would amplify them.
    pub noise_floor: f64,
}

impl Default for AppellOptions {
    fn default() -> Self {
        AppellOptions {
            tail_tol: DEFAULT_TAIL_TOL,
            resample_tol: 1e-12,
            noise_floor: 1e-13,
        }
    }
}

/// `u~(x, t) = (sqrt(ab)/D)^{n/2} u(sqrt(ab) x / D, b t / D) e^{(a-b) x^2 / 4D}`.
pub fn appell_transform(source: AppellSource<'_>, alpha: f64, beta: f64, opts: &AppellOptions) -> Result<Trajectory> {
    check_appell_params(alpha, beta)?;
    let root = (alpha * beta).sqrt();
    let frame = |grid: SpaceGrid, t: f64, u: &dyn Fn(f64) -> Complex64| {
        let dd = appell_denominator(alpha, beta, t);
        let pre = (root / dd).powf(0.5 * DIMENSION);
        Field::from_fn(grid, t, |x| {
            pre * u(root * x / dd) * ((alpha - beta) * x * x / (4.0 * dd)).exp()
        })
    };
    let frames = match source {
        AppellSource::ClosedForm { u, times, grid } => times
            .iter()
            .map(|&t| {
                let s = appell_source_time(alpha, beta, t);
                frame(grid, t, &|y| u(y, s))
            })
            .collect(),
        AppellSource::Trajectory(traj) => traj
            .frames
            .iter()
            .map(|f| {
                if !(0.0..=1.0).contains(&f.time) {
                    return Err(Error::Precondition(format!(
                        "source time {} outside [0, 1]",
                        f.time
                    )));
                }
                let interp = BandLimited::new(f);
                let cut = opts.noise_floor * f.samples.iter().map(|z| z.norm()).fold(0.0, f64::max);
                let hi = interp.high_band_fraction();
                if hi > opts.resample_tol {
                    return Err(Error::Resampling {
                        value: hi,
                        tol: opts.resample_tol,
                    });
                }
                let t = appell_target_time(alpha, beta, f.time);
                Ok(frame(f.grid, t, &|y| {
                    let z = interp.eval(y);
                    if z.norm() < cut {
                        Complex64::new(0.0, 0.0)
                    } else {
                        z
                    }
                }))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Trajectory::from_frames(frames, opts.tail_tol)
}

/// `alpha beta / D^2 V(sqrt(alpha beta) x / D, beta t / D)`, with sup-norm
/// `max(alpha/beta, beta/alpha) ||V||`.
pub fn appell_potential(v: &PotentialSpec, alpha: f64, beta: f64) -> Result<PotentialSpec> {
    check_appell_params(alpha, beta)?;
    let inner = v.clone();
    let root = (alpha * beta).sqrt();
    let sup = (alpha / beta).max(beta / alpha) * v.sup_norm();
    Ok(PotentialSpec::new(
        format!("appell({}; {alpha}, {beta})", v.label()),
        sup,
        move |x, t| {
            let dd = appell_denominator(alpha, beta, t);
            alpha * beta / (dd * dd) * inner.eval(root * x / dd, beta * t / dd)
        },
    ))
}

/// Both sides of the norm identity at one transformed time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppellNorms {
    pub t: f64,
    pub s: f64,
    /// `||e^{gamma x^2} u~(t)||`, from the transformed samples.
    pub transformed: f64,
    /// `||e^{E(s) y^2} u(s)||`, from the source samples.
    pub source: f64,
}

impl AppellNorms {
    pub fn relative_gap(&self) -> f64 {
        (self.transformed - self.source).abs() / self.source.abs().max(f64::MIN_POSITIVE)
    }
}

/// Evaluates the norm identity for a closed-form source at time `t`.
pub fn appell_norm_identity(
    u: &dyn Fn(f64, f64) -> Complex64,
    grid: SpaceGrid,
    alpha: f64,
    beta: f64,
    gamma: f64,
    t: f64,
    tail_tol: f64,
) -> Result<AppellNorms> {
    let s = appell_source_time(alpha, beta, t);
    let times = [t];
    let tr = appell_transform(
        AppellSource::ClosedForm { u, times: &times, grid },
        alpha,
        beta,
        &AppellOptions {
            tail_tol: f64::INFINITY,
            ..Default::default()
        },
    )?;
    let transformed = weighted_norm(tr.last(), &WeightedNormSpec::quadratic(gamma), tail_tol)?;
    let us = Field::from_fn(grid, s, |y| u(y, s));
    let e = appell_exponent(alpha, beta, gamma, s);
    let source = weighted_norm(&us, &WeightedNormSpec::quadratic(e), tail_tol)?;
    Ok(AppellNorms {
        t,
        s,
        transformed,
        source,
    })
}

/// Weight of the Gaussian-decay bound, `t / 4(t^2 + R^2)`.
pub fn sharp_weight(t: f64, r: f64) -> f64 {
    t / (4.0 * (t * t + r * r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub lhs_sup: f64,
    /// `||u(0)|| + ||e^{c(T) x^2} u(T)||`.
    pub rhs_data: f64,
    pub ratio: f64,
    /// False when some interior weighted norm is not finite on the box.
    pub finite: bool,
    /// Frame time carrying the largest weight.
    pub weight_peak_time: f64,
    /// Frame time realising `lhs_sup`.
    pub argmax_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    pub tail_tol: f64,
    /// Samples below `noise_floor * max |u|` are treated as zero.
    pub noise_floor: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions {
            tail_tol: DEFAULT_TAIL_TOL,
            noise_floor: 1e-12,
        }
    }
}

/// `sup_t ||e^{t x^2 / 4(t^2 + R^2)} u(t)||` over the stored frames against
/// the data term, with the frame times measured from the first frame.
pub fn verify_theorem_bound(traj: &Trajectory, r: f64, opts: &BoundOptions) -> Result<BoundReport> {
    if !(r > 0.0) {
        return Err(Error::Precondition(format!("R = {r} must be positive")));
    }
    let tail_tol = opts.tail_tol;
    let frames: Vec<Field> = traj.frames.iter().map(|f| f.floored(opts.noise_floor)).collect();
    let t0 = frames[0].time;
    let last = &frames[frames.len() - 1];
    let end_weight = sharp_weight(last.time - t0, r);
    let end = weighted_norm(last, &WeightedNormSpec::quadratic(end_weight), tail_tol).map_err(|e| match e {
        Error::TailViolation { .. } => Error::Precondition(format!(
            "final-time weighted norm is not finite on this box ({e})"
        )),
        other => other,
    })?;
    let rhs_data = frames[0].norm() + end;
    let mut lhs_sup: f64 = 0.0;
    let mut argmax_time = t0;
    let mut finite = true;
    let mut peak = (f64::NEG_INFINITY, t0);
    for f in &frames {
        let w = sharp_weight(f.time - t0, r);
        if w > peak.0 {
            peak = (w, f.time);
        }
        match weighted_norm(f, &WeightedNormSpec::quadratic(w), tail_tol) {
            Ok(n) => {
                if n > lhs_sup {
                    lhs_sup = n;
                    argmax_time = f.time;
                }
            }
            Err(Error::TailViolation { .. }) => finite = false,
            Err(e) => return Err(e),
        }
    }
    let lhs_sup = if finite { lhs_sup } else { f64::INFINITY };
    Ok(BoundReport {
        lhs_sup,
        rhs_data,
        ratio: lhs_sup / rhs_data,
        finite,
        weight_peak_time: peak.1,
        argmax_time,
    })
}

/// `log sup_t ||e^{t x^2/4(t^2+R^2)} u(t)||` for each `R`; `None` where the
/// weighted norm is not finite on the box. As `R -> 0` the weight tends to
/// `x^2 / 4t` and the profile blows up for every nonzero solution.
pub fn blow_up_profile(traj: &Trajectory, radii: &[f64], opts: &BoundOptions) -> Result<Vec<(f64, Option<f64>)>> {
    let frames: Vec<Field> = traj.frames.iter().map(|f| f.floored(opts.noise_floor)).collect();
    let t0 = frames[0].time;
    let tail_tol = opts.tail_tol;
    radii
        .iter()
        .map(|&r| {
            if !(r > 0.0) {
                return Err(Error::Precondition(format!("R = {r} must be positive")));
            }
            let mut best = f64::NEG_INFINITY;
            for f in &frames {
                let w = sharp_weight(f.time - t0, r);
                match weighted_norm(f, &WeightedNormSpec::quadratic(w), tail_tol) {
                    Ok(n) => best = best.max(n.ln()),
                    Err(Error::TailViolation { .. }) => return Ok((r, None)),
                    Err(e) => return Err(e),
                }
            }
            Ok((r, Some(best)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Convergent,
    Divergent,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Convergent => "convergent",
            Verdict::Divergent => "divergent",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessReport {
    pub r: f64,
    pub t: f64,
    pub gamma: f64,
    /// `(L, ||e^{gamma x^2} u_R(t)||_{L^2(-L, L)})`.
    pub norms: Vec<(f64, f64)>,
    pub verdict: Verdict,
    /// Least-squares slope of `log norm` against `log L`.
    pub slope: f64,
}

impl SharpnessReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "L,norm")?;
        for (l, n) in &self.norms {
            writeln!(out, "{},{}", fmt_sig12(*l), fmt_sig12(*n))?;
        }
        Ok(())
    }
}

/// Quadrature nodes per unit length in [`sharpness_probe`].
const PROBE_DENSITY: f64 = 200.0;

/// Truncated weighted norms of `u_R(., t)` with `gamma = factor * t/4(t^2+R^2)`
/// on growing boxes; convergent iff the last two agree to `tol` relatively.
pub fn sharpness_probe(r: f64, t: f64, gamma_factor: f64, boxes: &[f64], tol: f64) -> Result<SharpnessReport> {
    if !(gamma_factor > 0.0) {
        return Err(Error::Precondition(format!("gamma factor {gamma_factor} must be positive")));
    }
    if boxes.len() < 2 || boxes.windows(2).any(|w| !(w[1] > w[0])) || !(boxes[0] > 0.0) {
        return Err(Error::Precondition("need at least two increasing box sizes".into()));
    }
    eval_u_r(0.0, t, r)?;
    let gamma = gamma_factor * sharp_weight(t, r);
    let density = |x: f64| {
        let log_u = heat::log_u_r(x, t, r).expect("checked above");
        (2.0 * (gamma * x * x + log_u.re)).exp()
    };
    let norms: Vec<(f64, f64)> = boxes
        .iter()
        .map(|&l| {
            // Composite Simpson on [0, L], doubled by symmetry.
            let mut n = (PROBE_DENSITY * l).ceil() as usize;
            n += n % 2;
            let h = l / n as f64;
            let mut sum = density(0.0) + density(l);
            for i in 1..n {
                sum += if i % 2 == 1 { 4.0 } else { 2.0 } * density(i as f64 * h);
            }
            (l, (2.0 * sum * h / 3.0).sqrt())
        })
        .collect();
    let k = norms.len();
    let (prev, last) = (norms[k - 2].1, norms[k - 1].1);
    let verdict = if (last - prev).abs() <= tol * last {
        Verdict::Convergent
    } else {
        Verdict::Divergent
    };
    let xs: Vec<f64> = norms.iter().map(|(l, _)| l.ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|(_, n)| n.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(SharpnessReport {
        r,
        t,
        gamma,
        norms,
        verdict,
        slope: sxy / sxx,
    })
}
