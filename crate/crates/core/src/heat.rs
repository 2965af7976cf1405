//! Heat evolutions `u_t = u_xx + V(x, t) u` on a periodic truncation of the
//! line, the explicit solutions `u_R`, and the conjugated operators `S`, `A`
//! obtained by moving the Gaussian weight through `d/dt - Laplacian`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::timecurve::fmt_sig12;
use crate::weights::{WeightDerivatives, WeightSlice, Weights};

/// Spatial dimension carried by the zero-order term of `A`.
pub const DIMENSION: f64 = 1.0;

/// Smallest admissible number of spatial nodes.
pub const MIN_POINTS: usize = 256;

/// Default tail tolerance: `int_{|x| > 0.9L} |u|^2 <= tol * ||u||^2`.
pub const DEFAULT_TAIL_TOL: f64 = 1e-8;

/// Fraction of the half-width beyond which mass counts as tail.
const TAIL_START: f64 = 0.9;

/// `x_j = -L + 2Lj/N`, `j = 0..N`, periodic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    half_width: f64,
    points: usize,
}

impl SpaceGrid {
    pub fn new(half_width: f64, points: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half-width {half_width} must be positive")));
        }
        if points < MIN_POINTS || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "point count {points} must be a power of two >= {MIN_POINTS}"
            )));
        }
        Ok(SpaceGrid { half_width, points })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(move |j| self.x(j))
    }

    /// Angular wavenumber of FFT bin `j`.
    pub fn wavenumber(&self, j: usize) -> f64 {
        let n = self.points as i64;
        let m = if (j as i64) < n / 2 { j as i64 } else { j as i64 - n };
        PI * m as f64 / self.half_width
    }
}

/// Complex samples of `u(., t)` on a [`SpaceGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: SpaceGrid,
    pub samples: Vec<Complex64>,
    pub time: f64,
}

impl Field {
    pub fn from_fn(grid: SpaceGrid, time: f64, f: impl Fn(f64) -> Complex64) -> Self {
        Field {
            grid,
            samples: grid.nodes().map(f).collect(),
            time,
        }
    }

    pub fn from_real(grid: SpaceGrid, time: f64, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, time, |x| Complex64::new(f(x), 0.0))
    }

    pub fn zeros_like(&self) -> Self {
        Field {
            grid: self.grid,
            samples: vec![Complex64::new(0.0, 0.0); self.samples.len()],
            time: self.time,
        }
    }

    /// `(f, g) = int f conj(g) dx` by the periodic trapezoid rule.
    pub fn inner(&self, other: &Field) -> Complex64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a * b.conj())
            .sum::<Complex64>()
            * self.grid.dx()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `||f - g||`.
    pub fn distance(&self, other: &Field) -> f64 {
        (self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * self.grid.dx())
        .sqrt()
    }

    pub fn tail_fraction(&self) -> f64 {
        tail_fraction(&self.grid, |j| self.samples[j].norm_sqr())
    }

    pub fn check_tail(&self, tol: f64) -> Result<()> {
        let fraction = self.tail_fraction();
        if fraction > tol {
            Err(Error::TailViolation { fraction, tol })
        } else {
            Ok(())
        }
    }

    /// Pointwise product with a real or complex multiplier.
    pub fn multiply(&self, m: impl Fn(f64) -> Complex64) -> Field {
        Field {
            grid: self.grid,
            samples: self
                .grid
                .nodes()
                .zip(&self.samples)
                .map(|(x, z)| m(x) * z)
                .collect(),
            time: self.time,
        }
    }

    pub fn axpy(&self, alpha: Complex64, other: &Field) -> Field {
        Field {
            grid: self.grid,
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + alpha * b)
                .collect(),
            time: self.time,
        }
    }

    /// Copy with samples below `rel * max |u|` set to zero. Weighted norms
    /// with growing weights would otherwise amplify the solver's round-off
    /// floor near the box edge.
    pub fn floored(&self, rel: f64) -> Field {
        let cut = rel * self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut out = self.clone();
        for z in out.samples.iter_mut() {
            if z.norm() < cut {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,re,im")?;
        for (x, z) in self.grid.nodes().zip(&self.samples) {
            writeln!(out, "{},{},{}", fmt_sig12(x), fmt_sig12(z.re), fmt_sig12(z.im))?;
        }
        Ok(())
    }
}

/// Fraction of `sum_j density(j)` carried by nodes with `|x| > 0.9 L`.
pub fn tail_fraction(grid: &SpaceGrid, density: impl Fn(usize) -> f64) -> f64 {
    let cut = TAIL_START * grid.half_width();
    let (mut tail, mut total) = (0.0, 0.0);
    for (j, x) in grid.nodes().enumerate() {
        let d = density(j);
        total += d;
        if x.abs() > cut {
            tail += d;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}

/// Smooth cutoff `exp(-(x / width)^power)` used to localise non-decaying
/// data such as `u_R(., 0)`.
pub fn cutoff_window(x: f64, width: f64, power: i32) -> f64 {
    (-(x / width).powi(power)).exp()
}

/// FFT plans and wavenumbers for one grid.
#[derive(Clone)]
pub struct Spectral {
    grid: SpaceGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: SpaceGrid) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.points();
        Spectral {
            grid,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            k: (0..n).map(|j| grid.wavenumber(j)).collect(),
        }
    }

    pub fn grid(&self) -> SpaceGrid {
        self.grid
    }

    /// Applies the Fourier multiplier `m(k)` to the samples in place.
    pub fn apply_multiplier(&self, samples: &mut [Complex64], m: impl Fn(f64) -> Complex64) {
        let n = samples.len();
        self.forward.process(samples);
        let scale = 1.0 / n as f64;
        for (z, &k) in samples.iter_mut().zip(&self.k) {
            *z *= m(k) * scale;
        }
        self.inverse.process(samples);
    }

    /// Unnormalised forward transform in place.
    pub fn forward(&self, samples: &mut [Complex64]) {
        self.forward.process(samples);
    }

    pub fn derivative(&self, f: &Field) -> Field {
        let mut out = f.clone();
        let nyquist = self.k[self.grid.points() / 2];
        self.apply_multiplier(&mut out.samples, |k| {
            if k == nyquist {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, k)
            }
        });
        out
    }

    pub fn laplacian(&self, f: &Field) -> Field {
        let mut out = f.clone();
        self.apply_multiplier(&mut out.samples, |k| Complex64::new(-k * k, 0.0));
        out
    }

    /// Exact free heat flow over a time `dt`.
    pub fn diffuse(&self, samples: &mut [Complex64], dt: f64) {
        self.apply_multiplier(samples, |k| Complex64::new((-dt * k * k).exp(), 0.0));
    }
}

type PotentialFn = dyn Fn(f64, f64) -> Complex64 + Send + Sync;

/// A bounded complex potential `V(x, t)` with its declared sup-norm.
#[derive(Clone)]
pub struct PotentialSpec {
    label: String,
    eval: Arc<PotentialFn>,
    sup_norm: f64,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec")
            .field("label", &self.label)
            .field("sup_norm", &self.sup_norm)
            .finish()
    }
}

impl PotentialSpec {
    pub fn new(
        label: impl Into<String>,
        sup_norm: f64,
        eval: impl Fn(f64, f64) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        PotentialSpec {
            label: label.into(),
            eval: Arc::new(eval),
            sup_norm,
        }
    }

    pub fn zero() -> Self {
        Self::new("none", 0.0, |_, _| Complex64::new(0.0, 0.0))
    }

    pub fn constant(c: Complex64) -> Self {
        Self::new(format!("constant({c})"), c.norm(), move |_, _| c)
    }

    /// `amplitude * exp(-x^2)`.
    pub fn gaussian(amplitude: Complex64) -> Self {
        Self::new(
            format!("gauss({amplitude})"),
            amplitude.norm(),
            move |x, _| amplitude * (-x * x).exp(),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn eval(&self, x: f64, t: f64) -> Complex64 {
        (self.eval)(x, t)
    }

    pub fn is_zero(&self) -> bool {
        self.sup_norm == 0.0
    }

    /// Samples `V(., t)` on the grid, checking the declared bound.
    pub fn sample(&self, grid: &SpaceGrid, t: f64) -> Result<Vec<Complex64>> {
        let slack = 1e-12 * self.sup_norm.max(1.0);
        grid.nodes()
            .map(|x| {
                let v = self.eval(x, t);
                if v.norm() > self.sup_norm + slack {
                    Err(Error::PotentialBound {
                        value: v.norm(),
                        sup_norm: self.sup_norm,
                    })
                } else {
                    Ok(v)
                }
            })
            .collect()
    }
}

/// Stored frames of an evolution, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Field>,
    /// Indices of frames whose tail fraction exceeded the tolerance.
    pub tail_flagged: Vec<usize>,
}

impl Trajectory {
    pub fn from_frames(frames: Vec<Field>, tail_tol: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Precondition("empty trajectory".into()));
        }
        let tail_flagged = frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.tail_fraction() > tail_tol)
            .map(|(i, _)| i)
            .collect();
        Ok(Trajectory {
            frames,
            tail_flagged,
        })
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.time).collect()
    }

    pub fn first(&self) -> &Field {
        &self.frames[0]
    }

    pub fn last(&self) -> &Field {
        &self.frames[self.frames.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_flagged(&self) -> bool {
        !self.tail_flagged.is_empty()
    }

    /// Uniform frame spacing, if the frame times are uniform.
    pub fn uniform_step(&self) -> Option<f64> {
        let n = self.frames.len();
        if n < 2 {
            return None;
        }
        let dt = (self.last().time - self.first().time) / (n - 1) as f64;
        let uniform = self
            .frames
            .iter()
            .enumerate()
            .all(|(i, f)| (f.time - (self.first().time + i as f64 * dt)).abs() <= 1e-9 * dt.abs().max(1e-300));
        uniform.then_some(dt)
    }

    /// Writes `frames.csv` (`index,t,file`) and one `x,re,im` file per frame.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut index = std::io::BufWriter::new(std::fs::File::create(dir.join("frames.csv"))?);
        writeln!(index, "index,t,file")?;
        for (i, frame) in self.frames.iter().enumerate() {
            let name = format!("frame_{i:05}.csv");
            writeln!(index, "{i},{},{name}", fmt_sig12(frame.time))?;
            let file = std::io::BufWriter::new(std::fs::File::create(dir.join(&name))?);
            frame.write_csv(file)?;
        }
        index.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub steps: usize,
    /// Store every `store_every`-th step (the final step is always stored).
    pub store_every: usize,
    pub tail_tol: f64,
    /// Largest admissible `dt * ||V||_inf`.
    pub max_potential_step: f64,
}

impl EvolveOptions {
    pub fn with_steps(steps: usize) -> Self {
        EvolveOptions {
            steps,
            ..Default::default()
        }
    }
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            steps: 1000,
            store_every: 1,
            tail_tol: DEFAULT_TAIL_TOL,
            max_potential_step: 0.1,
        }
    }
}

/// Strang splitting: half potential step, exact diffusion, half potential
/// step. The potential halves use `V(., t_n)` and `V(., t_{n+1})`.
pub fn evolve(u0: &Field, v: &PotentialSpec, t0: f64, t1: f64, opts: &EvolveOptions) -> Result<Trajectory> {
    if !(t1 > t0) {
        return Err(Error::Precondition(format!("need t0 < t1, got {t0} >= {t1}")));
    }
    if opts.steps == 0 {
        return Err(Error::Precondition("zero steps".into()));
    }
    u0.check_tail(opts.tail_tol)?;
    let dt = (t1 - t0) / opts.steps as f64;
    let kick = dt * v.sup_norm();
    if kick > opts.max_potential_step {
        return Err(Error::StepTooLarge {
            value: kick,
            limit: opts.max_potential_step,
        });
    }
    let spectral = Spectral::new(u0.grid);
    let grid = u0.grid;
    let store_every = opts.store_every.max(1);
    let mut u = u0.samples.clone();
    let mut frames = vec![Field {
        grid,
        samples: u.clone(),
        time: t0,
    }];
    let mut flagged = Vec::new();
    let half_kick = |u: &mut [Complex64], t: f64| -> Result<()> {
        if v.is_zero() {
            return Ok(());
        }
        for (z, vz) in u.iter_mut().zip(v.sample(&grid, t)?) {
            *z *= (0.5 * dt * vz).exp();
        }
        Ok(())
    };
    for n in 0..opts.steps {
        let tn = t0 + n as f64 * dt;
        let tn1 = if n + 1 == opts.steps { t1 } else { t0 + (n + 1) as f64 * dt };
        half_kick(&mut u, tn)?;
        spectral.diffuse(&mut u, dt);
        half_kick(&mut u, tn1)?;
        if (n + 1) % store_every == 0 || n + 1 == opts.steps {
            let frame = Field {
                grid,
                samples: u.clone(),
                time: tn1,
            };
            if frame.tail_fraction() > opts.tail_tol {
                flagged.push(frames.len());
            }
            frames.push(frame);
        }
    }
    Ok(Trajectory {
        frames,
        tail_flagged: flagged,
    })
}

/// Relative PDE residual `||u_t - u_xx - V u|| / ||u||` at the interior
/// frames, with `u_t` from fourth-order central differences across frames.
pub fn trajectory_residual(traj: &Trajectory, v: &PotentialSpec) -> Result<Vec<(f64, f64)>> {
    let dt = traj
        .uniform_step()
        .ok_or_else(|| Error::Precondition("frames must be uniformly spaced".into()))?;
    if traj.len() < 5 {
        return Err(Error::Precondition("need at least five frames".into()));
    }
    let spectral = Spectral::new(traj.first().grid);
    let f = &traj.frames;
    let mut out = Vec::with_capacity(f.len() - 4);
    for i in 2..f.len() - 2 {
        let lap = spectral.laplacian(&f[i]);
        let vs = v.sample(&f[i].grid, f[i].time)?;
        let mut res = f[i].zeros_like();
        for j in 0..res.samples.len() {
            let ut = (-f[i + 2].samples[j] + 8.0 * f[i + 1].samples[j] - 8.0 * f[i - 1].samples[j]
                + f[i - 2].samples[j])
                / (12.0 * dt);
            res.samples[j] = ut - lap.samples[j] - vs[j] * f[i].samples[j];
        }
        out.push((f[i].time, res.norm() / f[i].norm()));
    }
    Ok(out)
}

/// `u_R(x, t) = (t - iR)^{-1/2} exp(-x^2 / 4(t - iR))`, principal branch.
pub fn eval_u_r(x: f64, t: f64, r: f64) -> Result<Complex64> {
    if t == 0.0 && r == 0.0 {
        return Err(Error::Singular("u_R at (t, R) = (0, 0)".into()));
    }
    let s = Complex64::new(t, -r);
    Ok(s.powf(-0.5 * DIMENSION) * (-(x * x) / (4.0 * s)).exp())
}

/// Principal logarithm of `u_R(x, t)`, for weights that would overflow the
/// direct product.
pub fn log_u_r(x: f64, t: f64, r: f64) -> Result<Complex64> {
    if t == 0.0 && r == 0.0 {
        return Err(Error::Singular("u_R at (t, R) = (0, 0)".into()));
    }
    let s = Complex64::new(t, -r);
    Ok(-0.5 * DIMENSION * s.ln() - (x * x) / (4.0 * s))
}

/// `|u_R(x, t)| = (t^2 + R^2)^{-1/4} exp(-t x^2 / 4(t^2 + R^2))`.
pub fn u_r_modulus(x: f64, t: f64, r: f64) -> f64 {
    let q = t * t + r * r;
    q.powf(-0.25 * DIMENSION) * (-t * x * x / (4.0 * q)).exp()
}

pub fn u_r_field(grid: SpaceGrid, t: f64, r: f64) -> Result<Field> {
    eval_u_r(0.0, t, r)?;
    Ok(Field::from_fn(grid, t, |x| eval_u_r(x, t, r).expect("checked above")))
}

/// `S f = f'' + (a' + 4a^2) x^2 f + (b' + 4ab) x xi f + (b^2 - T') xi^2 f`.
pub fn apply_s(f: &Field, w: &WeightSlice, xi: f64, spectral: &Spectral, tail_tol: f64) -> Result<Field> {
    f.check_tail(tail_tol)?;
    let lap = spectral.laplacian(f);
    let cxx = w.da + 4.0 * w.a * w.a;
    let cx = (w.db + 4.0 * w.a * w.b) * xi;
    let c0 = (w.b * w.b - w.dt) * xi * xi;
    let mut out = lap;
    for (j, x) in f.grid.nodes().enumerate() {
        out.samples[j] += (cxx * x * x + cx * x + c0) * f.samples[j];
    }
    Ok(out)
}

/// `A f = -2 (2 a x + b xi) f' - 2 n a f`.
pub fn apply_a(f: &Field, w: &WeightSlice, xi: f64, spectral: &Spectral, tail_tol: f64) -> Result<Field> {
    f.check_tail(tail_tol)?;
    let df = spectral.derivative(f);
    let mut out = df;
    for (j, x) in f.grid.nodes().enumerate() {
        out.samples[j] = -2.0 * (2.0 * w.a * x + w.b * xi) * out.samples[j]
            - 2.0 * DIMENSION * w.a * f.samples[j];
    }
    Ok(out)
}

/// Convenience wrappers that slice the weights at `t` first.
pub fn apply_s_at(f: &Field, w: &Weights, t: f64, xi: f64, tail_tol: f64) -> Result<Field> {
    let spectral = Spectral::new(f.grid);
    apply_s(f, &w.derivatives().slice(t), xi, &spectral, tail_tol)
}

pub fn apply_a_at(f: &Field, w: &Weights, t: f64, xi: f64, tail_tol: f64) -> Result<Field> {
    let spectral = Spectral::new(f.grid);
    apply_a(f, &w.derivatives().slice(t), xi, &spectral, tail_tol)
}

/// Both sides of the commutator positivity identity at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommutatorForm {
    /// `Re (e^{8A}(S_t + [S, A]) f + (e^{8A})' S f, f)`.
    pub lhs: f64,
    /// `int (e^{8A} a)'' (x + xi)^2 |f|^2 dx`.
    pub rhs: f64,
}

impl CommutatorForm {
    pub fn relative_gap(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.rhs.abs().max(f64::MIN_POSITIVE)
    }
}

/// Assembles the commutator form from the operator expression
///
/// ```text
/// S_t + [S, A] = -8a Lap + (a'' + 16aa' + 32a^3) x^2
///              + (b'' + 8ab' + 8a'b + 32a^2 b) x xi + (8ab^2 + 4bb' - T'') xi^2
/// ```
///
/// and compares it with the collapsed integral.
pub fn commutator_form(
    f: &Field,
    w: &WeightSlice,
    xi: f64,
    spectral: &Spectral,
    tail_tol: f64,
) -> Result<CommutatorForm> {
    f.check_tail(tail_tol)?;
    let (a, da, dda) = (w.a, w.da, w.dda);
    let (b, db, ddb) = (w.b, w.db, w.ddb);
    let gamma = w.gamma();
    let dgamma = 8.0 * a * gamma;
    let lap = spectral.laplacian(f);
    let qxx = dda + 16.0 * a * da + 32.0 * a * a * a;
    let qx = (ddb + 8.0 * a * db + 8.0 * da * b + 32.0 * a * a * b) * xi;
    let q0 = (8.0 * a * b * b + 4.0 * b * db - w.ddt) * xi * xi;
    let mut op = f.zeros_like();
    for (j, x) in f.grid.nodes().enumerate() {
        op.samples[j] = -8.0 * a * lap.samples[j] + (qxx * x * x + qx * x + q0) * f.samples[j];
    }
    let s = apply_s(f, w, xi, spectral, f64::INFINITY)?;
    let lhs = gamma * op.inner(f).re + dgamma * s.inner(f).re;
    let curvature = gamma * (dda + 24.0 * a * da + 64.0 * a * a * a);
    let rhs = f
        .grid
        .nodes()
        .zip(&f.samples)
        .map(|(x, z)| curvature * (x + xi) * (x + xi) * z.norm_sqr())
        .sum::<f64>()
        * f.grid.dx();
    Ok(CommutatorForm { lhs, rhs })
}

/// [`commutator_form`] at time `t` from precomputed weight derivatives.
pub fn commutator_form_at(
    f: &Field,
    w: &WeightDerivatives,
    t: f64,
    xi: f64,
    tail_tol: f64,
) -> Result<CommutatorForm> {
    commutator_form(f, &w.slice(t), xi, &Spectral::new(f.grid), tail_tol)
}
