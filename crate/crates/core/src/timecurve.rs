//! Real scalar functions sampled on a uniform time grid.
//!
//! A [`TimeCurve`] carries its samples together with a shared [`TimeGrid`],
//! which precomputes the finite-difference and cell-quadrature stencils for
//! the chosen accuracy order. Interior derivative stencils are centered with
//! `order + 1` points; near the ends the window is shifted inside the grid
//! and widened to `order + m` points for the `m`-th derivative, so every
//! stencil differentiates polynomials of degree `<= order` exactly.
//! Cumulative integration integrates the local degree-`order` interpolant
//! cell by cell, which is exact for the same polynomials.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Smallest admissible number of grid intervals.
pub const MIN_INTERVALS: usize = 64;

/// Default finite-difference accuracy order.
pub const DEFAULT_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
struct Stencil {
    first: usize,
    weights: Vec<f64>,
}

impl Stencil {
    fn apply(&self, values: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&values[self.first..])
            .map(|(w, v)| w * v)
            .sum()
    }
}

/// Uniform grid `start = t_0 < t_1 < ... < t_M = end` with cached stencils.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    start: f64,
    end: f64,
    intervals: usize,
    order: usize,
    d1: Vec<Stencil>,
    d2: Vec<Stencil>,
    cells: Vec<Stencil>,
}

impl PartialEq for TimeGrid {
    fn eq(&self, other: &Self) -> bool {
        self.start == other.start
            && self.end == other.end
            && self.intervals == other.intervals
            && self.order == other.order
    }
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, intervals: usize, order: usize) -> Result<Arc<Self>> {
        if intervals < MIN_INTERVALS {
            return Err(Error::GridTooCoarse {
                intervals,
                min: MIN_INTERVALS,
            });
        }
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::InvalidGrid(format!(
                "need finite start < end, got [{start}, {end}]"
            )));
        }
        if !(4..=8).contains(&order) || !order.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "order must be 4, 6 or 8, got {order}"
            )));
        }
        let d1 = (0..=intervals)
            .map(|i| derivative_stencil(i, intervals, order, 1))
            .collect();
        let d2 = (0..=intervals)
            .map(|i| derivative_stencil(i, intervals, order, 2))
            .collect();
        let cells = (0..intervals)
            .map(|i| cell_stencil(i, intervals, order))
            .collect();
        Ok(Arc::new(TimeGrid {
            start,
            end,
            intervals,
            order,
            d1,
            d2,
            cells,
        }))
    }

    /// `[0, 1]` with the default order.
    pub fn unit(intervals: usize) -> Result<Arc<Self>> {
        Self::new(0.0, 1.0, intervals, DEFAULT_ORDER)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of nodes, `M + 1`.
    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.end - self.start) / self.intervals as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.intervals {
            self.end
        } else {
            self.start + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.intervals).map(move |i| self.node(i))
    }

    /// Lagrange weights of the `order + 1` nodes nearest to `t`.
    fn interpolation_weights(&self, t: f64) -> (usize, Vec<f64>) {
        let h = self.step();
        let width = self.order + 1;
        let s = (t - self.start) / h;
        let centre = s.floor() as i64 - (self.order as i64) / 2 + 1;
        let first = centre.clamp(0, (self.intervals + 1 - width) as i64) as usize;
        let offsets: Vec<f64> = (0..width).map(|j| (first + j) as f64).collect();
        let weights = (0..width)
            .map(|j| {
                let mut w = 1.0;
                for (m, &om) in offsets.iter().enumerate() {
                    if m != j {
                        w *= (s - om) / (offsets[j] - om);
                    }
                }
                w
            })
            .collect();
        (first, weights)
    }
}

fn window(i: usize, intervals: usize, width: usize) -> usize {
    let half = (width - 1) / 2;
    let first = i.saturating_sub(half);
    first.min(intervals + 1 - width)
}

/// Solves `sum_j w_j s_j^p = rhs[p]` for `p = 0..n`.
fn moment_weights(offsets: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = offsets.len();
    let mut mat = vec![vec![0.0; n + 1]; n];
    for (p, row) in mat.iter_mut().enumerate() {
        for (j, &s) in offsets.iter().enumerate() {
            row[j] = s.powi(p as i32);
        }
        row[n] = rhs[p];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| mat[a][col].abs().total_cmp(&mat[b][col].abs()))
            .unwrap();
        mat.swap(col, pivot);
        for r in col + 1..n {
            let factor = mat[r][col] / mat[col][col];
            for c in col..=n {
                mat[r][c] -= factor * mat[col][c];
            }
        }
    }
    let mut w = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| mat[r][c] * w[c]).sum();
        w[r] = (mat[r][n] - tail) / mat[r][r];
    }
    w
}

fn derivative_stencil(i: usize, intervals: usize, order: usize, m: usize) -> Stencil {
    let centered = order + 1;
    let half = order / 2;
    let width = if i >= half && i + half <= intervals {
        centered
    } else {
        order + m
    };
    let first = window(i, intervals, width);
    let offsets: Vec<f64> = (0..width)
        .map(|j| (first + j) as f64 - i as f64)
        .collect();
    let mut rhs = vec![0.0; width];
    rhs[m] = (1..=m).product::<usize>() as f64;
    Stencil {
        first,
        weights: moment_weights(&offsets, &rhs),
    }
}

/// Weights for `int_{t_i}^{t_{i+1}}` in units of the step.
fn cell_stencil(i: usize, intervals: usize, order: usize) -> Stencil {
    let width = order + 1;
    // Window as centered on the cell midpoint as the grid allows.
    let first = (i + 1).saturating_sub(width / 2).min(intervals + 1 - width);
    let offsets: Vec<f64> = (0..width)
        .map(|j| (first + j) as f64 - i as f64)
        .collect();
    let rhs: Vec<f64> = (0..width).map(|p| 1.0 / (p + 1) as f64).collect();
    Stencil {
        first,
        weights: moment_weights(&offsets, &rhs),
    }
}

/// Samples of a real function on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeCurve {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
}

impl TimeCurve {
    pub fn from_values(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(TimeCurve { grid, values })
    }

    pub fn from_fn(grid: &Arc<TimeGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        TimeCurve {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn constant(grid: &Arc<TimeGrid>, c: f64) -> Self {
        Self::from_fn(grid, |_| c)
    }

    pub fn zeros(grid: &Arc<TimeGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn same_grid(&self, other: &TimeCurve) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    fn check_grid(&self, other: &TimeCurve) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        TimeCurve {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise map with access to the node time.
    pub fn map_with_time(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        TimeCurve {
            grid: Arc::clone(&self.grid),
            values: self
                .grid
                .nodes()
                .zip(&self.values)
                .map(|(t, &v)| f(t, v))
                .collect(),
        }
    }

    pub fn zip_with(&self, other: &TimeCurve, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_grid(other)?;
        Ok(TimeCurve {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &TimeCurve) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &TimeCurve) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &TimeCurve) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn derivative(&self) -> Self {
        let inv_h = 1.0 / self.grid.step();
        let values = self
            .grid
            .d1
            .iter()
            .map(|s| s.apply(&self.values) * inv_h)
            .collect();
        TimeCurve {
            grid: Arc::clone(&self.grid),
            values,
        }
    }

    pub fn second_derivative(&self) -> Self {
        let h = self.grid.step();
        let inv_h2 = 1.0 / (h * h);
        let values = self
            .grid
            .d2
            .iter()
            .map(|s| s.apply(&self.values) * inv_h2)
            .collect();
        TimeCurve {
            grid: Arc::clone(&self.grid),
            values,
        }
    }

    /// `F(t) = int_{start}^t f`.
    pub fn cumulative_integral(&self) -> Self {
        let h = self.grid.step();
        let mut values = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        values.push(0.0);
        for cell in &self.grid.cells {
            acc += h * cell.apply(&self.values);
            values.push(acc);
        }
        TimeCurve {
            grid: Arc::clone(&self.grid),
            values,
        }
    }

    /// `int_{start}^{end} f`.
    pub fn integral(&self) -> f64 {
        let h = self.grid.step();
        self.grid
            .cells
            .iter()
            .map(|cell| h * cell.apply(&self.values))
            .sum()
    }

    /// Local polynomial interpolation; exact at nodes.
    pub fn eval(&self, t: f64) -> f64 {
        let (first, weights) = self.grid.interpolation_weights(t);
        weights
            .iter()
            .zip(&self.values[first..])
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Smallest value over the interior nodes and the time where it occurs.
    pub fn min_interior(&self) -> (f64, f64) {
        let n = self.values.len();
        let (i, v) = self.values[1..n - 1]
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| {
                if v < bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        (v, self.grid.node(i + 1))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid.nodes().zip(self.values.iter().copied())
    }

    /// CSV with header `t,value`, twelve significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,value")?;
        for (t, v) in self.iter() {
            writeln!(out, "{},{}", fmt_sig12(t), fmt_sig12(v))?;
        }
        Ok(())
    }

    /// Reads the format produced by [`TimeCurve::write_csv`]; the nodes must be
    /// uniform to twelve significant digits.
    pub fn read_csv<R: BufRead>(input: R, order: usize) -> Result<Self> {
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if lineno == 0 {
                if line != "t,value" {
                    return Err(Error::Io(format!("bad header `{line}`")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (t, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Io(format!("line {}: expected `t,value`", lineno + 1)))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Io(format!("line {}: {e}", lineno + 1)))
            };
            ts.push(parse(t)?);
            vs.push(parse(v)?);
        }
        if ts.len() < 2 {
            return Err(Error::Io("too few rows".into()));
        }
        let grid = TimeGrid::new(ts[0], ts[ts.len() - 1], ts.len() - 1, order)?;
        for (i, &t) in ts.iter().enumerate() {
            if (t - grid.node(i)).abs() > 1e-10 * (1.0 + t.abs()) {
                return Err(Error::InvalidGrid(format!("non-uniform node {i}: {t}")));
            }
        }
        TimeCurve::from_values(grid, vs)
    }
}

/// Scientific notation with twelve significant digits.
pub fn fmt_sig12(v: f64) -> String {
    format!("{v:.11e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn poly(coeffs: &[f64], t: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    #[test]
    fn rejects_coarse_grids() {
        assert!(matches!(
            TimeGrid::unit(32),
            Err(Error::GridTooCoarse { intervals: 32, .. })
        ));
        assert!(TimeGrid::new(0.0, 1.0, 64, 5).is_err());
        assert!(TimeGrid::new(1.0, 0.0, 64, 4).is_err());
    }

    #[test]
    fn quartics_are_differentiated_exactly() {
        let grid = TimeGrid::unit(64).unwrap();
        let c = [0.3, -1.0, 2.0, 0.5, -1.5];
        let d1 = [-1.0, 4.0, 1.5, -6.0];
        let d2 = [4.0, 3.0, -18.0];
        let f = TimeCurve::from_fn(&grid, |t| poly(&c, t));
        let df = f.derivative();
        let ddf = f.second_derivative();
        for (i, t) in grid.nodes().enumerate() {
            assert_abs_diff_eq!(df.values()[i], poly(&d1, t), epsilon = 1e-9);
            assert_abs_diff_eq!(ddf.values()[i], poly(&d2, t), epsilon = 1e-7);
        }
    }

    #[test]
    fn quartics_are_integrated_exactly() {
        let grid = TimeGrid::new(-0.5, 2.0, 80, 4).unwrap();
        let c = [1.0, 0.0, -3.0, 0.25, 0.7];
        let anti = |t: f64| t - t.powi(3) + 0.0625 * t.powi(4) + 0.14 * t.powi(5);
        let f = TimeCurve::from_fn(&grid, |t| poly(&c, t));
        let big_f = f.cumulative_integral();
        for (i, t) in grid.nodes().enumerate() {
            assert_abs_diff_eq!(big_f.values()[i], anti(t) - anti(-0.5), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(f.integral(), anti(2.0) - anti(-0.5), epsilon = 1e-12);
    }

    #[test]
    fn higher_orders_converge_faster() {
        let err = |order: usize, m: usize| {
            let grid = TimeGrid::new(0.0, 1.0, m, order).unwrap();
            let f = TimeCurve::from_fn(&grid, |t| (12.0 * t).sin());
            let df = f.derivative();
            grid.nodes()
                .zip(df.values())
                .map(|(t, d)| (d - 12.0 * (12.0 * t).cos()).abs())
                .fold(0.0, f64::max)
        };
        for order in [4, 6, 8] {
            let ratio = err(order, 64) / err(order, 128);
            assert!(
                ratio > 0.6 * 2f64.powi(order as i32),
                "order {order}: ratio {ratio}"
            );
        }
    }

    #[test]
    fn interpolation_reproduces_nodes_and_smooth_functions() {
        let grid = TimeGrid::unit(64).unwrap();
        let f = TimeCurve::from_fn(&grid, |t| (2.0 * t).exp());
        assert_eq!(f.eval(grid.node(7)), f.values()[7]);
        for t in [0.0, 0.0011, 0.3337, 0.999, 1.0] {
            assert_abs_diff_eq!(f.eval(t), (2.0 * t).exp(), epsilon = 1e-8);
        }
    }

    #[test]
    fn min_interior_skips_endpoints() {
        let grid = TimeGrid::unit(64).unwrap();
        let f = TimeCurve::from_fn(&grid, |t| t * (1.0 - t) - 0.1 * (t == 0.0) as i32 as f64);
        let (v, at) = f.min_interior();
        assert!(v > 0.0);
        assert!(at > 0.0 && at < 1.0);
    }

    #[test]
    fn csv_round_trip_keeps_twelve_digits() {
        let grid = TimeGrid::unit(64).unwrap();
        let f = TimeCurve::from_fn(&grid, |t| (t * 7.0).sin() / 3.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,value\n0.00000000000e0,0.00000000000e0\n"));
        let back = TimeCurve::read_csv(&buf[..], 4).unwrap();
        for (a, b) in f.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-11 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let g1 = TimeGrid::unit(64).unwrap();
        let g2 = TimeGrid::unit(128).unwrap();
        let a = TimeCurve::zeros(&g1);
        let b = TimeCurve::zeros(&g2);
        assert_eq!(a.add(&b), Err(Error::GridMismatch));
        let c = TimeCurve::zeros(&TimeGrid::unit(64).unwrap());
        assert!(a.add(&c).is_ok());
    }
}
