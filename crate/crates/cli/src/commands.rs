//! The verification scenarios behind each subcommand.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use heatlab::functionals::{
    check_logconvexity, sharpness_probe, sharp_weight, verify_theorem_bound, weighted_norm, BoundOptions,
    ConvexityOptions, Verdict, WeightedNormSpec,
};
use heatlab::heat::{evolve, trajectory_residual, EvolveOptions, Field, PotentialSpec, SpaceGrid, Trajectory, DEFAULT_TAIL_TOL};
use heatlab::timecurve::fmt_sig12;
use heatlab::weights::{
    coefficient_residuals, limit_weight, run_iteration, ConvexityVerdict, IterationOptions, Tolerances, WeightFamily,
    DEFAULT_T_MIN,
};
use heatlab::TimeGrid;
use num_complex::Complex64;

use crate::config::{PotentialKind, ScenarioConfig};
use crate::plot::{line_plot, Axes, Series};
use crate::report::{write_manifest, write_verdict, Check, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    ConstructWeights,
    Iterate,
    Evolve,
    VerifyConvexity,
    VerifyBound,
    Sharpness,
    All,
}

impl Command {
    /// Every scenario run by `all`, in output order.
    pub const SCENARIOS: [Command; 6] = [
        Command::ConstructWeights,
        Command::Iterate,
        Command::Evolve,
        Command::VerifyConvexity,
        Command::VerifyBound,
        Command::Sharpness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::ConstructWeights => "construct-weights",
            Command::Iterate => "iterate",
            Command::Evolve => "evolve",
            Command::VerifyConvexity => "verify-convexity",
            Command::VerifyBound => "verify-bound",
            Command::Sharpness => "sharpness",
            Command::All => "all",
        }
    }
}

/// Stop tolerance on `sup |b_k|` for `iterate`.
pub const ITERATE_SUP_B_TOL: f64 = 1e-5;
/// Box sizes probed by `sharpness`.
pub const SHARPNESS_BOXES: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    /// A computation stopped; reported as a failed verdict.
    #[error("{0}")]
    Check(#[from] heatlab::Error),
}

type Run<T> = std::result::Result<T, RunError>;

/// Runs `command` into `cfg.out` and writes its manifest and verdict.
/// Failed checks are part of the returned outcome; only configuration and
/// i/o problems are errors.
pub fn run(command: Command, cfg: &ScenarioConfig) -> Run<Outcome> {
    let dir = cfg.out.as_path();
    fs::create_dir_all(dir)?;
    let outcome = match command {
        Command::All => return run_all(cfg),
        Command::ConstructWeights => construct_weights(cfg, dir),
        Command::Iterate => iterate(cfg, dir),
        Command::Evolve => evolve_scenario(cfg, dir),
        Command::VerifyConvexity => verify_convexity(cfg, dir),
        Command::VerifyBound => verify_bound(cfg, dir),
        Command::Sharpness => sharpness(cfg, dir),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(RunError::Check(e)) => Outcome::failed(e),
        Err(e) => return Err(e),
    };
    write_manifest(dir, command.name(), cfg)?;
    write_verdict(dir, &outcome)?;
    Ok(outcome)
}

/// Runs every scenario concurrently, each into `out/<name>`.
fn run_all(cfg: &ScenarioConfig) -> Run<Outcome> {
    let results: Vec<(Command, Run<Outcome>)> = std::thread::scope(|s| {
        let handles: Vec<_> = Command::SCENARIOS
            .iter()
            .map(|&c| {
                let mut sub = cfg.clone();
                sub.out = cfg.out.join(c.name());
                (c, s.spawn(move || run(c, &sub)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(c, h)| (c, h.join().unwrap_or_else(|_| Err(RunError::Config(format!("{} panicked", c.name()))))))
            .collect()
    });
    let mut outcome = Outcome::default();
    let mut summary = BufWriter::new(fs::File::create(cfg.out.join("summary.csv"))?);
    writeln!(summary, "command,verdict,max_violation")?;
    for (c, r) in results {
        let sub = match r {
            Ok(o) => o,
            Err(RunError::Io(e)) => return Err(RunError::Io(e)),
            Err(e) => Outcome::failed(e),
        };
        let pass = sub.pass();
        writeln!(
            summary,
            "{},{},{}",
            c.name(),
            if pass { "PASS" } else { "FAIL" },
            fmt_sig12(sub.max_violation())
        )?;
        let mut check = Check::holds(format!("{} passes", c.name()), pass);
        if !pass {
            check.value = 1.0 - sub.max_violation().min(1.0);
        }
        outcome.push(check);
    }
    summary.flush()?;
    write_manifest(&cfg.out, Command::All.name(), cfg)?;
    write_verdict(&cfg.out, &outcome)?;
    Ok(outcome)
}

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

fn write_svg(cfg: &ScenarioConfig, dir: &Path, svg: impl FnOnce() -> String) -> io::Result<()> {
    if cfg.plot {
        fs::write(dir.join("plot.svg"), svg())?;
    }
    Ok(())
}

fn potential(cfg: &ScenarioConfig) -> PotentialSpec {
    match cfg.potential {
        PotentialKind::None => PotentialSpec::zero(),
        PotentialKind::GaussReal => PotentialSpec::gaussian(Complex64::new(cfg.amplitude, 0.0)),
        PotentialKind::GaussImag => PotentialSpec::gaussian(Complex64::new(0.0, cfg.amplitude)),
    }
}

fn gaussian_data(grid: SpaceGrid) -> Field {
    Field::from_real(grid, 0.0, |x| (-x * x).exp())
}

/// Largest divisor `d` of `steps` that still leaves at least `frames`
/// stored intervals, so that stored frames are uniformly spaced.
fn store_every_for(steps: usize, frames: usize) -> usize {
    let cap = (steps / frames.max(1)).max(1);
    (1..=cap).rev().find(|d| steps.is_multiple_of(*d)).unwrap_or(1)
}

fn write_weights_csv<W: Write>(mut out: W, fam: &WeightFamily) -> io::Result<()> {
    writeln!(out, "t,a,A,b,T,convexity")?;
    let grid = fam.grid();
    for i in 0..grid.len() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_sig12(grid.node(i)),
            fmt_sig12(fam.quadratic.values()[i]),
            fmt_sig12(fam.primitive.values()[i]),
            fmt_sig12(fam.cross.values()[i]),
            fmt_sig12(fam.frequency.values()[i]),
            fmt_sig12(fam.convexity.identity.values()[i]),
        )?;
    }
    out.flush()
}

fn construct_weights(cfg: &ScenarioConfig, dir: &Path) -> Run<Outcome> {
    let tol = cfg.tol.unwrap_or(1e-6);
    let wtol = Tolerances::default();
    let mut outcome = Outcome::default();
    let limit = limit_weight(cfg.delta, cfg.grid_m, DEFAULT_T_MIN, &wtol)?;
    write_weights_csv(create(dir, "limit.csv")?, &limit)?;
    outcome.push(Check::holds(
        "limit family convexity certified",
        limit.convexity.verdict != ConvexityVerdict::Failed,
    ));
    if cfg.delta > 2.0 {
        let family = WeightFamily::first(&TimeGrid::unit(cfg.grid_m)?, cfg.delta, &wtol)?;
        write_weights_csv(create(dir, "weights.csv")?, &family)?;
        let residuals = coefficient_residuals(&family)?;
        outcome.push(Check::holds(
            "first family convexity positive",
            family.convexity.verdict == ConvexityVerdict::Positive,
        ));
        outcome.push(Check::at_most("cross-weight ODE residual", residuals.cross.sup_norm(), tol));
        outcome.push(Check::at_most("frequency ODE residual", residuals.frequency.sup_norm(), tol));
        outcome.push(Check::at_most(
            "convexity identity vs direct difference",
            family.convexity.disagreement,
            Tolerances::default().residual,
        ));
        write_svg(cfg, dir, || {
            let series = |name, c: &heatlab::TimeCurve| Series { name, points: c.iter().collect() };
            line_plot(
                "first weight family",
                "t",
                "value",
                &[
                    series("a", &family.quadratic),
                    series("b", &family.cross),
                    series("T", &family.frequency),
                    series("limit a", &limit.quadratic),
                ],
                Axes::default(),
            )
        })?;
    } else {
        outcome.note = Some("singular limit only".into());
        write_svg(cfg, dir, || {
            line_plot(
                "limit weight",
                "t",
                "a",
                &[Series { name: "a", points: limit.quadratic.iter().collect() }],
                Axes { log_x: false, log_y: true },
            )
        })?;
    }
    Ok(outcome)
}

fn iterate(cfg: &ScenarioConfig, dir: &Path) -> Run<Outcome> {
    let gap_tol = cfg.tol.unwrap_or(1e-4);
    let opts = IterationOptions { intervals: cfg.grid_m, keep_every: cfg.k, ..Default::default() };
    let trace = run_iteration(cfg.delta, cfg.k, ITERATE_SUP_B_TOL, &opts)?;
    trace.write_csv(create(dir, "trace.csv")?)?;
    write_weights_csv(create(dir, "final.csv")?, trace.final_family())?;
    let last = trace.last();
    let mut outcome = Outcome::default();
    outcome.push(Check::at_most("sup |b_K|", last.sup_b, ITERATE_SUP_B_TOL));
    outcome.push(Check::at_most("sup |a_K - limit|", last.gap_to_limit, gap_tol));
    outcome.push(Check::at_most("max a_k", last.max_a, 1.0 / (cfg.delta * cfg.delta - 4.0)));
    outcome.note = Some(format!("iterates={}", trace.summaries.len()));
    write_svg(cfg, dir, || {
        let pts = |f: fn(&heatlab::weights::IterateSummary) -> f64| {
            trace.summaries.iter().map(|s| (s.k as f64, f(s))).collect()
        };
        line_plot(
            "weight iteration",
            "k",
            "sup norm",
            &[
                Series { name: "sup |b_k|", points: pts(|s| s.sup_b) },
                Series { name: "gap to limit", points: pts(|s| s.gap_to_limit) },
            ],
            Axes { log_x: true, log_y: true },
        )
    })?;
    Ok(outcome)
}

fn evolve_scenario(cfg: &ScenarioConfig, dir: &Path) -> Run<Outcome> {
    let tol = cfg.tol.unwrap_or(1e-4);
    let v = potential(cfg);
    let u0 = gaussian_data(SpaceGrid::new(cfg.box_l, cfg.grid_n)?);
    let every = store_every_for(cfg.steps, 200);
    let traj = evolve(&u0, &v, 0.0, 1.0, &EvolveOptions { steps: cfg.steps, store_every: every, ..Default::default() })?;

    // Keep about twenty frames on disk.
    let stride = traj.len().div_ceil(20).max(1);
    let kept: Vec<Field> = traj
        .frames
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || i + 1 == traj.len())
        .map(|(_, f)| f.clone())
        .collect();
    Trajectory::from_frames(kept, DEFAULT_TAIL_TOL)?.write_dir(&dir.join("trajectory"))?;

    let n0 = u0.norm();
    let mut summary = create(dir, "summary.csv")?;
    writeln!(summary, "t,norm,energy_bound")?;
    let mut excess = f64::NEG_INFINITY;
    for f in &traj.frames {
        let bound = (v.sup_norm() * f.time).exp() * n0;
        excess = excess.max(f.norm() - bound);
        writeln!(summary, "{},{},{}", fmt_sig12(f.time), fmt_sig12(f.norm()), fmt_sig12(bound))?;
    }
    summary.flush()?;

    let mut outcome = Outcome::default();
    outcome.push(Check::at_most("frames over the tail tolerance", traj.tail_flagged.len() as f64, 0.0));
    outcome.push(Check::at_most("energy excess", excess, 1e-6));
    if traj.len() >= 5 {
        let residual = trajectory_residual(&traj, &v)?;
        let mut out = create(dir, "residual.csv")?;
        writeln!(out, "t,residual")?;
        for (t, r) in &residual {
            writeln!(out, "{},{}", fmt_sig12(*t), fmt_sig12(*r))?;
        }
        out.flush()?;
        let worst = residual.iter().map(|p| p.1).fold(0.0, f64::max);
        outcome.push(Check::at_most("relative PDE residual", worst, tol));
    }
    write_svg(cfg, dir, || {
        line_plot(
            "L2 norm against the energy bound",
            "t",
            "norm",
            &[
                Series { name: "||u(t)||", points: traj.frames.iter().map(|f| (f.time, f.norm())).collect() },
                Series {
                    name: "e^{|V| t} ||u(0)||",
                    points: traj.frames.iter().map(|f| (f.time, (v.sup_norm() * f.time).exp() * n0)).collect(),
                },
            ],
            Axes::default(),
        )
    })?;
    Ok(outcome)
}

fn verify_convexity(cfg: &ScenarioConfig, dir: &Path) -> Run<Outcome> {
    let tol = cfg.tol.unwrap_or(1e-4);
    if cfg.steps < 64 {
        return Err(RunError::Config("verify-convexity needs steps >= 64".into()));
    }
    let v = potential(cfg);
    let family = WeightFamily::first(&TimeGrid::unit(cfg.grid_m)?, cfg.delta, &Tolerances::default())?;
    let u0 = gaussian_data(SpaceGrid::new(cfg.box_l, cfg.grid_n)?);
    let every = store_every_for(cfg.steps, 200);
    let traj = evolve(&u0, &v, 0.0, 1.0, &EvolveOptions { steps: cfg.steps, store_every: every, ..Default::default() })?;
    let opts = ConvexityOptions { epsilon: cfg.epsilon, ..Default::default() };
    let report = check_logconvexity(&traj, &family, cfg.xi, &v, 0.0, 1.0, &opts)?;
    report.write_csv(create(dir, "convexity.csv")?)?;

    let mut outcome = Outcome::default();
    outcome.push(Check::at_least("relative min slack", report.relative_min_slack(), -tol));
    outcome.push(Check::at_least("commutator hypothesis min", report.hypothesis_min, -opts.hypothesis_tol));
    outcome.push(Check::at_most("conjugation residual", report.conjugation_residual, opts.conjugation_tol));
    write_svg(cfg, dir, || {
        let h: Vec<(f64, f64)> = report.h.iter().collect();
        let bound: Vec<(f64, f64)> = report
            .h
            .iter()
            .zip(report.slack.iter())
            .map(|((t, h), (_, s))| (t, h + report.epsilon + s))
            .collect();
        line_plot(
            "weighted norm and its convexity bound",
            "t",
            "H",
            &[Series { name: "H(t)", points: h }, Series { name: "bound", points: bound }],
            Axes { log_x: false, log_y: true },
        )
    })?;
    Ok(outcome)
}

fn verify_bound(cfg: &ScenarioConfig, dir: &Path) -> Run<Outcome> {
    let tol = cfg.tol.unwrap_or(1e-2);
    let v = potential(cfg);
    let bound_opts = BoundOptions::default();
    let mut rows = Vec::new();
    let mut out = create(dir, "bound.csv")?;
    writeln!(out, "L,N,steps,lhs_sup,rhs_data,ratio,argmax_t")?;
    let mut curves = Vec::new();
    for scale in [1usize, 2] {
        let (l, n, steps) = (cfg.box_l * scale as f64, cfg.grid_n * scale, cfg.steps * scale);
        let traj = evolve(
            &gaussian_data(SpaceGrid::new(l, n)?),
            &v,
            0.0,
            1.0,
            &EvolveOptions { steps, store_every: store_every_for(steps, 100), ..Default::default() },
        )?;
        let report = verify_theorem_bound(&traj, cfg.r, &bound_opts)?;
        writeln!(
            out,
            "{},{n},{steps},{},{},{},{}",
            fmt_sig12(l),
            fmt_sig12(report.lhs_sup),
            fmt_sig12(report.rhs_data),
            fmt_sig12(report.ratio),
            fmt_sig12(report.argmax_time)
        )?;
        if cfg.plot {
            let pts: Vec<(f64, f64)> = traj
                .frames
                .iter()
                .filter_map(|f| {
                    let spec = WeightedNormSpec::quadratic(sharp_weight(f.time, cfg.r));
                    Some((f.time, weighted_norm(&f.floored(bound_opts.noise_floor), &spec, bound_opts.tail_tol).ok()?))
                })
                .collect();
            curves.push((format!("L = {l}"), pts));
        }
        rows.push(report);
    }
    out.flush()?;

    let (coarse, fine) = (&rows[0], &rows[1]);
    let mut outcome = Outcome::default();
    outcome.push(Check::holds("weighted norms finite", coarse.finite && fine.finite));
    outcome.push(Check::at_most(
        "relative ratio change under refinement",
        (fine.ratio - coarse.ratio).abs() / coarse.ratio.abs(),
        tol,
    ));
    outcome.note = Some(format!("ratio={}", fmt_sig12(fine.ratio)));
    write_svg(cfg, dir, || {
        let series: Vec<Series> = curves.iter().map(|(n, p)| Series { name: n, points: p.clone() }).collect();
        line_plot("weighted norm along the trajectory", "t", "norm", &series, Axes::default())
    })?;
    Ok(outcome)
}

fn sharpness(cfg: &ScenarioConfig, dir: &Path) -> Run<Outcome> {
    let tol = cfg.tol.unwrap_or(1e-8);
    let report = sharpness_probe(cfg.r, cfg.t, cfg.gamma_factor, &SHARPNESS_BOXES, tol)?;
    report.write_csv(create(dir, "sharpness.csv")?)?;
    let expected = if cfg.gamma_factor < 1.0 { Verdict::Convergent } else { Verdict::Divergent };
    let mut outcome = Outcome::default();
    outcome.push(Check::holds(format!("verdict is {expected}"), report.verdict == expected));
    if cfg.gamma_factor == 1.0 {
        outcome.push(Check::at_most("|growth exponent - 1/2|", (report.slope - 0.5).abs(), 0.05));
    }
    outcome.note = Some(format!("verdict={} slope={}", report.verdict, fmt_sig12(report.slope)));
    write_svg(cfg, dir, || {
        line_plot(
            "truncated weighted norms",
            "L",
            "norm",
            &[Series { name: "norm", points: report.norms.clone() }],
            Axes { log_x: true, log_y: true },
        )
    })?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_every_divides_steps() {
        assert_eq!(store_every_for(1000, 200), 5);
        assert_eq!(store_every_for(2000, 100), 20);
        assert_eq!(store_every_for(997, 200), 1);
        assert_eq!(store_every_for(50, 200), 1);
        for steps in [64, 333, 1000, 1234] {
            assert_eq!(steps % store_every_for(steps, 200), 0);
        }
    }

    #[test]
    fn command_names_are_distinct() {
        let mut names: Vec<_> = Command::SCENARIOS.iter().map(|c| c.name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 6);
    }
}
