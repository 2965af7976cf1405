//! Checks, verdicts and the per-run manifest.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use heatlab::timecurve::fmt_sig12;

use crate::config::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    /// A yes/no condition; the value is 1 when it holds.
    Holds,
}

/// One measured quantity against its threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check { name: name.into(), value, bound: Bound::AtMost(limit) }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check { name: name.into(), value, bound: Bound::AtLeast(limit) }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            bound: Bound::Holds,
        }
    }

    /// Amount by which the threshold is exceeded; zero when it holds and
    /// infinite for NaN values.
    pub fn violation(&self) -> f64 {
        if self.value.is_nan() {
            return f64::INFINITY;
        }
        match self.bound {
            Bound::AtMost(l) => (self.value - l).max(0.0),
            Bound::AtLeast(l) => (l - self.value).max(0.0),
            Bound::Holds => 1.0 - self.value,
        }
    }

    pub fn ok(&self) -> bool {
        self.violation() == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    /// Free-form tag appended to the verdict line.
    pub note: Option<String>,
}

impl Outcome {
    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    /// A run that stopped on an error before its checks completed.
    pub fn failed(reason: impl std::fmt::Display) -> Self {
        Outcome {
            checks: vec![Check { name: format!("error: {reason}"), value: f64::NAN, bound: Bound::Holds }],
            note: None,
        }
    }

    pub fn pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(Check::ok)
    }

    pub fn max_violation(&self) -> f64 {
        self.checks.iter().map(Check::violation).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Check> {
        self.checks
            .iter()
            .filter(|c| !c.ok())
            .max_by(|a, b| a.violation().total_cmp(&b.violation()))
    }

    pub fn verdict_line(&self) -> String {
        let mut s = format!(
            "{} max_violation={}",
            if self.pass() { "PASS" } else { "FAIL" },
            fmt_sig12(self.max_violation())
        );
        if let Some(w) = self.worst() {
            s.push_str(&format!(" worst=\"{}\"", w.name));
        }
        if let Some(n) = &self.note {
            s.push(' ');
            s.push_str(n);
        }
        s
    }

    pub fn write_checks_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "check,value,bound,limit,violation,ok")?;
        for c in &self.checks {
            let (kind, limit) = match c.bound {
                Bound::AtMost(l) => ("at_most", fmt_sig12(l)),
                Bound::AtLeast(l) => ("at_least", fmt_sig12(l)),
                Bound::Holds => ("holds", String::new()),
            };
            writeln!(
                out,
                "{},{},{kind},{limit},{},{}",
                c.name.replace(',', ";"),
                fmt_sig12(c.value),
                fmt_sig12(c.violation()),
                c.ok()
            )?;
        }
        Ok(())
    }
}

pub fn write_manifest(dir: &Path, command: &str, cfg: &ScenarioConfig) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(dir.join("manifest.txt"))?);
    writeln!(out, "heatlab-cli = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "heatlab = {}", heatlab::VERSION)?;
    writeln!(out, "command = {command}")?;
    for (k, v) in cfg.echo() {
        writeln!(out, "{k} = {v}")?;
    }
    out.flush()
}

pub fn write_verdict(dir: &Path, outcome: &Outcome) -> io::Result<()> {
    fs::write(dir.join("verdict.txt"), outcome.verdict_line() + "\n")?;
    let mut out = io::BufWriter::new(fs::File::create(dir.join("checks.csv"))?);
    outcome.write_checks_csv(&mut out)?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violations_and_verdict_line() {
        let mut o = Outcome::default();
        o.push(Check::at_most("residual", 2e-7, 1e-6));
        o.push(Check::at_least("slack", -1e-3, -1e-4));
        o.push(Check::holds("verdict", true));
        assert!(!o.pass());
        assert!((o.max_violation() - 9e-4).abs() < 1e-15);
        assert!(o.verdict_line().starts_with("FAIL max_violation=9.00000000000e-4 worst=\"slack\""));
        assert!(Outcome::default().verdict_line().starts_with("FAIL"));
        assert!(!Outcome::failed("boom").pass());
        assert_eq!(Check::at_most("x", f64::NAN, 1.0).violation(), f64::INFINITY);
    }
}
