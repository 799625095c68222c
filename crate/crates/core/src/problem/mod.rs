//! Problem data: coefficients, initial and free-boundary data, measurements,
//! and the constants that define the control set and the cost weights.

pub mod config;
pub mod expr;
mod manufactured;

use std::path::Path;

use crate::error::{Error, Result};

pub use self::config::{ControlSource, ProblemConfig};
pub use self::expr::{CoefficientExpr, ExprError, Var};
pub use self::manufactured::{manufactured_problem, ManufacturedCase, NodalError};

/// Anything that can be evaluated as a function of time alone.
pub trait TimeFunction {
    fn value_at(&self, t: f64) -> Result<f64>;
}

impl TimeFunction for CoefficientExpr {
    /// Evaluates with `x = 0`; callers use this only for expressions in `t`.
    fn value_at(&self, t: f64) -> Result<f64> {
        Ok(self.eval(0.0, t)?)
    }
}

impl<F: Fn(f64) -> f64> TimeFunction for F {
    fn value_at(&self, t: f64) -> Result<f64> {
        Ok(self(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Piecewise linear between samples, constant outside the sampled range.
    Linear,
    /// The sample at `t_j` holds on `(t_{j-1}, t_j]`; matches per-cell series.
    Step,
}

/// A measurement series `t -> value` read from a CSV with header `t,value`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    interpolation: Interpolation,
}

impl SampledSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidProblem(format!(
                "series needs matching non-empty columns (got {} times, {} values)",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidProblem(
                "series times must be strictly increasing".into(),
            ));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem(
                "series contains non-finite entries".into(),
            ));
        }
        Ok(SampledSeries {
            times,
            values,
            interpolation,
        })
    }

    pub fn read_csv(path: &Path, interpolation: Interpolation) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default();
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["t", "value"] {
            return Err(Error::config(
                path,
                format!("expected header `t,value`, found `{header}`"),
            ));
        }
        let (mut times, mut values) = (Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            let mut fields = line.split(',').map(str::trim);
            let parsed = (fields.next(), fields.next(), fields.next());
            let (Some(t), Some(v), None) = parsed else {
                return Err(Error::config(
                    path,
                    format!("row {}: expected two fields", lineno + 1),
                ));
            };
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::config(path, format!("row {}: bad number `{s}`", lineno + 1))
                })
            };
            times.push(parse(t)?);
            values.push(parse(v)?);
        }
        Self::new(times, values, interpolation).map_err(|e| Error::config(path, e.to_string()))
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (ts, vs) = (&self.times, &self.values);
        let last = ts.len() - 1;
        if t <= ts[0] {
            return vs[0];
        }
        if t >= ts[last] {
            return vs[last];
        }
        // first index with ts[j] >= t; here 1 <= j <= last
        let j = ts.partition_point(|&s| s < t);
        match self.interpolation {
            Interpolation::Step => vs[j],
            Interpolation::Linear => {
                let w = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
                vs[j - 1] + w * (vs[j] - vs[j - 1])
            }
        }
    }
}

/// A measured boundary trace: either an expression in `t` or sampled data.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    Expr(CoefficientExpr),
    Series(SampledSeries),
}

impl TimeFunction for Signal {
    fn value_at(&self, t: f64) -> Result<f64> {
        match self {
            Signal::Expr(e) => Ok(e.eval(0.0, t)?),
            Signal::Series(s) => Ok(s.eval(t)),
        }
    }
}

/// How the measurement series enter the discrete cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    /// Cell means `(1/tau) * integral over [t_{k-1}, t_k]`.
    #[default]
    Steklov,
    /// Point values at `t_k`.
    Point,
}

/// Discretization knobs that are not part of the continuous problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Base spatial step is at most `c_h * sqrt(tau)`.
    pub c_h: f64,
    pub measurements: MeasurementMode,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            c_h: 1.0,
            measurements: MeasurementMode::Steklov,
        }
    }
}

/// Coefficients, data, and constants of the inverse Stefan problem on the
/// box `[0, l] x [0, T]`.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub a: CoefficientExpr,
    pub b: CoefficientExpr,
    pub c: CoefficientExpr,
    pub f: CoefficientExpr,
    pub gamma: CoefficientExpr,
    pub chi: CoefficientExpr,
    /// Initial temperature, a function of `x` only.
    pub phi: CoefficientExpr,
    /// Temperature measured at `x = 0`.
    pub nu: Signal,
    /// Temperature measured on the free boundary.
    pub mu: Signal,
    pub horizon: f64,
    pub width: f64,
    pub s0: f64,
    pub delta: f64,
    pub radius: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub a0: f64,
}

/// Lattice resolution used when sampling coefficients over the box.
pub const VALIDATION_LATTICE: usize = 51;

impl ProblemData {
    /// Heat-equation defaults: `a = 1`, every other coefficient and datum zero.
    pub fn heat_equation(horizon: f64, width: f64, s0: f64, delta: f64, radius: f64) -> Self {
        let zero = CoefficientExpr::constant(0.0);
        ProblemData {
            a: CoefficientExpr::constant(1.0),
            b: zero.clone(),
            c: zero.clone(),
            f: zero.clone(),
            gamma: zero.clone(),
            chi: zero.clone(),
            phi: zero.clone(),
            nu: Signal::Expr(zero.clone()),
            mu: Signal::Expr(zero),
            horizon,
            width,
            s0,
            delta,
            radius,
            beta0: 1.0,
            beta1: 1.0,
            a0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProblem(msg));
        let positive = [
            ("T", self.horizon),
            ("l", self.width),
            ("delta", self.delta),
            ("R", self.radius),
            ("a0", self.a0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.delta <= self.s0 && self.s0 <= self.width) {
            return bad(format!(
                "s0 = {} must lie in [delta, l] = [{}, {}]",
                self.s0, self.delta, self.width
            ));
        }
        if !(self.beta0 >= 0.0 && self.beta1 >= 0.0) || self.beta0 + self.beta1 == 0.0 {
            return bad(format!(
                "cost weights must be nonnegative and not both zero (beta0={}, beta1={})",
                self.beta0, self.beta1
            ));
        }
        if self.phi.depends_on(Var::T) {
            return bad("phi must be a function of x only".into());
        }
        for (name, sig) in [("nu", &self.nu), ("mu", &self.mu)] {
            if let Signal::Expr(e) = sig {
                if e.depends_on(Var::X) {
                    return bad(format!("{name} must be a function of t only"));
                }
            }
        }

        let m = VALIDATION_LATTICE - 1;
        let mut min_a = f64::INFINITY;
        for i in 0..=m {
            let x = self.width * i as f64 / m as f64;
            for j in 0..=m {
                let t = self.horizon * j as f64 / m as f64;
                min_a = min_a.min(self.a.eval(x, t)?);
                for e in [&self.b, &self.c, &self.f, &self.gamma, &self.chi] {
                    e.eval(x, t)?;
                }
            }
        }
        if min_a < self.a0 {
            return bad(format!(
                "a(x,t) has sampled minimum {min_a} below a0 = {}",
                self.a0
            ));
        }
        Ok(())
    }

    /// `M = max(|a|, |b|, |c|)` sampled on a `101 x 101` lattice of the box.
    pub fn coefficient_bound(&self) -> Result<f64> {
        let m = 100;
        let mut bound: f64 = 0.0;
        for i in 0..=m {
            let x = self.width * i as f64 / m as f64;
            for j in 0..=m {
                let t = self.horizon * j as f64 / m as f64;
                for e in [&self.a, &self.b, &self.c] {
                    bound = bound.max(e.eval(x, t)?.abs());
                }
            }
        }
        Ok(bound)
    }

    /// Time step below which every step system is uniquely solvable:
    /// `tau_0 = (M^2 / (2 a0) + M)^{-1}`.
    pub fn tau0(&self) -> Result<f64> {
        Ok(solvability_threshold(self.coefficient_bound()?, self.a0))
    }
}

pub fn solvability_threshold(m: f64, a0: f64) -> f64 {
    1.0 / (m * m / (2.0 * a0) + m)
}
