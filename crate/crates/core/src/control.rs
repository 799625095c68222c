//! Discrete controls `([s]_n, [g]_n)`, their discrete Sobolev norms, the
//! sampling map onto the time grid and the lifting back to continuous controls.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::problem::TimeFunction;
use crate::quadrature;
use crate::report::fmt_num;

/// Free-boundary samples `s_0..s_n` and flux samples `g_0..g_n` on a uniform
/// time grid with step `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteControl {
    s: Vec<f64>,
    g: Vec<f64>,
    tau: f64,
}

impl DiscreteControl {
    pub fn new(s: Vec<f64>, g: Vec<f64>, tau: f64) -> Result<Self> {
        if s.len() < 2 || s.len() != g.len() {
            return Err(Error::Control(format!(
                "need n+1 >= 2 samples of both s and g (got {} and {})",
                s.len(),
                g.len()
            )));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Control(format!("tau must be positive, got {tau}")));
        }
        if s.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::Control("control samples must be finite".into()));
        }
        Ok(DiscreteControl { s, g, tau })
    }

    /// `s = s0`, `g = 0` on `n` steps.
    pub fn constant(s0: f64, time: &TimeGrid) -> Self {
        let len = time.steps() + 1;
        DiscreteControl {
            s: vec![s0; len],
            g: vec![0.0; len],
            tau: time.tau(),
        }
    }

    pub fn steps(&self) -> usize {
        self.s.len() - 1
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn horizon(&self) -> f64 {
        self.tau * self.steps() as f64
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::new(self.horizon(), self.steps()).expect("valid control has a valid grid")
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn with_g(&self, g: Vec<f64>) -> Result<Self> {
        Self::new(self.s.clone(), g, self.tau)
    }

    pub fn with_s(&self, s: Vec<f64>) -> Result<Self> {
        Self::new(s, self.g.clone(), self.tau)
    }

    /// `s_{t̄,k} = (s_k - s_{k-1}) / tau` with `s_{-1} = s_0`.
    pub fn s_backward_diff(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            (self.s[k] - self.s[k - 1]) / self.tau
        }
    }

    /// `s_{t̄t,k} = (s_{k+1} - 2 s_k + s_{k-1}) / tau^2` with `s_{-1} = s_0`, `k < n`.
    pub fn s_second_diff(&self, k: usize) -> f64 {
        let prev = if k == 0 { self.s[0] } else { self.s[k - 1] };
        (self.s[k + 1] - 2.0 * self.s[k] + prev) / (self.tau * self.tau)
    }

    pub fn read_csv(path: &Path, horizon: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default();
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["k", "s_k", "g_k"] {
            return Err(Error::config(
                path,
                format!("expected header `k,s_k,g_k`, found `{header}`"),
            ));
        }
        let (mut s, mut g) = (Vec::new(), Vec::new());
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::config(path, format!("row {}: malformed `{line}`", row + 1));
            if fields.len() != 3 || fields[0].parse::<usize>().ok() != Some(row) {
                return Err(bad());
            }
            s.push(fields[1].parse::<f64>().map_err(|_| bad())?);
            g.push(fields[2].parse::<f64>().map_err(|_| bad())?);
        }
        let n = s.len().saturating_sub(1).max(1);
        Self::new(s, g, horizon / n as f64).map_err(|e| Error::config(path, e.to_string()))
    }

    /// CSV with header `k,s_k,g_k`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,s_k,g_k")?;
        for (k, (s, g)) in self.s.iter().zip(&self.g).enumerate() {
            writeln!(out, "{k},{},{}", fmt_num(*s), fmt_num(*g))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport {
    /// `||[s]_n||^2` in the discrete `W_2^2` norm.
    pub s_norm_sq: f64,
    /// `||[g]_n||^2` in the discrete `W_2^1` norm.
    pub g_norm_sq: f64,
}

impl NormReport {
    pub fn max(&self) -> f64 {
        self.s_norm_sq.max(self.g_norm_sq)
    }
}

pub fn discrete_norms(v: &DiscreteControl) -> NormReport {
    let n = v.steps();
    let tau = v.tau;
    let values: f64 = v.s[..n].iter().map(|s| tau * s * s).sum();
    let first: f64 = (1..=n).map(|k| tau * v.s_backward_diff(k).powi(2)).sum();
    let second: f64 = (0..n).map(|k| tau * v.s_second_diff(k).powi(2)).sum();
    let g_values: f64 = v.g[..n].iter().map(|g| tau * g * g).sum();
    let g_first: f64 = (1..=n)
        .map(|k| tau * ((v.g[k] - v.g[k - 1]) / tau).powi(2))
        .sum();
    NormReport {
        s_norm_sq: values + first + second,
        g_norm_sq: g_values + g_first,
    }
}

/// Membership in the discrete control set: box constraints on `s` and the
/// closed ball `max(||s||^2, ||g||^2) <= R^2`.
pub fn is_feasible_discrete(v: &DiscreteControl, delta: f64, width: f64, radius: f64) -> bool {
    v.s.iter().all(|&s| delta <= s && s <= width) && discrete_norms(v).max() <= radius * radius
}

/// Pointwise samples `s_k = s(t_k)`, `g_k = g(t_k)`.
pub fn sample_qn(
    s: &(impl TimeFunction + ?Sized),
    g: &(impl TimeFunction + ?Sized),
    time: &TimeGrid,
) -> Result<DiscreteControl> {
    let nodes = time.nodes();
    let s = nodes
        .iter()
        .map(|&t| s.value_at(t))
        .collect::<Result<Vec<_>>>()?;
    let g = nodes
        .iter()
        .map(|&t| g.value_at(t))
        .collect::<Result<Vec<_>>>()?;
    DiscreteControl::new(s, g, time.tau())
}

/// Values of a lifted control at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlValue {
    pub s: f64,
    pub ds: f64,
    pub g: f64,
}

/// The lifted control: a C^1 piecewise-quadratic boundary with `s(0) = s_0`,
/// `s'(0) = 0`, and a piecewise-linear flux.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousControl {
    discrete: DiscreteControl,
    horizon: f64,
}

pub fn lift_pn(v: &DiscreteControl) -> ContinuousControl {
    ContinuousControl {
        horizon: v.horizon(),
        discrete: v.clone(),
    }
}

impl ContinuousControl {
    pub fn discrete(&self) -> &DiscreteControl {
        &self.discrete
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn node(&self, k: usize) -> f64 {
        if k == self.discrete.steps() {
            self.horizon
        } else {
            k as f64 * self.discrete.tau
        }
    }

    /// Cell `k` with `t_{k-1} <= t <= t_k`, clamped to `1..=n`.
    fn cell_of(&self, t: f64) -> usize {
        let n = self.discrete.steps();
        ((t / self.discrete.tau).ceil() as usize).clamp(1, n)
    }

    /// Evaluates the lifted control; times past `T` are clamped to `T`.
    pub fn eval(&self, t: f64) -> ControlValue {
        let v = &self.discrete;
        let tau = v.tau;
        let t = t.clamp(0.0, self.horizon);
        let k = self.cell_of(t);
        let (s, ds) = if k == 1 {
            let d1 = v.s_backward_diff(1);
            (v.s[0] + t * t / (2.0 * tau) * d1, t / tau * d1)
        } else {
            let r = t - self.node(k - 1);
            let d1 = v.s_backward_diff(k - 1);
            let d2 = v.s_second_diff(k - 1);
            (
                v.s[k - 1] + (r - 0.5 * tau) * d1 + 0.5 * r * r * d2,
                d1 + r * d2,
            )
        };
        let g = v.g[k - 1] + (v.g[k] - v.g[k - 1]) / tau * (t - self.node(k - 1));
        ControlValue { s, ds, g }
    }

    pub fn s_at(&self, t: f64) -> f64 {
        self.eval(t).s
    }

    pub fn g_at(&self, t: f64) -> f64 {
        self.eval(t).g
    }

    /// Second derivative of the boundary on cell `k`, constant there.
    pub fn s_curvature(&self, k: usize) -> f64 {
        if k == 1 {
            self.discrete.s_backward_diff(1) / self.discrete.tau
        } else {
            self.discrete.s_second_diff(k - 1)
        }
    }

    /// `(||s||^2_{W_2^2}, ||g||^2_{W_2^1})` of the lifted control, integrated
    /// exactly cell by cell.
    pub fn sobolev_norms(&self) -> (f64, f64) {
        let n = self.discrete.steps();
        let (mut s_sq, mut g_sq) = (0.0, 0.0);
        for k in 1..=n {
            let (a, b) = (self.node(k - 1), self.node(k));
            let curv = self.s_curvature(k);
            for (t, w) in quadrature::rule(a, b) {
                let cv = self.eval(t);
                s_sq += w * (cv.s * cv.s + cv.ds * cv.ds + curv * curv);
                let dg = (self.discrete.g[k] - self.discrete.g[k - 1]) / self.discrete.tau;
                g_sq += w * (cv.g * cv.g + dg * dg);
            }
        }
        (s_sq, g_sq)
    }

    /// CSV `t,s,ds,g` at `samples + 1` uniform times on `[0, T]`.
    pub fn write_csv<W: Write>(&self, mut out: W, samples: usize) -> std::io::Result<()> {
        writeln!(out, "t,s,ds,g")?;
        let samples = samples.max(1);
        for j in 0..=samples {
            let t = self.horizon * j as f64 / samples as f64;
            let cv = self.eval(t);
            writeln!(
                out,
                "{},{},{},{}",
                fmt_num(t),
                fmt_num(cv.s),
                fmt_num(cv.ds),
                fmt_num(cv.g)
            )?;
        }
        Ok(())
    }
}

impl TimeFunction for ContinuousControl {
    /// The lifted boundary `s^n(t)`.
    fn value_at(&self, t: f64) -> Result<f64> {
        Ok(self.s_at(t))
    }
}

/// Clips `s_1..s_n` into `[delta, l]` (keeping `s_0`), then shrinks the
/// deviation from the center `(s_0, 0)` radially until the ball constraint holds.
pub fn project_to_feasible(
    v: &DiscreteControl,
    delta: f64,
    width: f64,
    radius: f64,
) -> Result<DiscreteControl> {
    let s0 = v.s[0];
    if !(delta <= s0 && s0 <= width) {
        return Err(Error::Control(format!(
            "s_0 = {s0} outside [delta, l] = [{delta}, {width}]; no feasible projection"
        )));
    }
    let mut s = v.s.clone();
    for sk in &mut s[1..] {
        *sk = sk.clamp(delta, width);
    }
    let clipped = DiscreteControl::new(s, v.g.clone(), v.tau)?;
    let r2 = radius * radius;
    if discrete_norms(&clipped).max() <= r2 {
        return Ok(clipped);
    }

    let center = DiscreteControl::new(vec![s0; v.s.len()], vec![0.0; v.g.len()], v.tau)?;
    if discrete_norms(&center).max() > r2 {
        return Err(Error::Control(format!(
            "constant control s = {s0} already violates the ball of radius {radius}"
        )));
    }
    let blend = |lambda: f64| {
        let s = clipped
            .s
            .iter()
            .map(|&sk| s0 + lambda * (sk - s0))
            .collect();
        let g = clipped.g.iter().map(|&gk| lambda * gk).collect();
        DiscreteControl { s, g, tau: v.tau }
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if discrete_norms(&blend(mid)).max() <= r2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(blend(lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctl(s: &[f64], g: &[f64], tau: f64) -> DiscreteControl {
        DiscreteControl::new(s.to_vec(), g.to_vec(), tau).unwrap()
    }

    #[test]
    fn norms_of_constant_control() {
        let r = discrete_norms(&ctl(&[1.0, 1.0, 1.0], &[0.0; 3], 0.5));
        assert_eq!(r.s_norm_sq, 1.0);
        assert_eq!(r.g_norm_sq, 0.0);
    }

    #[test]
    fn norms_by_hand() {
        // s_{t̄} = (0, 2); s_{t̄t} at k=0,1 = (0, 4); 0.5(1+1) + 0.5(0+4) + 0.5(0+16)
        let r = discrete_norms(&ctl(&[1.0, 1.0, 2.0], &[0.0; 3], 0.5));
        assert_eq!(r.s_norm_sq, 11.0);
        // g: 0.5(1 + 4) + 0.5((2-1)^2/0.25 + (3-2)^2/0.25)
        let r = discrete_norms(&ctl(&[1.0; 3], &[1.0, 2.0, 3.0], 0.5));
        assert_eq!(r.g_norm_sq, 6.5);
    }

    #[test]
    fn g_norm_is_quadratic() {
        let g = [0.3, -1.0, 2.5, 0.1];
        let g2: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        let a = discrete_norms(&ctl(&[1.0; 4], &g, 0.25)).g_norm_sq;
        let b = discrete_norms(&ctl(&[1.0; 4], &g2, 0.25)).g_norm_sq;
        assert!((b - 4.0 * a).abs() <= 1e-14 * b);
    }

    #[test]
    fn feasibility() {
        let time = TimeGrid::new(1.0, 4).unwrap();
        let v = DiscreteControl::constant(1.0, &time);
        assert!(is_feasible_discrete(&v, 0.5, 2.0, 1.0));
        assert!(!is_feasible_discrete(&v, 0.5, 2.0, 0.99));
        let low = v.with_s(vec![1.0, 0.4, 1.0, 1.0, 1.0]).unwrap();
        assert!(!is_feasible_discrete(&low, 0.5, 2.0, 10.0));
        // boundary of the closed ball
        let r = discrete_norms(&v).max().sqrt();
        assert!(is_feasible_discrete(&v, 0.5, 2.0, r));
    }

    #[test]
    fn sampling() {
        let time = TimeGrid::new(1.0, 2).unwrap();
        let v = sample_qn(&|t: f64| 1.0 + t * t, &|t: f64| t, &time).unwrap();
        assert_eq!(v.s(), &[1.0, 1.25, 2.0]);
        assert_eq!(v.g(), &[0.0, 0.5, 1.0]);
        let c = sample_qn(&|_| 1.5, &|_| 0.0, &time).unwrap();
        assert_eq!(c.s(), &[1.5; 3]);
    }

    #[test]
    fn lifted_control_branches() {
        let v = ctl(&[1.0, 1.0, 2.0], &[0.0, 0.5, 1.0], 0.5);
        let c = lift_pn(&v);
        assert_eq!(
            c.eval(0.0),
            ControlValue {
                s: 1.0,
                ds: 0.0,
                g: 0.0
            }
        );
        // first branch at tau/2: s_0 + (tau/8) s_{t̄,1}
        let v2 = ctl(&[1.0, 1.5, 2.0], &[0.0; 3], 0.5);
        let half = lift_pn(&v2).eval(0.25);
        assert_eq!(half.s, 1.0 + 0.5 / 8.0 * 1.0);
        // collinear g samples give g(t) = t
        for t in [0.1, 0.5, 0.77, 1.0] {
            assert!((c.g_at(t) - t).abs() < 1e-15);
        }
        // constant s lifts to a constant
        let flat = lift_pn(&ctl(&[1.3; 5], &[0.0; 5], 0.25));
        for t in [0.0, 0.1, 0.6, 1.0, 2.0] {
            let cv = flat.eval(t);
            assert_eq!((cv.s, cv.ds), (1.3, 0.0));
        }
    }

    #[test]
    fn derivative_continuous_at_knots() {
        let v = ctl(&[1.0, 1.1, 1.5, 1.2, 1.4], &[0.0; 5], 0.25);
        let c = lift_pn(&v);
        for k in 1..4 {
            let t = k as f64 * 0.25;
            let left = c.eval(t - 1e-13);
            let right = c.eval(t + 1e-13);
            assert!((left.ds - right.ds).abs() < 1e-10, "k={k}");
            assert!((left.s - right.s).abs() < 1e-12, "k={k}");
            // (s^n)'(t_k) = s_{t̄,k}
            assert!((c.eval(t).ds - v.s_backward_diff(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn lift_converges_at_first_order() {
        let s = |t: f64| 1.0 + t * t;
        let mut errs = Vec::new();
        for n in [8, 16, 32, 64] {
            let time = TimeGrid::new(1.0, n).unwrap();
            let c = lift_pn(&sample_qn(&s, &|_| 0.0, &time).unwrap());
            let err = (0..=1000)
                .map(|j| j as f64 / 1000.0)
                .map(|t| (c.s_at(t) - s(t)).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..2.2).contains(&ratio), "ratio {ratio} in {errs:?}");
        }
    }

    #[test]
    fn projection_cases() {
        let time = TimeGrid::new(1.0, 4).unwrap();
        let v = ctl(
            &[1.0, 1.2, 1.3, 1.2, 1.1],
            &[0.1, 0.2, 0.0, -0.1, 0.0],
            time.tau(),
        );
        assert_eq!(project_to_feasible(&v, 0.5, 2.0, 10.0).unwrap(), v);

        let over = v.with_s(vec![1.0, 1.2, 2.1, 1.2, 1.1]).unwrap();
        let p = project_to_feasible(&over, 0.5, 2.0, 100.0).unwrap();
        assert_eq!(p.s()[2], 2.0);
        assert_eq!(p.s()[0], 1.0);

        // grow g until it leaves a ball that the center satisfies
        let big = v.with_g(vec![8.0, -6.0, 9.0, 4.0, -7.0]).unwrap();
        let radius = 3.0;
        assert!(!is_feasible_discrete(&big, 0.5, 2.0, radius));
        let p = project_to_feasible(&big, 0.5, 2.0, radius).unwrap();
        assert!(is_feasible_discrete(&p, 0.5, 2.0, radius));
        let norm = discrete_norms(&p).max();
        assert!((norm - radius * radius).abs() < 1e-9, "{norm}");

        let bad = ctl(&[0.2, 1.0], &[0.0, 0.0], 1.0);
        assert!(project_to_feasible(&bad, 0.5, 2.0, 10.0).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let v = ctl(&[1.0, 1.1, 1.3], &[0.5, -0.25, 0.125], 0.5);
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("control.csv");
        std::fs::write(&path, &buf).unwrap();
        assert_eq!(DiscreteControl::read_csv(&path, 1.0).unwrap(), v);
    }

    proptest! {
        #[test]
        fn midpoint_identity(n in 1usize..40, seed in prop::collection::vec(-1.0f64..1.0, 41)) {
            let tau = 1.0 / n as f64;
            let s: Vec<f64> = (0..=n).map(|k| 1.0 + 0.4 * seed[k]).collect();
            let v = ctl(&s, &vec![0.0; n + 1], tau);
            let c = lift_pn(&v);
            for k in 1..=n {
                let t = if k == n { 1.0 } else { k as f64 * tau };
                let mid = 0.5 * (s[k] + s[k - 1]);
                prop_assert!((c.s_at(t) - mid).abs() <= 1e-13);
            }
        }

        #[test]
        fn projection_is_feasible_and_idempotent(
            g in prop::collection::vec(-20.0f64..20.0, 9),
            s in prop::collection::vec(0.0f64..3.0, 8),
        ) {
            let mut sv = vec![1.0];
            sv.extend(s);
            let v = ctl(&sv, &g, 0.125);
            let p = project_to_feasible(&v, 0.5, 2.0, 2.0).unwrap();
            prop_assert!(is_feasible_discrete(&p, 0.5, 2.0, 2.0));
            prop_assert_eq!(p.s()[0], 1.0);
            prop_assert_eq!(project_to_feasible(&p, 0.5, 2.0, 2.0).unwrap(), p);
        }
    }
}
