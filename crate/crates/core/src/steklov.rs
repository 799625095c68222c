//! Steklov (cell and interval) averages of coefficients, data, and traces on
//! the free boundary.

use std::collections::HashMap;
use std::sync::RwLock;

use crate::control::ContinuousControl;
use crate::error::Result;
use crate::grid::{SpatialGrid, TimeGrid};
use crate::problem::{CoefficientExpr, MeasurementMode, ProblemData, TimeFunction};
use crate::quadrature;

/// `d_ik`: mean of `d` over `[x_i, x_{i+1}] x [t_{k-1}, t_k]`, `1 <= k <= n`.
pub fn cell_average(
    d: &CoefficientExpr,
    grid: &SpatialGrid,
    time: &TimeGrid,
    i: usize,
    k: usize,
) -> Result<f64> {
    let xs = (grid.node(i), grid.node(i + 1));
    Ok(quadrature::mean_2d(xs, time.cell(k), |x, t| d.eval(x, t))?)
}

/// `h_k`: mean of a time function over `[t_{k-1}, t_k]`.
pub fn time_average(h: &(impl TimeFunction + ?Sized), time: &TimeGrid, k: usize) -> Result<f64> {
    let (a, b) = time.cell(k);
    quadrature::mean(a, b, |t| h.value_at(t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceAverages {
    /// Mean of `gamma(s(t), t) s'(t)` over the cell.
    pub gamma_ds: f64,
    /// Mean of `chi(s(t), t)` over the cell.
    pub chi: f64,
}

const TRACE_PANELS: usize = 2;

/// Means over `[t_{k-1}, t_k]` of the free-boundary traces along the lifted
/// boundary `s^n`.
pub fn trace_averages(
    control: &ContinuousControl,
    gamma: &CoefficientExpr,
    chi: &CoefficientExpr,
    time: &TimeGrid,
    k: usize,
) -> Result<TraceAverages> {
    let (a, b) = time.cell(k);
    let width = (b - a) / TRACE_PANELS as f64;
    let (mut gamma_ds, mut chi_sum) = (0.0, 0.0);
    for p in 0..TRACE_PANELS {
        let lo = a + p as f64 * width;
        let hi = if p + 1 == TRACE_PANELS { b } else { lo + width };
        for (t, w) in quadrature::rule(lo, hi) {
            let cv = control.eval(t);
            gamma_ds += w * gamma.eval(cv.s, t)? * cv.ds;
            chi_sum += w * chi.eval(cv.s, t)?;
        }
    }
    Ok(TraceAverages {
        gamma_ds: gamma_ds / (b - a),
        chi: chi_sum / (b - a),
    })
}

/// Memoized cell averages of `a, b, c, f` for one problem.
///
/// Keys are the exact bit patterns of the cell corners, so a rebuilt grid that
/// reproduces a cell reuses its entry. Reads take a shared lock; inserts are
/// single-writer.
/// Entries kept before the memo is dropped and refilled.
pub const MEMO_CAP: usize = 1 << 20;

#[derive(Debug)]
pub struct CoefficientAverager<'p> {
    problem: &'p ProblemData,
    memo: RwLock<HashMap<[u64; 4], [f64; 4]>>,
}

impl<'p> CoefficientAverager<'p> {
    pub fn new(problem: &'p ProblemData) -> Self {
        CoefficientAverager {
            problem,
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn problem(&self) -> &'p ProblemData {
        self.problem
    }

    /// `[a_ik, b_ik, c_ik, f_ik]`.
    pub fn cell(&self, x: (f64, f64), t: (f64, f64)) -> Result<[f64; 4]> {
        let key = [x.0.to_bits(), x.1.to_bits(), t.0.to_bits(), t.1.to_bits()];
        if let Some(hit) = self.memo.read().expect("memo lock").get(&key) {
            return Ok(*hit);
        }
        let p = self.problem;
        let mut out = [0.0; 4];
        for (slot, e) in out.iter_mut().zip([&p.a, &p.b, &p.c, &p.f]) {
            *slot = quadrature::mean_2d(x, t, |x, t| e.eval(x, t))?;
        }
        let mut memo = self.memo.write().expect("memo lock");
        if memo.len() >= MEMO_CAP {
            memo.clear();
        }
        memo.insert(key, out);
        Ok(out)
    }

    pub fn memo_len(&self) -> usize {
        self.memo.read().expect("memo lock").len()
    }

    /// All averages one forward solve needs.
    pub fn averages(
        &self,
        grid: &SpatialGrid,
        time: &TimeGrid,
        control: &ContinuousControl,
        measurements: MeasurementMode,
    ) -> Result<AveragedCoefficients> {
        let p = self.problem;
        let n = time.steps();
        let cells = grid.last_index();
        let mut coeffs = Vec::with_capacity(n * cells);
        let mut flux = Vec::with_capacity(n);
        let mut nu = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let mut traces = Vec::with_capacity(n);
        let g_lifted = |t: f64| control.g_at(t);
        for k in 1..=n {
            let tk = time.cell(k);
            for i in 0..cells {
                coeffs.push(self.cell((grid.node(i), grid.node(i + 1)), tk)?);
            }
            flux.push(time_average(&g_lifted, time, k)?);
            match measurements {
                MeasurementMode::Steklov => {
                    nu.push(time_average(&p.nu, time, k)?);
                    mu.push(time_average(&p.mu, time, k)?);
                }
                MeasurementMode::Point => {
                    nu.push(p.nu.value_at(time.node(k))?);
                    mu.push(p.mu.value_at(time.node(k))?);
                }
            }
            traces.push(trace_averages(control, &p.gamma, &p.chi, time, k)?);
        }
        Ok(AveragedCoefficients {
            cells,
            coeffs,
            flux,
            nu,
            mu,
            traces,
        })
    }
}

/// Averaged inputs of the step systems, indexed by cell `i` and step `k >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedCoefficients {
    cells: usize,
    coeffs: Vec<[f64; 4]>,
    flux: Vec<f64>,
    nu: Vec<f64>,
    mu: Vec<f64>,
    traces: Vec<TraceAverages>,
}

impl AveragedCoefficients {
    fn at(&self, i: usize, k: usize) -> &[f64; 4] {
        &self.coeffs[(k - 1) * self.cells + i]
    }

    pub fn a(&self, i: usize, k: usize) -> f64 {
        self.at(i, k)[0]
    }

    pub fn b(&self, i: usize, k: usize) -> f64 {
        self.at(i, k)[1]
    }

    pub fn c(&self, i: usize, k: usize) -> f64 {
        self.at(i, k)[2]
    }

    pub fn f(&self, i: usize, k: usize) -> f64 {
        self.at(i, k)[3]
    }

    /// `g_k^n`, the mean of the lifted flux.
    pub fn flux(&self, k: usize) -> f64 {
        self.flux[k - 1]
    }

    pub fn nu(&self, k: usize) -> f64 {
        self.nu[k - 1]
    }

    pub fn mu(&self, k: usize) -> f64 {
        self.mu[k - 1]
    }

    pub fn traces(&self, k: usize) -> TraceAverages {
        self.traces[k - 1]
    }

    /// `(gamma s')^k - chi^k`, the free-boundary source of step `k`.
    pub fn front_source(&self, k: usize) -> f64 {
        let tr = self.traces[k - 1];
        tr.gamma_ds - tr.chi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{lift_pn, DiscreteControl};

    fn expr(s: &str) -> CoefficientExpr {
        CoefficientExpr::parse(s).unwrap()
    }

    #[test]
    fn cell_averages() {
        let time = TimeGrid::new(1.0, 1).unwrap();
        let grid = SpatialGrid::build(&[1.0, 1.0], 1.0, 1.0, 1.0).unwrap();
        assert_eq!(grid.nodes(), &[0.0, 1.0]);
        assert_eq!(cell_average(&expr("3"), &grid, &time, 0, 1).unwrap(), 3.0);
        let v = cell_average(&expr("x^2*t"), &grid, &time, 0, 1).unwrap();
        assert!((v - 1.0 / 6.0).abs() < 1e-15);

        let time = TimeGrid::new(1.0, 4).unwrap();
        let grid = SpatialGrid::build(&[1.0; 5], 1.0, 0.25, 1.0).unwrap();
        assert_eq!(grid.node(1), 0.5);
        assert!((cell_average(&expr("x"), &grid, &time, 0, 2).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn polynomial_exactness_degree_seven() {
        let time = TimeGrid::new(2.0, 4).unwrap();
        let grid = SpatialGrid::build(&[1.5; 5], 1.5, 0.5, 1.0).unwrap();
        let e = expr("x^7*t^7 + 3*x^5 - t^6 + 2");
        // closed form of the double integral of each monomial over the cell
        let prim = |p: i32, a: f64, b: f64| (b.powi(p + 1) - a.powi(p + 1)) / (p + 1) as f64;
        for k in 1..=4 {
            for i in 0..grid.last_index() {
                let (x0, x1) = (grid.node(i), grid.node(i + 1));
                let (t0, t1) = time.cell(k);
                let area = (x1 - x0) * (t1 - t0);
                let exact = (prim(7, x0, x1) * prim(7, t0, t1) + 3.0 * prim(5, x0, x1) * (t1 - t0)
                    - (x1 - x0) * prim(6, t0, t1)
                    + 2.0 * area)
                    / area;
                let got = cell_average(&e, &grid, &time, i, k).unwrap();
                assert!(
                    (got - exact).abs() <= 1e-13 * exact.abs().max(1.0),
                    "{got} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn time_averages() {
        let time = TimeGrid::new(1.0, 2).unwrap();
        assert_eq!(time_average(&|_: f64| 4.5, &time, 1).unwrap(), 4.5);
        assert!((time_average(&|t: f64| t, &time, 1).unwrap() - 0.25).abs() < 1e-16);
        let v = DiscreteControl::new(vec![1.0; 3], vec![0.0, 0.5, 1.0], 0.5).unwrap();
        let c = lift_pn(&v);
        let avg = time_average(&|t: f64| c.g_at(t), &time, 1).unwrap();
        assert!((avg - 0.25).abs() < 1e-16);
        let avg2 = time_average(&|t: f64| c.g_at(t), &time, 2).unwrap();
        assert!((avg2 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn trace_average_cases() {
        let time = TimeGrid::new(1.0, 2).unwrap();
        let v = DiscreteControl::new(vec![1.0, 1.0, 2.0], vec![0.0; 3], 0.5).unwrap();
        let c = lift_pn(&v);
        let tr = trace_averages(&c, &expr("1"), &expr("2"), &time, 2).unwrap();
        assert!((tr.chi - 2.0).abs() < 1e-15);
        assert!((tr.gamma_ds - 1.0).abs() < 1e-14, "{}", tr.gamma_ds);

        let flat = lift_pn(&DiscreteControl::new(vec![1.0; 3], vec![0.0; 3], 0.5).unwrap());
        let tr = trace_averages(&flat, &expr("1"), &expr("x*t"), &time, 1).unwrap();
        assert_eq!(tr.gamma_ds, 0.0);
        assert!((tr.chi - 0.25).abs() < 1e-15);
    }

    #[test]
    fn front_velocity_telescopes() {
        let s = vec![1.0, 1.1, 1.35, 1.3, 1.6, 1.62, 1.5];
        let n = s.len() - 1;
        let time = TimeGrid::new(1.5, n).unwrap();
        let c = lift_pn(&DiscreteControl::new(s, vec![0.0; n + 1], time.tau()).unwrap());
        let one = expr("1");
        let sum: f64 = (1..=n)
            .map(|k| time.tau() * trace_averages(&c, &one, &one, &time, k).unwrap().gamma_ds)
            .sum();
        assert!((sum - (c.s_at(1.5) - c.s_at(0.0))).abs() < 1e-14);
    }

    #[test]
    fn memo_reuses_cells() {
        let p = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
        let av = CoefficientAverager::new(&p);
        let time = TimeGrid::new(1.0, 4).unwrap();
        let v = DiscreteControl::constant(1.0, &time);
        let grid = SpatialGrid::build(v.s(), 2.0, time.tau(), 1.0).unwrap();
        let c = lift_pn(&v);
        let first = av
            .averages(&grid, &time, &c, MeasurementMode::Steklov)
            .unwrap();
        let len = av.memo_len();
        assert_eq!(len, 4 * grid.last_index());
        let again = av
            .averages(&grid, &time, &c, MeasurementMode::Steklov)
            .unwrap();
        assert_eq!(av.memo_len(), len);
        assert_eq!(first, again);
        assert_eq!(first.a(1, 3), 1.0);
    }
}
