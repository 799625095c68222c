//! Minimization of the discrete cost over the discrete control set:
//! projected finite-difference gradient descent with Armijo backtracking,
//! or compass pattern search.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::{lift_pn, project_to_feasible, sample_qn, DiscreteControl};
use crate::error::Result;
use crate::functional::{discrete_cost, CostBreakdown};
use crate::grid::TimeGrid;
use crate::problem::{ProblemData, SolverSettings};
use crate::report::fmt_num;
use crate::state::ForwardSolver;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FdGradient,
    PatternSearch,
}

/// Which control coordinates are free; `s_0` is always fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ControlMask {
    #[default]
    Both,
    /// Optimize `g` with `s` held at its starting value.
    FluxOnly,
    /// Optimize `s_1..s_n` with `g` held.
    BoundaryOnly,
}

impl ControlMask {
    fn frees_s(self) -> bool {
        self != ControlMask::FluxOnly
    }

    fn frees_g(self) -> bool {
        self != ControlMask::BoundaryOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptOptions {
    pub method: Method,
    pub mask: ControlMask,
    pub max_iters: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub tol_cost: f64,
    /// Stop once the cost is at or below this value.
    pub cost_floor: f64,
    /// Seeds the coordinate order of pattern search.
    pub seed: u64,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            method: Method::FdGradient,
            mask: ControlMask::Both,
            max_iters: 200,
            fd_step: 1e-6,
            tol_cost: 1e-12,
            cost_floor: 1e-28,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptStatus {
    Converged,
    IterLimit,
    SolverFailure,
}

impl OptStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            OptStatus::Converged => "converged",
            OptStatus::IterLimit => "iter_limit",
            OptStatus::SolverFailure => "solver_failure",
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub cost: CostBreakdown,
    /// Step length that produced the iterate (0 for the start).
    pub step: f64,
    /// Objective evaluations so far.
    pub evals: usize,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub best: DiscreteControl,
    pub history: Vec<IterRecord>,
    pub evals: usize,
    pub status: OptStatus,
}

impl OptResult {
    pub fn final_cost(&self) -> CostBreakdown {
        self.history.last().map(|r| r.cost).unwrap_or_default()
    }

    /// Trace CSV with header `iter,total,boundary_term,front_term,step,evals`.
    pub fn write_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,total,boundary_term,front_term,step,evals")?;
        for r in &self.history {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iter,
                fmt_num(r.cost.total),
                fmt_num(r.cost.boundary_term),
                fmt_num(r.cost.front_term),
                fmt_num(r.step),
                r.evals
            )?;
        }
        Ok(())
    }
}

/// A cost over discrete controls with a feasibility projection.
pub trait ControlObjective: Sync {
    fn evaluate(&self, v: &DiscreteControl) -> Result<CostBreakdown>;

    fn project(&self, v: &DiscreteControl) -> Result<DiscreteControl>;

    /// Initial pattern-search steps for `s` and `g` coordinates.
    fn initial_steps(&self) -> (f64, f64);
}

/// `I_n` through a forward solve.
#[derive(Debug)]
pub struct IspObjective<'p> {
    solver: ForwardSolver<'p>,
    evals: AtomicUsize,
}

impl<'p> IspObjective<'p> {
    pub fn new(problem: &'p ProblemData, settings: SolverSettings) -> Result<Self> {
        Ok(IspObjective {
            solver: ForwardSolver::new(problem, settings)?,
            evals: AtomicUsize::new(0),
        })
    }

    pub fn solver(&self) -> &ForwardSolver<'p> {
        &self.solver
    }

    /// Forward solves performed so far.
    pub fn solves(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }
}

impl ControlObjective for IspObjective<'_> {
    fn evaluate(&self, v: &DiscreteControl) -> Result<CostBreakdown> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let st = self.solver.solve(v)?;
        Ok(discrete_cost(&st, self.solver.problem()))
    }

    fn project(&self, v: &DiscreteControl) -> Result<DiscreteControl> {
        let p = self.solver.problem();
        project_to_feasible(v, p.delta, p.width, p.radius)
    }

    fn initial_steps(&self) -> (f64, f64) {
        let p = self.solver.problem();
        (0.1 * (p.width - p.delta), 0.1 * p.radius)
    }
}

/// `I_n(v)` after projecting `v` into the control set.
pub fn objective(obj: &impl ControlObjective, v: &DiscreteControl) -> Result<f64> {
    let w = obj.project(v)?;
    if w != *v {
        debug!("objective: control projected into the feasible set");
    }
    Ok(obj.evaluate(&w)?.total)
}

fn total_or_inf(obj: &impl ControlObjective, v: &DiscreteControl) -> f64 {
    match obj.evaluate(v) {
        Ok(c) => c.total,
        Err(e) => {
            warn!("objective evaluation failed: {e}");
            f64::INFINITY
        }
    }
}

/// Free coordinates in the order `s_1..s_n, g_0..g_n`, filtered by `mask`.
fn free_coords(v: &DiscreteControl, mask: ControlMask) -> Vec<Coord> {
    let n = v.steps();
    let mut out = Vec::with_capacity(2 * n + 1);
    if mask.frees_s() {
        out.extend((1..=n).map(Coord::S));
    }
    if mask.frees_g() {
        out.extend((0..=n).map(Coord::G));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coord {
    S(usize),
    G(usize),
}

fn get(v: &DiscreteControl, c: Coord) -> f64 {
    match c {
        Coord::S(k) => v.s()[k],
        Coord::G(k) => v.g()[k],
    }
}

fn with_coord(v: &DiscreteControl, c: Coord, value: f64) -> Result<DiscreteControl> {
    match c {
        Coord::S(k) => {
            let mut s = v.s().to_vec();
            s[k] = value;
            v.with_s(s)
        }
        Coord::G(k) => {
            let mut g = v.g().to_vec();
            g[k] = value;
            v.with_g(g)
        }
    }
}

/// Moves every free coordinate by `-alpha * grad`.
fn step_along(
    v: &DiscreteControl,
    coords: &[Coord],
    grad: &[f64],
    alpha: f64,
) -> Result<DiscreteControl> {
    let mut s = v.s().to_vec();
    let mut g = v.g().to_vec();
    for (c, d) in coords.iter().zip(grad) {
        match *c {
            Coord::S(k) => s[k] -= alpha * d,
            Coord::G(k) => g[k] -= alpha * d,
        }
    }
    DiscreteControl::new(s, g, v.tau())
}

fn worker_count(jobs: usize) -> usize {
    std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs)
        .max(1)
}

/// Central-difference gradient over the free coordinates with step
/// `fd_step * max(1, |x_i|)`. A failed side falls back to a one-sided
/// difference; if both sides fail the component is 0.
pub fn fd_gradient(
    obj: &impl ControlObjective,
    v: &DiscreteControl,
    mask: ControlMask,
    fd_step: f64,
) -> Result<Vec<f64>> {
    let coords = free_coords(v, mask);
    let center = obj.evaluate(v)?.total;
    let one = |c: Coord| -> Result<f64> {
        let x = get(v, c);
        let h = fd_step * x.abs().max(1.0);
        let plus = total_or_inf(obj, &with_coord(v, c, x + h)?);
        let minus = total_or_inf(obj, &with_coord(v, c, x - h)?);
        Ok(match (plus.is_finite(), minus.is_finite()) {
            (true, true) => (plus - minus) / (2.0 * h),
            (true, false) => (plus - center) / h,
            (false, true) => (center - minus) / h,
            (false, false) => {
                warn!("gradient component {c:?} unavailable: both sides failed");
                0.0
            }
        })
    };

    let workers = worker_count(coords.len());
    let chunk = coords.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = coords
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&c| one(c)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    });
    let mut grad = Vec::with_capacity(coords.len());
    for part in parts {
        grad.extend(part?);
    }
    Ok(grad)
}

/// Smallest step (in the max norm of the move) before the search gives up.
pub const STEP_FLOOR: f64 = 1e-12;
const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;

pub fn minimize(obj: &impl ControlObjective, v0: &DiscreteControl, opts: &OptOptions) -> OptResult {
    let evals = AtomicUsize::new(0);
    let counted = CountingObjective {
        inner: obj,
        evals: &evals,
    };
    let start = match obj.project(v0) {
        Ok(v) => v,
        Err(e) => {
            warn!("starting control cannot be projected: {e}");
            return OptResult {
                best: v0.clone(),
                history: Vec::new(),
                evals: 0,
                status: OptStatus::SolverFailure,
            };
        }
    };
    let first = match counted.evaluate(&start) {
        Ok(c) => c,
        Err(e) => {
            warn!("starting control failed to evaluate: {e}");
            return OptResult {
                best: start,
                history: Vec::new(),
                evals: evals.load(Ordering::Relaxed),
                status: OptStatus::SolverFailure,
            };
        }
    };
    let record = |iter, cost, step| IterRecord {
        iter,
        cost,
        step,
        evals: evals.load(Ordering::Relaxed),
    };
    let mut history = vec![record(0, first, 0.0)];
    let (best, status) = match opts.method {
        Method::FdGradient => gradient_descent(&counted, start, first, opts, &mut history, &record),
        Method::PatternSearch => {
            pattern_search(&counted, start, first, opts, &mut history, &record)
        }
    };
    OptResult {
        best,
        history,
        evals: evals.load(Ordering::Relaxed),
        status,
    }
}

struct CountingObjective<'a, O> {
    inner: &'a O,
    evals: &'a AtomicUsize,
}

impl<O: ControlObjective> ControlObjective for CountingObjective<'_, O> {
    fn evaluate(&self, v: &DiscreteControl) -> Result<CostBreakdown> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(v)
    }

    fn project(&self, v: &DiscreteControl) -> Result<DiscreteControl> {
        self.inner.project(v)
    }

    fn initial_steps(&self) -> (f64, f64) {
        self.inner.initial_steps()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn gradient_descent(
    obj: &impl ControlObjective,
    mut x: DiscreteControl,
    mut fx: CostBreakdown,
    opts: &OptOptions,
    history: &mut Vec<IterRecord>,
    record: &impl Fn(usize, CostBreakdown, f64) -> IterRecord,
) -> (DiscreteControl, OptStatus) {
    let coords = free_coords(&x, opts.mask);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut alpha_prev = f64::NAN;
    for iter in 1..=opts.max_iters {
        if fx.total <= opts.cost_floor {
            return (x, OptStatus::Converged);
        }
        let grad = match fd_gradient(obj, &x, opts.mask, opts.fd_step) {
            Ok(g) => g,
            Err(e) => {
                warn!("gradient failed at the current iterate: {e}");
                return (x, OptStatus::SolverFailure);
            }
        };
        let gmax = max_abs(&grad);
        if gmax == 0.0 {
            return (x, OptStatus::Converged);
        }
        let xs: Vec<f64> = coords.iter().map(|&c| get(&x, c)).collect();

        // Barzilai-Borwein initial step from the last accepted move
        let mut alpha = match &prev {
            Some((px, pg)) => {
                let (mut ss, mut sy) = (0.0, 0.0);
                for j in 0..xs.len() {
                    let s = xs[j] - px[j];
                    ss += s * s;
                    sy += s * (grad[j] - pg[j]);
                }
                if sy > 0.0 {
                    ss / sy
                } else {
                    2.0 * alpha_prev
                }
            }
            None => 0.1 * xs.iter().fold(1.0_f64, |m, v| m.max(v.abs())) / gmax,
        };

        let accepted = loop {
            if alpha * gmax < STEP_FLOOR {
                break None;
            }
            let trial = step_along(&x, &coords, &grad, alpha).and_then(|t| obj.project(&t));
            let trial = match trial {
                Ok(t) => t,
                Err(e) => {
                    warn!("trial step could not be projected: {e}");
                    alpha *= BACKTRACK;
                    continue;
                }
            };
            let decrease: f64 = coords
                .iter()
                .zip(&grad)
                .map(|(&c, d)| d * (get(&x, c) - get(&trial, c)))
                .sum();
            match obj.evaluate(&trial) {
                Ok(ft) if ft.total <= fx.total - ARMIJO_C1 * decrease && ft.total <= fx.total => {
                    break Some((trial, ft));
                }
                Ok(_) => {}
                Err(e) => warn!("trial evaluation failed: {e}"),
            }
            alpha *= BACKTRACK;
        };
        let Some((trial, ft)) = accepted else {
            debug!("line search underflow at iteration {iter}");
            return (x, OptStatus::Converged);
        };
        let rel = (fx.total - ft.total) / fx.total;
        prev = Some((xs, grad));
        alpha_prev = alpha;
        x = trial;
        fx = ft;
        history.push(record(iter, fx, alpha));
        if rel < opts.tol_cost {
            return (x, OptStatus::Converged);
        }
    }
    let status = if fx.total <= opts.cost_floor {
        OptStatus::Converged
    } else {
        OptStatus::IterLimit
    };
    (x, status)
}

fn pattern_search(
    obj: &impl ControlObjective,
    mut x: DiscreteControl,
    mut fx: CostBreakdown,
    opts: &OptOptions,
    history: &mut Vec<IterRecord>,
    record: &impl Fn(usize, CostBreakdown, f64) -> IterRecord,
) -> (DiscreteControl, OptStatus) {
    let mut coords = free_coords(&x, opts.mask);
    let (s_step, g_step) = obj.initial_steps();
    let mut steps: Vec<f64> = coords
        .iter()
        .map(|c| match c {
            Coord::S(_) => s_step,
            Coord::G(_) => g_step,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..coords.len()).collect();

    for iter in 1..=opts.max_iters {
        if fx.total <= opts.cost_floor {
            return (x, OptStatus::Converged);
        }
        if steps.iter().all(|&h| h < STEP_FLOOR) {
            return (x, OptStatus::Converged);
        }
        order.shuffle(&mut rng);
        let start_cost = fx.total;
        let mut moved = false;
        for &j in &order {
            let c = coords[j];
            for dir in [1.0, -1.0] {
                let value = get(&x, c) + dir * steps[j];
                let Ok(trial) = with_coord(&x, c, value).and_then(|t| obj.project(&t)) else {
                    continue;
                };
                match obj.evaluate(&trial) {
                    Ok(ft) if ft.total < fx.total => {
                        x = trial;
                        fx = ft;
                        moved = true;
                        break;
                    }
                    Ok(_) => {}
                    Err(e) => warn!("pattern trial failed: {e}"),
                }
            }
        }
        if moved {
            history.push(record(iter, fx, max_abs(&steps)));
            if (start_cost - fx.total) / start_cost < opts.tol_cost {
                return (x, OptStatus::Converged);
            }
        } else {
            for h in &mut steps {
                *h *= 0.5;
            }
        }
        // keep the coordinate list aligned with the possibly re-sorted control
        coords = free_coords(&x, opts.mask);
    }
    (x, OptStatus::IterLimit)
}

/// Transfers a control to `n_new` steps by lifting and resampling.
pub fn warm_start(v: &DiscreteControl, n_new: usize) -> Result<DiscreteControl> {
    let lifted = lift_pn(v);
    let g = |t: f64| lifted.g_at(t);
    sample_qn(&lifted, &g, &TimeGrid::new(v.horizon(), n_new)?)
}
