//! The discrete state vector: per-step implicit systems, the reflective
//! extension beyond the free boundary, interpolants in time, and the
//! summation identity that the step systems are equivalent to.

mod tridiag;

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;

pub use self::tridiag::{TriSystem, PIVOT_FLOOR};
use crate::control::{lift_pn, ContinuousControl, DiscreteControl};
use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::problem::{ProblemData, SolverSettings};
use crate::report::fmt_num;
use crate::steklov::{AveragedCoefficients, CoefficientAverager};

/// Assembles the system for layer `k` on nodes `0..=m_{j_k}`.
///
/// `u_prev` is the full previous layer, extension included.
pub fn assemble_step(
    grid: &SpatialGrid,
    avg: &AveragedCoefficients,
    tau: f64,
    k: usize,
    u_prev: &[f64],
) -> TriSystem {
    let m = grid.boundary_index(k);
    let mut sys = TriSystem::zeros(m + 1);

    let h = grid.width(0);
    let (a, b, c, f) = (avg.a(0, k), avg.b(0, k), avg.c(0, k), avg.f(0, k));
    sys.diag[0] = a + h * b - h * h * c + h * h / tau;
    sys.upper[0] = -(a + h * b);
    sys.rhs[0] = h * h / tau * u_prev[0] - h * h * f - h * avg.flux(k);

    for i in 1..m {
        let (hi, hl) = (grid.width(i), grid.width(i - 1));
        let al = avg.a(i - 1, k);
        let (a, b, c, f) = (avg.a(i, k), avg.b(i, k), avg.c(i, k), avg.f(i, k));
        let mass = hi * hi * hl;
        sys.lower[i] = -al * hi;
        sys.diag[i] = al * hi + a * hl + b * hi * hl - c * mass + mass / tau;
        sys.upper[i] = -(a * hl + b * hi * hl);
        sys.rhs[i] = -mass * f + mass / tau * u_prev[i];
    }

    let a_last = avg.a(m - 1, k);
    sys.lower[m] = -a_last;
    sys.diag[m] = a_last;
    sys.rhs[m] = -grid.width(m - 1) * avg.front_source(k);
    sys
}

/// `ceil(1 + log2(l / delta))`, the largest number of folds a query needs.
pub fn fold_cap(width: f64, delta: f64) -> usize {
    (1.0 + (width / delta).log2()).ceil().max(1.0) as usize
}

/// Maps `x > s` back into `[0, s]` by repeated reflection
/// `x <- 2^j s - x` with `2^{j-1} s <= x <= 2^j s`; returns the point and the
/// number of folds.
pub fn fold_into(mut x: f64, s: f64) -> (f64, usize) {
    let mut folds = 0;
    while x > s {
        let mut p = s;
        while p < x {
            p *= 2.0;
        }
        x = (p - x).max(0.0);
        folds += 1;
    }
    (x, folds)
}

/// Piecewise-linear interpolant of `values` on `nodes[..values.len()]`.
fn interpolate(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let m = values.len() - 1;
    let prefix = &nodes[..=m];
    let i = prefix
        .partition_point(|&v| v <= x)
        .saturating_sub(1)
        .min(m - 1);
    let (x0, x1) = (prefix[i], prefix[i + 1]);
    let w = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    if w == 0.0 {
        values[i]
    } else if w == 1.0 {
        values[i + 1]
    } else {
        values[i] + w * (values[i + 1] - values[i])
    }
}

/// `û(x)`: the interpolant of `prefix` on `[0, x_m]`, reflected beyond `x_m`.
pub fn reflect_eval(nodes: &[f64], prefix: &[f64], x: f64) -> f64 {
    let s = nodes[prefix.len() - 1];
    let (y, _) = fold_into(x, s);
    interpolate(nodes, prefix, y)
}

/// Fills the nodes beyond `m` with the reflective extension of `layer[..=m]`.
pub fn extend_reflect(grid: &SpatialGrid, m: usize, layer: &mut [f64]) {
    let nodes = grid.nodes();
    let (prefix, rest) = layer.split_at_mut(m + 1);
    for (off, slot) in rest.iter_mut().enumerate() {
        *slot = reflect_eval(nodes, prefix, nodes[m + 1 + off]);
    }
}

/// Which time interpolant of the layers to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolant {
    /// `û(x; k)` on `(t_{k-1}, t_k]`.
    UTau,
    /// Linear in `t` between `û(x; k-1)` and `û(x; k)`, `û(x; n)` past `T`.
    UHatTau,
    /// `u_i(k)` on `[x_i, x_{i+1}) x (t_{k-1}, t_k]`.
    UTildeTau,
}

/// Left side of the summation identity for one layer and test vector, with
/// the sum of absolute values of its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResidual {
    pub value: f64,
    pub scale: f64,
}

/// A solved discrete state: layers `u(0)..u(n)` on the full grid.
#[derive(Debug, Clone)]
pub struct DiscreteState {
    control: DiscreteControl,
    lifted: ContinuousControl,
    time: TimeGrid,
    grid: SpatialGrid,
    layers: Vec<Vec<f64>>,
    averages: AveragedCoefficients,
}

impl DiscreteState {
    pub fn control(&self) -> &DiscreteControl {
        &self.control
    }

    pub fn lifted(&self) -> &ContinuousControl {
        &self.lifted
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn averages(&self) -> &AveragedCoefficients {
        &self.averages
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &[f64] {
        &self.layers[k]
    }

    /// `m_{j_k}`.
    pub fn front_index(&self, k: usize) -> usize {
        self.grid.boundary_index(k)
    }

    /// `u_{m_{j_k}}(k)`, the state on the free boundary.
    pub fn front_value(&self, k: usize) -> f64 {
        self.layers[k][self.front_index(k)]
    }

    /// `u_{ix}(k) = (u_{i+1}(k) - u_i(k)) / h_i`.
    pub fn dx(&self, k: usize, i: usize) -> f64 {
        (self.layers[k][i + 1] - self.layers[k][i]) / self.grid.width(i)
    }

    /// `u_{it̄}(k) = (u_i(k) - u_i(k-1)) / tau`, `k >= 1`.
    pub fn dt(&self, k: usize, i: usize) -> f64 {
        (self.layers[k][i] - self.layers[k - 1][i]) / self.time.tau()
    }

    /// `sum_{i < m_{j_k}} h_i u_i(k)`.
    pub fn mass(&self, k: usize) -> f64 {
        (0..self.front_index(k))
            .map(|i| self.grid.width(i) * self.layers[k][i])
            .sum()
    }

    /// `û(x; k)`.
    pub fn u_hat(&self, k: usize, x: f64) -> f64 {
        let m = self.front_index(k);
        reflect_eval(self.grid.nodes(), &self.layers[k][..=m], x)
    }

    /// `∂û/∂x (x; k)`; each reflection flips the sign. At a kink either
    /// one-sided slope may be returned.
    pub fn u_hat_dx(&self, k: usize, x: f64) -> f64 {
        let m = self.front_index(k);
        let nodes = self.grid.nodes();
        let (y, folds) = fold_into(x, nodes[m]);
        let i = nodes[..=m]
            .partition_point(|&v| v <= y)
            .saturating_sub(1)
            .min(m - 1);
        let slope = self.dx(k, i);
        if folds % 2 == 0 {
            slope
        } else {
            -slope
        }
    }

    pub fn interpolant(&self, x: f64, t: f64, which: Interpolant) -> f64 {
        match which {
            Interpolant::UTau => self.u_hat(self.time.layer_at(t), x),
            Interpolant::UHatTau => {
                if t <= 0.0 {
                    return self.u_hat(0, x);
                }
                if t >= self.time.horizon() {
                    return self.u_hat(self.time.steps(), x);
                }
                let k = self.time.layer_at(t);
                let (t0, t1) = self.time.cell(k);
                let w = (t - t0) / (t1 - t0);
                (1.0 - w) * self.u_hat(k - 1, x) + w * self.u_hat(k, x)
            }
            Interpolant::UTildeTau => {
                let k = self.time.layer_at(t);
                self.layers[k][self.grid.cell_containing(x)]
            }
        }
    }

    /// Left side of the summation identity at layer `k` for the test vector
    /// `eta` of length `m_{j_k} + 1`.
    pub fn residual_identity(&self, k: usize, eta: &[f64]) -> IdentityResidual {
        let m = self.front_index(k);
        assert_eq!(eta.len(), m + 1, "test vector must cover nodes 0..=m_jk");
        let avg = &self.averages;
        let mut value = 0.0;
        let mut scale = 0.0;
        let mut add = |term: f64| {
            value += term;
            scale += term.abs();
        };
        for i in 0..m {
            let h = self.grid.width(i);
            let ux = self.dx(k, i);
            let eta_x = (eta[i + 1] - eta[i]) / h;
            let u = self.layers[k][i];
            add(h * avg.a(i, k) * ux * eta_x);
            add(-h * avg.b(i, k) * ux * eta[i]);
            add(-h * avg.c(i, k) * u * eta[i]);
            add(h * avg.f(i, k) * eta[i]);
            add(h * self.dt(k, i) * eta[i]);
        }
        add(avg.front_source(k) * eta[m]);
        add(avg.flux(k) * eta[0]);
        IdentityResidual { value, scale }
    }

    /// CSV dump with header `k,i,x_i,u_i(k)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,i,x_i,u_i(k)")?;
        for (k, layer) in self.layers.iter().enumerate() {
            for (i, u) in layer.iter().enumerate() {
                writeln!(
                    out,
                    "{k},{i},{},{}",
                    fmt_num(self.grid.node(i)),
                    fmt_num(*u)
                )?;
            }
        }
        Ok(())
    }

    /// Row-major `(n+1) x (N+1)` little-endian `f64` dump of the layers.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for layer in &self.layers {
            for u in layer {
                out.write_all(&u.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Forward solver bound to one problem; coefficient averages are memoized
/// across solves, so reuse one solver for many controls.
#[derive(Debug)]
pub struct ForwardSolver<'p> {
    averager: CoefficientAverager<'p>,
    settings: SolverSettings,
    tau0: f64,
    warned: AtomicBool,
}

impl<'p> ForwardSolver<'p> {
    pub fn new(problem: &'p ProblemData, settings: SolverSettings) -> Result<Self> {
        problem.validate()?;
        Ok(ForwardSolver {
            tau0: problem.tau0()?,
            averager: CoefficientAverager::new(problem),
            settings,
            warned: AtomicBool::new(false),
        })
    }

    pub fn problem(&self) -> &'p ProblemData {
        self.averager.problem()
    }

    pub fn settings(&self) -> SolverSettings {
        self.settings
    }

    /// The sufficient step bound for unique solvability.
    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    /// Solves on the grid implied by `v`.
    pub fn solve(&self, v: &DiscreteControl) -> Result<DiscreteState> {
        let grid = SpatialGrid::build(v.s(), self.problem().width, v.tau(), self.settings.c_h)?;
        self.solve_on(v, grid)
    }

    pub fn solve_on(&self, v: &DiscreteControl, grid: SpatialGrid) -> Result<DiscreteState> {
        let p = self.problem();
        let time = v.time_grid();
        if (time.horizon() - p.horizon).abs() > 1e-9 * p.horizon {
            return Err(Error::Precondition(format!(
                "control spans [0, {}] but the problem horizon is {}",
                time.horizon(),
                p.horizon
            )));
        }
        if grid.nodes().len() < 2 || grid.level_sizes().len() != v.s().len() {
            return Err(Error::Precondition(
                "grid was not built for this control".into(),
            ));
        }
        if time.tau() >= self.tau0 && !self.warned.swap(true, Ordering::Relaxed) {
            warn!(
                "tau = {} is not below tau0 = {}; unique solvability is not guaranteed",
                time.tau(),
                self.tau0
            );
        }

        let lifted = lift_pn(v);
        let averages = self
            .averager
            .averages(&grid, &time, &lifted, self.settings.measurements)?;

        let n = time.steps();
        let len = grid.nodes().len();
        let mut layers = Vec::with_capacity(n + 1);
        let m0 = grid.boundary_index(0);
        let mut first = vec![0.0; len];
        for (i, slot) in first.iter_mut().enumerate().take(m0 + 1) {
            *slot = p.phi.eval(grid.node(i), 0.0)?;
        }
        extend_reflect(&grid, m0, &mut first);
        layers.push(first);

        for k in 1..=n {
            let sys = assemble_step(&grid, &averages, time.tau(), k, &layers[k - 1]);
            let prefix = sys.solve(k)?;
            let m = prefix.len() - 1;
            let mut layer = vec![0.0; len];
            layer[..=m].copy_from_slice(&prefix);
            extend_reflect(&grid, m, &mut layer);
            layers.push(layer);
        }

        Ok(DiscreteState {
            control: v.clone(),
            lifted,
            time,
            grid,
            layers,
            averages,
        })
    }
}

/// One-shot forward solve; prefer [`ForwardSolver`] for repeated solves.
pub fn run_forward(
    p: &ProblemData,
    v: &DiscreteControl,
    settings: SolverSettings,
) -> Result<DiscreteState> {
    ForwardSolver::new(p, settings)?.solve(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::CoefficientExpr;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn expr(s: &str) -> CoefficientExpr {
        CoefficientExpr::parse(s).unwrap()
    }

    fn const_one(horizon: f64) -> ProblemData {
        let mut p = ProblemData::heat_equation(horizon, 2.0, 1.0, 0.5, 10.0);
        p.phi = CoefficientExpr::constant(1.0);
        p
    }

    #[test]
    fn fold_examples() {
        assert_eq!(fold_into(1.5, 1.0), (0.5, 1));
        assert_eq!(fold_into(0.7, 1.0), (0.7, 0));
        assert_eq!(fold_into(3.5, 1.0), (0.5, 1));
        assert_eq!(fold_into(2.5, 1.0), (0.5, 2));
        assert_eq!(fold_cap(2.0, 0.5), 3);
        assert_eq!(fold_cap(3.0, 1.0), 3);
        let nodes = [0.0, 0.5, 1.0, 1.5, 2.0];
        assert_eq!(reflect_eval(&nodes, &[0.0, 0.5, 1.0], 1.5), 0.5);
    }

    proptest! {
        #[test]
        fn folds_land_in_range(s in 0.25f64..2.0, frac in 0.0f64..1.0) {
            let (width, delta) = (4.0, 0.25);
            let x = frac * width;
            let (y, folds) = fold_into(x, s);
            prop_assert!((0.0..=s).contains(&y));
            prop_assert!(folds <= fold_cap(width, delta));
        }

        #[test]
        fn reflection_is_identity_inside(vals in prop::collection::vec(-5.0f64..5.0, 4), x in 0.0f64..1.0) {
            let nodes = [0.0, 0.25, 0.6, 1.0, 1.4, 2.0];
            let direct = interpolate(&nodes, &vals, x);
            prop_assert_eq!(reflect_eval(&nodes, &vals, x), direct);
        }
    }

    #[test]
    fn constant_row_example() {
        let p = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
        let time = TimeGrid::new(1.0, 4).unwrap();
        let v = DiscreteControl::constant(1.0, &time);
        let grid = SpatialGrid::build(v.s(), 2.0, time.tau(), 1.0).unwrap();
        let av = CoefficientAverager::new(&p)
            .averages(&grid, &time, &lift_pn(&v), Default::default())
            .unwrap();
        let prev = vec![1.0; grid.nodes().len()];
        let sys = assemble_step(&grid, &av, time.tau(), 1, &prev);
        let h = grid.width(0);
        let tau = time.tau();
        assert_eq!(sys.diag[0], 1.0 + h * h / tau);
        assert_eq!(sys.upper[0], -1.0);
        assert_eq!(sys.rhs[0], h * h / tau);
        let m = sys.len() - 1;
        assert_eq!((sys.lower[m], sys.diag[m], sys.rhs[m]), (-1.0, 1.0, -0.0));
        assert!(sys
            .solve(1)
            .unwrap()
            .iter()
            .all(|u| (u - 1.0).abs() < 1e-15));
    }

    #[test]
    fn constant_solution_on_moving_front() {
        let p = const_one(1.0);
        let time = TimeGrid::new(1.0, 16).unwrap();
        let s: Vec<f64> = time.nodes().iter().map(|t| 1.0 + 0.3 * t * t).collect();
        let v = DiscreteControl::new(s, vec![0.0; 17], time.tau()).unwrap();
        let st = run_forward(&p, &v, SolverSettings::default()).unwrap();
        for layer in st.layers() {
            for u in layer {
                assert!((u - 1.0).abs() <= 1e-13, "{u}");
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_state() {
        let p = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
        let time = TimeGrid::new(1.0, 8).unwrap();
        let st = run_forward(
            &p,
            &DiscreteControl::constant(1.0, &time),
            Default::default(),
        )
        .unwrap();
        assert!(st.layers().iter().flatten().all(|&u| u == 0.0));
    }

    #[test]
    fn identity_holds_for_random_test_vectors() {
        let mut p = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
        p.a = expr("1 + x*t");
        p.b = expr("0.5*x");
        p.c = expr("-0.3");
        p.f = expr("sin(x + t)");
        p.gamma = expr("2");
        p.chi = expr("cos(t)");
        p.phi = expr("1 - x^2/4");
        let time = TimeGrid::new(1.0, 8).unwrap();
        let s: Vec<f64> = time
            .nodes()
            .iter()
            .map(|t| 1.0 + 0.2 * t * t - 0.1 * t)
            .collect();
        let g: Vec<f64> = time.nodes().iter().map(|t| t.sin()).collect();
        let v = DiscreteControl::new(s, g, time.tau()).unwrap();
        let st = run_forward(&p, &v, Default::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 1..=8 {
            let m = st.front_index(k);
            for _ in 0..20 {
                let eta: Vec<f64> = (0..=m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let r = st.residual_identity(k, &eta);
                assert!(r.value.abs() <= 1e-9 * r.scale, "{r:?}");
            }
        }
        let mut perturbed = st.clone();
        perturbed.layers[3][1] += 1e-3;
        let eta: Vec<f64> = (0..=perturbed.front_index(3))
            .map(|i| (i == 1) as u8 as f64)
            .collect();
        assert!(perturbed.residual_identity(3, &eta).value.abs() > 1e-6);
    }

    #[test]
    fn mass_is_conserved_on_fixed_front() {
        let mut p = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
        p.phi = expr("x^2 + sin(3*x)");
        let time = TimeGrid::new(1.0, 32).unwrap();
        let st = run_forward(
            &p,
            &DiscreteControl::constant(1.0, &time),
            Default::default(),
        )
        .unwrap();
        let m0 = st.mass(0);
        let scale: f64 = (0..st.front_index(0))
            .map(|i| st.grid().width(i) * st.layer(0)[i].abs())
            .sum();
        for k in 1..=32 {
            assert!((st.mass(k) - m0).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn interpolant_conventions() {
        let mut p = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
        p.phi = expr("x");
        p.f = expr("-1");
        let time = TimeGrid::new(1.0, 4).unwrap();
        let st = run_forward(
            &p,
            &DiscreteControl::constant(1.0, &time),
            Default::default(),
        )
        .unwrap();
        let x = 0.3;
        assert_eq!(st.interpolant(x, 0.5, Interpolant::UTau), st.u_hat(2, x));
        let mid = st.interpolant(x, 0.375, Interpolant::UHatTau);
        assert!((mid - 0.5 * (st.u_hat(1, x) + st.u_hat(2, x))).abs() < 1e-15);
        assert_eq!(st.interpolant(x, 5.0, Interpolant::UHatTau), st.u_hat(4, x));
        let i = st.grid().cell_containing(x);
        assert_eq!(
            st.interpolant(x, 0.3, Interpolant::UTildeTau),
            st.layer(2)[i]
        );
        assert_eq!(
            st.interpolant(x, 0.0, Interpolant::UTildeTau),
            st.layer(0)[i]
        );
        // beyond the front the state mirrors
        assert_eq!(st.u_hat(3, 1.5), st.u_hat(3, 0.5));
        let i = st.grid().cell_containing(0.5);
        assert_eq!(st.u_hat_dx(3, 0.5), st.dx(3, i));
        assert_eq!(st.u_hat_dx(3, 1.5), -st.dx(3, i));
    }

    #[test]
    fn dumps() {
        let p = const_one(1.0);
        let time = TimeGrid::new(1.0, 2).unwrap();
        let st = run_forward(
            &p,
            &DiscreteControl::constant(1.0, &time),
            Default::default(),
        )
        .unwrap();
        let mut csv = Vec::new();
        st.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("k,i,x_i,u_i(k)\n0,0,"));
        assert_eq!(text.lines().count(), 1 + 3 * st.grid().nodes().len());
        let mut bin = Vec::new();
        st.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 8 * 3 * st.grid().nodes().len());
        assert_eq!(f64::from_le_bytes(bin[..8].try_into().unwrap()), 1.0);
    }
}
