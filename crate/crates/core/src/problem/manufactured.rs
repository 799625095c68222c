use crate::error::{Error, Result};

use super::expr::{CoefficientExpr, Var};
use super::{ProblemData, Signal};

/// An exact solution `(u, s)` together with the data it induces.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub exact_u: CoefficientExpr,
    /// Free boundary `s(t)`.
    pub exact_s: CoefficientExpr,
    /// Boundary flux `g(t) = a(0,t) u_x(0,t)`.
    pub flux: CoefficientExpr,
    pub problem: ProblemData,
}

const FRONT_SAMPLES: usize = 201;
const LATTICE: usize = 50;

/// Derives `f`, `phi`, `chi`, `nu`, `mu` and the flux so that `exact_u` solves the
/// direct Stefan problem on the front `exact_s`, keeping `a, b, c, gamma` and the
/// constants of `base`.
pub fn manufactured_problem(
    exact_u: &CoefficientExpr,
    exact_s: &CoefficientExpr,
    base: &ProblemData,
) -> Result<ManufacturedCase> {
    if exact_s.depends_on(Var::X) {
        return Err(Error::InvalidProblem(
            "exact front must depend on t only".into(),
        ));
    }
    let s_start = exact_s.eval(0.0, 0.0)?;
    if (s_start - base.s0).abs() > 1e-12 {
        return Err(Error::InvalidProblem(format!(
            "exact front starts at {s_start}, expected s0 = {}",
            base.s0
        )));
    }
    for j in 0..FRONT_SAMPLES {
        let t = base.horizon * j as f64 / (FRONT_SAMPLES - 1) as f64;
        let s = exact_s.eval(0.0, t)?;
        if !(base.delta <= s && s <= base.width) {
            return Err(Error::InvalidProblem(format!(
                "exact front s({t}) = {s} leaves [delta, l] = [{}, {}]",
                base.delta, base.width
            )));
        }
    }

    let ux = exact_u.derivative(Var::X)?;
    let ut = exact_u.derivative(Var::T)?;
    let flux_density = &base.a * &ux;
    let diffusion = flux_density.derivative(Var::X)?;
    let f = &(&(&diffusion + &(&base.b * &ux)) + &(&base.c * exact_u)) - &ut;

    let ds = exact_s.derivative(Var::T)?;
    let zero = CoefficientExpr::constant(0.0);
    let flux = flux_density.substitute(Var::X, &zero);
    let chi = (&flux_density + &(&base.gamma * &ds)).substitute(Var::X, exact_s);
    let phi = exact_u.substitute(Var::T, &zero);
    let nu = exact_u.substitute(Var::X, &zero);
    let mu = exact_u.substitute(Var::X, exact_s);

    let problem = ProblemData {
        f,
        chi,
        phi,
        nu: Signal::Expr(nu),
        mu: Signal::Expr(mu),
        ..base.clone()
    };

    let case = ManufacturedCase {
        exact_u: exact_u.clone(),
        exact_s: exact_s.clone(),
        flux,
        problem,
    };
    // Surfaces domain errors of the derived data on the sampled region.
    case.pde_residual()?;
    for j in 0..=LATTICE {
        let t = base.horizon * j as f64 / LATTICE as f64;
        case.flux.eval(0.0, t)?;
        case.problem.chi.eval(0.0, t)?;
    }
    Ok(case)
}

/// Nodal errors of a discrete state against the exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodalError {
    /// `max |u_i(k) - u(x_i, t_k)|` over `k = 0..n`, `i = 0..m_{j_k}`.
    pub max: f64,
    /// The same maximum restricted to the front node `i = m_{j_k}`.
    pub front: f64,
}

impl ManufacturedCase {
    pub fn nodal_error(&self, st: &crate::state::DiscreteState) -> Result<NodalError> {
        let mut err = NodalError {
            max: 0.0,
            front: 0.0,
        };
        for k in 0..=st.time().steps() {
            let t = st.time().node(k);
            let m = st.front_index(k);
            for i in 0..=m {
                let e = (st.layer(k)[i] - self.exact_u.eval(st.grid().node(i), t)?).abs();
                err.max = err.max.max(e);
                if i == m {
                    err.front = err.front.max(e);
                }
            }
        }
        Ok(err)
    }

    /// Max-norm residual of `(a u_x)_x + b u_x + c u - u_t - f` for the exact
    /// solution on a `50 x 50` lattice of the physical region `0 <= x <= s(t)`.
    pub fn pde_residual(&self) -> Result<f64> {
        let p = &self.problem;
        let ux = self.exact_u.derivative(Var::X)?;
        let uxx = ux.derivative(Var::X)?;
        let ut = self.exact_u.derivative(Var::T)?;
        let ax = p.a.derivative(Var::X)?;
        let mut worst: f64 = 0.0;
        for j in 0..LATTICE {
            let t = p.horizon * j as f64 / (LATTICE - 1) as f64;
            let s = self.exact_s.eval(0.0, t)?;
            for i in 0..LATTICE {
                let x = s * i as f64 / (LATTICE - 1) as f64;
                let u_x = ux.eval(x, t)?;
                let lhs = ax.eval(x, t)? * u_x
                    + p.a.eval(x, t)? * uxx.eval(x, t)?
                    + p.b.eval(x, t)? * u_x
                    + p.c.eval(x, t)? * self.exact_u.eval(x, t)?
                    - ut.eval(x, t)?;
                worst = worst.max((lhs - p.f.eval(x, t)?).abs());
            }
        }
        Ok(worst)
    }
}
