//! The discrete cost `I_n`, a fine-grid stand-in for the continuous cost `J`,
//! and the residual of the weak formulation evaluated on a discrete state.

use crate::control::sample_qn;
use crate::error::Result;
use crate::grid::TimeGrid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::problem::{
    CoefficientExpr, Interpolation, ProblemData, SampledSeries, SolverSettings, TimeFunction, Var,
};
use crate::quadrature;
use crate::report::Json;
use crate::state::{DiscreteState, ForwardSolver};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    /// `beta0 tau sum (u_0(k) - nu_k)^2`.
    pub boundary_term: f64,
    /// `beta1 tau sum (u_{m_{j_k}}(k) - mu_k)^2`.
    pub front_term: f64,
    pub total: f64,
}

impl CostBreakdown {
    /// Cost from the deviation streams `u_0(k) - nu_k` and `u_m(k) - mu_k`,
    /// `k = 1..n`.
    pub fn from_deviations(
        tau: f64,
        beta0: f64,
        beta1: f64,
        boundary: &[f64],
        front: &[f64],
    ) -> Self {
        let sq = |d: &[f64]| d.iter().map(|v| v * v).sum::<f64>();
        let boundary_term = beta0 * tau * sq(boundary);
        let front_term = beta1 * tau * sq(front);
        CostBreakdown {
            boundary_term,
            front_term,
            total: boundary_term + front_term,
        }
    }

    pub fn to_json(&self, n: usize, tau: f64) -> Json {
        Json::obj([
            ("boundary_term", Json::Num(self.boundary_term)),
            ("front_term", Json::Num(self.front_term)),
            ("total", Json::Num(self.total)),
            ("n", Json::Int(n as i64)),
            ("tau", Json::Num(tau)),
        ])
    }
}

/// `u_0(k) - nu_k` and `u_{m_{j_k}}(k) - mu_k` for `k = 1..n`.
pub fn deviations(st: &DiscreteState) -> (Vec<f64>, Vec<f64>) {
    let n = st.time().steps();
    let avg = st.averages();
    let boundary = (1..=n).map(|k| st.layer(k)[0] - avg.nu(k)).collect();
    let front = (1..=n).map(|k| st.front_value(k) - avg.mu(k)).collect();
    (boundary, front)
}

/// `I_n` for a solved state; the measurement averages were fixed when the
/// state was solved.
pub fn discrete_cost(st: &DiscreteState, p: &ProblemData) -> CostBreakdown {
    let (boundary, front) = deviations(st);
    CostBreakdown::from_deviations(st.time().tau(), p.beta0, p.beta1, &boundary, &front)
}

/// Approximates `J(s, g)` by `I_{n_ref}` of the sampled control.
pub fn continuous_cost_reference(
    p: &ProblemData,
    s: &(impl TimeFunction + ?Sized),
    g: &(impl TimeFunction + ?Sized),
    n_ref: usize,
    settings: SolverSettings,
) -> Result<CostBreakdown> {
    let v = sample_qn(s, g, &TimeGrid::new(p.horizon, n_ref)?)?;
    let st = ForwardSolver::new(p, settings)?.solve(&v)?;
    Ok(discrete_cost(&st, p))
}

/// Series `(nu, mu)` holding the traces `u_0(k)` and `u_{m_{j_k}}(k)` on
/// `(t_{k-1}, t_k]`, so their cell means are exactly the traces. Each series
/// gets Gaussian noise with standard deviation `noise` times its RMS.
pub fn synthetic_measurements(
    st: &DiscreteState,
    noise: f64,
    seed: u64,
) -> Result<(SampledSeries, SampledSeries)> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(crate::error::Error::Precondition(format!(
            "noise level must be finite and >= 0 (got {noise})"
        )));
    }
    let n = st.time().steps();
    let times: Vec<f64> = (1..=n).map(|k| st.time().node(k)).collect();
    let boundary: Vec<f64> = (1..=n).map(|k| st.layer(k)[0]).collect();
    let front: Vec<f64> = (1..=n).map(|k| st.front_value(k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturb = |values: Vec<f64>| -> Result<SampledSeries> {
        let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
        let sigma = noise * rms;
        let values = if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
            values
                .into_iter()
                .map(|v| v + normal.sample(&mut rng))
                .collect()
        } else {
            values
        };
        SampledSeries::new(times.clone(), values, Interpolation::Step)
    };
    let nu = perturb(boundary)?;
    let mu = perturb(front)?;
    Ok((nu, mu))
}

/// Sub-panels per time cell for the weak-form integrals.
const TIME_PANELS: usize = 2;

/// Left side of the weak formulation for the test function `test`, with `u`
/// replaced by `u^tau`, the front by `s^n` and the flux by `g^n`.
///
/// `test` should vanish at `t = T`; that term of the identity is not included.
pub fn weak_residual(st: &DiscreteState, p: &ProblemData, test: &CoefficientExpr) -> Result<f64> {
    let time = st.time();
    weak_residual_with(
        st,
        p,
        test,
        |x, t| st.u_hat(time.layer_at(t), x),
        |x, t| st.u_hat_dx(time.layer_at(t), x),
    )
}

/// The weak residual for any field `u` with x-derivative `ux`, integrated on
/// the time cells and space grid of `st` with `s^n` and `g^n` from its control.
pub fn weak_residual_with(
    st: &DiscreteState,
    p: &ProblemData,
    test: &CoefficientExpr,
    u: impl Fn(f64, f64) -> f64,
    ux: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    let test_x = test.derivative(Var::X)?;
    let test_t = test.derivative(Var::T)?;
    let time = st.time();
    let nodes = st.grid().nodes();
    let lifted = st.lifted();
    let mut total = 0.0;

    for k in 1..=time.steps() {
        let (a, b) = time.cell(k);
        let width = (b - a) / TIME_PANELS as f64;
        for panel in 0..TIME_PANELS {
            let lo = a + panel as f64 * width;
            for (t, wt) in quadrature::rule(lo, lo + width) {
                let cv = lifted.eval(t);
                let front = cv.s;
                let mut inner = 0.0;
                for i in 0..nodes.len() - 1 {
                    let (x0, x1) = (nodes[i], nodes[i + 1].min(front));
                    if x1 <= x0 {
                        break;
                    }
                    for (x, wx) in quadrature::rule(x0, x1) {
                        let (uv, uxv) = (u(x, t), ux(x, t));
                        let phi = test.eval(x, t)?;
                        let integrand = p.a.eval(x, t)? * uxv * test_x.eval(x, t)?
                            - p.b.eval(x, t)? * uxv * phi
                            - p.c.eval(x, t)? * uv * phi
                            - uv * test_t.eval(x, t)?
                            + p.f.eval(x, t)? * phi;
                        inner += wx * integrand;
                    }
                }
                let boundary = cv.g * test.eval(0.0, t)?
                    + (p.gamma.eval(front, t)? * cv.ds
                        - u(front, t) * cv.ds
                        - p.chi.eval(front, t)?)
                        * test.eval(front, t)?;
                total += wt * (inner + boundary);
            }
        }
    }

    let s0 = lifted.s_at(0.0);
    for i in 0..nodes.len() - 1 {
        let (x0, x1) = (nodes[i], nodes[i + 1].min(s0));
        if x1 <= x0 {
            break;
        }
        total -= quadrature::integrate(x0, x1, |x| -> Result<f64> {
            Ok(p.phi.eval(x, 0.0)? * test.eval(x, 0.0)?)
        })?;
    }
    Ok(total)
}
