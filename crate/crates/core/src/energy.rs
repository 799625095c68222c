//! Both sides of the two energy estimates for a solved state, and the
//! `W_2^{1/4}[0, T]` norm used on the data side of the second one.
//!
//! The constants of the estimates are not known, so reports carry the
//! left-hand sides, the data norms, and their ratio.

use crate::error::{Error, Result};
use crate::problem::{ProblemData, Var};
use crate::quadrature;
use crate::report::Json;
use crate::state::DiscreteState;

/// Uniform samples per data series in the fractional norms.
pub const FRAC_SAMPLES: usize = 512;

/// Time sub-panels per cell for trace integrals along `s^n`.
const TRACE_PANELS: usize = 2;

/// `||u||_{W_2^{1/4}[0,T]}` from `M + 1` uniform samples on `[0, T]`.
///
/// Midpoint rule on the `M` cells for the `L_2` part and on off-diagonal cell
/// pairs for the double integral of `|u(t) - u(r)|^2 / |t - r|^{3/2}`.
pub fn frac_norm_quarter(samples: &[f64], horizon: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Precondition(format!(
            "fractional norm needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let cells = samples.len() - 1;
    let dt = horizon / cells as f64;
    let mid: Vec<f64> = samples.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let l2: f64 = mid.iter().map(|u| dt * u * u).sum();
    let mut double = 0.0;
    for i in 0..cells {
        let mut row = 0.0;
        for j in 0..cells {
            if i != j {
                let gap = (i as f64 - j as f64).abs() * dt;
                row += (mid[i] - mid[j]).powi(2) / gap.powf(1.5);
            }
        }
        double += row;
    }
    Ok((l2 + dt * dt * double).sqrt())
}

/// `ũ_i(k)`: `u_i(k)` up to the front node, the front value beyond it.
pub fn build_u_tilde(st: &DiscreteState) -> Vec<Vec<f64>> {
    (0..st.layers().len())
        .map(|k| {
            let m = st.front_index(k);
            let layer = st.layer(k);
            let mut out = layer.to_vec();
            out[m + 1..].fill(layer[m]);
            out
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FirstEnergy {
    /// `max_k sum_i h_i u_i^2(k)`.
    pub max_mass: f64,
    /// `sum_k tau sum_i h_i u_ix^2(k)`.
    pub gradient: f64,
    pub phi_l2: f64,
    pub g_l2: f64,
    pub f_l2: f64,
    pub gamma_ds_l2: f64,
    pub chi_l2: f64,
    /// Sum over advancing steps of `h_i u_i^2(k)` on the newly covered nodes.
    pub advance: f64,
}

impl FirstEnergy {
    pub fn lhs(&self) -> f64 {
        self.max_mass + self.gradient
    }

    pub fn rhs_data(&self) -> f64 {
        self.phi_l2 + self.g_l2 + self.f_l2 + self.gamma_ds_l2 + self.chi_l2 + self.advance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SecondEnergy {
    /// `max_k sum_{i < m} h_i ũ_ix^2(k)`.
    pub max_gradient: f64,
    /// `tau sum_k sum_{i < m} h_i ũ_it̄^2(k)`.
    pub time_derivative: f64,
    /// `tau^2 sum_k sum_{i < m} h_i ũ_ixt̄^2(k)`.
    pub mixed: f64,
    pub phi_n_l2: f64,
    pub phi_w21: f64,
    pub g_frac: f64,
    pub gamma_ds_frac: f64,
    pub chi_frac: f64,
    pub f_l2: f64,
}

impl SecondEnergy {
    pub fn lhs(&self) -> f64 {
        self.max_gradient + self.time_derivative + self.mixed
    }

    pub fn rhs_data(&self) -> f64 {
        self.phi_n_l2 + self.phi_w21 + self.g_frac + self.gamma_ds_frac + self.chi_frac + self.f_l2
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub first: FirstEnergy,
    pub second: SecondEnergy,
}

impl EnergyReport {
    pub fn first_lhs(&self) -> f64 {
        self.first.lhs()
    }

    pub fn first_rhs_data(&self) -> f64 {
        self.first.rhs_data()
    }

    pub fn second_lhs(&self) -> f64 {
        self.second.lhs()
    }

    pub fn second_rhs_data(&self) -> f64 {
        self.second.rhs_data()
    }

    /// `lhs / rhs_data` of the first estimate; zero when both vanish.
    pub fn first_ratio(&self) -> f64 {
        ratio(self.first_lhs(), self.first_rhs_data())
    }

    pub fn second_ratio(&self) -> f64 {
        ratio(self.second_lhs(), self.second_rhs_data())
    }

    pub fn to_json(&self) -> Json {
        let f = &self.first;
        let s = &self.second;
        Json::obj([
            ("first_lhs", Json::Num(self.first_lhs())),
            ("first_rhs_data", Json::Num(self.first_rhs_data())),
            ("first_ratio", Json::Num(self.first_ratio())),
            ("second_lhs", Json::Num(self.second_lhs())),
            ("second_rhs_data", Json::Num(self.second_rhs_data())),
            ("second_ratio", Json::Num(self.second_ratio())),
            (
                "first_terms",
                Json::obj([
                    ("max_mass", Json::Num(f.max_mass)),
                    ("gradient", Json::Num(f.gradient)),
                    ("phi_n_l2", Json::Num(f.phi_l2)),
                    ("g_n_l2", Json::Num(f.g_l2)),
                    ("f_l2", Json::Num(f.f_l2)),
                    ("gamma_ds_l2", Json::Num(f.gamma_ds_l2)),
                    ("chi_l2", Json::Num(f.chi_l2)),
                    ("advance", Json::Num(f.advance)),
                ]),
            ),
            (
                "second_terms",
                Json::obj([
                    ("max_gradient", Json::Num(s.max_gradient)),
                    ("time_derivative", Json::Num(s.time_derivative)),
                    ("mixed", Json::Num(s.mixed)),
                    ("phi_n_l2", Json::Num(s.phi_n_l2)),
                    ("phi_w21", Json::Num(s.phi_w21)),
                    ("g_n_frac", Json::Num(s.g_frac)),
                    ("gamma_ds_frac", Json::Num(s.gamma_ds_frac)),
                    ("chi_frac", Json::Num(s.chi_frac)),
                    ("f_l2", Json::Num(s.f_l2)),
                ]),
            ),
        ])
    }
}

/// Data norms shared by both estimates.
struct DataNorms {
    phi_n_l2: f64,
    g_l2: f64,
    f_l2: f64,
    gamma_ds_l2: f64,
    chi_l2: f64,
}

/// `||phi^n||^2_{L_2(0, s_0)}` with `phi^n = phi(x_i)` on `(x_i, x_{i+1}]`.
fn phi_n_l2(st: &DiscreteState) -> f64 {
    let layer = st.layer(0);
    (0..st.front_index(0))
        .map(|i| st.grid().width(i) * layer[i] * layer[i])
        .sum()
}

fn data_norms(st: &DiscreteState, p: &ProblemData) -> Result<DataNorms> {
    let time = st.time();
    let lifted = st.lifted();
    let nodes = st.grid().nodes();
    let (mut g_l2, mut f_l2, mut gamma_ds_l2, mut chi_l2) = (0.0, 0.0, 0.0, 0.0);
    for k in 1..=time.steps() {
        let (a, b) = time.cell(k);
        let width = (b - a) / TRACE_PANELS as f64;
        for panel in 0..TRACE_PANELS {
            let lo = a + panel as f64 * width;
            for (t, w) in quadrature::rule(lo, lo + width) {
                let cv = lifted.eval(t);
                g_l2 += w * cv.g * cv.g;
                gamma_ds_l2 += w * (p.gamma.eval(cv.s, t)? * cv.ds).powi(2);
                chi_l2 += w * p.chi.eval(cv.s, t)?.powi(2);
            }
        }
        for i in 0..nodes.len() - 1 {
            f_l2 += quadrature::integrate(a, b, |t| {
                quadrature::integrate(nodes[i], nodes[i + 1], |x| -> Result<f64> {
                    Ok(p.f.eval(x, t)?.powi(2))
                })
            })?;
        }
    }
    Ok(DataNorms {
        phi_n_l2: phi_n_l2(st),
        g_l2,
        f_l2,
        gamma_ds_l2,
        chi_l2,
    })
}

pub fn first_energy(st: &DiscreteState, p: &ProblemData) -> Result<FirstEnergy> {
    let grid = st.grid();
    let time = st.time();
    let n = time.steps();
    let cells = grid.last_index();
    let max_mass = st
        .layers()
        .iter()
        .map(|u| (0..cells).map(|i| grid.width(i) * u[i] * u[i]).sum::<f64>())
        .fold(0.0, f64::max);
    let gradient: f64 = (1..=n)
        .map(|k| {
            time.tau()
                * (0..cells)
                    .map(|i| grid.width(i) * st.dx(k, i).powi(2))
                    .sum::<f64>()
        })
        .sum();

    let s = st.control().s();
    let mut advance = 0.0;
    for k in 1..n {
        if s[k + 1] > s[k] {
            let layer = st.layer(k);
            for i in st.front_index(k)..st.front_index(k + 1) {
                advance += grid.width(i) * layer[i] * layer[i];
            }
        }
    }

    let d = data_norms(st, p)?;
    Ok(FirstEnergy {
        max_mass,
        gradient,
        phi_l2: d.phi_n_l2,
        g_l2: d.g_l2,
        f_l2: d.f_l2,
        gamma_ds_l2: d.gamma_ds_l2,
        chi_l2: d.chi_l2,
        advance,
    })
}

/// `FRAC_SAMPLES + 1` uniform samples of `f` on `[0, T]`.
fn sample_uniform(horizon: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<Vec<f64>> {
    (0..=FRAC_SAMPLES)
        .map(|j| f(horizon * j as f64 / FRAC_SAMPLES as f64))
        .collect()
}

pub fn second_energy(st: &DiscreteState, p: &ProblemData) -> Result<SecondEnergy> {
    let grid = st.grid();
    let time = st.time();
    let tau = time.tau();
    let n = time.steps();
    let tilde = build_u_tilde(st);
    let dx = |k: usize, i: usize| (tilde[k][i + 1] - tilde[k][i]) / grid.width(i);

    let (mut max_gradient, mut time_derivative, mut mixed) = (0.0_f64, 0.0, 0.0);
    for k in 1..=n {
        let m = st.front_index(k);
        let mut grad = 0.0;
        for i in 0..m {
            let h = grid.width(i);
            let ux = dx(k, i);
            grad += h * ux * ux;
            time_derivative += tau * h * ((tilde[k][i] - tilde[k - 1][i]) / tau).powi(2);
            mixed += tau * tau * h * ((ux - dx(k - 1, i)) / tau).powi(2);
        }
        max_gradient = max_gradient.max(grad);
    }

    let s0 = st.lifted().s_at(0.0);
    let phi_x = p.phi.derivative(Var::X)?;
    let nodes = grid.nodes();
    let mut phi_w21 = 0.0;
    for i in 0..nodes.len() - 1 {
        let (x0, x1) = (nodes[i], nodes[i + 1].min(s0));
        if x1 <= x0 {
            break;
        }
        phi_w21 += quadrature::integrate(x0, x1, |x| -> Result<f64> {
            Ok(p.phi.eval(x, 0.0)?.powi(2) + phi_x.eval(x, 0.0)?.powi(2))
        })?;
    }

    let lifted = st.lifted();
    let horizon = time.horizon();
    let frac_sq =
        |samples: Vec<f64>| -> Result<f64> { Ok(frac_norm_quarter(&samples, horizon)?.powi(2)) };
    let g_frac = frac_sq(sample_uniform(horizon, |t| Ok(lifted.g_at(t)))?)?;
    let gamma_ds_frac = frac_sq(sample_uniform(horizon, |t| {
        let cv = lifted.eval(t);
        Ok(p.gamma.eval(cv.s, t)? * cv.ds)
    })?)?;
    let chi_frac = frac_sq(sample_uniform(horizon, |t| {
        Ok(p.chi.eval(lifted.s_at(t), t)?)
    })?)?;

    let d = data_norms(st, p)?;
    Ok(SecondEnergy {
        max_gradient,
        time_derivative,
        mixed,
        phi_n_l2: d.phi_n_l2,
        phi_w21,
        g_frac,
        gamma_ds_frac,
        chi_frac,
        f_l2: d.f_l2,
    })
}

pub fn energy_report(st: &DiscreteState, p: &ProblemData) -> Result<EnergyReport> {
    Ok(EnergyReport {
        first: first_energy(st, p)?,
        second: second_energy(st, p)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::DiscreteControl;
    use crate::grid::TimeGrid;
    use crate::problem::CoefficientExpr;
    use crate::state::run_forward;

    fn expr(s: &str) -> CoefficientExpr {
        CoefficientExpr::parse(s).unwrap()
    }

    #[test]
    fn frac_norm_cases() {
        let two = vec![2.0; 65];
        assert!((frac_norm_quarter(&two, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(frac_norm_quarter(&[1.0], 1.0).is_err());
        let lin: Vec<f64> = (0..=64).map(|j| j as f64 / 64.0).collect();
        let doubled: Vec<f64> = lin.iter().map(|v| 2.0 * v).collect();
        let a = frac_norm_quarter(&lin, 1.0).unwrap();
        let b = frac_norm_quarter(&doubled, 1.0).unwrap();
        assert!((b * b - 4.0 * a * a).abs() < 1e-12);
    }

    #[test]
    fn frac_norm_of_identity_converges() {
        // ∫∫|t - r|^{1/2} over the unit square is 8/15, ||t||^2 = 1/3
        let exact = (1.0f64 / 3.0 + 8.0 / 15.0).sqrt();
        let mut prev = f64::INFINITY;
        for m in [32, 64, 128, 256] {
            let lin: Vec<f64> = (0..=m).map(|j| j as f64 / m as f64).collect();
            let err = (frac_norm_quarter(&lin, 1.0).unwrap() - exact).abs();
            assert!(err < prev / 1.9, "m={m}: {err} vs {prev}");
            prev = err;
        }
    }

    fn const_state(s: &[f64]) -> (ProblemData, DiscreteState) {
        let mut p = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
        p.phi = expr("1");
        let n = s.len() - 1;
        let time = TimeGrid::new(1.0, n).unwrap();
        let v = DiscreteControl::new(s.to_vec(), vec![0.0; n + 1], time.tau()).unwrap();
        let st = run_forward(&p, &v, Default::default()).unwrap();
        (p, st)
    }

    #[test]
    fn constant_state() {
        let (p, st) = const_state(&[1.0; 9]);
        let r = energy_report(&st, &p).unwrap();
        assert!((r.first.max_mass - 2.0).abs() < 1e-12);
        assert!(r.first.gradient < 1e-24);
        assert!(r.second_lhs() < 1e-24);
        assert!((r.first.phi_l2 - 1.0).abs() < 1e-12);
        assert!((r.second.phi_w21 - 1.0).abs() < 1e-12);
        let tilde = build_u_tilde(&st);
        assert!(tilde.iter().flatten().all(|&u| (u - 1.0).abs() < 1e-13));
    }

    #[test]
    fn zero_state_and_data() {
        let p = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
        let time = TimeGrid::new(1.0, 8).unwrap();
        let st = run_forward(
            &p,
            &DiscreteControl::constant(1.0, &time),
            Default::default(),
        )
        .unwrap();
        let r = energy_report(&st, &p).unwrap();
        assert_eq!((r.first_lhs(), r.first_rhs_data()), (0.0, 0.0));
        assert_eq!((r.second_lhs(), r.second_rhs_data()), (0.0, 0.0));
        assert_eq!(r.first_ratio(), 0.0);
    }

    #[test]
    fn u_tilde_holds_front_value() {
        let mut p = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
        p.phi = expr("x^2");
        let time = TimeGrid::new(1.0, 4).unwrap();
        let st = run_forward(
            &p,
            &DiscreteControl::constant(1.0, &time),
            Default::default(),
        )
        .unwrap();
        let tilde = build_u_tilde(&st);
        let last = st.grid().last_index();
        for k in 0..=4 {
            assert_eq!(tilde[k][last], st.front_value(k));
            assert_eq!(
                tilde[k][..=st.front_index(k)],
                st.layer(k)[..=st.front_index(k)]
            );
        }
        // the reflective extension is not flat beyond the front
        assert_ne!(st.layer(0)[last], tilde[0][last]);
    }

    #[test]
    fn advancing_front_counts_new_nodes() {
        let s = [1.0, 1.0, 1.25, 1.25, 1.5];
        let (p, st) = const_state(&s);
        let r = first_energy(&st, &p).unwrap();
        // u ≡ 1: each advance of 0.25 adds 0.25
        assert!((r.advance - 0.5).abs() < 1e-12, "{}", r.advance);
    }
}
