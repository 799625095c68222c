//! Recovers the boundary flux from synthetic measurements with the front held
//! at its true position, for several noise levels.
//!
//! ```text
//! cargo run --release --example inverse_recovery
//! ```

use stefan::control::sample_qn;
use stefan::functional::synthetic_measurements;
use stefan::grid::TimeGrid;
use stefan::optimize::{minimize, ControlMask, IspObjective, OptOptions};
use stefan::problem::{manufactured_problem, CoefficientExpr, ProblemData, Signal};
use stefan::state::run_forward;

fn expr(s: &str) -> CoefficientExpr {
    CoefficientExpr::parse(s).expect("valid expression")
}

fn main() -> stefan::Result<()> {
    let base = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
    // flux u_x(0, t) = 1 + t
    let case = manufactured_problem(&expr("x^2 + 2*t + x*(1 + t)"), &expr("1 + 0.25*t^2"), &base)?;
    let n = 32;
    let time = TimeGrid::new(1.0, n)?;
    let truth = sample_qn(&case.exact_s, &case.flux, &time)?;
    let clean = run_forward(&case.problem, &truth, Default::default())?;

    for noise in [0.0, 0.01, 0.05] {
        let (nu, mu) = synthetic_measurements(&clean, noise, 42)?;
        let mut p = case.problem.clone();
        p.nu = Signal::Series(nu);
        p.mu = Signal::Series(mu);

        let obj = IspObjective::new(&p, Default::default())?;
        let start = truth.with_g(vec![0.0; n + 1])?;
        let opts = OptOptions {
            mask: ControlMask::FluxOnly,
            ..Default::default()
        };
        let r = minimize(&obj, &start, &opts);

        let num: f64 = r
            .best
            .g()
            .iter()
            .zip(truth.g())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let den: f64 = truth.g().iter().map(|b| b * b).sum();
        println!(
            "noise {:>4.0}%: {} after {} iterations, {} solves, I_n {:.3e} -> {:.3e}, relative g error {:.4}",
            noise * 100.0,
            r.status.as_str(),
            r.history.len() - 1,
            r.evals,
            r.history[0].cost.total,
            r.final_cost().total,
            (num / den).sqrt()
        );
    }
    Ok(())
}
