//! Ratios of the two energy estimates' left and right sides under refinement
//! for a smooth solution on an advancing front. Bounded ratios are what the
//! a priori estimates predict.
//!
//! ```text
//! cargo run --release --example energy_sweep
//! ```

use stefan::control::sample_qn;
use stefan::energy::energy_report;
use stefan::grid::TimeGrid;
use stefan::problem::{manufactured_problem, CoefficientExpr, ProblemData};
use stefan::state::run_forward;

fn expr(s: &str) -> CoefficientExpr {
    CoefficientExpr::parse(s).expect("valid expression")
}

fn main() -> stefan::Result<()> {
    let base = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
    let case = manufactured_problem(&expr("x^2 + 2*t + x*(1 + t)"), &expr("1 + 0.25*t^2"), &base)?;
    println!("n,first_lhs,first_rhs,second_lhs,second_rhs,first_ratio,second_ratio");
    for n in [8, 16, 32, 64, 128] {
        let time = TimeGrid::new(1.0, n)?;
        let v = sample_qn(&case.exact_s, &case.flux, &time)?;
        let st = run_forward(&case.problem, &v, Default::default())?;
        let e = energy_report(&st, &case.problem)?;
        println!(
            "{n},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            e.first_lhs(),
            e.first_rhs_data(),
            e.second_lhs(),
            e.second_rhs_data(),
            e.first_ratio(),
            e.second_ratio()
        );
    }
    Ok(())
}
