//! Refinement study against the manufactured solution u = x^2 + 2t on the
//! fixed front s = 1, with the spatial step tied to sqrt(tau).
//!
//! Prints the max-node error and least-squares orders in tau and in the
//! realized grid step h.
//!
//! ```text
//! cargo run --release --example manufactured_convergence [c_h]
//! ```

use stefan::control::sample_qn;
use stefan::grid::TimeGrid;
use stefan::problem::{manufactured_problem, CoefficientExpr, ProblemData, SolverSettings};
use stefan::state::run_forward;

fn expr(s: &str) -> CoefficientExpr {
    CoefficientExpr::parse(s).expect("valid expression")
}

/// Slope of the least-squares line through `(ln x, ln y)`.
fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

fn main() -> stefan::Result<()> {
    let c_h: f64 = std::env::args()
        .nth(1)
        .map_or(1.0, |s| s.parse().expect("c_h is a number"));
    let base = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
    let case = manufactured_problem(&expr("x^2 + 2*t"), &expr("1"), &base)?;
    let settings = SolverSettings {
        c_h,
        ..Default::default()
    };

    let (mut taus, mut hs, mut errs) = (vec![], vec![], vec![]);
    println!(
        "{:>5} {:>4} {:>10} {:>12} {:>12}",
        "n", "N", "h", "max error", "front error"
    );
    for n in [8, 16, 32, 64, 128] {
        let time = TimeGrid::new(1.0, n)?;
        let v = sample_qn(&case.exact_s, &case.flux, &time)?;
        let st = run_forward(&case.problem, &v, settings)?;
        let err = case.nodal_error(&st)?;
        let h = st.grid().max_width();
        println!(
            "{n:>5} {:>4} {h:>10.5} {:>12.4e} {:>12.4e}",
            st.grid().last_index(),
            err.max,
            err.front
        );
        taus.push(time.tau());
        hs.push(h);
        errs.push(err.max);
    }
    println!("order in tau: {:.3}", log_slope(&taus, &errs));
    println!("order in h:   {:.3}", log_slope(&hs, &errs));
    Ok(())
}
