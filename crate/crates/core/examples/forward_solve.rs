//! Forward solve of a variable-coefficient problem on a prescribed front.
//!
//! ```text
//! cargo run --example forward_solve
//! ```

use stefan::control::sample_qn;
use stefan::functional::discrete_cost;
use stefan::grid::TimeGrid;
use stefan::problem::{CoefficientExpr, ProblemData, Signal, SolverSettings};
use stefan::state::ForwardSolver;

fn expr(s: &str) -> CoefficientExpr {
    CoefficientExpr::parse(s).expect("valid expression")
}

fn main() -> stefan::Result<()> {
    let mut p = ProblemData::heat_equation(0.5, 3.0, 1.5, 0.5, 20.0);
    p.a = expr("1 + 0.25*sin(x)");
    p.b = expr("0.1*x");
    p.c = expr("-0.5");
    p.f = expr("exp(-t)*x");
    p.gamma = expr("2");
    p.chi = expr("0.1");
    p.phi = expr("1 - 0.1*x^2");
    p.nu = Signal::Expr(expr("1 - 0.5*t"));
    p.mu = Signal::Expr(expr("0.8"));

    let solver = ForwardSolver::new(
        &p,
        SolverSettings {
            c_h: 0.5,
            ..Default::default()
        },
    )?;
    println!("tau0 = {:.4}", solver.tau0());

    let time = TimeGrid::new(p.horizon, 20)?;
    let v = sample_qn(&expr("1.5 + 0.4*t"), &expr("-0.2*t"), &time)?;
    let st = solver.solve(&v)?;
    println!(
        "grid: {} nodes, base step {:.4}, levels {:?}",
        st.grid().nodes().len(),
        st.grid().base_step(),
        st.grid().level_sizes()
    );

    println!(
        "{:>3} {:>8} {:>8} {:>10} {:>10}",
        "k", "t_k", "s_k", "u_0(k)", "u_m(k)"
    );
    for k in (0..=time.steps()).step_by(4) {
        println!(
            "{k:>3} {:>8.4} {:>8.4} {:>10.6} {:>10.6}",
            time.node(k),
            v.s()[k],
            st.layer(k)[0],
            st.front_value(k)
        );
    }
    let cost = discrete_cost(&st, &p);
    println!(
        "I_n = {:.6e} (boundary {:.6e}, front {:.6e})",
        cost.total, cost.boundary_term, cost.front_term
    );

    let mut csv = Vec::new();
    st.write_csv(&mut csv).expect("in-memory write");
    println!(
        "state.csv would hold {} rows",
        csv.split(|&b| b == b'\n').count() - 2
    );
    Ok(())
}
