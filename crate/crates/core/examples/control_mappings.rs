//! Sampling a continuous control onto the time grid, lifting it back, the
//! discrete norms, and projection into the control set.
//!
//! ```text
//! cargo run --example control_mappings
//! ```

use stefan::control::{
    discrete_norms, is_feasible_discrete, lift_pn, project_to_feasible, sample_qn,
};
use stefan::grid::TimeGrid;
use stefan::problem::CoefficientExpr;

fn expr(s: &str) -> CoefficientExpr {
    CoefficientExpr::parse(s).expect("valid expression")
}

fn main() -> stefan::Result<()> {
    let (l, delta, radius) = (2.0, 0.5, 10.0);
    let s = expr("1 + t^2*(1 - t)^2");
    let g = expr("cos(t)");

    println!(
        "{:>4} {:>10} {:>10} {:>12}",
        "n", "|s|^2", "|g|^2", "P(Q) error"
    );
    for n in [8, 16, 32, 64] {
        let time = TimeGrid::new(1.0, n)?;
        let v = sample_qn(&s, &g, &time)?;
        let norms = discrete_norms(&v);
        let lifted = lift_pn(&v);
        let mut err: f64 = 0.0;
        for j in 0..=400 {
            let t = j as f64 / 400.0;
            err = err.max((lifted.s_at(t) - s.eval(0.0, t)?).abs());
            err = err.max((lifted.g_at(t) - g.eval(0.0, t)?).abs());
        }
        println!(
            "{n:>4} {:>10.6} {:>10.6} {err:>12.3e}",
            norms.s_norm_sq, norms.g_norm_sq
        );
    }

    let time = TimeGrid::new(1.0, 8)?;
    let v = sample_qn(&s, &g, &time)?;
    let lifted = lift_pn(&v);
    for k in 1..=3 {
        let mid = 0.5 * (v.s()[k] + v.s()[k - 1]);
        println!(
            "s^n(t_{k}) = {:.12}, midpoint of samples = {mid:.12}",
            lifted.s_at(time.node(k))
        );
    }

    let wild = sample_qn(&expr("1 + 3*t"), &expr("40*t"), &time)?;
    let projected = project_to_feasible(&wild, delta, l, radius)?;
    println!(
        "projection: feasible before {}, after {}; s_8 {:.3} -> {:.3}, g_8 {:.3} -> {:.3}",
        is_feasible_discrete(&wild, delta, l, radius),
        is_feasible_discrete(&projected, delta, l, radius),
        wild.s()[8],
        projected.s()[8],
        wild.g()[8],
        projected.g()[8]
    );
    Ok(())
}
