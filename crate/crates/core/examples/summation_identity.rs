//! Checks a solved state against the summation identity with random test
//! vectors, then evaluates the weak form with the interpolated state.
//!
//! ```text
//! cargo run --example summation_identity
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stefan::control::sample_qn;
use stefan::functional::weak_residual;
use stefan::grid::TimeGrid;
use stefan::problem::{manufactured_problem, CoefficientExpr, ProblemData};
use stefan::state::run_forward;

fn expr(s: &str) -> CoefficientExpr {
    CoefficientExpr::parse(s).expect("valid expression")
}

fn main() -> stefan::Result<()> {
    let base = ProblemData::heat_equation(1.0, 2.0, 1.0, 0.5, 10.0);
    let case = manufactured_problem(
        &expr("x^2 + 2*t + sin(x)*t"),
        &expr("1 + 0.3*t*(1 - t)"),
        &base,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let test = expr("(1 - t)*cos(x)");

    for n in [8, 16, 32, 64] {
        let time = TimeGrid::new(1.0, n)?;
        let v = sample_qn(&case.exact_s, &case.flux, &time)?;
        let st = run_forward(&case.problem, &v, Default::default())?;
        let mut worst: f64 = 0.0;
        for k in 1..=n {
            for _ in 0..100 {
                let eta: Vec<f64> = (0..=st.front_index(k))
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let r = st.residual_identity(k, &eta);
                worst = worst.max(r.value.abs() / r.scale.max(f64::MIN_POSITIVE));
            }
        }
        let weak = weak_residual(&st, &case.problem, &test)?;
        println!("n = {n:>3}: identity residual / scale <= {worst:.2e}, weak residual {weak:+.4e}");
    }
    Ok(())
}
