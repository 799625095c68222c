//! Fixed four-point Gauss–Legendre rules, exact for polynomials of degree <= 7.

const NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_2,
    0.652_145_154_862_546_2,
    0.347_854_845_137_453_8,
];

/// Abscissae and weights mapped to `[a, b]`; the weights sum to `b - a`.
pub fn rule(a: f64, b: f64) -> [(f64, f64); 4] {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    std::array::from_fn(|q| (mid + half * NODES[q], half * WEIGHTS[q]))
}

/// `(1 / (b - a)) * integral of f over [a, b]`, normalized by the weight sum so
/// that constants are reproduced to rounding.
pub fn mean<E>(a: f64, b: f64, mut f: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
    let mut acc = 0.0;
    for q in 0..4 {
        acc += WEIGHTS[q] * f(0.5 * (a + b) + 0.5 * (b - a) * NODES[q])?;
    }
    Ok(acc / 2.0)
}

pub fn integrate<E>(a: f64, b: f64, mut f: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
    let mut acc = 0.0;
    for (x, w) in rule(a, b) {
        acc += w * f(x)?;
    }
    Ok(acc)
}

/// Tensor-product mean over `[x0, x1] x [t0, t1]`.
pub fn mean_2d<E>(
    (x0, x1): (f64, f64),
    (t0, t1): (f64, f64),
    mut f: impl FnMut(f64, f64) -> Result<f64, E>,
) -> Result<f64, E> {
    let mut acc = 0.0;
    for p in 0..4 {
        let x = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * NODES[p];
        let mut inner = 0.0;
        for q in 0..4 {
            let t = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * NODES[q];
            inner += WEIGHTS[q] * f(x, t)?;
        }
        acc += WEIGHTS[p] * inner;
    }
    Ok(acc / 4.0)
}
