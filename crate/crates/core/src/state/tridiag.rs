//! Tridiagonal systems solved by LU with partial pivoting (the `dgtsv`
//! elimination order).

use crate::error::{Error, Result};

/// Pivots smaller than this in magnitude are treated as singular.
pub const PIVOT_FLOOR: f64 = 1e-300;

/// Row `i` reads `lower[i] x_{i-1} + diag[i] x_i + upper[i] x_{i+1} = rhs[i]`;
/// `lower[0]` and `upper[last]` are ignored and stored as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TriSystem {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TriSystem {
    pub fn zeros(len: usize) -> Self {
        TriSystem {
            lower: vec![0.0; len],
            diag: vec![0.0; len],
            upper: vec![0.0; len],
            rhs: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    /// `||A||_inf`.
    pub fn norm_inf(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let lo = if i > 0 { self.lower[i].abs() } else { 0.0 };
                let up = if i + 1 < n { self.upper[i].abs() } else { 0.0 };
                lo + self.diag[i].abs() + up
            })
            .fold(0.0, f64::max)
    }

    /// Solves the system; `k` labels the time step in the error.
    pub fn solve(&self, k: usize) -> Result<Vec<f64>> {
        let n = self.len();
        let singular = |i: usize| Error::StepSolve {
            k,
            reason: format!("pivot {i} below {PIVOT_FLOOR:e} in a system of size {n}"),
        };
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut d = self.diag.clone();
        let mut du = self.upper.clone();
        let mut dl: Vec<f64> = self.lower.iter().skip(1).copied().collect();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut b = self.rhs.clone();

        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i].abs() < PIVOT_FLOOR {
                    return Err(singular(i));
                }
                let mult = dl[i] / d[i];
                d[i + 1] -= mult * du[i];
                b[i + 1] -= mult * b[i];
            } else {
                let mult = d[i] / dl[i];
                d[i] = dl[i];
                let tmp = d[i + 1];
                d[i + 1] = du[i] - mult * tmp;
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -mult * du2[i];
                }
                du[i] = tmp;
                let tb = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tb - mult * b[i + 1];
            }
            dl[i] = 0.0;
        }
        if d[n - 1].abs() < PIVOT_FLOOR {
            return Err(singular(n - 1));
        }

        let mut x = vec![0.0; n];
        x[n - 1] = b[n - 1] / d[n - 1];
        if n > 1 {
            x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepSolve {
                k,
                reason: "non-finite solution".into(),
            });
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let m = a[row][col] / a[col][col];
                for c in col..n {
                    a[row][c] -= m * a[col][c];
                }
                b[row] -= m * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    fn dense(sys: &TriSystem) -> Vec<Vec<f64>> {
        let n = sys.len();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = sys.diag[i];
            if i > 0 {
                a[i][i - 1] = sys.lower[i];
            }
            if i + 1 < n {
                a[i][i + 1] = sys.upper[i];
            }
        }
        a
    }

    fn random_system(rng: &mut ChaCha8Rng, n: usize, dominant: bool) -> TriSystem {
        let mut sys = TriSystem::zeros(n);
        for i in 0..n {
            if i > 0 {
                sys.lower[i] = rng.random_range(-1.0..1.0);
            }
            if i + 1 < n {
                sys.upper[i] = rng.random_range(-1.0..1.0);
            }
            sys.diag[i] = if dominant {
                2.5 + rng.random_range(0.0..1.0)
            } else {
                rng.random_range(-1.0..1.0)
            };
            sys.rhs[i] = rng.random_range(-3.0..3.0);
        }
        sys
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dominant in [true, false] {
            for _ in 0..50 {
                let sys = random_system(&mut rng, 20, dominant);
                let x = sys.solve(1).unwrap();
                let y = dense_solve(dense(&sys), sys.rhs.clone());
                let scale = y.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                for (a, b) in x.iter().zip(&y) {
                    assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 3, 17, 64] {
            let sys = random_system(&mut rng, n, false);
            let x = sys.solve(3).unwrap();
            let r = sys.apply(&x);
            let xn = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let bn = sys.rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let res = r
                .iter()
                .zip(&sys.rhs)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(res <= 1e-10 * (sys.norm_inf() * xn + bn));
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let sys = TriSystem {
            lower: vec![0.0, 1.0],
            diag: vec![0.0, 0.0],
            upper: vec![1.0, 0.0],
            rhs: vec![2.0, 3.0],
        };
        assert_eq!(sys.solve(1).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn singular_reports_step() {
        let sys = TriSystem {
            lower: vec![0.0, 1.0],
            diag: vec![1.0, 1.0],
            upper: vec![1.0, 0.0],
            rhs: vec![1.0, 1.0],
        };
        match sys.solve(5) {
            Err(Error::StepSolve { k: 5, .. }) => {}
            other => panic!("expected step failure, got {other:?}"),
        }
    }
}
