//! BiCGStab for the block-sparse systems, optionally right-preconditioned
//! with the block-Jacobi inverse.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, LinearOperator};
use crate::precond::BlockInverseCache;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub restarts: usize,
}

fn residual_of(op: &impl LinearOperator, x: &[f64], b: &[f64], r: &mut [f64]) {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Solves `op · x = b` until `‖b - op·x‖₂ ≤ tol·‖b‖₂` (checked on the true
/// residual). A breakdown of the recurrence restarts once from the current
/// iterate; a second breakdown is an error.
pub fn bicgstab(
    op: &impl LinearOperator,
    b: &[f64],
    tol: f64,
    precond: Option<&BlockInverseCache>,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::InvalidArgument(format!("rhs length {} != dim {n}", b.len())));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive (got {tol})")));
    }
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((x, SolveStats::default()));
    }
    let max_iter = 1000.max(2 * n);
    let target = tol * bnorm;
    let apply_m = |v: &[f64], out: &mut Vec<f64>| match precond {
        Some(c) => *out = c.apply(v),
        None => out.copy_from_slice(v),
    };

    let mut stats = SolveStats::default();
    let mut breakdowns = 0;
    let mut r = b.to_vec();
    let mut r_hat = r.clone();
    let (mut p, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (mut p_hat, mut s_hat) = (vec![0.0; n], vec![0.0; n]);
    let (mut s, mut t) = (vec![0.0; n], vec![0.0; n]);
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let tiny = f64::MIN_POSITIVE.sqrt();

    while stats.iterations < max_iter {
        stats.iterations += 1;
        let rho_new = dot(&r_hat, &r);
        let mut broke = rho_new.abs() < tiny * norm2(&r_hat) * norm2(&r);
        if !broke {
            let beta = (rho_new / rho) * (alpha / omega);
            for k in 0..n {
                p[k] = r[k] + beta * (p[k] - omega * v[k]);
            }
            apply_m(&p, &mut p_hat);
            op.apply(&p_hat, &mut v);
            let rv = dot(&r_hat, &v);
            broke = rv == 0.0 || !rv.is_finite();
            if !broke {
                alpha = rho_new / rv;
                for k in 0..n {
                    s[k] = r[k] - alpha * v[k];
                }
                if norm2(&s) <= target {
                    for k in 0..n {
                        x[k] += alpha * p_hat[k];
                    }
                    residual_of(op, &x, b, &mut r);
                    stats.relative_residual = norm2(&r) / bnorm;
                    if stats.relative_residual <= tol {
                        return Ok((x, stats));
                    }
                    // drifted: restart from the true residual
                    r_hat.copy_from_slice(&r);
                    p.iter_mut().for_each(|e| *e = 0.0);
                    v.iter_mut().for_each(|e| *e = 0.0);
                    (rho, alpha, omega) = (1.0, 1.0, 1.0);
                    stats.restarts += 1;
                    continue;
                }
                apply_m(&s, &mut s_hat);
                op.apply(&s_hat, &mut t);
                let tt = dot(&t, &t);
                omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
                for k in 0..n {
                    x[k] += alpha * p_hat[k] + omega * s_hat[k];
                    r[k] = s[k] - omega * t[k];
                }
                rho = rho_new;
                if norm2(&r) <= target {
                    residual_of(op, &x, b, &mut r);
                    stats.relative_residual = norm2(&r) / bnorm;
                    if stats.relative_residual <= tol {
                        return Ok((x, stats));
                    }
                    r_hat.copy_from_slice(&r);
                    p.iter_mut().for_each(|e| *e = 0.0);
                    v.iter_mut().for_each(|e| *e = 0.0);
                    (rho, alpha, omega) = (1.0, 1.0, 1.0);
                    stats.restarts += 1;
                    continue;
                }
                broke = omega == 0.0 || !omega.is_finite();
            }
        }
        if broke {
            breakdowns += 1;
            if breakdowns > 1 {
                return Err(Error::SolverBreakdown {
                    iteration: stats.iterations,
                });
            }
            if !x.iter().all(|e| e.is_finite()) {
                x.iter_mut().for_each(|e| *e = 0.0);
            }
            residual_of(op, &x, b, &mut r);
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|e| *e = 0.0);
            v.iter_mut().for_each(|e| *e = 0.0);
            (rho, alpha, omega) = (1.0, 1.0, 1.0);
            stats.restarts += 1;
        }
    }
    residual_of(op, &x, b, &mut r);
    Err(Error::SolverNotConverged {
        iterations: stats.iterations,
        relative_residual: norm2(&r) / bnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn identity_and_diagonal() {
        let eye = DMatrix::<f64>::identity(5, 5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 0.0];
        let (x, _) = bicgstab(&eye, &b, 1e-12, None).unwrap();
        assert_eq!(x, b);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0]));
        let (x, _) = bicgstab(&d, &[2.0, 4.0], 1e-12, None).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rhs() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let (x, s) = bicgstab(&eye, &[0.0; 3], 1e-10, None).unwrap();
        assert_eq!(x, vec![0.0; 3]);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn nonsymmetric_dense_system() {
        let n = 40;
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                4.0 + i as f64 * 0.1
            } else if j == i + 1 {
                -1.3
            } else if i == j + 1 {
                -0.4
            } else {
                0.0
            }
        });
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let (x, stats) = bicgstab(&m, &b, 1e-10, None).unwrap();
        let mut r = vec![0.0; n];
        residual_of(&m, &x, &b, &mut r);
        assert!(norm2(&r) <= 1e-10 * norm2(&b));
        assert!(stats.relative_residual <= 1e-10);
    }

    #[test]
    fn singular_system_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(bicgstab(&m, &[1.0, -1.0], 1e-10, None).is_err());
    }
}
